"""Model selection criteria for mixtures fitted to unlabeled data."""

__version__ = "0.1.0"

from .criteria import CriteriaReport, compute_criteria, riskhat_xy, select  # noqa: E402
from .em import EmConfig, FitResult, diff_term, em_map, fit_em, q_function  # noqa: E402
from .fisher import FisherBundle, bundle, info_complete, info_incomplete, sem_penalty  # noqa: E402
from .model import CompleteDataset, IncompleteDataset, MixtureParams, MixtureSpec  # noqa: E402

__all__ = [
    "CompleteDataset",
    "CriteriaReport",
    "EmConfig",
    "FisherBundle",
    "FitResult",
    "IncompleteDataset",
    "MixtureParams",
    "MixtureSpec",
    "bundle",
    "compute_criteria",
    "diff_term",
    "em_map",
    "fit_em",
    "info_complete",
    "info_incomplete",
    "q_function",
    "riskhat_xy",
    "select",
    "sem_penalty",
]
