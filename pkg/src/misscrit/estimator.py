"""scikit-learn compatible wrappers.

:class:`TiedGaussianMixture` fits one variance-tied mixture and exposes the
criteria as fitted attributes; :class:`CriterionSelector` fits several
candidate tyings and keeps the one minimizing a chosen criterion.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .criteria import CRITERIA, compute_criteria, select
from .em import EmConfig, fit_em
from .fisher import bundle
from .model import MixtureSpec, log_py, responsibilities


def _as_column(X) -> np.ndarray:
    X = check_array(X, ensure_2d=False, dtype=np.float64)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected a single feature, got {X.shape[1]}")
        X = X[:, 0]
    return X


class TiedGaussianMixture(DensityMixin, BaseEstimator):
    """Univariate Gaussian mixture with optional variance tying.

    Parameters
    ----------
    n_components : int
    variance_classes : list of lists of int or None
        0-based component groups sharing a variance. ``None`` leaves every
        variance free.
    init : {"quantile", "random"}
    n_init : int
        Number of EM runs; the best log-likelihood wins.
    tol : float
        Stop when the per-observation log-likelihood change is below this.
    max_iter : int
    penalty_route : {"expected", "empirical"}
        How tr(I_x I_y^{-1}) is evaluated for the criteria.
    random_state : int or None
    """

    def __init__(self, n_components=2, variance_classes=None, init="quantile", n_init=1,
                 tol=1e-9, max_iter=2000, penalty_route="expected", random_state=None):
        self.n_components = n_components
        self.variance_classes = variance_classes
        self.init = init
        self.n_init = n_init
        self.tol = tol
        self.max_iter = max_iter
        self.penalty_route = penalty_route
        self.random_state = random_state

    def _spec(self) -> MixtureSpec:
        return MixtureSpec(self.n_components, self.variance_classes)

    def fit(self, X, y=None):
        X = _as_column(X)
        spec = self._spec()
        seed = self.random_state if isinstance(self.random_state, (int, np.integer)) else 0
        cfg = EmConfig(max_iters=self.max_iter, tol_loglik=self.tol, n_restarts=self.n_init,
                       init=self.init, seed=int(seed))
        fit = fit_em(X, spec, cfg)
        self.spec_ = spec
        self.fit_result_ = fit
        self.params_ = fit.theta_hat
        self.weights_ = np.array(fit.theta_hat.weights)
        self.means_ = np.array(fit.theta_hat.means)
        self.variances_ = np.array(fit.theta_hat.variances)
        self.converged_ = fit.converged
        self.n_iter_ = fit.iters
        self.lower_bound_ = fit.loglik / X.size
        self.fisher_ = bundle(fit.theta_hat, X, self.penalty_route)
        self.criteria_ = compute_criteria(fit, self.fisher_, X, spec.label)
        return self

    def score_samples(self, X):
        check_is_fitted(self, "params_")
        return log_py(_as_column(X), self.params_)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        return responsibilities(_as_column(X), self.params_)

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def aic(self, X=None):
        check_is_fitted(self, "criteria_")
        return self.criteria_.aic

    def aic_xy(self, X=None):
        check_is_fitted(self, "criteria_")
        return self.criteria_.aic_xy


class CriterionSelector(BaseEstimator):
    """Fit every candidate tying pattern and keep the criterion minimizer.

    Parameters
    ----------
    candidates : list of (n_components, variance_classes) pairs
    criterion : one of ``aic``, ``tic``, ``pdio``, ``aic_cd``, ``aic_xy``
    estimator : TiedGaussianMixture used as a template for fitting options
    """

    def __init__(self, candidates=((2, None),), criterion="aic_xy", estimator=None):
        self.candidates = candidates
        self.criterion = criterion
        self.estimator = estimator

    def fit(self, X, y=None):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        template = self.estimator if self.estimator is not None else TiedGaussianMixture()
        self.estimators_ = []
        for k, classes in self.candidates:
            est = clone(template).set_params(n_components=k, variance_classes=classes)
            self.estimators_.append(est.fit(X))
        self.reports_ = [e.criteria_ for e in self.estimators_]
        label = select(self.reports_, self.criterion)
        self.best_index_ = [r.model_label for r in self.reports_].index(label)
        self.best_estimator_ = self.estimators_[self.best_index_]
        return self

    def predict(self, X):
        check_is_fitted(self, "best_estimator_")
        return self.best_estimator_.predict(X)

    def score_samples(self, X):
        check_is_fitted(self, "best_estimator_")
        return self.best_estimator_.score_samples(X)
