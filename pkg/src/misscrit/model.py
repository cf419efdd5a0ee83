"""Univariate Gaussian mixtures with variance tying.

Free coordinates of a K-component mixture with C variance classes are laid
out as::

    [pi_0, ..., pi_{K-2}, mu_0, ..., mu_{K-1}, var_0, ..., var_{C-1}]

so the free dimension is ``d = (K - 1) + K + C``. The last weight is
``1 - sum(others)``. Component labels are 0-based inside the library and
1-based in CSV/JSON files.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConstraintViolation, LabelOutOfRange
from .numerics import QuadratureRule, simpson_rule

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MixtureSpec:
    """A candidate model: K components and a partition into variance classes.

    ``variance_classes`` holds 0-based component indices; components in the
    same class share one variance.
    """

    k: int
    variance_classes: tuple[tuple[int, ...], ...] = None
    label: str = ""
    correctly_specified: bool | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        classes = self.variance_classes
        if classes is None:
            classes = tuple((i,) for i in range(self.k))
        classes = tuple(tuple(sorted(int(i) for i in c)) for c in classes)
        flat = sorted(i for c in classes for i in c)
        if flat != list(range(self.k)) or any(len(c) == 0 for c in classes):
            raise ValueError(f"variance_classes {classes} is not a partition of 0..{self.k - 1}")
        object.__setattr__(self, "variance_classes", classes)
        if not self.label:
            groups = "".join("[" + ",".join(str(i + 1) for i in c) + "]" for c in classes)
            object.__setattr__(self, "label", f"k{self.k}:{groups}")

    @property
    def n_classes(self) -> int:
        return len(self.variance_classes)

    @property
    def d(self) -> int:
        return (self.k - 1) + self.k + self.n_classes

    @property
    def class_of(self) -> np.ndarray:
        """Variance-class index of each component."""
        out = np.empty(self.k, dtype=int)
        for c, members in enumerate(self.variance_classes):
            out[list(members)] = c
        return out

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "variance_classes": [[i + 1 for i in c] for c in self.variance_classes],
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MixtureSpec":
        """Build from ``{"k", "variance_classes", "label"}`` with 1-based indices."""
        k = int(obj["k"])
        classes = obj.get("variance_classes")
        if classes is not None:
            classes = [[int(i) - 1 for i in c] for c in classes]
        return cls(k, classes, obj.get("label", ""))


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """A point of a :class:`MixtureSpec`: weights, means, per-class variances."""

    spec: MixtureSpec
    weights: np.ndarray
    means: np.ndarray
    class_variances: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        m = np.array(self.means, dtype=float).reshape(-1)
        v = np.array(self.class_variances, dtype=float).reshape(-1)
        k = self.spec.k
        if w.shape != (k,) or m.shape != (k,) or v.shape != (self.spec.n_classes,):
            raise ConstraintViolation("parameter shapes do not match the spec")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
            raise ConstraintViolation("non-finite parameter value")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConstraintViolation(f"weights {w} are not in the open simplex")
        if np.any(v <= 0):
            raise ConstraintViolation(f"variances {v} must be positive")
        for arr in (w, m, v):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "class_variances", v)

    @property
    def variances(self) -> np.ndarray:
        """Per-component variances."""
        return self.class_variances[self.spec.class_of]

    def pack(self) -> np.ndarray:
        return np.concatenate([self.weights[:-1], self.means, self.class_variances])

    @classmethod
    def unpack(cls, spec: MixtureSpec, v) -> "MixtureParams":
        v = np.asarray(v, dtype=float)
        if v.shape != (spec.d,):
            raise ConstraintViolation(f"expected a free vector of length {spec.d}, got {v.shape}")
        k = spec.k
        head = v[: k - 1]
        weights = np.append(head, 1.0 - head.sum())
        return cls(spec, weights, v[k - 1: 2 * k - 1], v[2 * k - 1:])

    @classmethod
    def from_components(cls, spec: MixtureSpec, weights, means, variances) -> "MixtureParams":
        """Map per-component parameters into ``spec``, pooling tied variances.

        Pooled variances are weight-averaged within each class.
        """
        weights = np.asarray(weights, dtype=float)
        variances = np.asarray(variances, dtype=float)
        pooled = [
            np.dot(weights[list(c)], variances[list(c)]) / weights[list(c)].sum()
            for c in spec.variance_classes
        ]
        return cls(spec, weights, means, pooled)

    def sorted_by_mean(self) -> dict:
        """Per-component parameters ordered by mean, for display only."""
        order = np.argsort(self.means, kind="stable")
        return {
            "weights": self.weights[order].tolist(),
            "means": self.means[order].tolist(),
            "variances": self.variances[order].tolist(),
        }

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "class_variances": self.class_variances.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MixtureParams":
        spec = MixtureSpec.from_dict(obj["spec"])
        return cls(spec, obj["weights"], obj["means"], obj["class_variances"])

    def __repr__(self):
        return (
            f"MixtureParams({self.spec.label!r}, weights={self.weights.tolist()}, "
            f"means={self.means.tolist()}, class_variances={self.class_variances.tolist()})"
        )


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True, eq=False)
class IncompleteDataset:
    y: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        if y.size == 0:
            raise ValueError("dataset is empty")
        if not np.all(np.isfinite(y)):
            raise ValueError("dataset contains non-finite values")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.y.size


@dataclass(frozen=True, eq=False)
class CompleteDataset:
    """Observations with their 0-based component labels."""

    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = np.array(self.y, dtype=float).reshape(-1)
        z = np.array(self.z, dtype=int).reshape(-1)
        if y.size == 0 or y.shape != z.shape:
            raise ValueError("y and z must be nonempty and of equal length")
        if not np.all(np.isfinite(y)):
            raise ValueError("dataset contains non-finite values")
        if np.any(z < 0):
            raise LabelOutOfRange("labels must be nonnegative")
        y.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    def __len__(self):
        return self.y.size

    def incomplete(self) -> IncompleteDataset:
        return IncompleteDataset(self.y)


def _as_y(data) -> np.ndarray:
    if isinstance(data, (IncompleteDataset, CompleteDataset)):
        return data.y
    return np.asarray(data, dtype=float)


def read_csv(path) -> IncompleteDataset | CompleteDataset:
    """Read a ``y`` or ``y,z`` CSV file (``z`` 1-based)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        if "y" not in fields:
            raise ValueError(f"{path}: header must contain a 'y' column")
        ys, zs = [], []
        for lineno, row in enumerate(reader, start=2):
            row = {k.strip(): v for k, v in row.items()}
            try:
                ys.append(float(row["y"]))
                if "z" in fields:
                    zs.append(int(row["z"]) - 1)
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: cannot parse row {row}") from exc
    if "z" in fields:
        return CompleteDataset(ys, zs)
    return IncompleteDataset(ys)


def write_csv(path, data: IncompleteDataset | CompleteDataset) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if isinstance(data, CompleteDataset):
            writer.writerow(["y", "z"])
            for y, z in zip(data.y, data.z):
                writer.writerow([repr(float(y)), int(z) + 1])
        else:
            writer.writerow(["y"])
            for y in data.y:
                writer.writerow([repr(float(y))])


def read_spec_file(path) -> MixtureSpec:
    with open(path, encoding="utf-8") as fh:
        return MixtureSpec.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# densities


def component_log_joint(y, theta: MixtureParams) -> np.ndarray:
    """``log pi_i + log N(y; mu_i, var_i)`` with shape ``(n, k)``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    var = theta.variances
    resid = y[:, None] - theta.means[None, :]
    return (
        np.log(theta.weights)[None, :]
        - 0.5 * (LOG_2PI + np.log(var))[None, :]
        - 0.5 * resid**2 / var[None, :]
    )


def log_py(y, theta: MixtureParams):
    """Marginal log density of the observed value(s)."""
    out = logsumexp(component_log_joint(y, theta), axis=1)
    return float(out[0]) if np.ndim(y) == 0 else out


def log_px(y, z, theta: MixtureParams):
    """Complete-data log density ``log pi_z + log N(y; mu_z, var_z)``."""
    z_arr = np.atleast_1d(np.asarray(z, dtype=int))
    if np.any(z_arr < 0) or np.any(z_arr >= theta.spec.k):
        raise LabelOutOfRange(f"labels must lie in 0..{theta.spec.k - 1}")
    lj = component_log_joint(y, theta)
    z_arr = np.broadcast_to(z_arr, (lj.shape[0],))
    out = lj[np.arange(lj.shape[0]), z_arr]
    return float(out[0]) if np.ndim(y) == 0 and np.ndim(z) == 0 else out


def responsibilities(y, theta: MixtureParams) -> np.ndarray:
    """Posterior component probabilities; shape ``(k,)`` for scalar y, else ``(n, k)``."""
    lj = component_log_joint(y, theta)
    r = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    return r[0] if np.ndim(y) == 0 else r


def loglik(data, theta: MixtureParams) -> float:
    """Incomplete-data log-likelihood summed over the sample."""
    return float(np.sum(logsumexp(component_log_joint(_as_y(data), theta), axis=1)))


# ---------------------------------------------------------------------------
# derivatives in free coordinates


def component_scores(y, theta: MixtureParams) -> np.ndarray:
    """Gradient of ``log p_x(y, i)`` for every component i; shape ``(n, k, d)``."""
    spec = theta.spec
    k, d = spec.k, spec.d
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = y.size
    var = theta.variances
    resid = y[:, None] - theta.means[None, :]
    s = np.zeros((n, k, d))
    w = theta.weights
    for i in range(k - 1):
        s[:, i, i] = 1.0 / w[i]
    s[:, k - 1, : k - 1] = -1.0 / w[k - 1]
    idx = np.arange(k)
    s[:, idx, k - 1 + idx] = resid / var
    cls = spec.class_of
    s[:, idx, 2 * k - 1 + cls] = -0.5 / var + 0.5 * resid**2 / var**2
    return s


def component_hessians(y, theta: MixtureParams) -> np.ndarray:
    """Hessian of ``log p_x(y, i)`` for every component i; shape ``(n, k, d, d)``."""
    spec = theta.spec
    k, d = spec.k, spec.d
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = y.size
    var = theta.variances
    resid = y[:, None] - theta.means[None, :]
    h = np.zeros((n, k, d, d))
    w = theta.weights
    for i in range(k - 1):
        h[:, i, i, i] = -1.0 / w[i] ** 2
    h[:, k - 1, : k - 1, : k - 1] = -1.0 / w[k - 1] ** 2
    cls = spec.class_of
    for i in range(k):
        m = k - 1 + i
        c = 2 * k - 1 + cls[i]
        h[:, i, m, m] = -1.0 / var[i]
        h[:, i, m, c] = h[:, i, c, m] = -resid[:, i] / var[i] ** 2
        h[:, i, c, c] = 0.5 / var[i] ** 2 - resid[:, i] ** 2 / var[i] ** 3
    return h


def _select(arr: np.ndarray, y, z, k: int):
    z_arr = np.atleast_1d(np.asarray(z, dtype=int))
    if np.any(z_arr < 0) or np.any(z_arr >= k):
        raise LabelOutOfRange(f"labels must lie in 0..{k - 1}")
    z_arr = np.broadcast_to(z_arr, (arr.shape[0],))
    out = arr[np.arange(arr.shape[0]), z_arr]
    return out[0] if np.ndim(y) == 0 and np.ndim(z) == 0 else out


def score_px(y, z, theta: MixtureParams) -> np.ndarray:
    return _select(component_scores(y, theta), y, z, theta.spec.k)


def hess_px(y, z, theta: MixtureParams) -> np.ndarray:
    return _select(component_hessians(y, theta), y, z, theta.spec.k)


def score_py(y, theta: MixtureParams) -> np.ndarray:
    """Gradient of ``log p_y`` as the posterior average of component scores."""
    r = np.atleast_2d(responsibilities(np.atleast_1d(y), theta))
    out = np.einsum("nk,nkd->nd", r, component_scores(y, theta))
    return out[0] if np.ndim(y) == 0 else out


def hess_py(y, theta: MixtureParams) -> np.ndarray:
    """Hessian of ``log p_y``: ``E_r[H_i + s_i s_i^T] - s s^T``."""
    r = np.atleast_2d(responsibilities(np.atleast_1d(y), theta))
    s = component_scores(y, theta)
    h = component_hessians(y, theta)
    mean_s = np.einsum("nk,nkd->nd", r, s)
    out = (
        np.einsum("nk,nkde->nde", r, h)
        + np.einsum("nk,nkd,nke->nde", r, s, s)
        - np.einsum("nd,ne->nde", mean_s, mean_s)
    )
    return out[0] if np.ndim(y) == 0 else out


# ---------------------------------------------------------------------------
# sampling and quadrature


def sample(theta: MixtureParams, n: int, seed) -> CompleteDataset:
    """Draw ``n`` i.i.d. complete observations; deterministic in ``seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.choice(theta.spec.k, size=n, p=theta.weights)
    y = theta.means[z] + np.sqrt(theta.variances[z]) * rng.standard_normal(n)
    return CompleteDataset(y, z)


def default_rule(theta: MixtureParams, n_nodes: int = 4001, width: float = 10.0) -> QuadratureRule:
    """Simpson rule covering every component to ``width`` standard deviations."""
    sd = float(np.sqrt(theta.variances.max()))
    return simpson_rule(theta.means.min() - width * sd, theta.means.max() + width * sd, n_nodes)
