"""EM fitting of variance-tied Gaussian mixtures to unlabeled data."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .exceptions import AllRestartsDegenerate, EmptyComponent, VarianceFloorHit
from .model import (
    LOG_2PI,
    MixtureParams,
    MixtureSpec,
    _as_y,
    component_log_joint,
)

logger = logging.getLogger(__name__)

INIT_METHODS = ("true-anchored", "quantile", "random")
VARIANCE_FLOOR_REL = 1e-8
MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class EmConfig:
    """Stopping rule, restarts and initialization for :func:`fit_em`.

    Iteration stops once the per-observation log-likelihood change drops
    below ``tol_loglik`` and the largest free-coordinate step drops below
    ``tol_param``.
    """

    max_iters: int = 2000
    tol_loglik: float = 1e-9
    tol_param: float = 1e-7
    n_restarts: int = 1
    init: str = "quantile"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol_loglik > 0 or not self.tol_param > 0:
            raise ValueError("tolerances must be positive")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}")

    def to_dict(self) -> dict:
        return {
            "max_iters": self.max_iters,
            "tol_loglik": self.tol_loglik,
            "tol_param": self.tol_param,
            "n_restarts": self.n_restarts,
            "init": self.init,
            "seed": self.seed,
        }


@dataclass(eq=False)
class FitResult:
    theta_hat: MixtureParams
    loglik: float
    iters: int
    converged: bool
    degenerate: bool = False
    loglik_trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.to_dict(),
            "theta_hat_sorted": self.theta_hat.sorted_by_mean(),
            "loglik": self.loglik,
            "iters": self.iters,
            "converged": self.converged,
            "degenerate": self.degenerate,
            "loglik_trace": list(self.loglik_trace),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def e_step(data, theta: MixtureParams) -> np.ndarray:
    """Responsibility matrix ``(n, k)``; rows are posterior label probabilities."""
    lj = component_log_joint(_as_y(data), theta)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def _e_step_with_loglik(y, theta):
    lj = component_log_joint(y, theta)
    lse = logsumexp(lj, axis=1, keepdims=True)
    return np.exp(lj - lse), float(lse.sum())


def m_step(data, weights, spec: MixtureSpec, variance_floor: float | None = None) -> MixtureParams:
    """Closed-form maximizer of the Q function under variance tying.

    Raises
    ------
    EmptyComponent
        If a responsibility column sums to (numerically) zero.
    VarianceFloorHit
        If a pooled variance falls below ``variance_floor``.
    """
    y = _as_y(data)
    w = np.asarray(weights, dtype=float)
    n = y.size
    nk = w.sum(axis=0)
    if np.any(nk <= n * np.finfo(float).eps) or np.any(~np.isfinite(nk)):
        raise EmptyComponent(f"component mass {nk} underflowed")
    pi = nk / n
    pi = pi / pi.sum()
    mu = (w * y[:, None]).sum(axis=0) / nk
    ss = (w * (y[:, None] - mu[None, :]) ** 2).sum(axis=0)
    var = np.array([ss[list(c)].sum() / nk[list(c)].sum() for c in spec.variance_classes])
    if variance_floor is not None and np.any(var < variance_floor):
        raise VarianceFloorHit(f"variance {var.min():.3g} below floor {variance_floor:.3g}")
    return MixtureParams(spec, pi, mu, var)


def q_function(theta2: MixtureParams, theta1: MixtureParams, data) -> float:
    """``Q(theta2; theta1)``: expected complete log-likelihood under theta1's posterior."""
    y = _as_y(data)
    r = e_step(y, theta1)
    return float(np.sum(r * component_log_joint(y, theta2)))


def em_map(theta: MixtureParams, data, spec: MixtureSpec | None = None) -> MixtureParams:
    """One full E + M update."""
    return m_step(data, e_step(data, theta), spec or theta.spec)


def diff_term(data, theta: MixtureParams) -> float:
    """``2 Q(theta; theta) - 2 loglik(theta)``, twice the summed negative label entropy."""
    r = e_step(data, theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(r > 0, r * np.log(r), 0.0)
    return float(2.0 * plogp.sum())


# ---------------------------------------------------------------------------
# initialization


def anchor_params(truth: MixtureParams, spec: MixtureSpec) -> MixtureParams:
    """Map a generating point into ``spec`` by pooling variances per class."""
    if truth.spec.k != spec.k:
        raise ValueError("anchor and candidate must have the same number of components")
    return MixtureParams.from_components(spec, truth.weights, truth.means, truth.variances)


def quantile_init(y: np.ndarray, spec: MixtureSpec) -> MixtureParams:
    k = spec.k
    means = np.quantile(y, (np.arange(k) + 0.5) / k)
    var = np.var(y) / k**2 if k > 1 else np.var(y)
    var = max(var, 1e-6 * max(np.var(y), 1e-300))
    return MixtureParams(spec, np.full(k, 1.0 / k), means, np.full(spec.n_classes, var))


def random_init(y: np.ndarray, spec: MixtureSpec, rng: np.random.Generator) -> MixtureParams:
    k = spec.k
    weights = 0.5 * rng.dirichlet(np.ones(k)) + 0.5 / k
    means = rng.choice(y, size=k, replace=y.size < k)
    var = np.var(y) * rng.uniform(0.25, 1.0, size=spec.n_classes)
    var = np.maximum(var, 1e-6 * max(np.var(y), 1e-300))
    return MixtureParams(spec, weights, means, var)


def _log_joint(y, w, mu, var):
    resid = y[:, None] - mu[None, :]
    return np.log(w) - 0.5 * (LOG_2PI + np.log(var)) - 0.5 * resid**2 / var


def _lse_rows(a):
    m = a.max(axis=1, keepdims=True)
    return m + np.log(np.exp(a - m).sum(axis=1, keepdims=True))


def _run_em(y, theta, spec, cfg, floor) -> FitResult:
    # raw-array loop; MixtureParams is only built for the returned point
    n = y.size
    groups = [list(c) for c in spec.variance_classes]
    cls = spec.class_of
    w, mu, cvar = theta.weights.copy(), theta.means.copy(), theta.class_variances.copy()
    lj = _log_joint(y, w, mu, cvar[cls])
    lse = _lse_rows(lj)
    ll = float(lse.sum())
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        r = np.exp(lj - lse)
        nk = r.sum(axis=0)
        if np.any(nk <= n * np.finfo(float).eps) or not np.all(np.isfinite(nk)):
            logger.debug("degenerate EM run: empty component at iteration %d", it)
            return FitResult(MixtureParams(spec, w, mu, cvar), ll, it, False, True, trace)
        new_w = nk / n
        new_w /= new_w.sum()
        new_mu = (r * y[:, None]).sum(axis=0) / nk
        ss = (r * (y[:, None] - new_mu) ** 2).sum(axis=0)
        new_cvar = np.array([ss[g].sum() / nk[g].sum() for g in groups])
        if np.any(new_cvar < floor):
            logger.debug("degenerate EM run: variance floor hit at iteration %d", it)
            return FitResult(MixtureParams(spec, w, mu, cvar), ll, it, False, True, trace)
        step = max(np.max(np.abs(new_w[:-1] - w[:-1])) if spec.k > 1 else 0.0,
                   np.max(np.abs(new_mu - mu)), np.max(np.abs(new_cvar - cvar)))
        w, mu, cvar = new_w, new_mu, new_cvar
        lj = _log_joint(y, w, mu, cvar[cls])
        lse = _lse_rows(lj)
        ll_new = float(lse.sum())
        if ll_new < ll - MONOTONE_SLACK:
            logger.warning("log-likelihood decreased by %.3g at iteration %d", ll - ll_new, it)
        delta = ll_new - ll
        ll = ll_new
        trace.append(ll)
        if abs(delta) / n < cfg.tol_loglik and step < cfg.tol_param:
            converged = True
            break
    return FitResult(MixtureParams(spec, w, mu, cvar), ll, it, converged, False, trace)


def fit_em(data, spec: MixtureSpec, cfg: EmConfig | None = None, anchor: MixtureParams | None = None) -> FitResult:
    """Fit ``spec`` to unlabeled data, returning the best of ``cfg.n_restarts`` runs.

    With ``init="true-anchored"`` the first run starts at ``anchor`` mapped
    into ``spec``; further restarts use random starts. Runs that hit the
    variance floor or empty a component are discarded.

    Raises
    ------
    AllRestartsDegenerate
        If every run was discarded.
    """
    cfg = cfg or EmConfig()
    y = _as_y(data)
    if y.size < spec.d:
        raise ValueError(f"need at least d={spec.d} observations, got {y.size}")
    floor = VARIANCE_FLOOR_REL * float(np.var(y))
    rng = np.random.default_rng(cfg.seed)
    best = None
    n_degenerate = 0
    for restart in range(cfg.n_restarts):
        if restart == 0 and cfg.init == "true-anchored":
            if anchor is None:
                raise ValueError("true-anchored init needs an anchor parameter")
            start = anchor_params(anchor, spec)
        elif restart == 0 and cfg.init == "quantile":
            start = quantile_init(y, spec)
        else:
            start = random_init(y, spec, rng)
        result = _run_em(y, start, spec, cfg, floor)
        if result.degenerate:
            n_degenerate += 1
            continue
        if best is None or result.loglik > best.loglik:
            best = result
    if best is None:
        raise AllRestartsDegenerate(f"all {n_degenerate} EM runs were degenerate")
    return best
