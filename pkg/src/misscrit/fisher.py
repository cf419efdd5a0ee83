"""Fisher information matrices and the penalty trace tr(I_x I_y^{-1}).

Two routes are available for every matrix:

* expected: integrals under the model at a parameter point (closed form
  for the complete-data information, Simpson quadrature for the
  incomplete-data information);
* empirical: sample averages of score outer products and Hessians at a
  fitted point.

The SEM route estimates the same trace from the Jacobian of the EM map.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .em import em_map
from .exceptions import NotPositiveDefinite, QuadratureUnreliable
from .model import (
    MixtureParams,
    _as_y,
    component_hessians,
    component_log_joint,
    default_rule,
    hess_py,
    responsibilities,
    score_py,
)
from .numerics import QuadratureRule, central_diff_jacobian, trace_product_inv

QUAD_AGREEMENT_RTOL = 1e-3
SEM_STEP_RTOL = 0.01


class SemStepWarning(UserWarning):
    """Step-halving check of the SEM Jacobian disagreed beyond 1%."""


def info_complete(theta: MixtureParams) -> np.ndarray:
    """Expected complete-data information, in closed form.

    Weight block is ``diag(1/pi_j) + 1/pi_K``; each mean contributes
    ``pi_i / var_i``; each variance class contributes
    ``sum_{i in class} pi_i / (2 var^2)``. Off-diagonal blocks vanish.
    """
    spec = theta.spec
    k, d = spec.k, spec.d
    w = theta.weights
    out = np.zeros((d, d))
    out[: k - 1, : k - 1] = 1.0 / w[k - 1]
    out[np.arange(k - 1), np.arange(k - 1)] += 1.0 / w[: k - 1]
    var = theta.variances
    out[np.arange(k - 1, 2 * k - 1), np.arange(k - 1, 2 * k - 1)] = w / var
    cls = spec.class_of
    for c in range(spec.n_classes):
        members = cls == c
        j = 2 * k - 1 + c
        out[j, j] = np.sum(w[members] / (2.0 * var[members] ** 2))
    return out


def info_complete_quadrature(theta: MixtureParams, rule: QuadratureRule | None = None) -> np.ndarray:
    """Expected complete-data information by quadrature over y and summation over z."""
    rule = rule or default_rule(theta)
    y = rule.nodes
    pj = np.exp(component_log_joint(y, theta))
    h = component_hessians(y, theta)
    return -np.einsum("n,nk,nkde->de", rule.weights, pj, h)


def _py_on_rule(theta, rule):
    return np.exp(logsumexp(component_log_joint(rule.nodes, theta), axis=1))


def info_incomplete_forms(theta: MixtureParams, rule: QuadratureRule | None = None):
    """Outer-product and negative-Hessian quadrature forms of I_y."""
    rule = rule or default_rule(theta)
    wp = rule.weights * _py_on_rule(theta, rule)
    s = score_py(rule.nodes, theta)
    outer = np.einsum("n,nd,ne->de", wp, s, s)
    neg_hess = -np.einsum("n,nde->de", wp, hess_py(rule.nodes, theta))
    return outer, neg_hess


def info_incomplete(theta: MixtureParams, rule: QuadratureRule | None = None) -> np.ndarray:
    """Expected incomplete-data information (outer-product form).

    Raises
    ------
    QuadratureUnreliable
        If the outer-product and negative-Hessian forms differ by more than
        1e-3 relative to the matrix norm.
    """
    outer, neg_hess = info_incomplete_forms(theta, rule)
    gap = np.max(np.abs(outer - neg_hess))
    if gap > QUAD_AGREEMENT_RTOL * np.max(np.abs(outer)):
        raise QuadratureUnreliable(f"information forms disagree by {gap:.3g}")
    return 0.5 * (outer + outer.T)


def empirical_GH(data, theta: MixtureParams):
    """Sample score outer product G and negative mean Hessian H of log p_y."""
    y = _as_y(data)
    s = score_py(y, theta)
    s = np.atleast_2d(s)
    g = s.T @ s / y.size
    h = -np.atleast_3d(hess_py(y, theta)).reshape(y.size, theta.spec.d, theta.spec.d).mean(axis=0)
    return 0.5 * (g + g.T), 0.5 * (h + h.T)


def empirical_Hx(data, theta: MixtureParams) -> np.ndarray:
    """Posterior-weighted negative complete-data Hessian, averaged over the sample."""
    y = np.atleast_1d(_as_y(data))
    r = np.atleast_2d(responsibilities(y, theta))
    hx = -np.einsum("nk,nkde->de", r, component_hessians(y, theta)) / y.size
    return 0.5 * (hx + hx.T)


def sem_rate_matrix(data, theta: MixtureParams, step=None) -> np.ndarray:
    """Central-difference Jacobian of the EM map in free coordinates."""
    spec = theta.spec

    def mapping(v):
        return em_map(MixtureParams.unpack(spec, v), data, spec).pack()

    return central_diff_jacobian(mapping, theta.pack(), step)


def sem_penalty(data, theta: MixtureParams, step=None, check: bool = True) -> float:
    """Penalty trace from the EM rate matrix: tr((I - DM)^{-1}).

    ``theta`` must be a tight EM fixed point. The Jacobian is recomputed at
    half the step and a :class:`SemStepWarning` is issued if the two traces
    differ by more than 1%.
    """
    v = theta.pack()
    step = 1e-5 * (1.0 + np.abs(v)) if step is None else np.broadcast_to(step, v.shape)
    value = _sem_trace(sem_rate_matrix(data, theta, step))
    if check:
        half = _sem_trace(sem_rate_matrix(data, theta, 0.5 * step))
        if abs(half - value) > SEM_STEP_RTOL * abs(value):
            warnings.warn(f"SEM trace unstable under step halving: {value:.6g} vs {half:.6g}", SemStepWarning)
    return value


def _sem_trace(dm: np.ndarray) -> float:
    a = np.eye(dm.shape[0]) - dm
    try:
        inv = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("identity minus rate matrix is singular") from exc
    if not np.all(np.isfinite(inv)) or np.linalg.cond(a) > 1e12:
        raise NotPositiveDefinite("identity minus rate matrix is numerically singular")
    return float(np.trace(inv))


@dataclass(frozen=True, eq=False)
class FisherBundle:
    """All information matrices at one parameter point.

    ``penalty_trace`` is tr(I_x I_y^{-1}) by the route named in ``route``.
    """

    at: MixtureParams
    i_x: np.ndarray
    i_y: np.ndarray
    i_zy: np.ndarray
    penalty_trace: float
    route: str = "expected"
    g_hat: np.ndarray | None = None
    h_hat: np.ndarray | None = None
    hx_hat: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.at.spec.d

    def to_dict(self) -> dict:
        def mat(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "at": self.at.to_dict(),
            "route": self.route,
            "penalty_trace": self.penalty_trace,
            "i_x": mat(self.i_x),
            "i_y": mat(self.i_y),
            "i_zy": mat(self.i_zy),
            "g_hat": mat(self.g_hat),
            "h_hat": mat(self.h_hat),
            "hx_hat": mat(self.hx_hat),
        }


def bundle(theta: MixtureParams, data=None, route: str = "expected", rule: QuadratureRule | None = None) -> FisherBundle:
    """Collect expected (and, given data, empirical) matrices at ``theta``.

    ``route`` selects the penalty trace: ``"expected"`` uses I_x and I_y,
    ``"empirical"`` uses the sample Hx and H and needs ``data``.
    """
    if route not in ("expected", "empirical"):
        raise ValueError("route must be 'expected' or 'empirical'")
    i_x = info_complete(theta)
    i_y = info_incomplete(theta, rule)
    g = h = hx = None
    if data is not None:
        g, h = empirical_GH(data, theta)
        hx = empirical_Hx(data, theta)
    if route == "expected":
        trace = trace_product_inv(i_x, i_y)
    else:
        if data is None:
            raise ValueError("the empirical route needs data")
        trace = trace_product_inv(hx, h)
    return FisherBundle(theta, i_x, i_y, i_x - i_y, trace, route, g, h, hx)

