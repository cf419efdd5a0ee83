"""Small dense linear algebra, 1-D quadrature and finite differences.

Everything here works on plain numpy arrays. Matrices are the d x d
information matrices of a mixture model, so d is small (well under 32).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg

from .exceptions import NonFiniteIntegrand, NonFiniteValue, NotPositiveDefinite

SYMMETRY_RTOL = 1e-12


def as_symmetric(a, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    """Validate that ``a`` is a square symmetric matrix and symmetrize it."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    if np.max(np.abs(a - a.T)) > rtol * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (a + a.T)


def _cholesky(a: np.ndarray):
    try:
        return linalg.cho_factor(a, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def solve_spd(a, b) -> np.ndarray:
    """Return ``a^{-1} b`` for symmetric positive definite ``a``.

    Raises
    ------
    NotPositiveDefinite
        If the Cholesky factorization of ``a`` fails. No regularization is
        attempted, so a singular information matrix surfaces as an error.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    factor = _cholesky(a)
    x = linalg.cho_solve(factor, b)
    resid = np.max(np.abs(a @ x - b)) if b.size else 0.0
    if not np.isfinite(resid) or resid > 1e-8 * np.max(np.abs(b)):
        raise NotPositiveDefinite(f"ill-conditioned solve, residual {resid:.3g}")
    return x


def trace_product_inv(a, b) -> float:
    """tr(a b^{-1}) with ``b`` SPD."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    # tr(a b^-1) = tr(b^-1 a)
    return float(np.trace(solve_spd(b, a)))


def min_eigenvalue(a) -> float:
    return float(linalg.eigvalsh(np.asarray(a, dtype=float))[0])


def is_psd(a, rtol: float = 1e-8) -> bool:
    """Symmetric eigenvalue test with tolerance relative to the spectral norm."""
    w = linalg.eigvalsh(np.asarray(a, dtype=float))
    norm = max(np.max(np.abs(w)), np.finfo(float).tiny)
    return bool(w[0] >= -rtol * norm)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights of a one-dimensional quadrature rule."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "composite-uniform"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-D arrays of equal length")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)


def simpson_rule(lower: float, upper: float, n_nodes: int = 4001) -> QuadratureRule:
    """Composite Simpson rule on ``[lower, upper]`` with an odd node count."""
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise ValueError("composite Simpson needs an odd number of nodes >= 3")
    if not upper > lower:
        raise ValueError("empty integration interval")
    nodes = np.linspace(lower, upper, n_nodes)
    h = (upper - lower) / (n_nodes - 1)
    weights = np.full(n_nodes, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    return QuadratureRule(nodes, weights * h / 3.0, "composite-uniform")


def gauss_hermite_rule(n_nodes: int, loc: float = 0.0, scale: float = 1.0) -> QuadratureRule:
    """Gauss-Hermite rule for expectations under N(loc, scale^2).

    Weights sum to one, so ``quad_integrate(g, rule)`` approximates E[g(Y)].
    """
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    return QuadratureRule(loc + scale * x, w / w.sum(), "gauss-hermite-like")


def quad_integrate(f: Callable, rule: QuadratureRule) -> float:
    """Sum of ``weights * f(nodes)``; ``f`` is called once on the node array."""
    values = np.asarray(f(rule.nodes), dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteIntegrand("integrand is non-finite at one or more nodes")
    return float(np.dot(rule.weights, values))


def default_step(at) -> np.ndarray:
    at = np.asarray(at, dtype=float)
    return 1e-5 * (1.0 + np.abs(at))


def central_diff_jacobian(f: Callable, at, step=None) -> np.ndarray:
    """Central-difference Jacobian; entry (i, j) is d f_i / d x_j.

    ``step`` may be a scalar or a per-coordinate array; the default is
    ``1e-5 * (1 + |at|)``.
    """
    at = np.asarray(at, dtype=float)
    steps = default_step(at) if step is None else np.broadcast_to(np.asarray(step, dtype=float), at.shape)
    if np.any(steps <= 0):
        raise ValueError("step must be positive")
    f0 = np.asarray(f(at), dtype=float)
    jac = np.empty((f0.size, at.size))
    for j in range(at.size):
        e = np.zeros_like(at)
        e[j] = steps[j]
        fp = np.asarray(f(at + e), dtype=float)
        fm = np.asarray(f(at - e), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteValue(f"non-finite function value along coordinate {j}")
        jac[:, j] = (fp - fm) / (2.0 * steps[j])
    return jac
