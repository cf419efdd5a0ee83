"""Information criteria for incomplete-data model selection.

All criteria share the fit term ``-2 loglik`` (or ``-2 Q`` for AIC_cd) and
differ in the penalty:

========  ==========================================
AIC       2 d
TIC       2 tr(G H^{-1})          (empirical matrices)
PDIO      2 tr(I_x I_y^{-1})
AIC_cd    2 tr(I_x I_y^{-1})      (fit term -2 Q)
AIC_x;y   d + tr(I_x I_y^{-1})
========  ==========================================
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from .em import FitResult, q_function
from .exceptions import DegenerateFit
from .fisher import FisherBundle, empirical_GH, empirical_Hx
from .model import loglik as model_loglik
from .numerics import solve_spd, trace_product_inv

CRITERIA = ("aic", "tic", "pdio", "aic_cd", "aic_xy")
CSV_COLUMNS = ("model", "d", "loglik", "q", "penalty_trace", "aic", "tic", "pdio", "aic_cd", "aic_xy")


@dataclass(frozen=True)
class CriteriaReport:
    model_label: str
    d: int
    loglik: float
    q_at_hat: float
    penalty_trace: float
    aic: float
    tic: float
    pdio: float
    aic_cd: float
    aic_xy: float
    riskhat_xy_minus_entropy: float
    penalty_route: str = "expected"
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def csv_row(self) -> list:
        return [self.model_label, self.d, self.loglik, self.q_at_hat, self.penalty_trace,
                self.aic, self.tic, self.pdio, self.aic_cd, self.aic_xy]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerow([repr(v) if isinstance(v, float) else v for v in self.csv_row()])
        return buf.getvalue()

    def value(self, criterion: str) -> float:
        if criterion not in CRITERIA:
            raise KeyError(f"unknown criterion {criterion!r}; choose from {CRITERIA}")
        return getattr(self, criterion)


def riskhat_xy(loglik: float, g, h, hx, n: int) -> float:
    """Complete-data risk estimate without the model-independent entropy term.

    ``-loglik/n + (tr(G H^{-1}) + tr(Hx H^{-1} G H^{-1})) / (2n)``
    """
    h_inv_g = solve_spd(h, g)
    h_inv_hx = solve_spd(h, hx)
    # tr(Hx H^-1 G H^-1) = tr(H^-1 Hx H^-1 G)
    second = float(np.trace(h_inv_hx @ h_inv_g))
    return -loglik / n + (float(np.trace(h_inv_g)) + second) / (2.0 * n)


def compute_criteria(fit: FitResult, fisher: FisherBundle, data, label: str | None = None) -> CriteriaReport:
    """Evaluate every criterion at ``fit.theta_hat`` with the bundle's penalty trace.

    TIC and the risk estimate always use the empirical matrices; they are
    computed from ``data`` if the bundle does not carry them.
    """
    if fit.degenerate:
        raise DegenerateFit("cannot score a degenerate fit")
    theta = fit.theta_hat
    d = theta.spec.d
    n = len(data)
    ll = model_loglik(data, theta)
    q = q_function(theta, theta, data)
    trace = float(fisher.penalty_trace)
    g, h, hx = fisher.g_hat, fisher.h_hat, fisher.hx_hat
    if g is None or h is None:
        g, h = empirical_GH(data, theta)
    if hx is None:
        hx = empirical_Hx(data, theta)
    tic = -2.0 * ll + 2.0 * trace_product_inv(g, h)
    return CriteriaReport(
        model_label=label or theta.spec.label,
        d=d,
        loglik=ll,
        q_at_hat=q,
        penalty_trace=trace,
        aic=-2.0 * ll + 2.0 * d,
        tic=tic,
        pdio=-2.0 * ll + 2.0 * trace,
        aic_cd=-2.0 * q + 2.0 * trace,
        aic_xy=-2.0 * ll + d + trace,
        riskhat_xy_minus_entropy=riskhat_xy(ll, g, h, hx, n),
        penalty_route=fisher.route,
        n=n,
    )


def select(reports, criterion: str) -> str:
    """Label of the report minimizing ``criterion``; ties go to smaller d, then list order."""
    reports = list(reports)
    if not reports:
        raise ValueError("no candidate reports")
    best = min(range(len(reports)), key=lambda i: (reports[i].value(criterion), reports[i].d, i))
    return reports[best].model_label


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in rep.csv_row()])
    return buf.getvalue()
