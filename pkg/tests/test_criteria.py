import json

import numpy as np
import pytest

from misscrit.criteria import CRITERIA, CSV_COLUMNS, CriteriaReport, compute_criteria, riskhat_xy, select
from misscrit.em import EmConfig, FitResult, diff_term, fit_em
from misscrit.exceptions import DegenerateFit
from misscrit.fisher import bundle
from misscrit.model import MixtureParams, MixtureSpec, sample

ANCHORED = EmConfig(init="true-anchored")


def _report(data, spec, truth, route="expected"):
    fit = fit_em(data, spec, ANCHORED, anchor=truth)
    return fit, compute_criteria(fit, bundle(fit.theta_hat, data, route), data)


def test_single_component_all_equal():
    y = np.random.default_rng(40).normal(1.0, 2.0, 300)
    spec = MixtureSpec(1)
    fit = fit_em(y, spec)
    rep = compute_criteria(fit, bundle(fit.theta_hat, y), y)
    assert rep.aic == pytest.approx(rep.aic_xy, abs=1e-9)
    assert rep.aic == pytest.approx(rep.pdio, abs=1e-9)
    assert rep.aic == pytest.approx(rep.aic_cd, abs=1e-9)
    assert rep.penalty_trace == pytest.approx(2.0, abs=1e-8)


@pytest.mark.parametrize("route", ["expected", "empirical"])
def test_identities(sim1_truth, model1, model2, sim1_data, route):
    for spec in (model1, model2):
        fit, rep = _report(sim1_data.y, spec, sim1_truth, route)
        assert rep.pdio - rep.aic == pytest.approx(2 * (rep.aic_xy - rep.aic), abs=1e-9)
        assert rep.pdio - rep.aic_cd == pytest.approx(diff_term(sim1_data.y, fit.theta_hat), abs=1e-9)
        assert rep.aic_xy >= rep.aic - 1e-9
        assert rep.penalty_route == route


def test_aic_xy_equals_aic_iff_trace_is_d():
    y = np.random.default_rng(41).normal(size=100)
    fit = fit_em(y, MixtureSpec(1))
    rep = compute_criteria(fit, bundle(fit.theta_hat, y), y)
    assert rep.aic_xy == pytest.approx(rep.aic, abs=1e-9)


def test_tic_close_to_aic_at_large_n(sim1_truth, model2):
    data = sample(sim1_truth, 10**5, 42).y
    _, rep = _report(data, model2, sim1_truth)
    assert abs(rep.tic - rep.aic) <= 0.05 * rep.d


def _random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


def test_riskhat_reductions():
    rng = np.random.default_rng(43)
    d, n, ll = 5, 200, -310.0
    h = _random_spd(rng, d)
    assert riskhat_xy(ll, h, h, h, n) == pytest.approx(-ll / n + d / n)
    ix = h + np.diag(rng.uniform(0, 1, d))
    aic_xy = -2 * ll + d + np.trace(ix @ np.linalg.inv(h))
    assert 2 * n * riskhat_xy(ll, h, h, ix, n) == pytest.approx(aic_xy)


def test_riskhat_explicit_inverse():
    rng = np.random.default_rng(44)
    g, h, hx = (_random_spd(rng, 4) for _ in range(3))
    hi = np.linalg.inv(h)
    expected = 12.0 / 50 + (np.trace(g @ hi) + np.trace(hx @ hi @ g @ hi)) / 100
    assert riskhat_xy(-12.0, g, h, hx, 50) == pytest.approx(expected, rel=1e-10)


def _fake(label, d, **vals):
    base = dict(loglik=0.0, q_at_hat=0.0, penalty_trace=d, aic=0.0, tic=0.0, pdio=0.0, aic_cd=0.0,
                aic_xy=0.0, riskhat_xy_minus_entropy=0.0)
    base.update(vals)
    return CriteriaReport(model_label=label, d=d, **base)


def test_select_single_and_ties():
    assert select([_fake("only", 3)], "aic") == "only"
    reports = [_fake("big", 5, aic=1.0), _fake("small", 4, aic=1.0), _fake("worse", 2, aic=2.0)]
    assert select(reports, "aic") == "small"
    assert select([_fake("a", 4, aic=1.0), _fake("b", 4, aic=1.0)], "aic") == "a"
    with pytest.raises(KeyError):
        select(reports, "bic")


def test_select_shift_invariant():
    rng = np.random.default_rng(45)
    for _ in range(50):
        vals = rng.normal(size=4)
        shift = rng.normal(scale=100)
        a = [_fake(f"m{i}", 4 + i, aic_xy=v) for i, v in enumerate(vals)]
        b = [_fake(f"m{i}", 4 + i, aic_xy=v + shift) for i, v in enumerate(vals)]
        assert select(a, "aic_xy") == select(b, "aic_xy")


def test_degenerate_fit_rejected(sim1_truth):
    fit = FitResult(sim1_truth, 0.0, 3, False, True, [0.0])
    with pytest.raises(DegenerateFit):
        compute_criteria(fit, bundle(sim1_truth), np.zeros(10))


def test_report_serialization(sim1_truth, model2, sim1_data):
    _, rep = _report(sim1_data.y, model2, sim1_truth)
    obj = json.loads(rep.to_json())
    assert obj["riskhat_xy_minus_entropy"] == rep.riskhat_xy_minus_entropy
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert float(lines[1].split(",")[CSV_COLUMNS.index("aic_xy")]) == rep.aic_xy
    assert set(CRITERIA) <= set(obj)
