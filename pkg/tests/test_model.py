import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from misscrit.exceptions import ConstraintViolation, LabelOutOfRange
from misscrit.model import (
    CompleteDataset,
    IncompleteDataset,
    MixtureParams,
    MixtureSpec,
    default_rule,
    hess_px,
    hess_py,
    log_px,
    log_py,
    read_csv,
    responsibilities,
    sample,
    score_px,
    score_py,
    write_csv,
)
from misscrit.numerics import quad_integrate
from misscrit.simulate import SIM1_SPECS, SIM2_SPECS, SIM2_TRUTH

from conftest import random_params

ALL_SPECS = list(SIM1_SPECS.values()) + list(SIM2_SPECS.values())
NORMAL_1 = MixtureSpec(1)


def test_free_dimensions_match_candidate_counts():
    assert [s.d for s in SIM1_SPECS.values()] == [4, 5]
    assert [s.d for s in SIM2_SPECS.values()] == [6, 7, 7, 7, 8]


def test_spec_rejects_non_partition():
    with pytest.raises(ValueError):
        MixtureSpec(3, [[0, 1]])
    with pytest.raises(ValueError):
        MixtureSpec(2, [[0, 1], [1]])


def test_spec_dict_roundtrip_is_one_based():
    spec = SIM2_SPECS["sim2:model3"]
    obj = spec.to_dict()
    assert obj["variance_classes"] == [[1, 3], [2]]
    assert MixtureSpec.from_dict(obj) == spec


def test_log_py_standard_normal_mode():
    theta = MixtureParams(NORMAL_1, [1.0], [0.0], [1.0])
    assert log_py(0.0, theta) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-15)


def test_log_py_two_term_oracle(sim1_truth):
    direct = 0.6 * stats.norm.pdf(0, -1, 0.7) + 0.4 * stats.norm.pdf(0, 1, 0.7)
    assert log_py(0.0, sim1_truth) == pytest.approx(np.log(direct), rel=1e-13)


def test_log_py_symmetric_mixture():
    theta = MixtureParams(MixtureSpec(2, [[0, 1]]), [0.5, 0.5], [-1, 1], [0.8])
    y = np.random.default_rng(3).normal(size=50) * 3
    np.testing.assert_allclose(log_py(y, theta), log_py(-y, theta), rtol=1e-13)


def test_log_py_far_tail_is_finite(sim1_truth):
    assert np.isfinite(log_py(1e3, sim1_truth))


def test_log_px_hand_value():
    expected = np.log(0.3) + stats.norm.logpdf(0, 0, 0.7)
    assert log_px(0.0, 1, SIM2_TRUTH) == pytest.approx(expected, rel=1e-13)


def test_log_px_marginalizes(sim2_truth):
    y = np.linspace(-6, 6, 31)
    total = sum(np.exp(log_px(y, z, sim2_truth)) for z in range(3))
    np.testing.assert_allclose(total, np.exp(log_py(y, sim2_truth)), rtol=1e-12)


def test_log_px_single_component_equals_log_py():
    theta = MixtureParams(NORMAL_1, [1.0], [0.4], [2.0])
    y = np.array([-1.0, 0.0, 3.0])
    np.testing.assert_array_equal(log_px(y, 0, theta), log_py(y, theta))


def test_label_out_of_range(sim1_truth):
    with pytest.raises(LabelOutOfRange):
        log_px(0.0, 2, sim1_truth)
    with pytest.raises(LabelOutOfRange):
        score_px(0.0, -1, sim1_truth)


def test_responsibilities_cases(sim1_truth):
    assert responsibilities(0.3, MixtureParams(NORMAL_1, [1], [0], [1])) == pytest.approx([1.0])
    same = MixtureParams(MixtureSpec(3), [1 / 3] * 3, [0.5] * 3, [1.0, 1.0, 1.0])
    np.testing.assert_allclose(responsibilities(2.0, same), [1 / 3] * 3, rtol=1e-14)
    a = 0.6 * stats.norm.pdf(-1, -1, 0.7)
    b = 0.4 * stats.norm.pdf(-1, 1, 0.7)
    np.testing.assert_allclose(responsibilities(-1.0, sim1_truth), [a / (a + b), b / (a + b)], rtol=1e-13)


def test_responsibilities_rows_sum_to_one(sim2_truth):
    r = responsibilities(np.linspace(-20, 20, 101), sim2_truth)
    np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((r >= 0) & (r <= 1))


def _fd_grad(f, v, h=1e-6):
    g = np.empty_like(v)
    for j in range(v.size):
        e = np.zeros_like(v)
        e[j] = h
        g[j] = (f(v + e) - f(v - e)) / (2 * h)
    return g


def test_score_py_matches_finite_differences():
    rng = np.random.default_rng(20)
    worst = 0.0
    for i in range(100):
        spec = ALL_SPECS[i % len(ALL_SPECS)]
        theta = random_params(spec, rng)
        y = rng.normal(theta.means[rng.integers(spec.k)], 1.5)
        fd = _fd_grad(lambda v: log_py(y, MixtureParams.unpack(spec, v)), theta.pack())
        an = score_py(y, theta)
        worst = max(worst, np.max(np.abs(fd - an)) / max(np.max(np.abs(an)), 1.0))
    assert worst <= 1e-5


def test_normal_score_textbook():
    theta = MixtureParams(NORMAL_1, [1.0], [0.5], [2.0])
    y = 1.7
    expected = [(y - 0.5) / 2.0, (y - 0.5) ** 2 / (2 * 4.0) - 1 / (2 * 2.0)]
    np.testing.assert_allclose(score_py(y, theta), expected, rtol=1e-14)


def test_score_py_mean_zero_under_model(sim2_truth):
    rule = default_rule(sim2_truth)
    dens = np.exp(log_py(rule.nodes, sim2_truth))
    s = score_py(rule.nodes, sim2_truth)
    for j in range(s.shape[1]):
        assert quad_integrate(lambda _: dens * s[:, j], rule) == pytest.approx(0.0, abs=1e-8)


def test_score_and_hess_px_finite_differences():
    rng = np.random.default_rng(21)
    for i in range(30):
        spec = ALL_SPECS[i % len(ALL_SPECS)]
        theta = random_params(spec, rng)
        z = int(rng.integers(spec.k))
        y = rng.normal(theta.means[z], 1.0)
        v = theta.pack()
        fd_s = _fd_grad(lambda u: log_px(y, z, MixtureParams.unpack(spec, u)), v)
        np.testing.assert_allclose(score_px(y, z, theta), fd_s, rtol=1e-5, atol=1e-6)
        fd_h = np.array([
            _fd_grad(lambda u: score_px(y, z, MixtureParams.unpack(spec, u))[j], v) for j in range(spec.d)
        ])
        np.testing.assert_allclose(hess_px(y, z, theta), fd_h, rtol=1e-5, atol=1e-5)


def test_hess_py_finite_differences(sim2_truth):
    spec = sim2_truth.spec
    v = sim2_truth.pack()
    for y in (-2.5, 0.3, 4.0):
        fd = np.array([_fd_grad(lambda u: score_py(y, MixtureParams.unpack(spec, u))[j], v) for j in range(spec.d)])
        np.testing.assert_allclose(hess_py(y, sim2_truth), fd, rtol=1e-5, atol=1e-5)


def test_fisher_identity_for_scores(sim2_truth):
    y = np.linspace(-5, 6, 23)
    r = responsibilities(y, sim2_truth)
    mixed = sum(r[:, [z]] * score_px(y, z, sim2_truth) for z in range(3))
    np.testing.assert_allclose(mixed, score_py(y, sim2_truth), atol=1e-10)


def test_single_component_hess_is_normal():
    theta = MixtureParams(NORMAL_1, [1.0], [0.0], [2.0])
    y = 1.0
    expected = np.array([[-0.5, -y / 4.0], [-y / 4.0, 0.5 / 4.0 - y**2 / 8.0]])
    np.testing.assert_allclose(hess_px(y, 0, theta), expected)
    np.testing.assert_allclose(hess_py(y, theta), expected, atol=1e-15)


def test_sample_deterministic_and_moments(sim2_truth):
    a = sample(sim2_truth, 1000, 99)
    b = sample(sim2_truth, 1000, 99)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.z, b.z)
    big = sample(sim2_truth, 10**6, 5)
    n = big.y.size
    freq = np.bincount(big.z, minlength=3) / n
    se = np.sqrt(sim2_truth.weights * (1 - sim2_truth.weights) / n)
    assert np.all(np.abs(freq - sim2_truth.weights) <= 4 * se)
    for i in range(3):
        yi = big.y[big.z == i]
        assert abs(yi.mean() - sim2_truth.means[i]) <= 4 * np.sqrt(sim2_truth.variances[i] / yi.size)


def test_density_integrates_to_one():
    rng = np.random.default_rng(22)
    for i in range(20):
        theta = random_params(ALL_SPECS[i % len(ALL_SPECS)], rng)
        rule = default_rule(theta)
        total = quad_integrate(lambda y: np.exp(log_py(y, theta)), rule)
        assert 1 - 1e-6 <= total <= 1 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(ALL_SPECS), st.integers(0, 2**32 - 1))
def test_pack_unpack_roundtrip(spec, seed):
    theta = random_params(spec, np.random.default_rng(seed))
    back = MixtureParams.unpack(spec, theta.pack())
    np.testing.assert_allclose(back.weights, theta.weights, atol=1e-15)
    np.testing.assert_array_equal(back.means, theta.means)
    np.testing.assert_array_equal(back.class_variances, theta.class_variances)
    np.testing.assert_array_equal(back.pack(), theta.pack())


def test_unpack_rejects_invalid(model2):
    with pytest.raises(ConstraintViolation):
        MixtureParams.unpack(model2, np.array([1.2, 0, 1, 1, 1]))
    with pytest.raises(ConstraintViolation):
        MixtureParams.unpack(model2, np.array([0.5, 0, 1, -1, 1]))


def test_information_identity_at_truth():
    from misscrit.fisher import info_incomplete_forms

    rng = np.random.default_rng(23)
    for i in range(len(ALL_SPECS)):
        theta = random_params(ALL_SPECS[i], rng)
        outer, neg_hess = info_incomplete_forms(theta)
        assert np.max(np.abs(outer - neg_hess)) <= 1e-4 * np.max(np.abs(outer))


def test_csv_roundtrip(tmp_path, sim1_truth):
    data = sample(sim1_truth, 50, 1)
    write_csv(tmp_path / "c.csv", data)
    back = read_csv(tmp_path / "c.csv")
    assert isinstance(back, CompleteDataset)
    np.testing.assert_array_equal(back.y, data.y)
    np.testing.assert_array_equal(back.z, data.z)
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "y,z"
    write_csv(tmp_path / "i.csv", data.incomplete())
    back = read_csv(tmp_path / "i.csv")
    assert isinstance(back, IncompleteDataset)
    np.testing.assert_array_equal(back.y, data.y)


def test_csv_labels_are_one_based(tmp_path):
    (tmp_path / "d.csv").write_text("y,z\n0.5,1\n1.5,2\n")
    assert read_csv(tmp_path / "d.csv").z.tolist() == [0, 1]


def test_datasets_validate():
    with pytest.raises(ValueError):
        IncompleteDataset([])
    with pytest.raises(ValueError):
        IncompleteDataset([1.0, np.nan])
