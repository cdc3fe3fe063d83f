import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confide.calibration import TAU_MAX, LogTempPrior, fit_temperature_map, fit_temperature_ml, temper
from confide.confusion import ConfusionMatrix, estimate_map, estimate_mle, prior_from_accuracy
from confide.domain import CombinationDataset
from confide.em import EmConfig, e_step, em_objective, m_step_confusion, m_step_temperature, run_em
from confide.simulate import SyntheticConfig, generate

PHI2 = ConfusionMatrix(np.array([[0.8, 0.3], [0.2, 0.7]]))


@pytest.fixture(scope="module")
def small():
    data, _ = generate(SyntheticConfig(k=4, n=400, phi_diag=0.85, t_star=1.5, seed=5))
    return data


def test_e_step_reductions(small):
    resp = e_step(small, ConfusionMatrix.identity(4), 1.0)
    # the identity is floored at EPS off the diagonal
    np.testing.assert_allclose(resp, np.eye(4)[small.human], atol=1e-8)
    np.testing.assert_allclose(e_step(small, ConfusionMatrix.uniform(4), 1.5), temper(small.probs, 1.5), rtol=1e-12)
    one = CombinationDataset([0], [[0.6, 0.4]])
    np.testing.assert_allclose(e_step(one, PHI2, 1.0), [[0.8, 0.2]], rtol=1e-12)


def test_m_step_confusion_hard_label_reduction(small):
    resp = np.eye(4)[small.truth]
    np.testing.assert_allclose(m_step_confusion(small, resp, "ML").entries, estimate_mle(small).entries, atol=1e-12)
    prior = prior_from_accuracy(0.7, 4)
    np.testing.assert_allclose(
        m_step_confusion(small, resp, "MAP", prior).entries, estimate_map(small, prior).entries, atol=1e-12
    )


def test_m_step_confusion_uniform_responsibilities(small):
    resp = np.full((small.n, 4), 0.25)
    marginal = np.bincount(small.human, minlength=4) / small.n
    phi = m_step_confusion(small, resp, "ML").entries
    for j in range(4):
        np.testing.assert_allclose(phi[:, j], marginal, rtol=1e-12)


def test_m_step_confusion_map_without_mass_is_prior_mode(small):
    prior = prior_from_accuracy(0.6, 4)
    phi = m_step_confusion(small, np.zeros((small.n, 4)), "MAP", prior)
    np.testing.assert_allclose(phi.entries, prior.mode().entries, rtol=1e-12)


def test_m_step_confusion_ml_empty_column_is_uniform(small):
    resp = np.zeros((small.n, 4))
    resp[:, :3] = 1.0 / 3
    phi = m_step_confusion(small, resp, "ML").entries
    np.testing.assert_allclose(phi[:, 3], 0.25)


def test_m_step_temperature_hard_label_reduction(small):
    resp = np.eye(4)[small.truth]
    assert m_step_temperature(small, resp, "ML").t == pytest.approx(fit_temperature_ml(small).t, rel=1e-5)
    prior = LogTempPrior(0.5, 0.5)
    assert m_step_temperature(small, resp, "MAP", prior).t == pytest.approx(fit_temperature_map(small, prior).t, rel=1e-5)


def test_m_step_temperature_uniform_responsibilities(small):
    resp = np.full((small.n, 4), 0.25)
    assert m_step_temperature(small, resp, "ML").tau == pytest.approx(TAU_MAX, abs=1e-4)


def test_m_step_temperature_self_consistency(small):
    resp = temper(small.probs, 1.0)
    assert m_step_temperature(small, resp, "ML").t == pytest.approx(1.0, abs=1e-4)
    assert m_step_temperature(small, resp, "ML", current=1.7).t == pytest.approx(1.0, abs=1e-4)


def test_em_converges_fast_when_labelers_agree():
    k = 4
    labels = np.repeat(np.arange(k), 25)
    data = CombinationDataset(labels, np.eye(k)[labels])
    params, trace = run_em(data, EmConfig(variant="ML"))
    assert trace.converged and trace.iterations <= 2
    assert np.diag(params.phi_human.entries).min() > 0.99


def test_em_ignores_true_labels(small, rng):
    shuffled = CombinationDataset(small.human, small.probs, rng.permutation(small.truth), validate=False)
    config = EmConfig(variant="ML")
    a, trace_a = run_em(small, config)
    b, trace_b = run_em(shuffled, config)
    np.testing.assert_array_equal(a.phi_human.entries, b.phi_human.entries)
    assert a.temperature.t == b.temperature.t
    assert trace_a.loglik_history == trace_b.loglik_history


def test_em_label_permutation(small):
    perm = np.array([2, 0, 3, 1])
    permuted = CombinationDataset(perm[small.human], small.probs[:, np.argsort(perm)])
    prior = prior_from_accuracy(0.7, 4)
    config = EmConfig("MAP", prior, LogTempPrior())
    a, _ = run_em(small, config)
    b, _ = run_em(permuted, config)
    expected = np.empty((4, 4))
    expected[np.ix_(perm, perm)] = a.phi_human.entries
    np.testing.assert_allclose(b.phi_human.entries, expected, atol=1e-6)
    assert b.temperature.t == pytest.approx(a.temperature.t, rel=1e-6)


@settings(max_examples=25)
@given(st.integers(2, 5), st.integers(0, 2**31 - 1), st.sampled_from(["ML", "MAP"]))
def test_em_objective_is_monotone(k, seed, variant):
    rng = np.random.default_rng(seed)
    cfg = SyntheticConfig(
        k=k,
        n=int(rng.integers(20, 200)),
        phi_diag=float(rng.uniform(1.0 / k + 0.05, 0.99)),
        t_star=float(rng.uniform(0.3, 4.0)),
        concentration=float(rng.uniform(0.3, 5.0)),
        seed=seed,
    )
    data, _ = generate(cfg)
    config = (
        EmConfig("MAP", prior_from_accuracy(0.5 + 0.4 / k, k), LogTempPrior(), max_iters=200)
        if variant == "MAP"
        else EmConfig("ML", max_iters=200)
    )
    params, trace = run_em(data, config)
    assert np.all(np.diff(trace.loglik_history) >= -1e-8)
    assert trace.iterations == len(trace.loglik_history) - 1
    c_prior = config.confusion_prior if variant == "MAP" else None
    t_prior = config.temp_prior if variant == "MAP" else None
    final = em_objective(data, params.phi_human, params.temperature, c_prior, t_prior)
    assert final == pytest.approx(trace.loglik_history[-1], rel=1e-12)


def test_em_recovers_moderate_synthetic():
    cfg = SyntheticConfig(k=5, n=20000, phi_diag=0.9, t_star=2.0, seed=0)
    data, _ = generate(cfg)
    params, trace = run_em(data, EmConfig("MAP", prior_from_accuracy(0.7, 5), LogTempPrior()))
    assert trace.converged
    assert abs(params.temperature.t - 2.0) < 0.15
    assert np.abs(np.diag(params.phi_human.entries) - 0.9).max() < 0.05


def test_em_config_validation():
    with pytest.raises(ValueError):
        EmConfig(variant="MAP")
    with pytest.raises(ValueError):
        EmConfig(variant="XYZ")
    assert EmConfig("ML").initial_temperature() == 1.0
    assert EmConfig("MAP", prior_from_accuracy(0.7, 3), LogTempPrior(0.5, 0.5)).initial_temperature() == pytest.approx(
        math.exp(0.5)
    )


def test_trace_serialization(small):
    _, trace = run_em(small, EmConfig("ML", max_iters=3))
    d = trace.to_dict()
    assert set(d) == {"iterations", "loglik", "converged"}
    assert len(d["loglik"]) == d["iterations"] + 1 and d["iterations"] <= 3
