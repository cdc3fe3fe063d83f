import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from confide.confusion import (
    ConfusionMatrix,
    DirichletPrior,
    count_matrix,
    estimate_map,
    estimate_map_from_counts,
    estimate_mle,
    human_confidence,
    prior_from_accuracy,
)
from confide.domain import EPS, CombinationDataset
from confide.errors import AccuracyOutOfRange, DegenerateMode, NoSupervisedRows
from confide.simulate import SyntheticConfig, generate

from conftest import make_dataset


def test_prior_from_accuracy_hand_values():
    p = prior_from_accuracy(0.9, 10, 9)
    assert p.gamma == pytest.approx(9.1) and p.beta == pytest.approx(1.1)
    assert p.mode().entries[0, 0] == pytest.approx(8.1 / 9)
    # a = 1/K itself is rejected, so the symmetric K=2 case is built directly.
    p = DirichletPrior(2, 1.0 + 0.5 * 4, 1.0 + 0.5 * 4 / 1)
    assert (p.gamma, p.beta) == (3.0, 3.0)
    np.testing.assert_allclose(p.mode().entries, 0.5)


@pytest.mark.parametrize("a", [0.1, 1.0, 0.05, 1.2])
def test_prior_accuracy_out_of_range(a):
    with pytest.raises(AccuracyOutOfRange):
        prior_from_accuracy(a, 10)


@given(st.integers(2, 12), st.floats(0.0, 1.0), st.floats(0.1, 1000))
def test_prior_mode_diagonal_equals_accuracy(k, frac, strength):
    a = 1.0 / k + frac * (1 - 1.0 / k)
    if not 1.0 / k < a < 1.0:
        return
    mode = prior_from_accuracy(a, k, strength).mode().entries
    np.testing.assert_allclose(np.diag(mode), a, rtol=1e-9)
    np.testing.assert_allclose(mode.sum(axis=0), 1.0, atol=1e-12)


def test_mle_counting_example():
    rows = [(0, 0, [0.5, 0.5])] * 8 + [(1, 0, [0.5, 0.5])] * 2 + [(1, 1, [0.5, 0.5])] * 10
    phi = estimate_mle(make_dataset(rows)).entries
    np.testing.assert_allclose(phi, [[0.8, 0.0], [0.2, 1.0]], atol=1e-11)
    assert phi.min() >= EPS * 0.99


def test_mle_unseen_column_is_uniform():
    phi = estimate_mle(make_dataset([(0, 0, [0.5, 0.5])])).entries
    np.testing.assert_allclose(phi[:, 0], [1.0, 0.0], atol=1e-11)
    np.testing.assert_allclose(phi[:, 1], [0.5, 0.5])


def test_mle_always_correct_is_identity():
    rows = [(j, j, [0.25] * 4) for j in range(4) for _ in range(3)]
    np.testing.assert_allclose(estimate_mle(make_dataset(rows)).entries, np.eye(4), atol=1e-11)


def test_mle_needs_labels():
    with pytest.raises(NoSupervisedRows):
        estimate_mle(make_dataset([(0, None, [0.5, 0.5])]))


def test_map_no_data_is_prior_mode():
    prior = prior_from_accuracy(0.8, 3, 10)
    data = make_dataset([(0, None, [0.2, 0.3, 0.5])])
    np.testing.assert_allclose(estimate_map(data, prior).entries, prior.mode().entries)
    np.testing.assert_allclose(np.diag(prior.mode().entries), 0.8)


def test_map_hand_example():
    prior = DirichletPrior(2, 3.0, 3.0)
    counts = np.array([[8.0, 0.0], [2.0, 0.0]])
    phi = estimate_map_from_counts(counts, prior)
    assert phi.entries[0, 0] == pytest.approx(10 / 14)
    assert human_confidence(phi, 0, 0) == pytest.approx(0.7143, abs=1e-4)


def test_map_converges_to_mle():
    cfg = SyntheticConfig(k=5, n=100_000, phi_diag=0.8, seed=2)
    data, _ = generate(cfg)
    prior = prior_from_accuracy(0.6, 5, 10)
    diff = np.abs(estimate_map(data, prior).entries - estimate_mle(data).entries).max()
    assert diff < 0.005


def test_map_weak_prior_matches_mle():
    rows = [(0, 0, [0.5, 0.5])] * 6 + [(1, 0, [0.5, 0.5])] * 4 + [(1, 1, [0.5, 0.5])] * 5
    data = make_dataset(rows)
    prior = DirichletPrior(2, 1.0 + 1e-9, 1.0 + 1e-9)
    np.testing.assert_allclose(estimate_map(data, prior).entries, estimate_mle(data).entries, atol=1e-7)


def test_degenerate_prior_rejected():
    with pytest.raises(DegenerateMode):
        DirichletPrior(3, 1.0, 1.0)
    with pytest.raises(DegenerateMode):
        estimate_map_from_counts(np.zeros((2, 2)), _FlatPrior())


class _FlatPrior:
    # alpha = 1 everywhere with no counts has no interior mode
    k = 2
    alpha = np.ones((2, 2))


def test_human_confidence_special_matrices():
    assert human_confidence(ConfusionMatrix.identity(4), 0, 0) == pytest.approx(1 - 3 * EPS)
    assert human_confidence(ConfusionMatrix.uniform(4), 1, 2) == 0.25


@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_map_columns_sum_to_one_and_permutation_equivariant(k, seed):
    rng = np.random.default_rng(seed)
    n = 40
    h, y = rng.integers(0, k, n), rng.integers(0, k, n)
    data = CombinationDataset(h, np.full((n, k), 1.0 / k), y)
    prior = prior_from_accuracy(min(0.5 + 0.5 / k, 0.95), k, 7)
    phi = estimate_map(data, prior).entries
    np.testing.assert_allclose(phi.sum(axis=0), 1.0, atol=1e-9)
    perm = rng.permutation(k)
    permuted = CombinationDataset(perm[h], np.full((n, k), 1.0 / k), perm[y])
    phi_p = estimate_map(permuted, prior).entries
    expected = np.empty_like(phi)
    expected[np.ix_(perm, perm)] = phi
    np.testing.assert_allclose(phi_p, expected, atol=1e-12)


def test_count_matrix_weights():
    counts = count_matrix([0, 1, 1], [0, 0, 1], 2, weights=np.array([0.5, 1.0, 2.0]))
    np.testing.assert_allclose(counts, [[0.5, 0.0], [1.0, 2.0]])


def test_map_recovers_synthetic_truth():
    cfg = SyntheticConfig(k=10, n=50_000, phi_diag=0.95, t_star=2.5, seed=0)
    data, _ = generate(cfg)
    phi = estimate_map(data, prior_from_accuracy(0.7, 10)).entries
    assert np.abs(phi - cfg.phi_matrix().entries).max() < 0.02
