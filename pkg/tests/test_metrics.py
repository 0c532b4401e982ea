import itertools

import numpy as np
import pytest

from varsparse.metrics import (
    CorrelationMatrix,
    DisentanglementReport,
    MccResult,
    disentanglement_check,
    mcc,
    mcc_between,
    pearson,
)

CHAIN_MIX = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, -1.0]])


# ---------------------------------------------------------------- pearson


def test_pearson_self_correlation_is_identity_diagonal():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(500, 4))
    c = pearson(x, x).c
    assert np.allclose(np.diag(c), 1.0, atol=1e-12)


def test_pearson_is_scale_and_sign_invariant():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 3))
    c = pearson(x, -2.0 * x).c
    assert np.allclose(np.diag(c), -1.0, atol=1e-12)


def test_pearson_independent_columns_nearly_uncorrelated():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(100_000, 1))
    y = rng.normal(size=(100_000, 1))
    assert abs(pearson(x, y).c[0, 0]) < 0.02


def test_pearson_matches_numpy_corrcoef():
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.normal(size=(50, 3))
        y = rng.normal(size=(50, 4))
        c = pearson(x, y).c
        full = np.corrcoef(x, y, rowvar=False)
        assert np.allclose(c, full[:3, 3:], atol=1e-12)


def test_pearson_masks_zero_variance_columns():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(100, 3))
    y = x.copy()
    y[:, 1] = 7.0  # constant learned dimension
    out = pearson(x, y)
    assert out.mask[:, 1].all()
    assert np.array_equal(out.c[:, 1], np.zeros(3))
    assert not out.mask[:, 0].any()
    assert out.c[0, 0] == pytest.approx(1.0)


def test_pearson_entries_bounded_on_random_data():
    rng = np.random.default_rng(5)
    for _ in range(20):
        x = rng.normal(size=(20, 5))
        y = x @ rng.normal(size=(5, 5)) + 0.01 * rng.normal(size=(20, 5))
        assert np.abs(pearson(x, y).c).max() <= 1.0 + 1e-12


def test_pearson_rejects_bad_shapes():
    with pytest.raises(ValueError, match="at least 2 rows"):
        pearson(np.ones((1, 2)), np.ones((1, 2)))
    with pytest.raises(ValueError, match="row counts"):
        pearson(np.ones((3, 2)), np.ones((4, 2)))
    with pytest.raises(ValueError, match="2-d"):
        pearson(np.ones(3), np.ones(3))


def test_correlation_matrix_type_validation():
    with pytest.raises(ValueError, match="share a 2-d shape"):
        CorrelationMatrix(np.zeros((2, 2)), np.zeros((3, 2), dtype=bool))
    with pytest.raises(ValueError, match=r"\[-1, 1\]"):
        CorrelationMatrix(np.array([[1.5]]), np.array([[False]]))


# ---------------------------------------------------------------- mcc


def _brute_force_mcc(weights):
    d = weights.shape[0]
    best = -1.0
    for perm in itertools.permutations(range(d)):
        score = np.mean([weights[j, perm[j]] for j in range(d)])
        best = max(best, score)
    return best


def test_mcc_identity_matrix():
    out = mcc(np.eye(4))
    assert out.score == pytest.approx(1.0)
    assert out.permutation == (0, 1, 2, 3)


def test_mcc_recovers_signed_permutation():
    perm = np.array([2, 0, 1])
    c = np.zeros((3, 3))
    for j, p in enumerate(perm):
        c[j, p] = -1.0 if j % 2 else 1.0
    out = mcc(c)
    assert out.score == pytest.approx(1.0)
    assert out.permutation == tuple(perm)
    assert out.pair_correlations == (1.0, 1.0, 1.0)


def test_mcc_equals_brute_force_for_all_small_dims():
    rng = np.random.default_rng(6)
    for d in range(1, 7):
        for _ in range(100):
            weights = rng.uniform(0, 1, size=(d, d))
            out = mcc(weights)
            assert out.score == pytest.approx(_brute_force_mcc(weights), abs=1e-12)
            assert sorted(out.permutation) == list(range(d))


def test_mcc_constant_matrix_scores_the_constant():
    out = mcc(np.full((4, 4), 0.3))
    assert out.score == pytest.approx(0.3)


def test_mcc_score_stays_in_unit_interval():
    rng = np.random.default_rng(7)
    for _ in range(50):
        c = rng.uniform(-1, 1, size=(5, 5))
        assert 0.0 <= mcc(c).score <= 1.0


def test_mcc_invariant_under_column_permutation_and_rescaling():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2_000, 4))
    learned = x @ rng.normal(size=(4, 4))
    base = mcc_between(x, learned)
    perm = rng.permutation(4)
    scales = rng.uniform(0.5, 3.0, size=4) * rng.choice([-1.0, 1.0], size=4)
    shuffled = learned[:, perm] * scales
    moved = mcc_between(x, shuffled)
    assert moved.score == pytest.approx(base.score, abs=1e-10)
    # matched pairs follow the shuffle: new column position of old match
    inverse = np.argsort(perm)
    assert moved.permutation == tuple(int(inverse[j]) for j in base.permutation)


def test_mcc_rejects_non_square():
    with pytest.raises(ValueError, match="square"):
        mcc(np.zeros((2, 3)))


def test_mcc_result_is_plain_data():
    out = mcc(np.eye(2))
    assert isinstance(out, MccResult)
    assert isinstance(out.permutation, tuple)
    assert isinstance(out.pair_correlations, tuple)


# ---------------------------------------------------------------- structural check


def test_check_passes_scaled_identity():
    report = disentanglement_check(np.diag([2.0, -1.0, 0.5]))
    assert report.passed
    assert report.violating_columns == ()


def test_check_fails_dense_mixing_matrix():
    report = disentanglement_check(CHAIN_MIX)
    assert not report.passed
    assert len(report.violating_columns) == 3


def test_check_passes_random_scaled_permutations():
    rng = np.random.default_rng(9)
    for _ in range(20):
        d = int(rng.integers(2, 7))
        perm = np.eye(d)[rng.permutation(d)]
        scales = np.diag(rng.uniform(0.2, 5.0, size=d) * rng.choice([-1.0, 1.0], size=d))
        assert disentanglement_check(perm @ scales).passed


def test_check_tolerates_noise_below_threshold_only():
    base = np.diag([1.0, 1.0, 1.0])
    report = disentanglement_check(base + 5e-3, tol=1e-2)
    assert report.passed
    report = disentanglement_check(base + 5e-2, tol=1e-2)
    assert not report.passed


def test_check_requires_row_coverage():
    # each column keeps one survivor but both land on row 0
    doubled_row = np.array([[1.0, 1.0], [0.0, 0.0]])
    report = disentanglement_check(doubled_row)
    assert not report.passed
    assert report.violating_columns == ()


def test_check_rejects_bad_matrices():
    with pytest.raises(ValueError, match="square"):
        disentanglement_check(np.zeros((2, 3)))
    with pytest.raises(ValueError, match="finite"):
        disentanglement_check(np.array([[np.inf, 0.0], [0.0, 1.0]]))


def test_check_report_renders():
    report = disentanglement_check(np.eye(2))
    assert isinstance(report, DisentanglementReport)
    assert "pass" in str(report)
