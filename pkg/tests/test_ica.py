import numpy as np
import pytest

from varsparse.ica import IcaConvergenceWarning, IcaModel, fit_fastica, transform
from varsparse.metrics import mcc_between


def _mixed_uniforms(n=100_000, d=2, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    sources = rng.uniform(-1, 1, size=(n, d))
    mixing = rng.normal(size=(d, d))
    while abs(np.linalg.det(mixing)) < 0.3:
        mixing = rng.normal(size=(d, d))
    return sources, sources @ mixing * scale


def test_recovers_uniform_sources_through_random_mixing():
    sources, mixed = _mixed_uniforms(seed=1)
    model = fit_fastica(mixed, d=2, seed=0)
    assert model.converged
    assert mcc_between(sources, transform(model, mixed)).score >= 0.95


def test_whitening_of_already_white_data_is_nearly_orthogonal():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(100_000, 3)) * np.sqrt(3.0)  # unit variance
    model = fit_fastica(x, d=3, seed=0)
    gram = model.whitening.T @ model.whitening
    assert np.abs(gram - np.eye(3)).max() < 0.05


def test_components_are_uncorrelated_with_unit_variance():
    _, mixed = _mixed_uniforms(seed=3, d=3)
    model = fit_fastica(mixed, d=3, seed=0)
    comp = transform(model, mixed)
    cov = np.cov(comp, rowvar=False, bias=True)
    assert np.allclose(np.diag(cov), 1.0, atol=1e-9)
    off = cov[~np.eye(3, dtype=bool)]
    assert np.abs(off).max() < 1e-3


def test_transform_of_mean_row_is_zero():
    _, mixed = _mixed_uniforms(seed=4)
    model = fit_fastica(mixed, d=2, seed=0)
    out = transform(model, mixed.mean(axis=0, keepdims=True))
    assert np.allclose(out, 0.0, atol=1e-12)


def test_round_trip_reconstruction_when_square():
    _, mixed = _mixed_uniforms(seed=5, d=3, n=20_000)
    model = fit_fastica(mixed, d=3, seed=0)
    comp = transform(model, mixed)
    back = comp @ np.linalg.inv(model.whitening @ model.rotation.T) + model.mean
    assert np.abs(back - mixed).max() < 1e-6


def test_fit_is_deterministic_and_seed_sensitive():
    _, mixed = _mixed_uniforms(seed=6, n=10_000)
    a = fit_fastica(mixed, d=2, seed=7)
    b = fit_fastica(mixed, d=2, seed=7)
    assert np.array_equal(a.rotation, b.rotation)
    assert np.array_equal(a.whitening, b.whitening)


def test_scaling_input_columns_does_not_change_recovery():
    sources, mixed = _mixed_uniforms(seed=8, n=50_000)
    scaled = mixed * np.array([100.0, 0.01])
    plain = transform(fit_fastica(mixed, d=2, seed=0), mixed)
    rescaled = transform(fit_fastica(scaled, d=2, seed=0), scaled)
    assert mcc_between(plain, rescaled).score >= 0.999
    assert mcc_between(sources, rescaled).score >= 0.95


def test_non_convergence_warns_and_flags():
    _, mixed = _mixed_uniforms(seed=9, n=5_000)
    with pytest.warns(IcaConvergenceWarning):
        model = fit_fastica(mixed, d=2, seed=0, max_iter=1)
    assert not model.converged
    assert model.n_iter == 1


def test_rank_deficient_covariance_is_rejected():
    rng = np.random.default_rng(10)
    col = rng.normal(size=(1_000, 1))
    x = np.hstack([col, 2.0 * col, rng.normal(size=(1_000, 1))])
    with pytest.raises(ValueError, match="rank-deficient"):
        fit_fastica(x, d=3, seed=0)


def test_fit_rejects_bad_arguments():
    x = np.zeros((5, 3))
    with pytest.raises(ValueError, match="1 <= d"):
        fit_fastica(x, d=4, seed=0)
    with pytest.raises(ValueError, match="more samples"):
        fit_fastica(np.eye(3), d=3, seed=0)
    with pytest.raises(ValueError, match="2-d"):
        fit_fastica(np.zeros(5), d=1, seed=0)


def test_transform_validates_columns():
    _, mixed = _mixed_uniforms(seed=11, n=5_000)
    model = fit_fastica(mixed, d=2, seed=0)
    with pytest.raises(ValueError, match="columns"):
        transform(model, np.zeros((4, 3)))


def test_model_rejects_non_orthogonal_rotation():
    with pytest.raises(ValueError, match="orthogonal"):
        IcaModel(
            mean=np.zeros(2),
            whitening=np.eye(2),
            rotation=np.array([[1.0, 0.5], [0.0, 1.0]]),
            converged=True,
            n_iter=1,
        )
