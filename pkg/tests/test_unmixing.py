import json

import numpy as np
import pytest
from scipy.special import expit

from varsparse.data import EPS_VAR, MixingMatrix, generate
from varsparse.envs import EnvironmentSet, InterventionRegime
from varsparse.scm import chain_example_scm
from varsparse.unmixing import (
    AdamWState,
    LossWeights,
    TrainConfig,
    TrainingAborted,
    UnmixingModel,
    VarianceMatrix,
    adamw_init,
    adamw_step,
    grad_loss_diag,
    grad_loss_dim,
    grad_loss_env,
    grad_loss_norm,
    grad_loss_var,
    gradient,
    load_checkpoint,
    loss_diag,
    loss_dim,
    loss_env,
    loss_norm,
    loss_var,
    save_checkpoint,
    total_loss,
    train,
    variance_matrix,
    wrap_diagonal,
)

CHAIN_MIX = np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, -1.0]])

# the three two-target regimes of the worked 3-node example
CHAIN_ENVS = EnvironmentSet(
    3,
    (
        InterventionRegime((0, 1), (1.0, 1.0)),
        InterventionRegime((0, 2), (1.0, 2.0)),
        InterventionRegime((1, 2), (1.0, 3.0)),
    ),
)


def _chain_dataset(n=10_000, seed=0):
    return generate(
        chain_example_scm(), CHAIN_ENVS, MixingMatrix(CHAIN_MIX), n, rng_seed=seed
    )


def _random_batches(rng, n_envs=3, n=40, m=3):
    return [rng.normal(size=(n, m)) @ rng.normal(size=(m, m)) for _ in range(n_envs)]


def _rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


# ---------------------------------------------------------------- variance_matrix


def test_variance_matrix_ground_truth_unmixing_isolates_free_component():
    ds = _chain_dataset()
    model = UnmixingModel(np.linalg.inv(CHAIN_MIX), init_seed=0)
    batches = [ds.train_observed(e) for e in range(3)]
    v = variance_matrix(batches, model).v
    # env 0 pins Z1 and Z2, so only the noise of Z3 survives (unit variance)
    assert v[0, 0] < 1e-12 and v[0, 1] < 1e-12
    assert v[0, 2] == pytest.approx(1.0, rel=0.1)
    assert v[1, 0] < 1e-12 and v[1, 2] < 1e-12
    assert v[2, 1] < 1e-12 and v[2, 2] < 1e-12


def test_variance_matrix_constant_batch_gives_zero_row():
    model = UnmixingModel(np.eye(3), init_seed=0)
    batches = [np.ones((10, 3)), np.zeros((5, 3))]
    v = variance_matrix(batches, model).v
    assert np.array_equal(v, np.zeros((2, 3)))


def test_variance_matrix_identity_on_mixed_data_sees_variance_everywhere():
    ds = _chain_dataset()
    model = UnmixingModel(np.eye(3), init_seed=0)
    v = variance_matrix([ds.train_observed(e) for e in range(3)], model).v
    assert (v > EPS_VAR).all()


def test_variance_matrix_rejects_tiny_batches():
    model = UnmixingModel(np.eye(3), init_seed=0)
    with pytest.raises(ValueError, match="at least 2 rows"):
        variance_matrix([np.ones((1, 3))], model)
    with pytest.raises(ValueError, match="model expects 3"):
        variance_matrix([np.ones((4, 2))], model)


def test_variance_matrix_type_rejects_negative_entries():
    with pytest.raises(ValueError, match="negative"):
        VarianceMatrix(np.array([[0.5, -0.1]]))
    with pytest.raises(ValueError, match="2-d"):
        VarianceMatrix(np.zeros(3))


# ---------------------------------------------------------------- loss terms


def test_loss_var_zero_matrix():
    assert loss_var(np.zeros((3, 3))) == pytest.approx(4.5)


def test_loss_var_single_hot_entry():
    v = np.zeros((3, 3))
    v[1, 2] = 9.0
    assert loss_var(v) == pytest.approx(8 * 0.5 + expit(9.0), abs=1e-12)


def test_loss_var_monotone_in_entries():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.uniform(0, 3, size=(3, 4))
        bigger = v + rng.uniform(0, 1, size=v.shape)
        assert loss_var(bigger) >= loss_var(v)


def test_loss_env_values():
    assert loss_env(np.zeros((3, 3))) == pytest.approx(-1.5)
    assert loss_env(np.diag([5.0, 5.0, 5.0])) == pytest.approx(-3 * expit(5.0), abs=1e-12)
    assert loss_env(np.full((3, 3), 1e3)) == pytest.approx(-3.0, abs=1e-9)


def test_loss_dim_values():
    assert loss_dim(np.zeros((3, 3))) == pytest.approx(-1.5)
    assert loss_dim(np.diag([5.0, 5.0, 5.0])) == pytest.approx(-3 * expit(5.0), abs=1e-12)
    assert loss_dim(np.full((3, 3), 1e3)) == pytest.approx(-3.0, abs=1e-9)


def test_loss_dim_is_loss_env_of_transpose():
    rng = np.random.default_rng(1)
    for _ in range(10):
        v = rng.uniform(0, 2, size=(4, 3))
        assert loss_dim(v) == pytest.approx(loss_env(v.T), abs=1e-12)


def test_wrap_diagonal_indexing():
    a = np.arange(1, 10, dtype=float).reshape(3, 3)  # a[i,j] = 3i + j + 1
    assert np.array_equal(wrap_diagonal(a, 1), [a[0, 0], a[1, 1], a[2, 2]])
    assert np.array_equal(wrap_diagonal(a, 2), [a[0, 1], a[1, 2], a[2, 0]])
    assert np.array_equal(wrap_diagonal(a, 3), [a[0, 2], a[1, 0], a[2, 1]])


def test_wrap_diagonal_rejects_bad_input():
    with pytest.raises(ValueError, match="square"):
        wrap_diagonal(np.zeros((2, 3)), 1)
    with pytest.raises(ValueError, match="k must lie"):
        wrap_diagonal(np.zeros((3, 3)), 4)
    with pytest.raises(ValueError, match="k must lie"):
        wrap_diagonal(np.zeros((3, 3)), 0)


def test_loss_diag_prefers_single_occupied_diagonal():
    permuted = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    spread = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
    assert loss_diag(permuted) == pytest.approx(np.sqrt(3.0))
    assert loss_diag(spread) == pytest.approx(2.0 * np.sqrt(2.0))
    assert loss_diag(spread) > loss_diag(permuted)
    assert loss_diag(np.zeros((4, 4))) == 0.0


def test_loss_diag_rectangular_rows_cycle_through_offsets():
    v = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    # both entries sit on offset (j - i) mod 4 == 0
    assert loss_diag(v) == pytest.approx(np.sqrt(2.0))
    v2 = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    assert loss_diag(v2) == pytest.approx(2.0)


def test_loss_norm_values():
    eye = UnmixingModel(np.eye(3) / np.sqrt(3.0), init_seed=0)
    assert loss_norm(eye) == pytest.approx(0.0, abs=1e-15)
    assert loss_norm(UnmixingModel(np.zeros((3, 3)), 0)) == pytest.approx(1.0)
    tripled = UnmixingModel(3.0 * np.eye(3) / np.sqrt(3.0), init_seed=0)
    assert loss_norm(tripled) == pytest.approx(4.0)


# ---------------------------------------------------------------- invariances


def test_row_permutation_leaves_all_terms_but_diag_unchanged():
    rng = np.random.default_rng(2)
    for _ in range(10):
        v = rng.uniform(0, 2, size=(4, 4))
        perm = rng.permutation(4)
        assert loss_var(v[perm]) == pytest.approx(loss_var(v), abs=1e-12)
        assert loss_env(v[perm]) == pytest.approx(loss_env(v), abs=1e-12)
        assert loss_dim(v[perm]) == pytest.approx(loss_dim(v), abs=1e-12)


def test_loss_diag_changes_under_plain_row_swap():
    v = np.diag([1.0, 2.0, 3.0])
    swapped = v[[1, 0, 2]]
    assert abs(loss_diag(swapped) - loss_diag(v)) > 0.1


def test_loss_diag_invariant_under_cyclic_co_shift():
    rng = np.random.default_rng(3)
    for _ in range(10):
        v = rng.uniform(0, 2, size=(5, 5))
        shift = int(rng.integers(1, 5))
        rolled = np.roll(np.roll(v, shift, axis=0), shift, axis=1)
        assert loss_diag(rolled) == pytest.approx(loss_diag(v), abs=1e-12)


def test_ground_truth_unmixing_beats_identity_on_sparsity_term():
    ds = _chain_dataset()
    batches = [ds.train_observed(e) for e in range(3)]
    identity = loss_var(variance_matrix(batches, UnmixingModel(np.eye(3), 0)).v)
    rng = np.random.default_rng(4)
    for _ in range(5):
        perm = np.eye(3)[rng.permutation(3)]
        scales = np.diag(rng.uniform(0.5, 2.0, size=3) * rng.choice([-1.0, 1.0], size=3))
        lhat = np.linalg.inv(CHAIN_MIX) @ perm @ scales
        truth = loss_var(variance_matrix(batches, UnmixingModel(lhat, 0)).v)
        assert truth < identity


# ---------------------------------------------------------------- gradients


def _fd_grad(fn, v, h=1e-5):
    g = np.zeros_like(v)
    for idx in np.ndindex(v.shape):
        vp = v.copy()
        vp[idx] += h
        vm = v.copy()
        vm[idx] -= h
        g[idx] = (fn(vp) - fn(vm)) / (2 * h)
    return g


@pytest.mark.parametrize(
    "fn,grad_fn",
    [
        (loss_var, grad_loss_var),
        (loss_env, grad_loss_env),
        (loss_dim, grad_loss_dim),
        (loss_diag, grad_loss_diag),
    ],
)
def test_term_gradients_match_finite_differences(fn, grad_fn):
    rng = np.random.default_rng(5)
    for i in range(20):
        shape = (3, 3) if i % 2 == 0 else (4, 3)
        if fn is loss_diag and i % 2 != 0:
            shape = (6, 3)  # rectangular diagonals exercise the cycling rule
        v = rng.uniform(0.05, 3.0, size=shape)
        fd = _fd_grad(fn, v)
        an = grad_fn(v)
        worst = np.max(np.abs(fd - an) / np.maximum.reduce([np.abs(fd), np.abs(an), np.full(v.shape, 1e-12)]))
        assert worst < 1e-4


def test_norm_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    for _ in range(20):
        lhat = rng.normal(size=(4, 3))
        fd = _fd_grad(lambda a: loss_norm(UnmixingModel(a, 0)), lhat)
        an = grad_loss_norm(UnmixingModel(lhat, 0))
        assert np.max(np.abs(fd - an)) < 1e-4


def test_diag_subgradient_is_zero_on_empty_diagonals():
    v = np.diag([1.0, 2.0, 3.0])
    g = grad_loss_diag(v)
    off = ~np.eye(3, dtype=bool)
    assert np.array_equal(g[off], np.zeros(6))
    assert (g[np.eye(3, dtype=bool)] > 0).all()


def test_norm_gradient_vanishes_at_target_norm():
    lhat = np.eye(3) / np.sqrt(3.0)
    assert np.allclose(grad_loss_norm(UnmixingModel(lhat, 0)), 0.0, atol=1e-15)
    assert np.array_equal(grad_loss_norm(UnmixingModel(np.zeros((2, 2)), 0)), np.zeros((2, 2)))


def test_total_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    weights = LossWeights()
    h = 1e-5
    for _ in range(20):
        batches = _random_batches(rng)
        lhat = rng.normal(size=(3, 3)) * rng.uniform(0.3, 1.5)
        model = UnmixingModel(lhat, 0)
        an = gradient(batches, model, weights)
        worst = 0.0
        for idx in np.ndindex(lhat.shape):
            lp = lhat.copy()
            lp[idx] += h
            lm = lhat.copy()
            lm[idx] -= h
            fp, _ = total_loss(batches, UnmixingModel(lp, 0), weights)
            fm, _ = total_loss(batches, UnmixingModel(lm, 0), weights)
            worst = max(worst, _rel_err((fp - fm) / (2 * h), an[idx]))
        assert worst < 1e-4


def test_gradient_zero_for_constant_batches_without_norm_term():
    weights = LossWeights(lambda_e=0.0, lambda_m=0.0, lambda_diag=0.0, lambda_norm=0.0)
    batches = [np.ones((8, 3)), 2.0 * np.ones((8, 3))]
    model = UnmixingModel(np.full((3, 3), 0.4), init_seed=0)
    assert np.array_equal(gradient(batches, model, weights), np.zeros((3, 3)))


def test_total_loss_breakdown_is_consistent():
    rng = np.random.default_rng(8)
    batches = _random_batches(rng)
    model = UnmixingModel(rng.normal(size=(3, 3)), 0)
    weights = LossWeights(lambda_e=0.7, lambda_m=1.3, lambda_diag=2.0, lambda_norm=0.5)
    total, b = total_loss(batches, model, weights)
    assert total == pytest.approx(
        b.var + 0.7 * b.env + 1.3 * b.dim + 2.0 * b.diag + 0.5 * b.norm, abs=1e-12
    )
    assert set(b.as_dict()) == {
        "total", "loss_var", "loss_env", "loss_dim", "loss_diag", "loss_norm"
    }


def test_total_loss_norm_weight_scales_norm_term_alone():
    rng = np.random.default_rng(9)
    batches = _random_batches(rng)
    model = UnmixingModel(rng.normal(size=(3, 3)), 0)
    bare = LossWeights(lambda_e=0.0, lambda_m=0.0, lambda_diag=0.0, lambda_norm=0.0)
    with_norm = LossWeights(lambda_e=0.0, lambda_m=0.0, lambda_diag=0.0, lambda_norm=5.0)
    t0, _ = total_loss(batches, model, bare)
    t1, _ = total_loss(batches, model, with_norm)
    assert t1 - t0 == pytest.approx(5.0 * loss_norm(model), abs=1e-12)


# ---------------------------------------------------------------- optimizer


def test_adamw_zero_gradient_is_pure_weight_decay():
    config = TrainConfig(seed=0)
    theta = np.array([[1.0, -2.0], [0.5, 4.0]])
    state = adamw_init(theta)
    new = adamw_step(state, np.zeros_like(theta), config)
    assert np.allclose(new.theta, theta * (1.0 - config.learning_rate * config.weight_decay), atol=1e-15)


def test_adamw_first_step_closed_form():
    config = TrainConfig(seed=0)
    theta = np.array([[0.3, -0.7]])
    state = adamw_init(theta)
    new = adamw_step(state, np.ones_like(theta), config)
    expected = theta - config.learning_rate * (
        1.0 / (1.0 + config.eps) + config.weight_decay * theta
    )
    assert np.allclose(new.theta, expected, atol=1e-12)
    assert new.t == 1


def test_adamw_two_step_hand_trace():
    config = TrainConfig(learning_rate=0.1, beta1=0.9, beta2=0.99, eps=1e-8, weight_decay=0.0, seed=0)
    theta = np.array([[1.0, 2.0], [3.0, 4.0]])
    g1 = np.array([[1.0, -1.0], [0.5, 0.0]])
    g2 = np.array([[-1.0, 1.0], [0.5, 2.0]])
    state = adamw_step(adamw_step(adamw_init(theta), g1, config), g2, config)

    m = 0.1 * g1
    v = 0.01 * g1 * g1
    th = theta - 0.1 * (m / (1 - 0.9)) / (np.sqrt(v / (1 - 0.99)) + 1e-8)
    m = 0.9 * m + 0.1 * g2
    v = 0.99 * v + 0.01 * g2 * g2
    th = th - 0.1 * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.99**2)) + 1e-8)
    assert np.allclose(state.theta, th, atol=1e-12)
    assert state.t == 2


def test_adamw_rejects_shape_mismatch():
    state = adamw_init(np.zeros((2, 2)))
    with pytest.raises(ValueError, match="shape"):
        adamw_step(state, np.zeros((3, 2)), TrainConfig(seed=0))


def test_adamw_state_fields():
    state = adamw_init(np.ones((2, 3)))
    assert isinstance(state, AdamWState)
    assert state.t == 0
    assert np.array_equal(state.m, np.zeros((2, 3)))
    assert np.array_equal(state.v, np.zeros((2, 3)))


# ---------------------------------------------------------------- training


def test_train_loss_decreases_on_chain_data():
    down = 0
    for seed in range(5):
        ds = _chain_dataset(n=20_000, seed=seed)
        _, report = train(ds, LossWeights(), TrainConfig(seed=seed))
        assert len(report.epoch_losses) == 50
        assert report.grad_check_rel_err < 1e-4
        if report.epoch_losses[-1].total < report.epoch_losses[0].total:
            down += 1
    assert down >= 4


def test_train_is_bit_reproducible():
    ds = _chain_dataset(n=2_000, seed=1)
    config = TrainConfig(epochs=3, batch_size=500, seed=11)
    model_a, report_a = train(ds, LossWeights(), config)
    model_b, report_b = train(ds, LossWeights(), config)
    assert np.array_equal(model_a.lhat, model_b.lhat)
    assert report_a.epoch_losses == report_b.epoch_losses
    model_c, _ = train(ds, LossWeights(), TrainConfig(epochs=3, batch_size=500, seed=12))
    assert not np.array_equal(model_a.lhat, model_c.lhat)


def test_train_report_shapes_and_exports(tmp_path):
    ds = _chain_dataset(n=2_000, seed=2)
    _, report = train(ds, LossWeights(), TrainConfig(epochs=2, batch_size=500, seed=0))
    assert report.final_variances.shape == (3, 3)
    assert report.wall_time_s > 0
    doc = json.loads(report.to_json())
    assert len(doc["epochs"]) == 2
    assert all(np.isfinite(list(e.values())).all() for e in doc["epochs"])
    csv_path = tmp_path / "report.csv"
    report.to_csv(csv_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "epoch,total,loss_var,loss_env,loss_dim,loss_diag,loss_norm"
    assert len(lines) == 3


def test_train_rejects_degenerate_inputs():
    single_env = EnvironmentSet(3, (InterventionRegime((0, 1), (1.0, 1.0)),))
    ds = generate(
        chain_example_scm(), single_env, MixingMatrix(CHAIN_MIX), 1_000, rng_seed=0
    )
    with pytest.raises(ValueError, match="at least 2 environments"):
        train(ds, LossWeights(), TrainConfig(seed=0))
    ds2 = _chain_dataset(n=1_000)
    with pytest.raises(ValueError, match="exceeds"):
        train(ds2, LossWeights(), TrainConfig(batch_size=4096, seed=0))


def test_training_aborted_carries_partial_report():
    ds = _chain_dataset(n=2_000, seed=3)
    # a learning rate this absurd overflows the parameters within a few steps
    config = TrainConfig(epochs=5, batch_size=500, learning_rate=1e150, seed=0)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(TrainingAborted) as err:
        train(ds, LossWeights(), config)
    assert isinstance(err.value.report.epoch_losses, list)
    assert err.value.epoch >= 0 and err.value.step >= 0


# ---------------------------------------------------------------- model/config types


def test_model_initialize_is_bounded_and_deterministic():
    a = UnmixingModel.initialize(4, 3, seed=5)
    b = UnmixingModel.initialize(4, 3, seed=5)
    assert a.lhat.shape == (4, 3)
    assert np.abs(a.lhat).max() <= 0.5  # 1/sqrt(4)
    assert np.array_equal(a.lhat, b.lhat)
    assert a.m == 4 and a.d == 3


def test_model_rejects_non_finite_entries():
    with pytest.raises(ValueError, match="finite"):
        UnmixingModel(np.array([[np.nan, 0.0]]), init_seed=0)
    with pytest.raises(ValueError, match="2-d"):
        UnmixingModel(np.zeros(3), init_seed=0)


def test_model_transform_applies_lhat():
    model = UnmixingModel(2.0 * np.eye(2), init_seed=0)
    assert np.array_equal(model.transform(np.array([[1.0, 3.0]])), [[2.0, 6.0]])


def test_loss_weights_and_config_validation():
    with pytest.raises(ValueError, match="nonnegative"):
        LossWeights(lambda_diag=-1.0)
    with pytest.raises(ValueError, match="positive"):
        LossWeights(norm_target=0.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)
    defaults = TrainConfig(seed=0)
    assert (defaults.epochs, defaults.batch_size) == (50, 4096)
    assert defaults.learning_rate == pytest.approx(2e-3)
    assert (defaults.beta1, defaults.beta2) == (0.9, 0.999)
    assert defaults.eps == pytest.approx(1e-8)
    assert defaults.weight_decay == pytest.approx(1e-2)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    model = UnmixingModel.initialize(3, 3, seed=9)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path, config=TrainConfig(seed=9), epoch=50)
    loaded, header = load_checkpoint(path)
    assert np.array_equal(loaded.lhat, model.lhat)
    assert loaded.init_seed == 9
    assert header["epoch"] == 50
    assert header["config"]["batch_size"] == 4096


def test_checkpoint_rejects_corruption(tmp_path):
    model = UnmixingModel.initialize(3, 3, seed=9)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    truncated = tmp_path / "short.ckpt"
    truncated.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="payload bytes"):
        load_checkpoint(truncated)
    headerless = tmp_path / "headerless.ckpt"
    headerless.write_bytes(b"no newline here")
    with pytest.raises(ValueError, match="header"):
        load_checkpoint(headerless)
