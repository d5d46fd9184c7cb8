import math

import numpy as np
import pytest

import oracle
from rectmeta import autodiff as ad
from rectmeta.datasets import Dataset, make_blobs, split
from rectmeta.model import ModelSpec, init_params
from rectmeta.trainer import (MetricRow, TrainConfig, TrainingDiverged, TrainState, batches,
                              ce_gradient, inner_update, meta_gradient, meta_step, one_hot, train,
                              warmup_step)

PLAIN = dict(momentum=0.0, weight_decay=0.0)


def small_problem(seed=0, d=3, hidden=(3,), c=2, k=8):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(d, hidden, c)
    params = init_params(spec, seed)
    for b in params.arrays[1::2]:
        b += 0.1 * rng.normal(size=b.shape)  # move biases off zero
    x = rng.normal(size=(k, d))
    y = one_hot(rng.integers(0, c, k), c)
    return params, x, y, rng


def fresh_state(params):
    return TrainState(params.copy(), [np.zeros_like(a) for a in params.arrays])


@pytest.fixture(scope="module")
def blobs():
    ds = make_blobs(300, 3, 2, seed=0)
    return split(ds, 0.1, seed=0)


# --- configuration -----------------------------------------------------------


def test_desk_profile():
    cfg = TrainConfig.desk()
    assert (cfg.batch_size, cfg.epochs, cfg.lr_period, cfg.start_epoch) == (32, 30, 10, 5)
    assert cfg.inner_lr == cfg.gamma
    assert cfg.meta_batch == 8
    assert TrainConfig().meta_batch == 16


def test_step_schedule():
    cfg = TrainConfig()
    assert [cfg.lr_at(e) for e in (0, 39, 40, 80)] == pytest.approx([0.2, 0.2, 0.02, 0.002])


@pytest.mark.parametrize("kw", [dict(alpha=1.5), dict(gamma=0.0), dict(q=0, alpha=0.5),
                                dict(start_epoch=200), dict(order="third"), dict(weighting="x"),
                                dict(m=100, batch_size=64), dict(beta=-1.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_last_partial_batch_kept():
    sizes = [len(b) for b in batches(10, 4, np.random.default_rng(0))]
    assert sizes == [4, 4, 2]
    assert sorted(np.concatenate(list(batches(10, 4, np.random.default_rng(0)))).tolist()) == list(range(10))


# --- warm-up -------------------------------------------------------------------


def test_zero_learning_rate_keeps_theta():
    params, x, y, _ = small_problem()
    state = fresh_state(params)
    warmup_step(state, x, y, TrainConfig(), lr=0.0)
    assert np.array_equal(state.params.flatten(), params.flatten())


@pytest.mark.parametrize("seed", range(5))
def test_ce_decreases_on_two_separable_points(seed):
    state = fresh_state(init_params(ModelSpec(2, (32,), 2), seed))
    x = np.array([[1.0, 0.0], [-1.0, 0.0]])
    y = np.eye(2)
    cfg = TrainConfig()
    losses = [warmup_step(state, x, y, cfg).ce for _ in range(11)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_plain_update_matches_hand_gradient():
    params, x, y, _ = small_problem(1)
    state = fresh_state(params)
    warmup_step(state, x, y, TrainConfig(gamma=0.3, **PLAIN))
    want = [a - 0.3 * g for a, g in zip(params.arrays, oracle.ce_grad(params.arrays, x, y))]
    for got, w in zip(state.params.arrays, want):
        assert np.abs(got - w).max() <= 1e-12


def test_plain_update_matches_finite_differences():
    params, x, y, _ = small_problem(2)
    fd = oracle.central_diff(lambda ps: oracle.ce(ps, x, y), params.arrays)
    state = fresh_state(params)
    warmup_step(state, x, y, TrainConfig(gamma=0.3, **PLAIN))
    step = [(a - b) / 0.3 for a, b in zip(params.arrays, state.params.arrays)]
    assert oracle.max_rel_err(step, fd) <= 1e-6


def test_momentum_and_weight_decay():
    params, x, y, _ = small_problem(3)
    cfg = TrainConfig(gamma=0.1, momentum=0.9, weight_decay=0.01)
    state = fresh_state(params)
    warmup_step(state, x, y, cfg)
    warmup_step(state, x, y, cfg)
    theta = [a.copy() for a in params.arrays]
    v = [np.zeros_like(a) for a in theta]
    for _ in range(2):
        g = oracle.ce_grad(theta, x, y)
        v = [0.9 * vi + gi + 0.01 * t for vi, gi, t in zip(v, g, theta)]
        theta = [t - 0.1 * vi for t, vi in zip(theta, v)]
    for got, want in zip(state.params.arrays, theta):
        assert np.abs(got - want).max() <= 1e-12


def test_divergence_is_reported():
    params, x, y, _ = small_problem()
    state = fresh_state(params)
    with pytest.raises(TrainingDiverged):
        warmup_step(state, x, y, TrainConfig(**PLAIN), lr=math.inf)
    assert issubclass(TrainingDiverged, FloatingPointError)
    assert issubclass(ad.NonFiniteError, FloatingPointError)


# --- inner update --------------------------------------------------------------


def test_inner_update_beta_zero():
    params, x, y, _ = small_problem()
    phi = inner_update(params, x, y, 0.0)
    assert np.array_equal(phi.flatten(), params.flatten())


def test_inner_update_on_own_labels_is_plain_sgd():
    params, x, y, _ = small_problem(4)
    phi = inner_update(params, x, y, 0.25)
    state = fresh_state(params)
    warmup_step(state, x, y, TrainConfig(gamma=0.25, **PLAIN))
    assert np.array_equal(phi.flatten(), state.params.flatten())


def test_inner_update_logistic_closed_form():
    # one input feature, two classes, no hidden layer
    spec = ModelSpec(1, (), 2)
    params = init_params(spec, 0)
    params.arrays = [np.array([[0.3, -0.2]]), np.array([[0.0, 0.1]])]
    x = np.array([[2.0], [-1.0]])
    y = np.array([[1.0, 0.0], [1.0, 0.0]])
    beta = 0.5
    # p1 = sigmoid(z1 - z0); dL/dz = (p - y) / 2
    dw, db = np.zeros(2), np.zeros(2)
    for xi, yi in zip(x[:, 0], y):
        z = np.array([0.3 * xi, -0.2 * xi + 0.1])
        p1 = 1 / (1 + math.exp(-(z[1] - z[0])))
        resid = (np.array([1 - p1, p1]) - yi) / 2
        dw += xi * resid
        db += resid
    phi = inner_update(params, x, y, beta)
    np.testing.assert_allclose(phi.arrays[0][0], [0.3, -0.2] - beta * dw, rtol=1e-14)
    np.testing.assert_allclose(phi.arrays[1][0], [0.0, 0.1] - beta * db, rtol=1e-14, atol=1e-16)


# --- meta step -------------------------------------------------------------------


def pseudo_for(y, rng, q=3, swaps=3):
    out = []
    for _ in range(q):
        yh = y.copy()
        rows = rng.choice(len(y), swaps, replace=False)
        yh[rows] = np.roll(yh[rows], 1, axis=1)
        out.append(yh)
    return out


def test_alpha_zero_matches_warmup_gradient():
    params, x, y, rng = small_problem(5)
    grads, stats = meta_gradient(params, x, y, pseudo_for(y, rng), TrainConfig(), alpha=0.0)
    _, ce_grads = ce_gradient(params, x, y)
    for a, b in zip(grads, ce_grads):
        assert np.abs(a - b).max() <= 1e-12


def test_beta_zero_gives_zero_meta_loss():
    params, x, y, rng = small_problem(6)
    cfg = TrainConfig(beta=0.0, alpha=0.5, order="second")
    grads, stats = meta_gradient(params, x, y, pseudo_for(y, rng), cfg)
    assert stats.us == [0.0, 0.0, 0.0]
    assert stats.meta == 0.0
    _, ce_grads = ce_gradient(params, x, y)
    for a, b in zip(grads, ce_grads):
        assert np.abs(a - 0.5 * b).max() <= 1e-12


def test_flat_mode_meta_is_mean_of_us():
    params, x, y, rng = small_problem(7)
    _, stats = meta_gradient(params, x, y, pseudo_for(y, rng, q=5), TrainConfig(weighting="flat"))
    assert stats.meta == sum(stats.us) / len(stats.us)


@pytest.mark.parametrize("mode", ["rectified", "flat"])
def test_objective_values_match_oracle(mode):
    params, x, y, rng = small_problem(8)
    pseudo = pseudo_for(y, rng)
    cfg = TrainConfig(gamma=0.7, alpha=0.4, c_shape=5.0, weighting=mode)
    _, stats = meta_gradient(params, x, y, pseudo, cfg)
    want, us = oracle.blended_objective(params.arrays, x, y, pseudo, 0.4, 0.7, 5.0, mode)
    assert stats.total == pytest.approx(want, rel=1e-12)
    np.testing.assert_allclose(stats.us, us, rtol=1e-10)


def test_second_order_gradient_matches_finite_differences():
    params, x, y, rng = small_problem(9)  # 3*3 + 3 + 3*2 + 2 = 20 parameters
    assert params.size == 20
    pseudo = pseudo_for(y, rng, q=3)
    cfg = TrainConfig(gamma=1.0, alpha=0.5, c_shape=2.0, order="second")
    grads, _ = meta_gradient(params, x, y, pseudo, cfg)
    fd = oracle.central_diff(
        lambda ps: oracle.blended_objective(ps, x, y, pseudo, 0.5, 1.0, 2.0)[0], params.arrays)
    assert oracle.max_rel_err(grads, fd) <= 1e-4


def test_first_order_drops_the_inner_hessian():
    params, x, y, rng = small_problem(10)
    pseudo = pseudo_for(y, rng)
    first, _ = meta_gradient(params, x, y, pseudo, TrainConfig(gamma=1.0, alpha=1.0))
    second, _ = meta_gradient(params, x, y, pseudo, TrainConfig(gamma=1.0, alpha=1.0, order="second"))
    assert oracle.max_rel_err(first, second) > 1e-3


def test_outer_update_matches_explicit_formula():
    params, x, y, rng = small_problem(11)
    pseudo = pseudo_for(y, rng)
    cfg = TrainConfig(gamma=0.05, alpha=0.5, **PLAIN)
    grads, _ = meta_gradient(params, x, y, pseudo, cfg)
    state = fresh_state(params)
    meta_step(state, x, y, cfg, pseudo=pseudo)
    for got, a, g in zip(state.params.arrays, params.arrays, grads):
        assert np.abs(got - (a - 0.05 * g)).max() <= 1e-12


def test_meta_step_needs_pseudo_sets():
    params, x, y, _ = small_problem()
    with pytest.raises(ValueError):
        meta_gradient(params, x, y, [], TrainConfig())


# --- full loop -------------------------------------------------------------------


def test_single_warmup_epoch(blobs):
    tr, va = blobs
    state = train(TrainConfig.desk(epochs=1, start_epoch=1), tr, va)
    assert len(state.history) == 1
    row = state.history[0]
    assert row.meta_loss == 0.0 and row.mean_u == 0.0
    assert 0.0 <= row.val_accuracy <= 1.0


def strip_wall(history):
    return [[getattr(r, c) for c in MetricRow.columns() if c != "wall_time"] for r in history]


def test_same_seed_same_history(blobs):
    tr, va = blobs
    cfg = TrainConfig.desk(epochs=3, start_epoch=1, q=2)
    a, b = train(cfg, tr, va), train(cfg, tr, va)
    assert strip_wall(a.history) == strip_wall(b.history)
    assert np.array_equal(a.params.flatten(), b.params.flatten())
    c = train(cfg.replace(seed=1), tr, va)
    assert not np.array_equal(a.params.flatten(), c.params.flatten())


def test_clean_labels_never_reach_the_gradients(blobs):
    tr, va = blobs
    tr = Dataset(tr.features, tr.clean_labels, 3, (tr.clean_labels + 1) % 3)
    garbage = Dataset(tr.features, np.random.default_rng(0).integers(0, 3, len(tr)), 3, tr.noisy_labels)
    cfg = TrainConfig.desk(epochs=3, start_epoch=1, q=2)
    traj = {}
    for name, ds in (("real", tr), ("garbage", garbage)):
        snaps = []
        train(cfg, ds, va, callback=lambda s, r: snaps.append(s.params.flatten()))
        traj[name] = snaps
    for a, b in zip(traj["real"], traj["garbage"]):
        assert np.array_equal(a, b)


def test_checkpoints_written(tmp_path, blobs):
    tr, va = blobs
    train(TrainConfig.desk(epochs=2, start_epoch=2), tr, va, checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_000.params", "epoch_001.params"]


def test_meta_phase_runs_and_stays_finite(blobs):
    tr, va = blobs
    state = train(TrainConfig.desk(epochs=2, start_epoch=1, q=3), tr, va)
    row = state.history[1]
    assert row.mean_u > 0 and math.isfinite(row.meta_loss) and row.meta_loss > 0
