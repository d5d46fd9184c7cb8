import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rectmeta import autodiff as ad
from rectmeta.model import (ModelSpec, ParamSet, features, init_params, logits, predict,
                            predict_node)


@pytest.fixture
def spec():
    return ModelSpec(4, (6, 5), 3)


def test_same_seed_same_params(spec):
    a, b = init_params(spec, 11), init_params(spec, 11)
    for x, y in zip(a.arrays, b.arrays):
        assert np.array_equal(x, y)
    c = init_params(spec, 12)
    assert not np.array_equal(a.arrays[0], c.arrays[0])


def test_biases_start_at_zero(spec):
    p = init_params(spec, 0)
    for b in p.arrays[1::2]:
        assert not b.any()


def test_weight_variance_matches_uniform_moments():
    p = init_params(ModelSpec(100, (), 100), 0)
    # Var U(-a, a) = a^2 / 3 = 2 / (fan_in + fan_out)
    assert abs(p.arrays[0].var() / (2.0 / 200) - 1.0) < 0.2


@pytest.mark.parametrize("bad", [dict(input_dim=0, hidden=(), n_classes=2),
                                 dict(input_dim=2, hidden=(), n_classes=1),
                                 dict(input_dim=2, hidden=(0,), n_classes=2)])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        ModelSpec(**bad)


def test_rows_sum_to_one(spec):
    p = init_params(spec, 3)
    x = np.random.default_rng(0).normal(size=(20, 4)) * 5
    probs = predict(p, x)
    assert probs.shape == (20, 3)
    assert ((probs > 0) & (probs < 1)).all()
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_zero_network_is_uniform(spec):
    p = ParamSet(spec, [np.zeros(s) for s in spec.shapes])
    np.testing.assert_allclose(predict(p, np.ones((3, 4))), 1.0 / 3, atol=1e-15)


def test_hand_built_single_layer():
    spec = ModelSpec(2, (), 3)
    w = np.array([[1.0, 0.0, -1.0], [0.0, 2.0, 1.0]])
    b = np.array([[0.5, 0.0, 0.0]])
    p = ParamSet(spec, [w, b])
    # x = [1, 2] -> logits [1.5, 4, 1]
    z = [1.5, 4.0, 1.0]
    denom = sum(math.exp(v) for v in z)
    expected = [math.exp(v) / denom for v in z]
    np.testing.assert_allclose(predict(p, np.array([[1.0, 2.0]]))[0], expected, rtol=1e-14)


def test_predict_shape_mismatch(spec):
    with pytest.raises(ad.ShapeError):
        predict(init_params(spec, 0), np.ones((2, 3)))


def test_features_without_hidden_layers_are_inputs():
    p = init_params(ModelSpec(3, (), 2), 0)
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(features(p, x), x)


def test_features_deterministic(spec):
    p = init_params(spec, 1)
    x = np.random.default_rng(1).normal(size=(4, 4))
    assert np.array_equal(features(p, x), features(p, x))


def test_features_match_manual_forward():
    spec = ModelSpec(2, (2, 2), 2)
    w0 = np.array([[1.0, -1.0], [0.5, 2.0]])
    b0 = np.array([[0.0, -1.0]])
    w1 = np.array([[1.0, 1.0], [-1.0, 0.5]])
    b1 = np.array([[0.1, 0.0]])
    p = ParamSet(spec, [w0, b0, w1, b1, np.ones((2, 2)), np.zeros((1, 2))])
    # x = [2, 1]: layer0 pre = [2.5, -1] -> [2.5, 0]; layer1 pre = [2.6, 2.5]
    np.testing.assert_allclose(features(p, np.array([[2.0, 1.0]])), [[2.6, 2.5]], rtol=1e-15)


def test_tape_and_numpy_predictions_agree(spec):
    p = init_params(spec, 5)
    x = np.random.default_rng(5).normal(size=(7, 4))
    tape = ad.Tape()
    node = predict_node([tape.param(a) for a in p.arrays], tape.const(x))
    np.testing.assert_allclose(node.value, predict(p, x), rtol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_positive_logit_scaling_keeps_argmax(scale, seed):
    spec = ModelSpec(3, (4,), 5)
    p = init_params(spec, seed)
    p.arrays[-1] = np.random.default_rng(seed).normal(size=(1, 5))
    x = np.random.default_rng(seed + 1).normal(size=(10, 3))
    scaled = p.copy()
    scaled.arrays[-2] *= scale
    scaled.arrays[-1] *= scale
    assert np.array_equal(np.argmax(logits(p, x), 1), np.argmax(predict(scaled, x), 1))


def test_flat_round_trip(spec):
    p = init_params(spec, 2)
    q = ParamSet.from_flat(spec, p.flatten())
    assert np.array_equal(p.flatten(), q.flatten())
    assert p.size == sum(a * b for a, b in spec.shapes)
    with pytest.raises(ValueError):
        ParamSet.from_flat(spec, np.zeros(p.size + 1))


def test_checkpoint_round_trip(tmp_path, spec):
    p = init_params(spec, 4)
    p.save(tmp_path / "a.params")
    raw = (tmp_path / "a.params").read_bytes()
    assert raw[:8] == b"RMPARAM1"
    q = ParamSet.load(tmp_path / "a.params")
    assert q.spec == spec
    assert np.array_equal(p.flatten(), q.flatten())


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"notaparamfile")
    with pytest.raises(ValueError):
        ParamSet.load(tmp_path / "x")
