import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import layer_gradient_errors, ppo_gradient_error
from uaviov.nn import (ActionDistribution, ActorCritic, Architecture, Conv2D, Dense, Flatten, MaxPool2D, ReLU,
                       SerializationError, count_parameters, deserialize, log_softmax, param_count, sample_action,
                       serialize)

TINY = Architecture(n=7, conv1=3, conv2=4, hidden1=8, hidden2=6)
TOL = 1e-4


def rng(seed=0):
    return np.random.default_rng(seed)


@pytest.mark.parametrize("k", [3, 5])
def test_conv_gradients(k):
    layer = Conv2D(2, 3, k, rng(), np.float64)
    layer.b[...] = rng(1).normal(size=3)
    errs = layer_gradient_errors(layer, rng(2).normal(size=(2, 6, 5, 2)))
    assert max(errs.values()) < TOL, errs


def test_conv_matches_direct_convolution():
    layer = Conv2D(2, 3, 3, rng(), np.float64)
    x = rng(3).normal(size=(1, 5, 5, 2))
    y = layer.forward(x)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(y)
    for i in range(5):
        for j in range(5):
            patch = xp[0, i:i + 3, j:j + 3, :]          # (k, k, C)
            ref[0, i, j] = np.einsum("abc,cabo->o", patch, layer.W) + layer.b
    np.testing.assert_allclose(y, ref, atol=1e-12)


@pytest.mark.parametrize("shape", [(2, 4, 4, 3), (2, 5, 7, 2)])
def test_maxpool_gradients(shape):
    errs = layer_gradient_errors(MaxPool2D(), rng(4).normal(size=shape))
    assert errs["x"] < TOL


def test_maxpool_floor_and_routing():
    x = np.arange(25, dtype=float).reshape(1, 5, 5, 1)
    pool = MaxPool2D()
    y = pool.forward(x)
    assert y[0, :, :, 0].tolist() == [[6, 8], [16, 18]]
    dx = pool.backward(np.ones_like(y))
    assert dx.sum() == 4 and dx[0, 1, 1, 0] == 1 and dx[0, 4, 4, 0] == 0


def test_dense_relu_flatten_gradients():
    errs = layer_gradient_errors(Dense(7, 4, rng(), np.float64), rng(5).normal(size=(3, 7)))
    assert max(errs.values()) < TOL
    # keep inputs away from the ReLU kink
    x = rng(6).normal(size=(3, 9))
    x[np.abs(x) < 1e-3] = 0.5
    assert layer_gradient_errors(ReLU(), x)["x"] < TOL
    assert layer_gradient_errors(Flatten(), rng(7).normal(size=(2, 3, 3, 2)))["x"] < TOL


def test_full_ppo_loss_gradient():
    err, clip_fraction = ppo_gradient_error(seed=0)
    assert err < TOL
    assert clip_fraction > 0


def test_default_parameter_counts():
    arch = Architecture()
    assert count_parameters(arch, 9) + count_parameters(arch, 1) == 1_717_546
    p = ActorCritic(Architecture(n=11))
    assert param_count(p) == p.param_count() == 427_306
    assert p.param_count() == count_parameters(p.arch, 9) + count_parameters(p.arch, 1)


def test_zero_initialized_actor_is_uniform():
    p = ActorCritic(TINY, seed=3)
    dist = p.actor_forward(rng().random((4, 6, 7, 7)))
    np.testing.assert_allclose(dist.probs, 1 / 9)


@settings(max_examples=100)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12))
def test_softmax_normalized(logits):
    d = ActionDistribution.from_logits(np.array([logits]))
    assert d.probs.sum() == pytest.approx(1.0)
    assert np.all(d.probs > 0)
    assert 0 <= d.entropy()[0] <= np.log(len(logits)) + 1e-9


def test_log_softmax_stable_for_large_logits():
    out = log_softmax(np.array([[1e4, 0.0]]))
    assert np.all(np.isfinite(out))


def test_sampling_frequencies_and_greedy():
    d = ActionDistribution.from_logits(np.log(np.array([[0.7, 0.2, 0.1]])).repeat(20000, axis=0))
    a, lp = sample_action(d, rng(8))
    freq = np.bincount(a, minlength=3) / len(a)
    np.testing.assert_allclose(freq, [0.7, 0.2, 0.1], atol=0.02)
    np.testing.assert_allclose(lp, np.log([0.7, 0.2, 0.1])[a])
    assert np.all(sample_action(d, None, greedy=True)[0] == 0)


def test_observation_shape_checked():
    with pytest.raises(ValueError):
        ActorCritic(TINY).actor_forward(np.zeros((1, 6, 9, 9)))


def test_serialize_roundtrip_and_rejects_corruption():
    p = ActorCritic(TINY, seed=5)
    p.actor.layers[-1].W += 0.25
    p.value_mean, p.value_std = -3.0, 2.0
    blob = serialize(p)
    q = deserialize(blob)
    assert q.digest() == p.digest()
    assert (q.value_mean, q.value_std) == (-3.0, 2.0)
    x = rng().random((2, 6, 7, 7))
    np.testing.assert_allclose(q.critic_forward(x), p.critic_forward(x), rtol=1e-6)
    bad = bytearray(blob)
    bad[len(bad) // 2] ^= 0xFF
    with pytest.raises(SerializationError):
        deserialize(bytes(bad))
    with pytest.raises(SerializationError):
        deserialize(b"nope")


def test_rescale_values_preserves_outputs():
    p = ActorCritic(TINY, seed=1, dtype=np.float64)
    x = rng().random((3, 6, 7, 7))
    before = p.critic_forward(x)
    p.rescale_values(-40.0, 12.5)
    np.testing.assert_allclose(p.critic_forward(x), before, atol=1e-9)


def test_copy_is_independent():
    p = ActorCritic(TINY, seed=2)
    q = p.copy()
    assert q.digest() == p.digest()
    q.actor.layers[0].W += 1
    assert q.digest() != p.digest()
