import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedpm import nn
from fedpm.data import synth_dataset
from fedpm.errors import ClientError, ShapeError
from fedpm.masks import (
    EPS_THETA, ClientConfig, inv_sigmoid, local_train, masked_weights, sample_mask, sigmoid,
    ste_score_grad, train_scores,
)


def test_sigmoid_values():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    assert sigmoid(np.array([2.0]))[0] == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-15)
    assert sigmoid(np.array([100.0]))[0] == 1 - EPS_THETA
    assert sigmoid(np.array([-1000.0]))[0] == EPS_THETA


def test_inv_sigmoid_values():
    assert inv_sigmoid(np.array([0.5]))[0] == 0.0
    assert inv_sigmoid(np.array([0.8807970779778823]))[0] == pytest.approx(2.0, abs=1e-12)
    s = inv_sigmoid(np.array([1.0, 0.0]))
    assert np.all(np.isfinite(s))
    assert sigmoid(s)[0] == pytest.approx(1 - EPS_THETA, abs=1e-15)


@given(st.floats(min_value=EPS_THETA, max_value=1 - EPS_THETA))
def test_sigmoid_inverts_inv_sigmoid(theta):
    assert sigmoid(inv_sigmoid(np.array([theta])))[0] == pytest.approx(theta, abs=1e-12)


def test_sample_mask_extremes():
    gen = np.random.default_rng(0)
    d = 10_000
    assert sample_mask(np.full(d, EPS_THETA), gen).sum() <= 1
    assert sample_mask(np.full(d, 1 - EPS_THETA), gen).sum() >= d - 1


def test_sample_mask_frequency():
    gen = np.random.default_rng(1)
    d = 100_000
    freq = sample_mask(np.full(d, 0.3), gen).mean()
    assert abs(freq - 0.3) < 3 * math.sqrt(0.3 * 0.7 / d)


def test_sample_mask_unbiased_per_coordinate():
    gen = np.random.default_rng(2)
    theta = np.linspace(0.05, 0.95, 7)
    T = 10_000
    mean = np.mean([sample_mask(theta, gen) for _ in range(T)], axis=0)
    assert np.all(np.abs(mean - theta) < 4 * np.sqrt(theta * (1 - theta) / T))


def test_masked_weights():
    w = np.array([0.5, -0.5, -0.5])
    np.testing.assert_array_equal(masked_weights(np.ones(3, np.uint8), w), w)
    np.testing.assert_array_equal(masked_weights(np.zeros(3, np.uint8), w), 0)
    np.testing.assert_array_equal(masked_weights(np.array([1, 0, 1]), w), [0.5, 0.0, -0.5])
    with pytest.raises(ShapeError):
        masked_weights(np.ones(2), w)


def test_ste_score_grad():
    g = ste_score_grad(np.array([0.5, 0.5]), np.array([2.0, -1.0]), np.array([0.5, 0.5]))
    np.testing.assert_allclose(g, [0.25, -0.125])
    edge = ste_score_grad(np.array([1.0]), np.array([1.0]), np.array([EPS_THETA]))
    assert edge[0] == pytest.approx(EPS_THETA * (1 - EPS_THETA))
    assert not ste_score_grad(np.zeros(3), np.ones(3), np.full(3, 0.3)).any()


def surrogate_loss(arch, w, s, x, y):
    theta = 1.0 / (1.0 + np.exp(-s))
    logits, _ = nn.forward(arch, theta * w, x)
    return nn.loss_and_grad(logits, y)[0]


@pytest.mark.parametrize("seed", range(3))
def test_ste_exact_on_expected_weight_surrogate(seed):
    gen = np.random.default_rng(seed)
    arch = nn.NetworkArch.mlp([4, 5, 3])
    w = nn.init_frozen_weights(arch, seed)
    s = gen.normal(size=arch.num_params)
    x = gen.normal(size=(6, 4))
    y = gen.integers(0, 3, size=6)
    theta = 1.0 / (1.0 + np.exp(-s))
    logits, cache = nn.forward(arch, theta * w.values, x)
    grad = ste_score_grad(nn.backward(arch, cache, nn.loss_and_grad(logits, y)[1]), w, theta)
    h = 1e-5
    fd = np.array([
        (surrogate_loss(arch, w.values, s + h * e, x, y) - surrogate_loss(arch, w.values, s - h * e, x, y)) / (2 * h)
        for e in np.eye(len(s))
    ])
    assert np.max(np.abs(grad - fd)) / np.max(np.abs(fd)) < 1e-4


@pytest.fixture(scope="module")
def toy():
    arch = nn.NetworkArch.mlp([2, 16, 2])
    data = synth_dataset(3, 256, 2, 2, 10.0)
    return arch, data


def test_zero_learning_rate_returns_sample_of_global(toy):
    arch, data = toy
    w = nn.init_frozen_weights(arch, 5)
    theta = np.random.default_rng(0).uniform(0.1, 0.9, arch.num_params)
    cfg = ClientConfig(learning_rate=0.0, local_epochs=1, batch_size=64)
    scores, _ = train_scores(theta, w, data, cfg, np.random.default_rng(4))
    np.testing.assert_allclose(sigmoid(scores), theta, atol=1e-12)
    # with sgd too
    scores, _ = train_scores(theta, w, data, ClientConfig(0.0, 1, 64, "sgd"), np.random.default_rng(4))
    np.testing.assert_allclose(sigmoid(scores), theta, atol=1e-12)


def test_local_train_deterministic_and_weights_untouched(toy):
    arch, data = toy
    w = nn.init_frozen_weights(arch, 5)
    before = w.values.tobytes()
    theta = np.full(arch.num_params, 0.5)
    cfg = ClientConfig(batch_size=32)
    a = local_train(theta, w, data, cfg, np.random.default_rng(9))
    b = local_train(theta, w, data, cfg, np.random.default_rng(9))
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0, 1}
    assert w.values.tobytes() == before


@pytest.mark.parametrize("optimizer", ["adam", "sgd"])
def test_local_training_reduces_loss(toy, optimizer):
    arch, data = toy
    lr = 0.1 if optimizer == "adam" else 50.0
    improved = 0
    for seed in range(5):
        w = nn.init_frozen_weights(arch, seed)
        theta = np.full(arch.num_params, 0.5)
        _, losses = train_scores(theta, w, data, ClientConfig(lr, 3, 32, optimizer),
                                 np.random.default_rng(seed))
        improved += losses[-1] < losses[0]
    assert improved == 5


def test_empty_dataset_rejected(toy):
    arch, data = toy
    w = nn.init_frozen_weights(arch, 5)
    with pytest.raises(ClientError):
        local_train(np.full(arch.num_params, 0.5), w, data.subset([]), ClientConfig(),
                    np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=20))
def test_probabilities_always_clamped(scores):
    theta = sigmoid(np.array(scores))
    assert np.all(theta >= EPS_THETA) and np.all(theta <= 1 - EPS_THETA)
