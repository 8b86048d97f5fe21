"""Finite-difference checks of every layer in double precision.

Each check runs on 20 random instances; the analytic gradient of
sum(out * G) for a random G is compared with central differences
(h = 1e-5) by norm-wise relative error.
"""

import numpy as np
import pytest

from nmfsed.nn import layers

from oracles import numeric_grad, rel_error

H = 1e-5
TOL = 1e-6
INSTANCES = range(20)


def _rng(seed):
    return np.random.default_rng(1000 + seed)


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin * 2, x)


@pytest.mark.parametrize("seed", INSTANCES)
def test_conv2d_gradients(seed):
    rng = _rng(seed)
    k = (3, 5)[seed % 2]
    x = rng.standard_normal((2, 5 + seed % 3, 4 + seed % 2, 1 + seed % 3))
    w = rng.standard_normal((1 + seed % 4, x.shape[3], k, k))
    b = rng.standard_normal(w.shape[0])
    out, cache = layers.conv2d_forward(x, w, b, k // 2)
    assert out.shape[:3] == x.shape[:3]
    G = rng.standard_normal(out.shape)
    dx, dw, db = layers.conv2d_backward(G, cache)
    f = lambda: np.sum(layers.conv2d_forward(x, w, b, k // 2)[0] * G)
    assert rel_error(dx, numeric_grad(f, x, H)) < TOL
    assert rel_error(dw, numeric_grad(f, w, H)) < TOL
    assert rel_error(db, numeric_grad(f, b, H)) < TOL


def test_conv2d_matches_direct_loop():
    rng = _rng(99)
    x = rng.standard_normal((1, 4, 5, 2))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out, _ = layers.conv2d_forward(x, w, b, 1)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(out)
    for t in range(4):
        for f in range(5):
            for o in range(3):
                ref[0, t, f, o] = b[o] + sum(
                    xp[0, t + i, f + j, c] * w[o, c, i, j]
                    for i in range(3) for j in range(3) for c in range(2))
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv2d_channel_mismatch():
    with pytest.raises(ValueError):
        layers.conv2d_forward(np.zeros((1, 4, 4, 2)), np.zeros((1, 3, 3, 3)), np.zeros(1), 1)


@pytest.mark.parametrize("seed", INSTANCES)
@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradients(seed, train):
    rng = _rng(seed)
    x = rng.standard_normal((2, 3, 4, 1 + seed % 4)) * 2 + 0.5
    c = x.shape[3]
    gain, bias = rng.standard_normal(c), rng.standard_normal(c)
    rm, rv = rng.standard_normal(c), rng.random(c) + 0.5

    def run():
        return layers.batchnorm_forward(x, gain, bias, rm.copy(), rv.copy(), train)

    out, cache = run()
    G = rng.standard_normal(out.shape)
    dx, dg, db = layers.batchnorm_backward(G, cache)
    f = lambda: np.sum(run()[0] * G)
    assert rel_error(dx, numeric_grad(f, x, H)) < TOL
    assert rel_error(dg, numeric_grad(f, gain, H)) < TOL
    assert rel_error(db, numeric_grad(f, bias, H)) < TOL


def test_batchnorm_running_stats():
    rng = _rng(7)
    x = rng.standard_normal((2, 3, 4, 2))
    rm, rv = np.zeros(2), np.ones(2)
    layers.batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv, True)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 1, 2)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 1, 2)))
    out, _ = layers.batchnorm_forward(x, np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), False)
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5))


def test_batchnorm_train_normalizes():
    x = _rng(8).standard_normal((4, 5, 6, 3)) * 3 + 2
    out, _ = layers.batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), True)
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0, atol=1e-12)
    np.testing.assert_allclose(out.var(axis=(0, 1, 2)), 1, rtol=1e-4)


@pytest.mark.parametrize("seed", INSTANCES)
def test_relu_gradients(seed):
    rng = _rng(seed)
    x = _away_from_zero(rng, (2, 3, 4, 2))
    out, mask = layers.relu_forward(x)
    G = rng.standard_normal(out.shape)
    f = lambda: np.sum(layers.relu_forward(x)[0] * G)
    assert rel_error(layers.relu_backward(G, mask), numeric_grad(f, x, H)) < TOL


@pytest.mark.parametrize("seed", INSTANCES)
def test_maxpool_gradients(seed):
    rng = _rng(seed)
    shape = (2, 4 + seed % 3, 4 + seed % 2, 2)
    # distinct values at least 1e-3 apart so no perturbation changes the argmax
    x = rng.permutation(np.arange(np.prod(shape), dtype=np.float64)).reshape(shape) * 1e-3
    out, cache = layers.maxpool2x2_forward(x)
    assert out.shape == (2, shape[1] // 2, shape[2] // 2, 2)
    G = rng.standard_normal(out.shape)
    f = lambda: np.sum(layers.maxpool2x2_forward(x)[0] * G)
    assert rel_error(layers.maxpool2x2_backward(G, cache), numeric_grad(f, x, H)) < TOL


def test_maxpool_floor_and_first_argmax_ties():
    x = np.ones((1, 5, 3, 1))
    out, cache = layers.maxpool2x2_forward(x)
    assert out.shape == (1, 2, 1, 1)
    dx = layers.maxpool2x2_backward(np.ones_like(out), cache)
    assert dx[0, 0, 0, 0] == 1 and dx[0, 0, 1, 0] == 0 and dx[0, 1, 0, 0] == 0
    assert dx[0, 4].sum() == 0 and dx[0, :, 2].sum() == 0


@pytest.mark.parametrize("seed", INSTANCES)
def test_freq_mean_gradients(seed):
    rng = _rng(seed)
    x = rng.standard_normal((2, 3, 1 + seed % 5, 4))
    out, shape = layers.freq_mean_forward(x)
    G = rng.standard_normal(out.shape)
    f = lambda: np.sum(layers.freq_mean_forward(x)[0] * G)
    assert rel_error(layers.freq_mean_backward(G, shape), numeric_grad(f, x, H)) < TOL


@pytest.mark.parametrize("seed", INSTANCES)
def test_dense_gradients(seed):
    rng = _rng(seed)
    x = rng.standard_normal((2, 3, 5))
    w = rng.standard_normal((5, 1 + seed % 4))
    b = rng.standard_normal(w.shape[1])
    out, cache = layers.dense_forward(x, w, b)
    G = rng.standard_normal(out.shape)
    dx, dw, db = layers.dense_backward(G, cache)
    f = lambda: np.sum(layers.dense_forward(x, w, b)[0] * G)
    assert rel_error(dx, numeric_grad(f, x, H)) < TOL
    assert rel_error(dw, numeric_grad(f, w, H)) < TOL
    assert rel_error(db, numeric_grad(f, b, H)) < TOL


@pytest.mark.parametrize("seed", INSTANCES)
def test_sigmoid_derivative(seed):
    rng = _rng(seed)
    z = rng.standard_normal((3, 4)) * 4
    G = rng.standard_normal(z.shape)
    p = layers.sigmoid(z)
    f = lambda: np.sum(layers.sigmoid(z) * G)
    assert rel_error(G * p * (1 - p), numeric_grad(f, z, H)) < TOL


def test_sigmoid_extremes():
    p = layers.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    np.testing.assert_array_equal(p, [0.0, 0.5, 1.0])


@pytest.mark.parametrize("seed", INSTANCES)
def test_bce_gradient_wrt_logits(seed):
    rng = _rng(seed)
    z = rng.standard_normal((2, 3, 4)) * 3
    y = (rng.random(z.shape) < 0.5).astype(np.float64)
    _, grad = layers.bce_loss(layers.sigmoid(z), y)
    f = lambda: layers.bce_loss(layers.sigmoid(z), y)[0]
    assert rel_error(grad, numeric_grad(f, z, H)) < TOL


def test_bce_values_and_clamp():
    loss, _ = layers.bce_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(np.log(2))
    loss, _ = layers.bce_loss(np.array([0.0]), np.array([1.0]))
    assert loss == pytest.approx(-np.log(1e-7))
    with pytest.raises(ValueError):
        layers.bce_loss(np.zeros(2), np.zeros(3))
