import numpy as np
import pytest

from microfacies.errors import DimensionError
from microfacies.layers import (BatchNorm, Conv2D, Dense, Dropout, activation_backward, activation_forward,
                                batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward,
                                dense_backward, dense_forward, dropout_forward, log_softmax, maxpool2d_backward,
                                maxpool2d_forward, softmax)
from microfacies.optim import numeric_gradient
from microfacies.tensor import SeededRng


def conv_oracle(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((n, o, oh, ow))
    for i in range(n):
        for f in range(o):
            for r in range(oh):
                for s in range(ow):
                    patch = xp[i, :, r * stride:r * stride + kh, s * stride:s * stride + kw]
                    y[i, f, r, s] = np.sum(patch * w[f]) + b[f]
    return y


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 1), (2, 0, 1), (1, 1, 3), (2, 2, 5), (2, 1, 4)])
def test_conv_matches_loop_oracle(rng, stride, pad, k):
    x = rng.normal(size=(2, 3, 7, 8))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    y, _ = conv2d_forward(x, w, b, stride, pad)
    np.testing.assert_allclose(y, conv_oracle(x, w, b, stride, pad), atol=1e-10)


def test_conv_channel_mismatch_is_dimension_error(rng):
    with pytest.raises(DimensionError):
        conv2d_forward(rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 4, 3, 3)))


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 0, 1), (2, 1, 3)])
def test_conv_backward_matches_numeric(rng, stride, pad, k):
    x = rng.normal(size=(2, 2, 5, 6))
    w = rng.normal(size=(3, 2, k, k))
    b = rng.normal(size=3)
    y, cache = conv2d_forward(x, w, b, stride, pad)
    dy = rng.normal(size=y.shape)
    dx, dw, db = conv2d_backward(dy, cache, w)
    loss = lambda: float(np.sum(conv2d_forward(x, w, b, stride, pad)[0] * dy))
    np.testing.assert_allclose(dx, numeric_gradient(loss, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dw, numeric_gradient(loss, w), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(db, numeric_gradient(loss, b), rtol=1e-6, atol=1e-8)


def test_dense_backward_matches_numeric(rng):
    x = rng.normal(size=(4, 5))
    w = rng.normal(size=(5, 3))
    b = rng.normal(size=3)
    dy = rng.normal(size=(4, 3))
    dx, dw, db = dense_backward(dy, x, w)
    loss = lambda: float(np.sum(dense_forward(x, w, b)[0] * dy))
    np.testing.assert_allclose(dx, numeric_gradient(loss, x), rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(dw, numeric_gradient(loss, w), rtol=1e-7, atol=1e-9)


def test_maxpool_picks_window_max_and_routes_gradient():
    x = np.array([[[[1.0, 3.0, 2.0], [4.0, 0.0, 5.0], [6.0, 7.0, 8.0]]]])
    y, cache = maxpool2d_forward(x)
    assert y.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(y[0, 0], [[4.0, 5.0], [7.0, 8.0]])
    dx = maxpool2d_backward(np.ones_like(y), cache)
    assert dx.sum() == 4 and dx[0, 0, 1, 0] == 1 and dx[0, 0, 2, 2] == 1


def test_maxpool_tie_goes_to_first():
    y, cache = maxpool2d_forward(np.ones((1, 1, 2, 2)))
    dx = maxpool2d_backward(np.ones_like(y), cache)
    np.testing.assert_array_equal(dx[0, 0], [[1, 0], [0, 0]])


def test_relu_gradient_at_zero_is_zero():
    x = np.array([-1.0, 0.0, 2.0])
    y = activation_forward(x, "relu")
    np.testing.assert_array_equal(activation_backward(np.ones(3), x, y, "relu"), [0, 0, 1])


@pytest.mark.parametrize("kind", ["sigmoid", "tanh"])
def test_smooth_activation_gradients(rng, kind):
    x = rng.normal(size=10)
    g = activation_backward(np.ones(10), x, activation_forward(x, kind), kind)
    num = numeric_gradient(lambda: float(activation_forward(x, kind).sum()), x)
    np.testing.assert_allclose(g, num, rtol=1e-7)


def test_softmax_rows_sum_to_one_and_log_consistent(rng):
    z = rng.normal(size=(5, 7)) * 50
    np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0)
    np.testing.assert_allclose(np.exp(log_softmax(z)), softmax(z), atol=1e-12)


def test_dropout_keep_semantics():
    x = np.ones((1000,))
    y, _ = dropout_forward(x, 1.0, True, SeededRng(0))
    assert y is x
    y, _ = dropout_forward(x, 0.0, True, SeededRng(0))
    assert not y.any()
    y, mask = dropout_forward(x, 0.8, True, SeededRng(0))
    assert abs(mask.mean() - 0.8) < 0.05
    assert np.allclose(y[mask], 1 / 0.8)
    y, _ = dropout_forward(x, 0.5, False)
    assert y is x


def test_batchnorm_normalizes_and_updates_running_stats(rng):
    x = rng.normal(3.0, 2.0, size=(8, 4, 5, 5))
    rm, rv = np.zeros(4), np.ones(4)
    y, _ = batchnorm_forward(x, np.ones(4), np.zeros(4), rm, rv, True)
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-10)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-3)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    with pytest.raises(ValueError):
        batchnorm_forward(x[:1], np.ones(4), np.zeros(4), rm, rv, True)


def test_batchnorm_backward_matches_numeric(rng):
    x = rng.normal(size=(4, 3, 2, 2))
    g, b = rng.normal(size=3), rng.normal(size=3)
    dy = rng.normal(size=x.shape)

    def loss():
        return float(np.sum(batchnorm_forward(x, g, b, np.zeros(3), np.ones(3), True)[0] * dy))

    _, cache = batchnorm_forward(x, g, b, np.zeros(3), np.ones(3), True)
    dx, dg, db = batchnorm_backward(dy, cache, g)
    np.testing.assert_allclose(dx, numeric_gradient(loss, x), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(dg, numeric_gradient(loss, g), rtol=1e-6)


def test_layer_objects_build_shapes():
    conv = Conv2D(8, 3, 2)
    assert conv.build((3, 16, 16)) == (8, 8, 8)
    assert conv.param_shapes["weight"] == (8, 3, 3, 3)
    assert Dense(5).build((12,)) == (5,)
    assert BatchNorm().build((4, 3, 3)) == (4, 3, 3)
    with pytest.raises(ValueError):
        Dropout(1.5)


def test_he_init_variance():
    conv = Conv2D(64, 3)
    conv.build((32, 8, 8))
    w = conv.init_param("weight", SeededRng(0, "w"), np.float64)
    assert abs(w.var() - 2 / (32 * 9)) / (2 / (32 * 9)) < 0.05
