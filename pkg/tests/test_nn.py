import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrpose.gradsuite import OP_TOLERANCE, check_ops
from mrpose.nn import (
    Adam,
    BatchNorm2d,
    Parameter,
    ShapeError,
    Tensor,
    adam_step,
    add,
    batch_norm,
    conv2d,
    conv_transpose2d,
    finite_diff_check,
    max_pool2d,
    relu,
    set_debug_finite,
    total,
)


def t(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def loop_conv(x, w, b, stride, pad):
    """Nested-loop cross-correlation, the reference definition."""
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh, ow = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for i in range(n):
        for o in range(co):
            for y in range(oh):
                for z in range(ow):
                    patch = xp[i, :, y * stride:y * stride + kh, z * stride:z * stride + kw]
                    out[i, o, y, z] = np.sum(patch * w[o]) + (0 if b is None else b[o])
    return out


def scatter_deconv(x, w, stride=2, pad=1):
    """Transposed convolution by scatter-accumulate."""
    n, ci, h, wd = x.shape
    _, co, kh, kw = w.shape
    full = np.zeros((n, co, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for i in range(n):
        for c in range(ci):
            for y in range(h):
                for z in range(wd):
                    full[i, :, y * stride:y * stride + kh, z * stride:z * stride + kw] += x[i, c, y, z] * w[c]
    return full[:, :, pad:full.shape[2] - pad, pad:full.shape[3] - pad]


# ---------------------------------------------------------------- conv2d

def test_conv_scalar_product():
    out = conv2d(t([[[[2.0]]]]), t([[[[3.0]]]]), t([0.0]))
    assert out.data.shape == (1, 1, 1, 1) and out.data.item() == 6.0


def test_conv_2x2_all_ones():
    out = conv2d(t([[[[1, 2], [3, 4]]]]), t(np.ones((1, 1, 2, 2))))
    assert out.data.item() == 10.0


def test_conv_1x1_head_shape():
    out = conv2d(t(np.zeros((1, 3, 64, 48))), t(np.zeros((17, 3, 1, 1))))
    assert out.shape == (1, 17, 64, 48)


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 3, 7), (1, 0, 1)])
def test_conv_matches_loop_oracle(stride, pad, k):
    rng = np.random.default_rng(k + stride)
    x = rng.standard_normal((2, 3, 9, 8))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    out = conv2d(t(x), t(w), t(b), stride, pad).data
    np.testing.assert_allclose(out, loop_conv(x, w, b, stride, pad), atol=1e-12)


def test_conv_channel_mismatch_names_dimension():
    with pytest.raises(ShapeError, match="in_channels"):
        conv2d(t(np.zeros((1, 2, 4, 4))), t(np.zeros((1, 3, 3, 3))))


# ---------------------------------------------------------------- transposed conv

def test_deconv_doubles():
    out = conv_transpose2d(t(np.zeros((1, 1, 8, 6))), t(np.zeros((1, 5, 4, 4))))
    assert out.shape == (1, 5, 16, 12)


def test_deconv_single_one():
    out = conv_transpose2d(t([[[[1.0]]]]), t(np.ones((1, 1, 4, 4))), t([0.0]))
    assert out.shape == (1, 1, 2, 2)
    np.testing.assert_array_equal(out.data, np.ones((1, 1, 2, 2)))


def test_deconv_zero_input_gives_bias():
    out = conv_transpose2d(t(np.zeros((1, 2, 3, 3))), t(np.ones((2, 3, 4, 4))), t([0.5, -1, 2]))
    for c, b in enumerate([0.5, -1, 2]):
        assert np.all(out.data[0, c] == b)


def test_deconv_matches_scatter_oracle():
    rng = np.random.default_rng(3)
    x, w = rng.standard_normal((2, 3, 4, 3)), rng.standard_normal((3, 2, 4, 4))
    np.testing.assert_allclose(conv_transpose2d(t(x), t(w)).data, scatter_deconv(x, w), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_deconv_is_adjoint_of_conv(ci, co, h, w, seed):
    rng = np.random.default_rng(seed)
    weight = rng.standard_normal((co, ci, 4, 4))  # conv: ci -> co at stride 2 / pad 1
    x = Tensor(rng.standard_normal((2, ci, 2 * h, 2 * w)), requires_grad=True)
    y = conv2d(x, t(weight), None, 2, 1)
    g = rng.standard_normal(y.shape)
    y.backward(g)
    # the same weight read as (c_in=co, c_out=ci) for the transposed op
    np.testing.assert_allclose(conv_transpose2d(t(g), t(weight)).data, x.grad, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_conv_and_deconv_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((1, 2, 6, 4)), rng.standard_normal((1, 2, 6, 4))
    w = rng.standard_normal((3, 2, 3, 3))
    lhs = conv2d(t(a * x + b * y), t(w), None, 1, 1).data
    rhs = a * conv2d(t(x), t(w), None, 1, 1).data + b * conv2d(t(y), t(w), None, 1, 1).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
    wt = rng.standard_normal((2, 3, 4, 4))
    lhs = conv_transpose2d(t(a * x + b * y), t(wt)).data
    rhs = a * conv_transpose2d(t(x), t(wt)).data + b * conv_transpose2d(t(y), t(wt)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


# ---------------------------------------------------------------- batch norm

def _bn(x, gamma, beta, training=True, mean=None, var=None):
    c = x.shape[1]
    mean = np.zeros(c) if mean is None else mean
    var = np.ones(c) if var is None else var
    return batch_norm(t(x), t(gamma), t(beta), mean, var, training)


def test_bn_constant_input_gives_beta():
    out = _bn(np.full((2, 2, 3, 3), 4.2), np.array([3.0, -1.0]), np.array([0.5, 7.0]))
    np.testing.assert_allclose(out.data[:, 0], 0.5)
    np.testing.assert_allclose(out.data[:, 1], 7.0)


def test_bn_plus_minus_one():
    x = np.array([-1.0, 1.0]).reshape(2, 1, 1, 1)
    out = _bn(x, np.ones(1), np.zeros(1)).data.ravel()
    expected = 1.0 / np.sqrt(1.0 + 1e-5)  # 0.999995...
    np.testing.assert_allclose(out, [-expected, expected], rtol=0, atol=1e-15)
    assert 0.999994 < expected < 0.999996


def test_bn_infer_identity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 2, 2))
    out = _bn(x, np.ones(3), np.zeros(3), training=False).data
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), atol=1e-12)


def test_bn_single_element_errors():
    with pytest.raises(ValueError):
        _bn(np.ones((1, 2, 1, 1)), np.ones(2), np.zeros(2))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 10))
def test_bn_train_statistics(seed, spread):
    x = np.random.default_rng(seed).standard_normal((4, 3, 3, 2)) * spread + 1.5
    out = _bn(x, np.ones(3), np.zeros(3)).data
    var = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-6)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), var / (var + 1e-5), atol=1e-6)


def test_bn_running_stats_update():
    layer = BatchNorm2d(1, dtype=np.float64)
    x = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
    layer.train()
    layer(t(x))
    np.testing.assert_allclose(layer.buffers["running_mean"], [0.1 * 2.0])
    # unbiased batch variance 2.0
    np.testing.assert_allclose(layer.buffers["running_var"], [0.9 * 1.0 + 0.1 * 2.0])


# ---------------------------------------------------------------- relu / add / pool

def test_relu_examples():
    np.testing.assert_array_equal(relu(t([[[[-1, 0, 2]]]])).data, [[[[0, 0, 2]]]])
    assert np.all(relu(t(-np.ones((1, 2, 2, 2)))).data == 0)
    x = np.abs(np.random.default_rng(0).standard_normal((1, 2, 3, 3)))
    np.testing.assert_array_equal(relu(t(x)).data, x)


def test_add_examples_and_gradient():
    a = t([[[[1.0, 2.0]]]], grad=True)
    b = t([[[[3.0, 4.0]]]], grad=True)
    np.testing.assert_array_equal(add(a, t(np.zeros((1, 1, 1, 2)))).data, a.data)
    s = add(a, b)
    np.testing.assert_array_equal(s.data, [[[[4.0, 6.0]]]])
    g = np.array([[[[0.5, -2.0]]]])
    s.backward(g)
    np.testing.assert_array_equal(a.grad, g)
    np.testing.assert_array_equal(b.grad, g)


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        add(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 2, 3))))


def test_pool_constant_and_size():
    out = max_pool2d(t(np.full((1, 2, 64, 48), 3.0)))
    assert out.shape == (1, 2, 32, 24)
    assert np.all(out.data == 3.0)


def test_pool_single_peak_oracle():
    x = np.zeros((1, 1, 4, 4))
    x[0, 0, 1, 2] = 9.0
    out = max_pool2d(t(x)).data[0, 0]
    # windows are rows/cols [2i-1, 2i+1]; the peak at (1, 2) sits in rows {0, 1} and cols {1}
    expected = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            if 2 * i - 1 <= 1 <= 2 * i + 1 and 2 * j - 1 <= 2 <= 2 * j + 1:
                expected[i, j] = 9.0
    np.testing.assert_array_equal(out, expected)
    assert out[0, 1] == 9.0 and out[1, 1] == 9.0


# ---------------------------------------------------------------- backward

def test_backward_relu_sum_ones():
    x = t(np.random.default_rng(0).uniform(0.1, 1, (1, 2, 3, 3)), grad=True)
    total(relu(x)).backward()
    np.testing.assert_array_equal(x.grad, 1.0)


def test_backward_zero_upstream():
    rng = np.random.default_rng(0)
    w = Parameter(rng.standard_normal((2, 1, 3, 3)))
    y = conv2d(t(rng.standard_normal((1, 1, 5, 5))), w, None, 1, 1)
    y.backward(np.zeros(y.shape))
    np.testing.assert_array_equal(w.grad, 0.0)


def test_backward_needs_scalar():
    with pytest.raises(ShapeError):
        relu(t(np.ones((1, 1, 2, 2)), grad=True)).backward()


def test_fan_out_accumulates():
    x = t(np.ones((1, 1, 2, 2)), grad=True)
    y = relu(x)
    total(add(y, y)).backward()
    np.testing.assert_array_equal(x.grad, 2.0)


def test_debug_finite_mode():
    set_debug_finite(True)
    try:
        with pytest.raises(FloatingPointError):
            add(t(np.full((1, 1, 1, 1), np.inf)), t(np.zeros((1, 1, 1, 1))))
    finally:
        set_debug_finite(False)


# ---------------------------------------------------------------- finite differences

@pytest.mark.parametrize("seed", range(20))
def test_every_op_gradcheck(seed):
    for name, err in check_ops(seed):
        assert err < OP_TOLERANCE, (name, err)


def test_gradcheck_examples():
    rng = np.random.default_rng(1)
    x = t(rng.standard_normal((2, 3, 6, 5)), grad=True)
    w = t(rng.standard_normal((4, 3, 3, 3)), grad=True)
    assert finite_diff_check(lambda a, b: conv2d(a, b, None, 1, 1), [x, w]) < 1e-6
    r = rng.standard_normal((2, 2, 3, 3))
    r = t(np.sign(r) * (np.abs(r) + 0.1), grad=True)
    assert finite_diff_check(relu, [r]) < 1e-8
    a, b = t(rng.standard_normal((1, 1, 2, 2)), grad=True), t(rng.standard_normal((1, 1, 2, 2)), grad=True)
    assert finite_diff_check(add, [a, b]) < 1e-9


# ---------------------------------------------------------------- adam

def scalar_adam(p, g, m, v, step, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mh, vh = m / (1 - b1**step), v / (1 - b2**step)
    return p - lr * mh / (np.sqrt(vh) + eps), m, v


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    state = {"step": 0, "m": {}, "v": {}}
    adam_step(p, {"w": np.zeros(2)}, state, lr=1e-3)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_magnitude_is_lr():
    p = {"w": np.zeros(5)}
    state = {"step": 0, "m": {}, "v": {}}
    adam_step(p, {"w": np.full(5, 0.37)}, state, lr=1e-3)
    np.testing.assert_allclose(np.abs(p["w"]), 1e-3, rtol=1e-6)


def test_adam_matches_scalar_reference():
    rng = np.random.default_rng(0)
    p0 = rng.standard_normal(4)
    p = {"w": p0.copy()}
    state = {"step": 0, "m": {}, "v": {}}
    ref, m, v = p0.copy(), np.zeros(4), np.zeros(4)
    for step in range(1, 6):
        g = rng.standard_normal(4)
        adam_step(p, {"w": g}, state, lr=0.01)
        ref, m, v = scalar_adam(ref, g, m, v, step, 0.01)
    np.testing.assert_allclose(p["w"], ref, atol=1e-14)


def test_adam_class_uses_parameter_grads():
    w = Parameter(np.ones((1, 1, 1, 2)))
    opt = Adam([("w", w)], lr=0.1)
    w.grad = np.array([[[[1.0, -1.0]]]])
    opt.step()
    np.testing.assert_allclose(w.data.ravel(), [0.9, 1.1], atol=1e-7)
