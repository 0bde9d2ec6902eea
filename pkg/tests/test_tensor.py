import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adafsnet.optim import adam_step
from adafsnet.tensor import (
    Parameter,
    ShapeError,
    Tensor,
    backward,
    batchnorm1d,
    build_tape,
    concat_channels,
    conv1d_same,
    global_avg_pool,
    linear,
    relu,
    sigmoid,
    softmax_cross_entropy,
)


def _row(values):
    return Tensor(np.asarray(values, dtype=float)[None, None, :])


# ---------------------------------------------------------------- conv


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 1, 7))
    out = conv1d_same(Tensor(x), Tensor(np.ones((1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_k3_zero_padding():
    out = conv1d_same(_row([1, 2, 3, 4]), Tensor(np.ones((1, 1, 3))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data[0, 0], [3, 6, 9, 7])


def test_conv_even_kernel_pads_right():
    out = conv1d_same(_row([1, 2, 3]), Tensor(np.ones((1, 1, 2))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data[0, 0], [3, 5, 3])


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 8, 13])
def test_conv_keeps_width(k):
    x = Tensor(np.ones((3, 2, 11)))
    assert conv1d_same(x, Tensor(np.ones((5, 2, k)))).shape == (3, 5, 11)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(2, 4, 9)), rng.normal(size=(6, 2, 4)), rng.normal(size=6)
    out = conv1d_same(Tensor(x), Tensor(w), Tensor(b), groups=2).data
    left = (4 - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (left, 3 - left)))
    ref = np.zeros_like(out)
    for o in range(6):
        g = o // 3
        for t in range(9):
            ref[:, o, t] = b[o] + np.einsum("bcj,cj->b", xp[:, 2 * g : 2 * g + 2, t : t + 4], w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv_shape_errors_name_dimension():
    with pytest.raises(ShapeError, match="in_channels"):
        conv1d_same(Tensor(np.ones((1, 3, 5))), Tensor(np.ones((2, 2, 3))))
    with pytest.raises(ShapeError, match="groups"):
        conv1d_same(Tensor(np.ones((1, 3, 5))), Tensor(np.ones((2, 1, 3))), groups=3)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
    k=st.integers(1, 9),
    W=st.integers(1, 16),
)
def test_conv_linearity(seed, a, b, k, W):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(3, 2, k)))
    x, y = rng.normal(size=(2, 2, W)), rng.normal(size=(2, 2, W))
    lhs = conv1d_same(Tensor(a * x + b * y), w).data
    rhs = a * conv1d_same(Tensor(x), w).data + b * conv1d_same(Tensor(y), w).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(1, 7), W=st.integers(10, 24))
def test_conv_shift_covariance(seed, k, W):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(2, 1, k)))
    x = rng.normal(size=(1, 1, W))
    shifted = np.concatenate([np.zeros((1, 1, 1)), x[..., :-1]], axis=-1)
    a, b = conv1d_same(Tensor(x), w).data, conv1d_same(Tensor(shifted), w).data
    left, right = (k - 1) // 2, k - 1 - (k - 1) // 2
    # interior: no padding touched in either run
    lo, hi = left + 1, W - right - 1
    np.testing.assert_array_equal(b[..., lo + 1 : hi + 1], a[..., lo:hi])


# ---------------------------------------------------------------- batchnorm


def test_bn_constant_input_gives_shift():
    x = Tensor(np.full((4, 2, 5), 3.7))
    out = batchnorm1d(x, Tensor(np.array([2.0, -1.0])), Tensor(np.array([0.5, 0.25])), np.zeros(2), np.ones(2), True)
    np.testing.assert_allclose(out.data[:, 0], 0.5, atol=1e-12)
    np.testing.assert_allclose(out.data[:, 1], 0.25, atol=1e-12)


def test_bn_train_statistics():
    x = Tensor(np.random.default_rng(2).normal(3.0, 5.0, size=(8, 3, 12)))
    out = batchnorm1d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), True, eps=0.0)
    assert np.abs(out.data.mean(axis=(0, 2))).max() < 1e-9
    assert np.abs(out.data.var(axis=(0, 2)) - 1).max() < 1e-6


def test_bn_eval_default_stats_is_near_identity():
    x = np.random.default_rng(3).normal(size=(2, 3, 4))
    rm, rv = np.zeros(3), np.ones(3)
    out = batchnorm1d(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), rm, rv, False, eps=1e-5)
    np.testing.assert_allclose(out.data, x / np.sqrt(1 + 1e-5), atol=1e-15)
    np.testing.assert_array_equal(rm, 0)
    np.testing.assert_array_equal(rv, 1)


def test_bn_running_stats_ema():
    x = np.random.default_rng(4).normal(2.0, 3.0, size=(4, 1, 6))
    rm, rv = np.zeros(1), np.ones(1)
    batchnorm1d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, True, momentum=0.1)
    assert rm[0] == pytest.approx(0.1 * x.mean())
    assert rv[0] == pytest.approx(0.9 + 0.1 * x.var(ddof=1))


# ---------------------------------------------------------------- pointwise and small ops


def test_relu_and_sigmoid_values():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert sigmoid(Tensor(0.0)).data == 0.5


@given(st.floats(-700, 700))
def test_sigmoid_symmetry(x):
    s = sigmoid(Tensor(np.array([x, -x]))).data
    assert s[0] + s[1] == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.isfinite(s))


def test_linear_examples():
    x = Tensor(np.array([[1.0, 2.0]]))
    np.testing.assert_array_equal(linear(x, Tensor(np.eye(2)), Tensor(np.zeros(2))).data, x.data)
    np.testing.assert_array_equal(linear(x, Tensor([[1.0, 1.0], [1.0, -1.0]]), Tensor(np.zeros(2))).data, [[3, -1]])
    b = np.array([0.3, -0.7])
    np.testing.assert_array_equal(linear(Tensor(np.ones((3, 2))), Tensor(np.zeros((2, 2))), Tensor(b)).data, [b] * 3)
    with pytest.raises(ShapeError):
        linear(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))))


def test_global_avg_pool_examples():
    assert global_avg_pool(_row([1, 2, 3])).data[0, 0] == 2
    assert global_avg_pool(_row([4.5] * 6)).data[0, 0] == 4.5
    assert global_avg_pool(_row([0.5, 0.7])).data[0, 0] == pytest.approx(0.6)


def test_concat_and_add():
    a, b = Tensor(np.zeros((2, 2, 4))), Tensor(np.ones((2, 3, 4)))
    out = concat_channels([a, b])
    assert out.shape == (2, 5, 4)
    np.testing.assert_array_equal(out.data[:, :2], 0)
    assert concat_channels([b]).data is not None
    np.testing.assert_array_equal(concat_channels([b]).data, b.data)
    np.testing.assert_array_equal((b + Tensor(np.zeros_like(b.data))).data, b.data)
    with pytest.raises(ShapeError):
        concat_channels([a, Tensor(np.ones((2, 1, 5)))])


# ---------------------------------------------------------------- loss


def test_xent_uniform_logits_is_log_c():
    for c in (2, 3, 10):
        loss = softmax_cross_entropy(Tensor(np.zeros((4, c))), np.arange(4) % c)
        assert loss.data == pytest.approx(math.log(c))


def test_xent_closed_form_and_limit():
    loss = softmax_cross_entropy(Tensor([[0.0, math.log(3)]]), [1])
    assert float(loss.data) == pytest.approx(-math.log(0.75))
    assert float(loss.data) == pytest.approx(0.28768, abs=1e-5)
    big = softmax_cross_entropy(Tensor([[0.0, 800.0]]), [1])
    assert float(big.data) == pytest.approx(0.0, abs=1e-300)


def test_xent_rejects_bad_labels():
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), B=st.integers(1, 6), c=st.integers(2, 8), scale=st.floats(0.01, 500))
def test_xent_nonnegative(seed, B, c, scale):
    rng = np.random.default_rng(seed)
    loss = softmax_cross_entropy(Tensor(rng.normal(size=(B, c)) * scale), rng.integers(0, c, B))
    assert float(loss.data) >= 0.0 and np.isfinite(loss.data)


# ---------------------------------------------------------------- backward


def test_backward_sum_and_square():
    x = Parameter(np.array([1.0, 2.0]))
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, [1, 1])
    x.grad = None
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2, 4])


def test_backward_accumulates_reuse():
    x = Parameter(np.array([3.0]))
    backward((x * x + x * 2.0).sum())
    np.testing.assert_array_equal(x.grad, [8.0])


def test_backward_rejects_non_scalar():
    x = Parameter(np.ones(3))
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_tape_visits_each_op_once_newest_first():
    x = Parameter(np.ones((1, 1, 4)))
    h = relu(x * 2.0)
    y = (h + h).sum()
    tape = build_tape(y)
    seqs = [t._seq for t in tape]
    assert seqs == sorted(seqs, reverse=True)
    assert len({id(t) for t in tape}) == len(tape) == 4


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(7)
        w = Parameter(rng.normal(size=(3, 2, 5)))
        x = Tensor(rng.normal(size=(4, 2, 10)))
        out = global_avg_pool(relu(conv1d_same(x, w)))
        loss = softmax_cross_entropy(out, [0, 1, 2, 0])
        backward(loss)
        return out.data.copy(), w.grad.copy()

    (a1, g1), (a2, g2) = run(), run()
    assert a1.tobytes() == a2.tobytes()
    assert g1.tobytes() == g2.tobytes()


def test_forward_finite_on_finite_inputs():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(2, 3, 8)) * 1e3)
    out = batchnorm1d(conv1d_same(x, Tensor(rng.normal(size=(4, 3, 3)))), Tensor(np.ones(4)), Tensor(np.zeros(4)), np.zeros(4), np.ones(4), True)
    assert np.all(np.isfinite(sigmoid(out).data))


# ---------------------------------------------------------------- adam


def test_adam_first_step():
    p = Parameter(np.array([0.5]))
    p.grad = np.array([1.0])
    adam_step([p], lr=0.001)
    assert 0.5 - p.data[0] == pytest.approx(0.001, rel=1e-6)
    assert p.step_count == 1 and p.grad is None


def test_adam_zero_gradient_leaves_parameter():
    p = Parameter(np.array([0.5, -2.0]))
    p.grad = np.zeros(2)
    adam_step([p])
    np.testing.assert_array_equal(p.data, [0.5, -2.0])


def test_adam_two_steps_against_recurrence():
    p = Parameter(np.array([0.0]))
    for _ in range(2):
        p.grad = np.array([1.0])
        adam_step([p], lr=0.001)
    # independent evaluation of the bias-corrected recurrence
    m = v = theta = 0.0
    for t in (1, 2):
        m = 0.9 * m + 0.1
        v = 0.999 * v + 0.001
        theta -= 0.001 * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + 1e-8)
    assert p.data[0] == pytest.approx(theta, rel=1e-12)
    assert 0.001 < abs(p.data[0]) <= 0.002
    assert p.step_count == 2


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=5))
def test_adam_moment_shapes_and_step_count(g):
    p = Parameter(np.zeros(len(g)))
    for i in range(3):
        p.grad = np.array(g)
        adam_step([p])
        assert p.adam_m.shape == p.adam_v.shape == p.data.shape
        assert p.step_count == i + 1
