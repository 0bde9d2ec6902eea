"""Central-difference gradient checks for every differentiable op."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor, backward, no_grad

GRAD_TOL = 1e-5


def finite_diff_check(
    fn: Callable[[Parameter], Tensor],
    theta: Parameter,
    eps: float = 1e-6,
    oracle_dtype=np.longdouble,
) -> float:
    """Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    The analytic gradient comes from ``backward`` at theta's own precision.  The
    central differences are evaluated on a copy of theta cast to
    ``oracle_dtype`` (extended precision by default) so that the ulp/eps
    rounding of the difference quotient does not swamp small gradients.
    """
    theta.grad = None
    backward(fn(theta))
    analytic = np.zeros_like(theta.data) if theta.grad is None else theta.grad.copy()
    theta.grad = None
    probe = Tensor(theta.data.astype(oracle_dtype or theta.data.dtype), requires_grad=True)
    numeric = np.empty(analytic.shape, dtype=probe.dtype)
    flat = probe.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn(probe).data.reshape(())[()]
            flat[i] = orig - eps
            fm = fn(probe).data.reshape(())[()]
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * probe.dtype.type(eps))
    numeric = numeric.astype(np.float64)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_all_inputs(fn: Callable[..., Tensor], inputs: list[Parameter], eps: float = 1e-6) -> float:
    """Run :func:`finite_diff_check` on each input in turn, holding the others fixed."""
    worst = 0.0
    for i, p in enumerate(inputs):
        def f(theta, i=i):
            args = list(inputs)
            args[i] = theta
            return fn(*args)

        worst = max(worst, finite_diff_check(f, p, eps))
        for q in inputs:
            q.grad = None
    return worst


def _away_from_zero(rng, shape, lo=0.1):
    # keeps relu kinks out of the finite-difference stencil
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(lo, 1.0, size=shape)


def _weighted_sum(out: Tensor, w: np.ndarray) -> Tensor:
    return (out * w).sum()


def _case_conv(rng, grouped: bool):
    B = int(rng.integers(1, 4))
    groups = int(rng.integers(2, 4)) if grouped else 1
    cin = groups * int(rng.integers(1, 4))
    cout = groups * int(rng.integers(1, 4))
    W = int(rng.integers(1, 17))
    k = int(rng.integers(1, 8))
    x = Parameter(rng.normal(size=(B, cin, W)))
    w = Parameter(rng.normal(size=(cout, cin // groups, k)))
    b = Parameter(rng.normal(size=cout))
    r = rng.normal(size=(B, cout, W))
    return lambda x, w, b: _weighted_sum(T.conv1d_same(x, w, b, groups), r), [x, w, b]


def _case_bn(rng, training: bool):
    B, C, W = (int(v) for v in rng.integers(1, 6, size=3))
    if B * W < 2:
        W = 2
    x = Parameter(rng.normal(size=(B, C, W)) * 2.0 + 0.5)
    s = Parameter(rng.uniform(0.5, 1.5, size=C))
    h = Parameter(rng.normal(size=C))
    rm, rv = rng.normal(size=C), rng.uniform(0.5, 2.0, size=C)
    r = rng.normal(size=(B, C, W))

    def fn(x, s, h):
        # fresh copies so repeated evaluation sees identical running stats
        return _weighted_sum(T.batchnorm1d(x, s, h, rm.copy(), rv.copy(), training), r)

    return fn, [x, s, h]


def _case_unary(rng, op):
    shape = tuple(int(v) for v in rng.integers(1, 6, size=int(rng.integers(1, 5))))
    x = Parameter(_away_from_zero(rng, shape) * 3.0)
    r = rng.normal(size=shape)
    return lambda x: _weighted_sum(op(x), r), [x]


def _case_linear(rng):
    B, din, dout = (int(v) for v in rng.integers(1, 9, size=3))
    x = Parameter(rng.normal(size=(B, din)))
    w = Parameter(rng.normal(size=(dout, din)))
    b = Parameter(rng.normal(size=dout))
    r = rng.normal(size=(B, dout))
    return lambda x, w, b: _weighted_sum(T.linear(x, w, b), r), [x, w, b]


def _case_gap(rng):
    B, C, W = (int(v) for v in rng.integers(1, 17, size=3))
    x = Parameter(rng.normal(size=(B, C, W)))
    r = rng.normal(size=(B, C))
    return lambda x: _weighted_sum(T.global_avg_pool(x), r), [x]


def _case_concat(rng):
    B, W = (int(v) for v in rng.integers(1, 9, size=2))
    xs = [Parameter(rng.normal(size=(B, int(rng.integers(1, 5)), W))) for _ in range(int(rng.integers(1, 4)))]
    r = rng.normal(size=(B, sum(x.shape[1] for x in xs), W))
    return lambda *xs: _weighted_sum(T.concat_channels(xs), r), xs


def _case_take(rng):
    B, C, W = (int(v) for v in rng.integers(1, 9, size=3))
    idx = rng.integers(0, C, size=int(rng.integers(1, 2 * C + 1)))
    x = Parameter(rng.normal(size=(B, C, W)))
    r = rng.normal(size=(B, idx.size, W))
    return lambda x: _weighted_sum(T.take_channels(x, idx), r), [x]


def _case_binary(rng, op):
    shape = tuple(int(v) for v in rng.integers(1, 6, size=int(rng.integers(1, 5))))
    # second operand broadcasts along a random subset of axes
    yshape = tuple(1 if rng.random() < 0.4 else n for n in shape)
    x = Parameter(rng.normal(size=shape))
    y = Parameter(rng.normal(size=yshape))
    r = rng.normal(size=shape)
    return lambda x, y: _weighted_sum(op(x, y), r), [x, y]


def _case_xent(rng):
    B, c = int(rng.integers(1, 9)), int(rng.integers(2, 9))
    x = Parameter(rng.normal(size=(B, c)) * 2.0)
    labels = rng.integers(0, c, size=B)
    return lambda x: T.softmax_cross_entropy(x, labels), [x]


def _case_targetdrop(rng):
    from .targetdrop import TargetDropConfig, targetdrop_forward

    B, C, W = int(rng.integers(1, 4)), int(rng.integers(2, 9)), int(rng.integers(2, 17))
    hidden = max(1, C // 2)
    u = Parameter(rng.normal(size=(B, C, W)))
    w1 = Parameter(rng.normal(size=(hidden, C)))
    w2 = Parameter(rng.normal(size=(C, hidden)))
    cfg = TargetDropConfig(gamma=float(rng.uniform(0.05, 0.95)), reduction_ratio=2)
    training = bool(rng.integers(0, 2))
    r = rng.normal(size=(B, C, W))
    # mask depends on argmax/top-K of the unperturbed input; freeze it
    with no_grad():
        _, _, mask = targetdrop_forward(u, cfg, w1, w2, training)

    def fn(u, w1, w2):
        out, _, _ = targetdrop_forward(u, cfg, w1, w2, training, mask=mask)
        return _weighted_sum(out, r)

    return fn, [u, w1, w2]


CASES: dict[str, Callable] = {
    "conv1d_same": lambda rng: _case_conv(rng, grouped=False),
    "conv1d_same_grouped": lambda rng: _case_conv(rng, grouped=True),
    "batchnorm1d_train": lambda rng: _case_bn(rng, training=True),
    "batchnorm1d_eval": lambda rng: _case_bn(rng, training=False),
    "relu": lambda rng: _case_unary(rng, T.relu),
    "sigmoid": lambda rng: _case_unary(rng, T.sigmoid),
    "linear": _case_linear,
    "global_avg_pool": _case_gap,
    "concat_channels": _case_concat,
    "take_channels": _case_take,
    "add": lambda rng: _case_binary(rng, T.add),
    "mul": lambda rng: _case_binary(rng, T.mul),
    "softmax_cross_entropy": _case_xent,
    "targetdrop": _case_targetdrop,
}


@dataclass
class SuiteResult:
    max_error: dict[str, float]
    shapes_checked: dict[str, int]
    seconds: float

    @property
    def ok(self) -> bool:
        return all(e < GRAD_TOL for e in self.max_error.values())


def run_gradient_suite(n_shapes: int = 20, seed: int = 0, eps: float = 1e-6) -> SuiteResult:
    """Check every op on ``n_shapes`` random shapes; runs in double precision."""
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    start = time.perf_counter()
    errors: dict[str, float] = {}
    counts: dict[str, int] = {}
    try:
        for name, make in CASES.items():
            rng = np.random.default_rng([seed, len(name)] + [ord(c) for c in name])
            worst = 0.0
            for _ in range(n_shapes):
                fn, inputs = make(rng)
                worst = max(worst, check_all_inputs(fn, inputs, eps))
            errors[name] = worst
            counts[name] = n_shapes
    finally:
        T.set_default_dtype(prev)
    return SuiteResult(errors, counts, time.perf_counter() - start)
