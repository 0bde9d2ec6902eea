"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every differentiable op builds its output through :func:`_record`, which stamps
the result with a monotonically increasing sequence number.  :func:`backward`
collects the reachable recorded ops, sorts them by that number and replays the
backward closures newest-first, so each op is visited exactly once.
"""

from __future__ import annotations

import contextlib
import itertools
import os
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "backward",
    "build_tape",
    "no_grad",
    "set_default_dtype",
    "get_default_dtype",
    "conv1d_same",
    "batchnorm1d",
    "relu",
    "sigmoid",
    "linear",
    "global_avg_pool",
    "concat_channels",
    "take_channels",
    "add",
    "mul",
    "softmax_cross_entropy",
]

DTYPE_ENV = "ADAFSNET_DTYPE"

_default_dtype = np.dtype(os.environ.get(DTYPE_ENV, "float64"))
_seq = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _default_dtype = dtype


def get_default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def no_grad():
    """Disable op recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _default_dtype
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._seq = -1
        self._op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return mul(reduce_sum(self, axis), 1.0 / n)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """Trainable tensor carrying its own Adam moment buffers."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype or _default_dtype)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_default_dtype))


def _record(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._seq = next(_seq)
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def build_tape(loss: Tensor) -> list[Tensor]:
    """Recorded ops reachable from ``loss``, newest first."""
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._backward is None:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.is_leaf:
        leaves[id(loss)] = loss
    for node in build_tape(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
            if parent.is_leaf:
                leaves[key] = parent
    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.data.dtype, copy=False)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------- elementwise


def add(x, y) -> Tensor:
    x, y = _lift(x), _lift(y)

    def bw(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return _record(x.data + y.data, (x, y), bw, "add")


def mul(x, y) -> Tensor:
    x, y = _lift(x), _lift(y)

    def bw(g):
        gx = _unbroadcast(g * y.data, x.shape) if x.requires_grad else None
        gy = _unbroadcast(g * x.data, y.shape) if y.requires_grad else None
        return gx, gy

    return _record(x.data * y.data, (x, y), bw, "mul")


def reduce_sum(x: Tensor, axis=None) -> Tensor:
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _record(np.asarray(x.data.sum(axis=axis)), (x,), bw, "sum")


def reshape(x: Tensor, shape) -> Tensor:
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = np.exp(-np.logaddexp(0.0, -x.data)).astype(x.dtype)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ---------------------------------------------------------------- layers


def _check_ndim(t: Tensor, n: int, what: str) -> None:
    if t.ndim != n:
        raise ShapeError(f"{what} must have {n} dims, got shape {t.shape}")


def conv1d_same(x: Tensor, weight: Tensor, bias: Tensor | None = None, groups: int = 1) -> Tensor:
    """Stride-1 convolution whose output width equals the input width.

    Zero padding is ``(k-1)//2`` on the left and the remainder on the right, so
    even kernels lean right (k=2 pads only the right edge).
    """
    _check_ndim(x, 3, "conv input")
    _check_ndim(weight, 3, "conv weight")
    B, cin, W = x.shape
    cout, cin_g, k = weight.shape
    if W < 1 or k < 1:
        raise ShapeError(f"width and kernel must be >= 1 (width={W}, kernel={k})")
    if groups < 1 or cin % groups or cout % groups:
        raise ShapeError(f"groups={groups} must divide in_channels={cin} and out_channels={cout}")
    if cin_g != cin // groups:
        raise ShapeError(f"weight in_channels per group is {cin_g}, input gives {cin // groups}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match out_channels={cout}")
    left = (k - 1) // 2
    right = k - 1 - left
    if groups == 1:
        out, bw = _conv_taps(x, weight, left, right)
    else:
        out, bw = _conv_grouped(x, weight, groups, left, right)
    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is not None:
        out += bias.data[None, :, None]

    def backward_fn(g):
        gx, gw = bw(g, x.requires_grad)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return _record(out, parents, backward_fn, "conv1d_same")


def _conv_taps(x: Tensor, weight: Tensor, left: int, right: int):
    # one GEMM per tap over a [C, W, B] layout so every tap slice is a free view
    B, cin, W = x.shape
    cout, _, k = weight.shape
    xp = np.zeros((cin, W + k - 1, B), dtype=x.dtype)
    xp[:, left : left + W, :] = x.data.transpose(1, 2, 0)
    wt = np.ascontiguousarray(weight.data.transpose(2, 0, 1))  # [k, cout, cin] keeps BLAS on the fast path
    acc = np.zeros((cout, W * B), dtype=np.result_type(x.dtype, wt.dtype))
    for j in range(k):
        acc += wt[j] @ xp[:, j : j + W, :].reshape(cin, W * B)
    out = np.ascontiguousarray(acc.reshape(cout, W, B).transpose(2, 0, 1))

    def bw(g, need_x):
        g2 = np.ascontiguousarray(g.transpose(1, 2, 0)).reshape(cout, W * B)
        gw = np.empty_like(wt)
        gxp = np.zeros_like(xp) if need_x else None
        for j in range(k):
            xs = xp[:, j : j + W, :].reshape(cin, W * B)
            gw[j] = g2 @ xs.T
            if need_x:
                gxp[:, j : j + W, :] += (wt[j].T @ g2).reshape(cin, W, B)
        gx = np.ascontiguousarray(gxp[:, left : left + W, :].transpose(2, 0, 1)) if need_x else None
        return gx, gw.transpose(1, 2, 0)

    return out, bw


def _conv_grouped(x: Tensor, weight: Tensor, G: int, left: int, right: int):
    # im2col per group, batched over groups with one matmul
    B, cin, W = x.shape
    cout, cg, k = weight.shape
    og = cout // G
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    cols = sliding_window_view(xp, k, axis=2)  # [B, cin, W, k]
    cols = cols.reshape(B, G, cg, W, k).transpose(1, 0, 3, 2, 4).reshape(G, B * W, cg * k)
    wmat = weight.data.reshape(G, og, cg * k)
    out = np.matmul(cols, wmat.transpose(0, 2, 1))  # [G, B*W, og]
    out = np.ascontiguousarray(out.reshape(G, B, W, og).transpose(1, 0, 3, 2)).reshape(B, cout, W)

    def bw(g, need_x):
        gm = g.reshape(B, G, og, W).transpose(1, 0, 3, 2).reshape(G, B * W, og)
        gw = np.matmul(gm.transpose(0, 2, 1), cols).reshape(cout, cg, k)
        if not need_x:
            return None, gw
        gcols = np.matmul(gm, wmat).reshape(G, B, W, cg, k).transpose(1, 0, 3, 2, 4).reshape(B, cin, W, k)
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        for j in range(k):
            gxp[:, :, j : j + W] += gcols[..., j]
        return gxp[:, :, left : left + W], gw

    return out, bw


def batchnorm1d(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over batch and time.

    In training mode the running statistics are updated in place (unbiased
    variance, exponential moving average with weight ``momentum``).
    """
    _check_ndim(x, 3, "batchnorm input")
    B, C, W = x.shape
    if scale.shape != (C,) or shift.shape != (C,):
        raise ShapeError(f"batchnorm affine shapes {scale.shape}/{shift.shape} do not match channels={C}")
    gamma = scale.data[None, :, None]
    if training:
        n = B * W
        if n < 2:
            raise ShapeError(f"batchnorm in training mode needs >= 2 values per channel, got {n}")
        mean = x.data.mean(axis=(0, 2))
        centered = x.data - mean[None, :, None]
        var = (centered * centered).mean(axis=(0, 2))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std[None, :, None]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))

        def bw(g):
            gxhat = g * gamma
            gx = None
            if x.requires_grad:
                s1 = gxhat.sum(axis=(0, 2), keepdims=True)
                s2 = (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
                gx = (inv_std[None, :, None] / n) * (n * gxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean[None, :, None]) * inv_std[None, :, None]

        def bw(g):
            gx = g * (gamma * inv_std[None, :, None]) if x.requires_grad else None
            return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    out = (xhat * gamma + shift.data[None, :, None]).astype(x.dtype, copy=False)
    return _record(out, (x, scale, shift), bw, "batchnorm1d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    _check_ndim(x, 2, "linear input")
    _check_ndim(weight, 2, "linear weight")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear expects {weight.shape[1]} input features, got {x.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match out_features={weight.shape[0]}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data
        return (gx, gw) if bias is None else (gx, gw, g.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, parents, bw, "linear")


def global_avg_pool(x: Tensor) -> Tensor:
    _check_ndim(x, 3, "pool input")
    W = x.shape[2]
    if W < 1:
        raise ShapeError("pool input has zero width")
    return _record(
        x.data.mean(axis=2),
        (x,),
        lambda g: (np.repeat(g[:, :, None] / W, W, axis=2),),
        "global_avg_pool",
    )


def concat_channels(xs: Iterable[Tensor]) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat of zero tensors")
    for t in xs:
        _check_ndim(t, 3, "concat input")
    B, _, W = xs[0].shape
    for i, t in enumerate(xs):
        if t.shape[0] != B or t.shape[2] != W:
            raise ShapeError(f"concat input {i} has shape {t.shape}, expected batch={B} and width={W}")
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def bw(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return _record(np.concatenate([t.data for t in xs], axis=1), xs, bw, "concat_channels")


def take_channels(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather channels ``index`` (a permutation or subset) along axis 1."""
    _check_ndim(x, 3, "take_channels input")
    index = np.asarray(index, dtype=np.intp)
    unique = np.unique(index).size == index.size

    def bw(g):
        gx = np.zeros_like(x.data, dtype=g.dtype)
        if unique:
            gx[:, index] = g
        else:
            np.add.at(gx, (slice(None), index), g)
        return (gx,)

    return _record(x.data[:, index], (x,), bw, "take_channels")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    _check_ndim(logits, 2, "logits")
    labels = np.asarray(labels, dtype=np.intp)
    B, c = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch={B}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = np.asarray((lse - z[rows, labels]).mean(), dtype=logits.dtype)

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / B),)

    return _record(loss, (logits,), bw, "softmax_cross_entropy")
