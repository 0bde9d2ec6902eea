"""Attention-targeted structured dropout over the time axis.

Channel significance is the time-average of each channel; a bottlenecked
two-layer map turns it into sigmoid attention scores.  The top ceil(gamma*C)
channels (ties included) are targets; for each target channel a window of
length ~k around its peak is zeroed and the survivors are rescaled by
numel/sum of the mask.  Output channels are also multiplied by their attention
score in both modes, which is the only route by which the attention weights
receive gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Parameter, Tensor, global_avg_pool, linear, mul, relu, sigmoid


@dataclass
class TargetDropConfig:
    gamma: float = 0.15
    reduction_ratio: int = 16
    # None -> max(2, ceil(W/10)); float in (0, 1) -> ceil(fraction * W); int -> fixed
    region_length: int | float | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.reduction_ratio < 1:
            raise ValueError(f"reduction_ratio must be >= 1, got {self.reduction_ratio}")

    def bottleneck(self, channels: int) -> int:
        return max(1, channels // self.reduction_ratio)

    def region(self, width: int) -> int:
        k = self.region_length
        if k is None:
            return max(2, math.ceil(width / 10))
        if isinstance(k, float) and k < 1.0:
            return max(1, math.ceil(k * width))
        return max(1, int(k))


@dataclass
class TargetVector:
    T: np.ndarray  # bool[C]
    K: int
    threshold: float


@dataclass
class DropMask:
    S: np.ndarray  # float[B, C, W] of 0/1
    peaks: np.ndarray  # int[B, C], 1-indexed; 0 for non-target channels
    bounds: np.ndarray  # int[B, C, 2], 1-indexed inclusive (w1, w2); 0 for non-targets


def channel_significance(U: Tensor) -> Tensor:
    return global_avg_pool(U)


def attention_map(v: Tensor, W1: Tensor, W2: Tensor) -> Tensor:
    return sigmoid(linear(relu(linear(v, W1)), W2))


def select_targets(M: np.ndarray, gamma: float) -> TargetVector:
    M = np.asarray(M, dtype=float).reshape(-1)
    C = M.size
    if C < 1:
        raise ValueError("attention vector is empty")
    K = min(C, math.ceil(gamma * C))
    threshold = float(np.sort(M)[::-1][K - 1])
    return TargetVector(M >= threshold, K, threshold)


def drop_region(u: np.ndarray, k: int) -> tuple[int, int, int]:
    """Peak position ``a`` and the clamped window [w1, w2], all 1-indexed."""
    W = len(u)
    a = int(np.argmax(u)) + 1
    half = k // 2
    return a, max(a - half, 1), min(a + half, W)


def build_mask(U: np.ndarray, M: np.ndarray, gamma: float, k: int) -> DropMask:
    """Per-sample mask from the attention scores ``M`` [B, C] and activations ``U``."""
    B, C, W = U.shape
    S = np.ones((B, C, W), dtype=U.dtype)
    peaks = np.zeros((B, C), dtype=np.int64)
    bounds = np.zeros((B, C, 2), dtype=np.int64)
    for b in range(B):
        targets = np.flatnonzero(select_targets(M[b], gamma).T)
        for c in targets:
            a, w1, w2 = drop_region(U[b, c], k)
            S[b, c, w1 - 1 : w2] = 0.0
            peaks[b, c] = a
            bounds[b, c] = (w1, w2)
    return DropMask(S, peaks, bounds)


def mask_scale(S: np.ndarray) -> np.ndarray:
    """Elementwise factor s * numel/sum per channel; fully masked channels get 0."""
    W = S.shape[-1]
    kept = S.sum(axis=-1, keepdims=True)
    factor = np.divide(W, kept, out=np.zeros_like(kept), where=kept > 0)
    return S * factor


def apply_mask(U: Tensor, mask: DropMask | np.ndarray) -> Tensor:
    S = mask.S if isinstance(mask, DropMask) else mask
    if S.shape != U.shape:
        raise ValueError(f"mask shape {S.shape} does not match input {U.shape}")
    return mul(U, mask_scale(S))


def targetdrop_forward(
    U: Tensor,
    cfg: TargetDropConfig,
    W1: Tensor,
    W2: Tensor,
    training: bool,
    mask: DropMask | None = None,
) -> tuple[Tensor, Tensor, DropMask | None]:
    """Return (output, attention M [B, C], mask used or None in eval mode).

    ``mask`` overrides the freshly computed one (used by the gradient checker,
    which needs the mask frozen while inputs are perturbed).
    """
    M = attention_map(channel_significance(U), W1, W2)
    out = U
    if training:
        if mask is None:
            mask = build_mask(U.data, M.data, cfg.gamma, cfg.region(U.shape[2]))
        out = apply_mask(U, mask)
    else:
        mask = None
    B, C = M.shape
    out = mul(out, M.reshape(B, C, 1))
    return out, M, mask


class AttentionStatistics:
    """Running mean of the per-batch mean attention score of each channel."""

    def __init__(self, channels: int):
        self.channels = channels
        self.total = np.zeros(channels, dtype=np.float64)
        self.batches = 0

    def update(self, M: np.ndarray) -> None:
        M = np.asarray(M, dtype=np.float64)
        if M.ndim == 2:
            M = M.mean(axis=0)
        if M.shape != (self.channels,):
            raise ValueError(f"expected {self.channels} attention scores, got shape {M.shape}")
        self.total += M
        self.batches += 1

    def mean(self) -> np.ndarray:
        if self.batches == 0:
            return np.full(self.channels, 0.5)
        return self.total / self.batches

    def reset(self) -> None:
        self.total[:] = 0.0
        self.batches = 0


class TargetDrop:
    def __init__(self, channels: int, cfg: TargetDropConfig, rng: np.random.Generator, dtype=None):
        self.cfg = cfg
        self.channels = channels
        hidden = cfg.bottleneck(channels)
        self.W1 = Parameter(_uniform(rng, (hidden, channels), channels), "targetdrop.W1", dtype)
        self.W2 = Parameter(_uniform(rng, (channels, hidden), hidden), "targetdrop.W2", dtype)
        self.stats = AttentionStatistics(channels)
        self.collect = False

    def parameters(self) -> list[Parameter]:
        return [self.W1, self.W2]

    def __call__(self, U: Tensor, training: bool) -> tuple[Tensor, Tensor]:
        out, M, _ = targetdrop_forward(U, self.cfg, self.W1, self.W2, training)
        if training and self.collect:
            self.stats.update(M.data)
        return out, M


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
