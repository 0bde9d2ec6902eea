"""AdaFSNet: path-grouped prime-kernel OS-Block, TargetDrop, two dense blocks, GAP + FC head."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .planner import KernelPlan, PathAttribution, verify_coverage
from .targetdrop import TargetDrop, TargetDropConfig
from .tensor import (
    Parameter,
    Tensor,
    add,
    batchnorm1d,
    concat_channels,
    conv1d_same,
    get_default_dtype,
    global_avg_pool,
    linear,
    relu,
    take_channels,
)

DENSE_LAYERS = 8
CHECKPOINT_MAGIC = b"ADAFSNET-CKPT 1\n"


@dataclass
class ModelConfig:
    num_classes: int = 2
    filters_per_path: int = 4
    growth_rate: int = 16
    dense_layers_per_block: int = DENSE_LAYERS
    dense_kernel_count: int = 4
    dense_block_count: int = 2
    enable_targetdrop: bool = True
    rf_cap: int = 48
    literal_layer3: bool = False
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    targetdrop: TargetDropConfig = field(default_factory=TargetDropConfig)

    def __post_init__(self):
        if isinstance(self.targetdrop, dict):
            self.targetdrop = TargetDropConfig(**self.targetdrop)
        if self.dense_layers_per_block != DENSE_LAYERS:
            raise ValueError(f"dense blocks have exactly {DENSE_LAYERS} layers")
        if self.dense_block_count not in (0, 1, 2):
            raise ValueError(f"dense_block_count must be 0, 1 or 2, got {self.dense_block_count}")
        for name in ("num_classes", "filters_per_path", "growth_rate", "dense_kernel_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1d:
    def __init__(self, cin, cout, k, rng, name, groups=1):
        fan_in = (cin // groups) * k
        self.k, self.groups = k, groups
        self.weight = Parameter(_uniform(rng, (cout, cin // groups, k), fan_in), f"{name}.weight")
        self.bias = Parameter(_uniform(rng, (cout,), fan_in), f"{name}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return conv1d_same(x, self.weight, self.bias, self.groups)


class BatchNorm1d:
    def __init__(self, channels, name, momentum=0.1, eps=1e-5):
        self.name = name
        self.scale = Parameter(np.ones(channels), f"{name}.scale")
        self.shift = Parameter(np.zeros(channels), f"{name}.shift")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum, self.eps = momentum, eps

    def parameters(self):
        return [self.scale, self.shift]

    def buffers(self):
        return [(f"{self.name}.running_mean", self.running_mean), (f"{self.name}.running_var", self.running_var)]

    def __call__(self, x, training):
        return batchnorm1d(
            x, self.scale, self.shift, self.running_mean, self.running_var, training, self.momentum, self.eps
        )


class Linear:
    def __init__(self, din, dout, rng, name):
        self.weight = Parameter(_uniform(rng, (dout, din), din), f"{name}.weight")
        self.bias = Parameter(_uniform(rng, (dout,), din), f"{name}.bias")

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class OSBlock:
    """Three stacked multi-kernel layers; every (k1, k2, k3) path is its own conv stack.

    Paths sharing a kernel size at a layer are batched into one grouped conv;
    channels are gathered into kernel order and scattered back to path order.
    """

    def __init__(self, plan: KernelPlan, in_dims: int, F: int, rng, momentum=0.1, eps=1e-5):
        self.paths = plan.paths
        self.F = F
        n = len(self.paths)
        C = n * F
        self.layers: list[list[tuple[int, np.ndarray | None, Conv1d]]] = []
        self.inverse: list[np.ndarray | None] = []
        self.bns = []
        for layer in range(3):
            entries, order = [], []
            for k in sorted({p[layer] for p in self.paths}):
                members = [i for i, p in enumerate(self.paths) if p[layer] == k]
                chans = np.concatenate([np.arange(i * F, (i + 1) * F) for i in members])
                name = f"os.l{layer + 1}.k{k}"
                if layer == 0:
                    conv = Conv1d(in_dims, len(members) * F, k, rng, name)
                    entries.append((k, None, conv))
                else:
                    conv = Conv1d(len(chans), len(chans), k, rng, name, groups=len(members))
                    entries.append((k, chans, conv))
                order.append(chans)
            order = np.concatenate(order)
            self.layers.append(entries)
            self.inverse.append(None if np.array_equal(order, np.arange(C)) else np.argsort(order))
            self.bns.append(BatchNorm1d(C, f"os.l{layer + 1}.bn", momentum, eps))

    @property
    def out_channels(self) -> int:
        return len(self.paths) * self.F

    def parameters(self):
        ps = []
        for entries, bn in zip(self.layers, self.bns):
            for _, _, conv in entries:
                ps += conv.parameters()
            ps += bn.parameters()
        return ps

    def buffers(self):
        return [b for bn in self.bns for b in bn.buffers()]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = x
        for entries, inv, bn in zip(self.layers, self.inverse, self.bns):
            if entries[0][1] is None:
                parts = [conv(h) for _, _, conv in entries]
            else:
                parts = [conv(take_channels(h, chans)) for _, chans, conv in entries]
            h = concat_channels(parts)
            if inv is not None:
                h = take_channels(h, inv)
            h = bn(relu(h), training)
        return h


class DenseBlock:
    """Eight conv -> ReLU -> BN layers, each fed the concatenation of all earlier features."""

    def __init__(self, in_channels: int, growth: int, kernels: list[int], rng, name: str, momentum=0.1, eps=1e-5):
        if len(kernels) != DENSE_LAYERS:
            raise ValueError(f"need {DENSE_LAYERS} kernel sizes, got {kernels}")
        self.in_channels, self.growth, self.kernels = in_channels, growth, list(kernels)
        self.convs = [
            Conv1d(in_channels + j * growth, growth, k, rng, f"{name}.l{j + 1}") for j, k in enumerate(kernels)
        ]
        self.bns = [BatchNorm1d(growth, f"{name}.l{j + 1}.bn", momentum, eps) for j in range(DENSE_LAYERS)]

    @property
    def out_channels(self) -> int:
        return self.in_channels + DENSE_LAYERS * self.growth

    def parameters(self):
        return [p for conv, bn in zip(self.convs, self.bns) for p in conv.parameters() + bn.parameters()]

    def buffers(self):
        return [b for bn in self.bns for b in bn.buffers()]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        feats = [x]
        for conv, bn in zip(self.convs, self.bns):
            feats.append(bn(relu(conv(concat_channels(feats))), training))
        return concat_channels(feats)


def round_robin(kernels: list[int], n: int = DENSE_LAYERS) -> list[int]:
    return [kernels[j % len(kernels)] for j in range(n)]


class AdaFSNet:
    def __init__(self, plan: KernelPlan, cfg: ModelConfig, in_dims: int = 1, seed: int = 0):
        self.plan, self.cfg, self.in_dims, self.seed = plan, cfg, in_dims, seed
        self.dtype = get_default_dtype()
        self.rng = np.random.default_rng(seed)
        F = cfg.filters_per_path
        self.attribution = PathAttribution(plan.paths, F)
        mom, eps = cfg.bn_momentum, cfg.bn_eps
        self.os_block = OSBlock(plan, in_dims, F, self.rng, mom, eps)
        c0 = self.os_block.out_channels
        self.targetdrop = TargetDrop(c0, cfg.targetdrop, self.rng) if cfg.enable_targetdrop else None
        self.preserved: list[int] | None = None
        self.respecialized = False
        self.dense_blocks = self._make_dense_blocks(round_robin(sorted(plan.layer_sets[0])))
        self.residual = (
            Conv1d(c0, c0 + DENSE_LAYERS * cfg.growth_rate, 1, self.rng, "residual")
            if cfg.dense_block_count >= 1
            else None
        )
        self.head = Linear(self.feature_channels, cfg.num_classes, self.rng, "head")

    def _make_dense_blocks(self, kernels: list[int]) -> list[DenseBlock]:
        c, g = self.os_block.out_channels, self.cfg.growth_rate
        blocks = []
        for b in range(self.cfg.dense_block_count):
            blocks.append(DenseBlock(c, g, kernels, self.rng, f"dense{b + 1}", self.cfg.bn_momentum, self.cfg.bn_eps))
            c = blocks[-1].out_channels
        return blocks

    @property
    def dense_kernels(self) -> list[int]:
        return self.dense_blocks[0].kernels if self.dense_blocks else []

    @property
    def feature_channels(self) -> int:
        return self.os_block.out_channels + DENSE_LAYERS * self.cfg.growth_rate * self.cfg.dense_block_count

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        ps = self.os_block.parameters()
        if self.targetdrop is not None:
            ps += self.targetdrop.parameters()
        for block in self.dense_blocks:
            ps += block.parameters()
        if self.residual is not None:
            ps += self.residual.parameters()
        ps += self.head.parameters()
        return [(p.name, p) for p in ps]

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        bufs = self.os_block.buffers()
        for block in self.dense_blocks:
            bufs += block.buffers()
        return bufs

    def forward(self, x, training: bool = False, bn_training: bool | None = None, taps: dict | None = None) -> Tensor:
        """Logits [B, num_classes] for input [B, D, W] (or [B, W] for univariate)."""
        if bn_training is None:
            bn_training = training
        data = x.data if isinstance(x, Tensor) else np.asarray(x)
        if data.ndim == 2:
            data = data[:, None, :]
        if data.ndim != 3 or data.shape[1] != self.in_dims:
            raise ValueError(f"expected input [B, {self.in_dims}, W], got shape {data.shape}")
        h = self.os_block(Tensor(data, dtype=self.dtype), bn_training)
        if taps is not None:
            taps["os_out"] = h
        if self.targetdrop is not None:
            h, M = self.targetdrop(h, training)
            if taps is not None:
                taps["attention"] = M
        if taps is not None:
            taps["dense_in"] = h
        z = h
        if self.dense_blocks:
            d1 = self.dense_blocks[0](h, bn_training)
            r = self.residual(h)
            z = add(d1, r)
            if taps is not None:
                taps.update(dense1_out=d1, residual=r, block2_in=z)
            for block in self.dense_blocks[1:]:
                z = block(z, bn_training)
        if taps is not None:
            taps["features"] = z
        return self.head(global_avg_pool(z))

    __call__ = forward

    def predict(self, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Argmax class per sample in eval mode; ties resolve to the smallest index."""
        from .tensor import no_grad

        preds = []
        with no_grad():
            for i in range(0, len(X), batch_size):
                preds.append(np.argmax(self.forward(X[i : i + batch_size], training=False).data, axis=1))
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def build(plan: KernelPlan, cfg: ModelConfig, in_dims: int = 1, seed: int = 0) -> AdaFSNet:
    ok, missing = verify_coverage(plan)
    if not ok and not plan.literal_layer3:
        raise ValueError(f"kernel plan does not cover RFs {missing}")
    return AdaFSNet(plan, cfg, in_dims, seed)


def parameter_count(model) -> int:
    return int(sum(p.data.size for p in model.parameters()))


def preserved_kernel_sizes(attribution: PathAttribution, mean_attention: np.ndarray, m: int) -> list[int]:
    """Distinct first-layer kernels of the most attended paths, in rank order.

    Paths are ranked by the mean attention over their channels; ties go to the
    larger first-layer kernel, then to path order.
    """
    mean_attention = np.asarray(mean_attention, dtype=float)
    if mean_attention.shape != (attribution.channel_count,):
        raise ValueError(
            f"expected {attribution.channel_count} attention values, got shape {mean_attention.shape}"
        )
    scores = [float(mean_attention[attribution.channels_of(i)].mean()) for i in range(len(attribution.paths))]
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], -attribution.paths[i][0], i))
    kept: list[int] = []
    for i in order:
        k1 = attribution.paths[i][0]
        if k1 not in kept:
            kept.append(k1)
            if len(kept) == m:
                break
    return kept


def respecialize_dense_blocks(model: AdaFSNet, preserved: list[int]) -> AdaFSNet:
    """Rebuild (and re-initialize) the dense blocks with kernels cycled from ``preserved``."""
    if not preserved:
        raise ValueError("preserved kernel list is empty")
    model.preserved = list(preserved)
    model.dense_blocks = model._make_dense_blocks(round_robin(model.preserved))
    model.respecialized = True
    return model


# ---------------------------------------------------------------- checkpoint


def save_checkpoint(model: AdaFSNet, path) -> None:
    """Magic line, one JSON header line, then raw little-endian float64 arrays."""
    arrays = [(n, p.data) for n, p in model.named_parameters()] + model.named_buffers()
    header = {
        "plan": model.plan.to_dict(),
        "config": asdict(model.cfg),
        "in_dims": model.in_dims,
        "seed": model.seed,
        "dtype": str(model.dtype),
        "dense_kernels": model.dense_kernels,
        "preserved": model.preserved,
        "respecialized": model.respecialized,
        "arrays": [[n, list(a.shape)] for n, a in arrays],
    }
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> AdaFSNet:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not an AdaFSNet checkpoint")
    end = raw.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(raw[len(CHECKPOINT_MAGIC) : end])
    from .tensor import set_default_dtype

    prev = get_default_dtype()
    set_default_dtype(header["dtype"])
    try:
        model = AdaFSNet(
            KernelPlan.from_dict(header["plan"]), ModelConfig(**header["config"]), header["in_dims"], header["seed"]
        )
        if model.dense_blocks:
            model.dense_blocks = model._make_dense_blocks(header["dense_kernels"])
    finally:
        set_default_dtype(prev)
    model.preserved = header["preserved"]
    model.respecialized = header["respecialized"]
    slots = dict(model.named_parameters())
    slots.update(model.named_buffers())
    offset = end + 1
    for name, shape in header["arrays"]:
        n = int(np.prod(shape))
        values = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        target = slots[name]
        dest = target.data if isinstance(target, Parameter) else target
        if dest.shape != tuple(shape):
            raise ValueError(f"{path}: array {name} has shape {shape}, model expects {dest.shape}")
        dest[...] = values
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes")
    return model
