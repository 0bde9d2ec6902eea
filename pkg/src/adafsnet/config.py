"""Flat ``key=value`` run configuration shared by the CLI and scripts."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .model import ModelConfig
from .targetdrop import TargetDropConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt(parse):
    def inner(s: str):
        return None if s.strip().lower() in ("none", "") else parse(s)

    return inner


def _region(s: str):
    s = s.strip().lower()
    if s in ("auto", "none"):
        return None
    v = float(s)
    return v if v < 1.0 else int(v)


def _dtype(s: str) -> str:
    s = s.strip()
    if s not in ("float32", "float64"):
        raise ValueError(f"dtype must be float32 or float64, got {s!r}")
    return s


def _seeds(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in s.split(",") if t.strip())


# key -> (section, attribute, parser, help)
KEYS = {
    "filters_per_path": ("model", "filters_per_path", int, "conv filters per OS-Block path"),
    "growth_rate": ("model", "growth_rate", int, "dense-block growth rate"),
    "dense_kernel_count": ("model", "dense_kernel_count", int, "kernel sizes preserved for the dense blocks"),
    "dense_block_count": ("model", "dense_block_count", int, "0, 1 or 2 dense blocks"),
    "enable_targetdrop": ("model", "enable_targetdrop", _bool, "attach TargetDrop after the OS-Block"),
    "rf_cap": ("model", "rf_cap", int, "upper bound on the receptive-field target"),
    "literal_layer3": ("model", "literal_layer3", _bool, "use {2} instead of {1,2} as layer-3 kernels"),
    "bn_momentum": ("model", "bn_momentum", float, "batchnorm running-stat momentum"),
    "bn_eps": ("model", "bn_eps", float, "batchnorm epsilon"),
    "gamma": ("targetdrop", "gamma", float, "TargetDrop drop probability"),
    "reduction_ratio": ("targetdrop", "reduction_ratio", int, "attention bottleneck ratio"),
    "region_length": ("targetdrop", "region_length", _region, "drop window: auto, an int, or a fraction of W"),
    "lr": ("train", "lr", float, "Adam learning rate"),
    "batch_size": ("train", "batch_size", int, "mini-batch size"),
    "max_epochs": ("train", "max_epochs", int, "epoch budget"),
    "warmup_epochs": ("train", "warmup_epochs", int, "epochs before dense-block respecialization"),
    "early_stop_patience": ("train", "early_stop_patience", _opt(int), "stop after N epochs without loss improvement"),
    "stop_loss": ("train", "stop_loss", _opt(float), "stop once the epoch loss drops below this"),
    "keep_best": ("train", "keep_best", _bool, "restore the lowest-train-loss weights at the end"),
    "seed": ("train", "seed", int, "seed for initialization and shuffling"),
    "normalize": ("run", "normalize", _bool, "z-normalize every series"),
    "interpolate_missing": ("run", "interpolate_missing", _bool, "linearly in-fill missing values"),
    "dtype": ("run", "dtype", _dtype, "float64 or float32"),
    "seeds": ("run", "seeds", _seeds, "comma-separated seeds for ablation runs"),
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    normalize: bool = True
    interpolate_missing: bool = False
    dtype: str = "float64"
    seeds: tuple[int, ...] = (0, 1, 2)

    def values(self) -> dict[str, object]:
        out = {}
        for key, (section, attr, _, _) in KEYS.items():
            holder = {"model": self.model, "targetdrop": self.model.targetdrop, "train": self.train, "run": self}[section]
            out[key] = getattr(holder, attr)
        return out


def parse_config_text(text: str, source: str = "config") -> dict[str, str]:
    entries = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        entries[key.strip()] = value.strip()
    return entries


def parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for p in pairs or ():
        key, sep, value = p.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        out[key.strip()] = value.strip()
    return out


def build_run_config(entries: dict[str, str], overrides: dict[str, str] | None = None) -> RunConfig:
    """Apply file ``entries`` then ``overrides`` (which win) on top of the defaults."""
    merged = {**entries, **(overrides or {})}
    unknown = sorted(set(merged) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}; valid keys: {', '.join(sorted(KEYS))}")
    sections: dict[str, dict] = {"model": {}, "targetdrop": {}, "train": {}, "run": {}}
    for key, raw in merged.items():
        section, attr, parse, _ = KEYS[key]
        try:
            sections[section][attr] = parse(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {e}") from None
    try:
        td = replace(TargetDropConfig(), **sections["targetdrop"])
        model = replace(ModelConfig(), targetdrop=td, **sections["model"])
        train = replace(TrainConfig(), **sections["train"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return RunConfig(model=model, train=train, **sections["run"])


def describe_keys() -> str:
    defaults = RunConfig().values()
    width = max(map(len, KEYS))
    return "\n".join(f"  {k:<{width}}  {help_} (default: {defaults[k]})" for k, (_, _, _, help_) in KEYS.items())
