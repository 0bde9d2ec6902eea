"""Named configurations.

``DESK`` is a reduced-width model sized for single-core CPU runs of a few
hundred epochs: receptive fields capped at 16, two filters per path, growth
rate 8, single precision.  Everything else keeps its default.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig, build_run_config

DESK = {"rf_cap": "16", "filters_per_path": "2", "growth_rate": "8", "dtype": "float32"}


@dataclass(frozen=True)
class DeskTarget:
    dataset: str
    max_epochs: int
    min_accuracy: float
    max_seconds: float


DESK_TARGETS = (
    DeskTarget("ItalyPowerDemand", 300, 0.90, 600.0),
    DeskTarget("Coffee", 500, 0.92, 900.0),
    DeskTarget("GunPoint", 500, 0.90, 1200.0),
)


def desk_config(max_epochs: int, seed: int = 0, **overrides: str) -> RunConfig:
    return build_run_config(DESK, {"max_epochs": str(max_epochs), "seed": str(seed), **overrides})
