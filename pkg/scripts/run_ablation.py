"""Ablation grid (OS-Block alone, +TargetDrop, +1/+2 dense blocks, full model).

Defaults to a short budget on the three bundled datasets; pass --epochs and
--seeds for longer runs.

    python scripts/run_ablation.py --data-root data/UCR --epochs 30 --seeds 0,1,2
"""

import argparse
import logging
import sys
from pathlib import Path

from adafsnet import tensor
from adafsnet.data import load_pair
from adafsnet.presets import desk_config
from adafsnet.train import emit_ablation, emit_report, run_ablation


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data-root", default="data/UCR")
    ap.add_argument("--datasets", default="ItalyPowerDemand,Coffee,GunPoint")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--warmup", type=int, default=5)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = desk_config(args.epochs, warmup_epochs=str(args.warmup), seeds=args.seeds)
    tensor.set_default_dtype(cfg.dtype)
    pairs = [load_pair(args.data_root, n.strip()) for n in args.datasets.split(",")]
    result = run_ablation(pairs, cfg.model, cfg.train, cfg.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(emit_ablation(result, "csv"))
    (out / "ablation.md").write_text(emit_ablation(result, "markdown"))
    for name, report in result.reports.items():
        (out / f"{name}.md").write_text(emit_report(report, "markdown"))
    print(emit_ablation(result, "markdown"), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
