"""Desk-scale reproduction on ItalyPowerDemand, Coffee and GunPoint.

Trains the DESK preset with seed 0 for each dataset's epoch budget and prints
test accuracy against the threshold and the wall-clock limit.

    python scripts/desk_repro.py --data-root data/UCR [--only Coffee] [--out runs/desk]
"""

import argparse
import sys
import time
from pathlib import Path

from adafsnet import tensor
from adafsnet.data import load_pair
from adafsnet.model import save_checkpoint
from adafsnet.presets import DESK_TARGETS, desk_config
from adafsnet.train import RunReport, RunRow, emit_report, run_experiment


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data-root", default="data/UCR")
    ap.add_argument("--only", action="append", help="restrict to these datasets")
    ap.add_argument("--out", help="write checkpoints, histories and a report here")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rows, all_ok = [], True
    for target in DESK_TARGETS:
        if args.only and target.dataset not in args.only:
            continue
        cfg = desk_config(target.max_epochs, args.seed)
        tensor.set_default_dtype(cfg.dtype)
        train_set, test_set = load_pair(args.data_root, target.dataset, cfg.normalize, cfg.interpolate_missing)

        def log(r):
            if r.epoch % 50 == 0:
                print(f"  {target.dataset} epoch {r.epoch} loss {r.loss:.4f} train_acc {r.train_acc:.3f}", flush=True)

        start = time.perf_counter()
        model, history, acc = run_experiment(train_set, test_set, cfg.model, cfg.train, log)
        seconds = time.perf_counter() - start
        ok = acc >= target.min_accuracy and seconds <= target.max_seconds
        all_ok &= ok
        print(
            f"{'PASS' if ok else 'FAIL'} {target.dataset}: acc {acc:.4f} (need >= {target.min_accuracy}) "
            f"in {len(history.records)} epochs, {seconds:.0f}s (limit {target.max_seconds:.0f}s), "
            f"preserved {history.preserved}",
            flush=True,
        )
        rows.append(RunRow(target.dataset, acc, train_set.n_classes))
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, out / f"{target.dataset}.ckpt")
            (out / f"{target.dataset}_history.csv").write_text(history.to_csv())
    if args.out and rows:
        Path(args.out, "desk_report.md").write_text(emit_report(RunReport(rows), "markdown"))
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
