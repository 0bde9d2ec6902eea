"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
(divergence, failed coverage or gradient check).  Failures print one line
``ERROR <code>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import tensor
from .config import ConfigError, RunConfig, build_run_config, describe_keys, parse_config_text, parse_overrides
from .data import DataError, data_root, load_pair
from .gradcheck import GRAD_TOL, run_gradient_suite
from .model import load_checkpoint, save_checkpoint
from .planner import CoverageError, coverage_certificate, select_pk, verify_coverage
from .train import (
    RunReport,
    RunRow,
    TrainingDiverged,
    emit_ablation,
    emit_report,
    evaluate,
    fingerprint,
    merge_reports,
    parse_report_csv,
    run_ablation,
    run_experiment,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    if data:
        p.add_argument("--data-root", help="dataset directory (default: $ADAFSNET_DATA_ROOT)")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry")


def make_parser() -> argparse.ArgumentParser:
    epilog = "config keys:\n" + describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = _Parser(prog="adafsnet", description="AdaFSNet time-series classifier", epilog=epilog, formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("plan", help="print the prime kernel plan and coverage certificate", epilog=epilog, formatter_class=fmt)
    p.add_argument("--length", type=int, required=True, help="series length")
    _common(p, data=False)

    p = sub.add_parser("train", help="train on <dataset>_TRAIN, write checkpoint and history", epilog=epilog, formatter_class=fmt)
    p.add_argument("--dataset", required=True)
    _common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on <dataset>_TEST", epilog=epilog, formatter_class=fmt)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", help="default: <out>/<dataset>.ckpt")
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op", formatter_class=fmt)
    p.add_argument("--shapes", type=int, default=20, help="random shapes per op (default 20)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablate", help="run the ablation variant grid", epilog=epilog, formatter_class=fmt)
    p.add_argument("--dataset", action="append", required=True, help="repeatable")
    _common(p)

    p = sub.add_parser("report", help="merge report CSVs into one MPCE table", formatter_class=fmt)
    p.add_argument("inputs", nargs="+", help="report .csv files")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--name", default="merged", help="output file stem")
    return parser


def _run_config(args) -> RunConfig:
    entries = parse_config_text(Path(args.config).read_text(), args.config) if args.config else {}
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    cfg = build_run_config(entries, overrides)
    tensor.set_default_dtype(cfg.dtype)
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_plan(args) -> int:
    cfg = _run_config(args)
    plan = select_pk(args.length, cfg.model.rf_cap, cfg.model.literal_layer3)
    for line in coverage_certificate(plan):
        print(line)
    ok, missing = verify_coverage(plan)
    if not ok:
        raise NumericFailure(f"coverage incomplete, missing RFs {missing}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    train_set, test_set = load_pair(data_root(args.data_root), args.dataset, cfg.normalize, cfg.interpolate_missing)
    out = _out(args)

    def on_epoch(r):
        print(f"epoch {r.epoch} loss {r.loss:.6f} train_acc {r.train_acc:.4f}", file=sys.stderr, flush=True)

    model, history, acc = run_experiment(train_set, test_set, cfg.model, cfg.train, on_epoch)
    save_checkpoint(model, out / f"{args.dataset}.ckpt")
    (out / f"{args.dataset}_history.csv").write_text(history.to_csv())
    print(f"trained {args.dataset}: {len(history.records)} epochs, p_k={model.plan.p_k}, preserved={history.preserved}")
    print(f"checkpoint {out / f'{args.dataset}.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    _, test_set = load_pair(data_root(args.data_root), args.dataset, cfg.normalize, cfg.interpolate_missing)
    out = _out(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / f"{args.dataset}.ckpt"
    if not ckpt.is_file():
        raise DataError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt)
    row = RunRow(args.dataset, evaluate(model, test_set), test_set.n_classes)
    report = RunReport([row], fingerprint(model.cfg), test_set.fingerprint())
    (out / f"{args.dataset}_report.csv").write_text(emit_report(report, "csv"))
    (out / f"{args.dataset}_report.md").write_text(emit_report(report, "markdown"))
    print(f"{row.name} accuracy {row.accuracy:.4f} error {row.error:.4f} classes {row.classes} pce {row.pce:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    result = run_gradient_suite(args.shapes, args.seed)
    for op, err in result.max_error.items():
        status = "ok" if err < GRAD_TOL else "FAIL"
        print(f"{op:<24} max_rel_err {err:.3e} shapes {result.shapes_checked[op]} {status}")
    print(f"total {result.seconds:.1f}s")
    if not result.ok:
        raise NumericFailure(f"gradient check exceeded {GRAD_TOL}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    root = data_root(args.data_root)
    pairs = [load_pair(root, name, cfg.normalize, cfg.interpolate_missing) for name in args.dataset]
    out = _out(args)
    result = run_ablation(pairs, cfg.model, cfg.train, cfg.seeds)
    (out / "ablation.csv").write_text(emit_ablation(result, "csv"))
    (out / "ablation.md").write_text(emit_ablation(result, "markdown"))
    for name, report in result.reports.items():
        (out / f"ablation_{name}.csv").write_text(emit_report(report, "csv"))
    print(emit_ablation(result, "markdown"), end="")
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for path in args.inputs:
        p = Path(path)
        if not p.is_file():
            raise DataError(f"report not found: {p}")
        try:
            reports.append(parse_report_csv(p.read_text()))
        except ValueError as e:
            raise DataError(f"{p}: {e}") from None
    merged = merge_reports(reports)
    if not merged.rows:
        raise DataError("no report rows to merge")
    out = _out(args)
    (out / f"{args.name}.csv").write_text(emit_report(merged, "csv"))
    (out / f"{args.name}.md").write_text(emit_report(merged, "markdown"))
    print(emit_report(merged, "markdown"), end="")
    return EXIT_OK


COMMANDS = {
    "plan": cmd_plan,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def _fail(code: int, message: str) -> int:
    print(f"ERROR {code}: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    prev_dtype = tensor.get_default_dtype()
    try:
        args = make_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except (UsageError, ConfigError) as e:
        return _fail(EXIT_USAGE, e)
    except (DataError, FileNotFoundError, IsADirectoryError) as e:
        return _fail(EXIT_DATA, e)
    except ValueError as e:
        # model/config consistency problems surface as ValueError
        return _fail(EXIT_USAGE, e)
    except (NumericFailure, TrainingDiverged, CoverageError, FloatingPointError) as e:
        return _fail(EXIT_NUMERIC, e)
    finally:
        tensor.set_default_dtype(prev_dtype)


if __name__ == "__main__":
    sys.exit(main())
