"""Training loop, evaluation metrics, ablation driver and report rendering."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import TimeSeriesDataset
from .model import AdaFSNet, ModelConfig, build, preserved_kernel_sizes, respecialize_dense_blocks
from .optim import adam_step
from .planner import select_pk
from .tensor import backward, softmax_cross_entropy

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 16
    max_epochs: int = 1500
    seed: int = 0
    warmup_epochs: int = 20
    early_stop_patience: int | None = None
    # stop once the epoch loss falls below this value (after respecialization)
    stop_loss: float | None = None
    # restore the lowest-train-loss weights seen after respecialization
    keep_best: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.warmup_epochs < 0 or self.max_epochs < self.warmup_epochs:
            raise ValueError(f"need 0 <= warmup_epochs ({self.warmup_epochs}) <= max_epochs ({self.max_epochs})")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float


@dataclass
class History:
    records: list[EpochRecord] = field(default_factory=list)
    respecialized_after: int | None = None
    preserved: list[int] | None = None
    seconds: float = 0.0

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_csv(self) -> str:
        lines = ["epoch,loss,train_acc"]
        lines += [f"{r.epoch},{r.loss!r},{r.train_acc!r}" for r in self.records]
        return "\n".join(lines) + "\n"


def batch_indices(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled batches; a trailing singleton is folded into the previous batch."""
    perm = rng.permutation(n)
    batches = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate(batches[-2:])
        batches.pop()
    return batches


def _respecialize(model: AdaFSNet) -> list[int]:
    stats = model.targetdrop.stats.mean() if model.targetdrop is not None else np.full(
        model.attribution.channel_count, 0.5
    )
    preserved = preserved_kernel_sizes(model.attribution, stats, model.cfg.dense_kernel_count)
    respecialize_dense_blocks(model, preserved)
    return preserved


def _snapshot(model: AdaFSNet) -> list[np.ndarray]:
    return [p.data.copy() for p in model.parameters()] + [b.copy() for _, b in model.named_buffers()]


def _restore(model: AdaFSNet, snap: list[np.ndarray]) -> None:
    targets = [p.data for p in model.parameters()] + [b for _, b in model.named_buffers()]
    for dst, src in zip(targets, snap):
        dst[...] = src


def train(
    model: AdaFSNet,
    dataset: TimeSeriesDataset,
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> History:
    """Adam on shuffled mini-batches with a one-shot dense-block respecialization.

    After ``warmup_epochs`` epochs the mean TargetDrop attention per path picks
    the preserved kernel sizes and the dense blocks are rebuilt once (also when
    that is the final epoch).  With ``warmup_epochs == 0`` this happens before
    training, from uniform attention.  Models without dense blocks are never
    respecialized.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    if dataset.n_classes != model.cfg.num_classes:
        raise ValueError(f"dataset has {dataset.n_classes} classes, model head has {model.cfg.num_classes}")
    rng = np.random.default_rng(cfg.seed)
    X = dataset.X.astype(model.dtype)
    y = dataset.y
    pending = model.cfg.dense_block_count > 0 and not model.respecialized
    history = History()
    if model.targetdrop is not None:
        model.targetdrop.stats.reset()
        model.targetdrop.collect = pending
    if pending and cfg.warmup_epochs == 0:
        history.preserved = _respecialize(model)
        history.respecialized_after = 0
        pending = False
    start = time.perf_counter()
    best, stale = np.inf, 0
    best_loss, best_snap = np.inf, None
    for epoch in range(1, cfg.max_epochs + 1):
        total, correct = 0.0, 0
        for idx in batch_indices(len(X), cfg.batch_size, rng):
            logits = model.forward(X[idx], training=True)
            loss = softmax_cross_entropy(logits, y[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}")
            backward(loss)
            adam_step(model.parameters(), cfg.lr)
            total += value * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == y[idx]).sum())
        rec = EpochRecord(epoch, total / len(X), correct / len(X))
        history.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if pending and epoch == cfg.warmup_epochs:
            history.preserved = _respecialize(model)
            history.respecialized_after = epoch
            pending = False
            if model.targetdrop is not None:
                model.targetdrop.collect = False
            best, stale = np.inf, 0
            continue
        if pending:
            continue
        if cfg.keep_best and rec.loss < best_loss:
            best_loss, best_snap = rec.loss, _snapshot(model)
        if cfg.stop_loss is not None and rec.loss < cfg.stop_loss:
            break
        if cfg.early_stop_patience is not None:
            if rec.loss < best:
                best, stale = rec.loss, 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
    if best_snap is not None:
        _restore(model, best_snap)
    history.seconds = time.perf_counter() - start
    return history


# ---------------------------------------------------------------- metrics


def evaluate(model: AdaFSNet, dataset: TimeSeriesDataset, batch_size: int = 256) -> float:
    if dataset.n_classes != model.cfg.num_classes:
        raise ValueError(f"dataset has {dataset.n_classes} classes, model head has {model.cfg.num_classes}")
    pred = model.predict(dataset.X.astype(model.dtype), batch_size)
    return accuracy(pred, dataset.y)


def accuracy(pred, labels) -> float:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("accuracy of an empty test set")
    return int((pred == labels).sum()) / len(labels)


def pce(error: float, classes: int) -> float:
    if not 0.0 <= error <= 1.0:
        raise ValueError(f"error must lie in [0, 1], got {error}")
    if classes < 1:
        raise ValueError(f"class count must be >= 1, got {classes}")
    return error / classes


def mpce(pces: Sequence[float]) -> float:
    pces = list(pces)
    if not pces:
        raise ValueError("MPCE of zero datasets")
    return sum(pces) / len(pces)


# ---------------------------------------------------------------- reports


@dataclass
class RunRow:
    name: str
    accuracy: float
    classes: int
    # set when read back from a rounded report, so re-emitting does not re-round
    stored_pce: float | None = None

    @property
    def error(self) -> float:
        return 1.0 - self.accuracy

    @property
    def pce(self) -> float:
        return self.stored_pce if self.stored_pce is not None else pce(self.error, self.classes)


@dataclass
class RunReport:
    rows: list[RunRow] = field(default_factory=list)
    config_fingerprint: str = ""
    data_fingerprint: str = ""
    wall_clock: float = 0.0

    @property
    def mpce(self) -> float:
        return mpce([r.pce for r in self.rows])


REPORT_COLUMNS = ("name", "accuracy", "error", "classes", "pce")


def emit_report(report: RunReport, fmt: str = "csv") -> str:
    """Fixed column order, 4 decimals, MPCE footer row."""
    rows = [[r.name, f"{r.accuracy:.4f}", f"{r.error:.4f}", str(r.classes), f"{r.pce:.4f}"] for r in report.rows]
    footer = ["MPCE", "", "", "", f"{report.mpce:.4f}"]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerows(rows)
        w.writerow(footer)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(REPORT_COLUMNS) + " |", "|" + "---|" * len(REPORT_COLUMNS)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        lines.append("| **MPCE** |  |  |  | " + footer[-1] + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r} (csv or markdown)")


def parse_report_csv(text: str) -> RunReport:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != REPORT_COLUMNS:
        raise ValueError(f"not a report file: header {header}")
    rows = []
    for r in reader:
        if not r or r[0] == "MPCE":
            continue
        if len(r) != len(REPORT_COLUMNS):
            raise ValueError(f"malformed report row {r}")
        rows.append(RunRow(r[0], float(r[1]), int(r[3]), float(r[4])))
    return RunReport(rows)


def merge_reports(reports: Sequence[RunReport]) -> RunReport:
    """Concatenate rows; a dataset appearing twice keeps its last row."""
    merged: dict[str, RunRow] = {}
    for rep in reports:
        for row in rep.rows:
            merged[row.name] = row
    return RunReport(list(merged.values()))


def fingerprint(*objs) -> str:
    blob = json.dumps([asdict(o) if hasattr(o, "__dataclass_fields__") else o for o in objs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def run_experiment(
    train_set: TimeSeriesDataset,
    test_set: TimeSeriesDataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    on_epoch=None,
) -> tuple[AdaFSNet, History, float]:
    """Plan from the series length, build, train and evaluate one model."""
    plan = select_pk(train_set.W, model_cfg.rf_cap, model_cfg.literal_layer3)
    cfg = replace(model_cfg, num_classes=train_set.n_classes)
    model = build(plan, cfg, train_set.D, train_cfg.seed)
    history = train(model, train_set, train_cfg, on_epoch)
    return model, history, evaluate(model, test_set)


# ---------------------------------------------------------------- ablation


@dataclass(frozen=True)
class Variant:
    name: str
    enable_targetdrop: bool
    dense_block_count: int


VARIANTS = (
    Variant("os_block", False, 0),
    Variant("os_block+dropout", True, 0),
    Variant("os_block+1dense", False, 1),
    Variant("os_block+2dense", False, 2),
    Variant("adafsnet", True, 2),
)


@dataclass
class AblationResult:
    variants: list[str]
    datasets: list[str]
    accuracy: dict[str, dict[str, float]]  # variant -> dataset -> mean accuracy over seeds
    reports: dict[str, RunReport]
    wins: dict[str, int]
    seeds: tuple[int, ...]


def win_counts(accuracy: dict[str, dict[str, float]], variants: list[str], datasets: list[str]) -> dict[str, int]:
    """One win per dataset to the most accurate variant; ties go to the earlier-declared one."""
    wins = {v: 0 for v in variants}
    for d in datasets:
        best = variants[0]
        for v in variants[1:]:
            if accuracy[v][d] > accuracy[best][d]:
                best = v
        wins[best] += 1
    return wins


def run_ablation(
    pairs: Sequence[tuple[TimeSeriesDataset, TimeSeriesDataset]],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seeds: Sequence[int] = (0, 1, 2),
    variants: Sequence[Variant] = VARIANTS,
) -> AblationResult:
    if not pairs:
        raise ValueError("ablation needs at least one dataset")
    names = [tr.name for tr, _ in pairs]
    acc: dict[str, dict[str, float]] = {v.name: {} for v in variants}
    reports: dict[str, RunReport] = {}
    data_fp = fingerprint([tr.fingerprint() + te.fingerprint() for tr, te in pairs], list(seeds))
    for v in variants:
        cfg = replace(model_cfg, enable_targetdrop=v.enable_targetdrop, dense_block_count=v.dense_block_count)
        start = time.perf_counter()
        rows = []
        for tr, te in pairs:
            runs = []
            for seed in seeds:
                _, _, a = run_experiment(tr, te, cfg, replace(train_cfg, seed=seed))
                runs.append(a)
            acc[v.name][tr.name] = float(np.mean(runs))
            rows.append(RunRow(tr.name, acc[v.name][tr.name], tr.n_classes))
            log.info("ablation %s on %s: mean acc %.4f over seeds %s", v.name, tr.name, acc[v.name][tr.name], list(seeds))
        reports[v.name] = RunReport(rows, fingerprint(cfg, train_cfg), data_fp, time.perf_counter() - start)
    variant_names = [v.name for v in variants]
    return AblationResult(
        variant_names, names, acc, reports, win_counts(acc, variant_names, names), tuple(seeds)
    )


def emit_ablation(result: AblationResult, fmt: str = "csv") -> str:
    """Win-count table: one row per variant with its wins and per-dataset mean accuracy."""
    header = ["variant", "wins"] + result.datasets
    rows = [
        [v, str(result.wins[v])] + [f"{result.accuracy[v][d]:.4f}" for d in result.datasets] for v in result.variants
    ]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r} (csv or markdown)")
