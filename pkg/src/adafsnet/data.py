"""UCR (tab/comma separated) and UEA ``.ts`` loaders.

Grammar accepted by :func:`parse_ucr_tsv`: one sample per nonempty line, the
label token first, then the values, separated by tabs, commas or runs of
spaces (the pre-2018 archive layout).  Labels are kept as strings and class
names are sorted as strings, so "10" sorts before "2".

Grammar accepted by :func:`parse_ts`: ``#`` comment lines, ``@`` header
directives (``@problemName``, ``@univariate``, ``@classLabel true <labels>``
are interpreted; ``@timeStamps true`` and ``@classLabel false`` are
rejected; the rest are ignored), then ``@data`` followed by one sample per
line: dimensions separated by ``:``, values by ``,``, the last field is the
label.  ``?`` and ``NaN`` mark missing values.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DATA_ROOT_ENV = "ADAFSNET_DATA_ROOT"
CONSTANT_STD = 1e-8
_MISSING = {"nan", "?", ""}
_SEP = re.compile(r"[\t, ]+")


class DataError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None, source: str = ""):
        where = ":".join(str(p) for p in (source, line, column) if p not in (None, ""))
        super().__init__(f"{where}: {message}" if where else message)
        self.line, self.column, self.source = line, column, source


@dataclass
class TimeSeriesDataset:
    name: str
    X: np.ndarray  # [N, D, W]
    y: np.ndarray  # [N] class indices
    class_names: list[str]
    split: str = "train"
    lengths: np.ndarray | None = None
    constant: np.ndarray | None = None  # [N, D] flags set by z-normalization
    normalized: bool = False

    def __post_init__(self):
        if self.lengths is None:
            self.lengths = np.full(len(self.X), self.X.shape[2], dtype=np.int64)
        if self.constant is None:
            self.constant = np.zeros(self.X.shape[:2], dtype=bool)

    def __len__(self) -> int:
        return len(self.X)

    @property
    def W(self) -> int:
        return self.X.shape[2]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def samples(self) -> list[tuple[np.ndarray, int]]:
        return [(self.X[i], int(self.y[i])) for i in range(len(self))]

    def subset(self, index) -> "TimeSeriesDataset":
        index = np.asarray(index)
        return replace(self, X=self.X[index], y=self.y[index], lengths=self.lengths[index], constant=self.constant[index])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.y, dtype="<i8").tobytes())
        h.update("\x1f".join(self.class_names).encode())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------- primitives


def znormalize(series: np.ndarray) -> tuple[np.ndarray, bool]:
    """Zero-mean, unit population variance; near-constant input maps to zeros."""
    series = np.asarray(series, dtype=np.float64)
    sd = series.std()
    if sd < CONSTANT_STD:
        return np.zeros_like(series), True
    return (series - series.mean()) / sd, False


def encode_labels(raw) -> tuple[list[str], dict[str, int]]:
    """Class names sorted as strings, and the label -> index map."""
    names = sorted({str(r) for r in raw})
    if not names:
        raise DataError("no labels to encode")
    return names, {n: i for i, n in enumerate(names)}


def pad_to_common_length(dataset: TimeSeriesDataset, length: int | None = None) -> TimeSeriesDataset:
    """Zero-pad every series at the end to ``length`` (default: current width)."""
    W = dataset.W if length is None else length
    if W < dataset.W:
        raise ValueError(f"cannot pad width {dataset.W} down to {W}")
    if W == dataset.W:
        return dataset
    X = np.zeros((len(dataset), dataset.D, W))
    X[:, :, : dataset.W] = dataset.X
    return replace(dataset, X=X)


def interpolate_missing(values: np.ndarray) -> np.ndarray:
    """Linear in-fill of NaNs; edges take the nearest observed value."""
    mask = np.isnan(values)
    if not mask.any():
        return values
    if mask.all():
        raise DataError("series has no observed values")
    idx = np.arange(len(values))
    out = values.copy()
    out[mask] = np.interp(idx[mask], idx[~mask], values[~mask])
    return out


def _parse_values(tokens, line_no, col0, source, interpolate) -> np.ndarray:
    out = np.empty(len(tokens))
    for j, tok in enumerate(tokens):
        t = tok.strip()
        if t.lower() in _MISSING:
            out[j] = np.nan
            continue
        try:
            out[j] = float(t)
        except ValueError:
            raise DataError(f"non-numeric value {t!r}", line_no, col0 + j, source) from None
        if not np.isfinite(out[j]):
            raise DataError(f"non-finite value {t!r}", line_no, col0 + j, source)
    if np.isnan(out).any():
        if not interpolate:
            col = col0 + int(np.flatnonzero(np.isnan(out))[0])
            raise DataError("missing value (enable interpolation to in-fill)", line_no, col, source)
        try:
            out = interpolate_missing(out)
        except DataError as e:
            raise DataError(str(e), line_no, None, source) from None
    return out


def _assemble(
    name: str,
    series: list[list[np.ndarray]],
    labels: list[str],
    split: str,
    normalize: bool,
    class_names: list[str] | None = None,
) -> TimeSeriesDataset:
    if class_names is None:
        class_names, index = encode_labels(labels)
    else:
        index = {n: i for i, n in enumerate(class_names)}
    N, D = len(series), len(series[0])
    W = max(len(s) for sample in series for s in sample)
    X = np.zeros((N, D, W))
    constant = np.zeros((N, D), dtype=bool)
    lengths = np.zeros(N, dtype=np.int64)
    for i, sample in enumerate(series):
        lengths[i] = max(len(s) for s in sample)
        for d, s in enumerate(sample):
            if normalize:
                s, constant[i, d] = znormalize(s)
            X[i, d, : len(s)] = s
    y = np.array([index[l] for l in labels], dtype=np.int64)
    return TimeSeriesDataset(name, X, y, list(class_names), split, lengths, constant, normalize)


# ---------------------------------------------------------------- parsers


def _parse_ucr_raw(text: str, source: str, interpolate: bool):
    series, labels, width = [], [], None
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        tokens = _SEP.split(line)
        if len(tokens) < 2:
            raise DataError("line has a label but no values", line_no, None, source)
        values = _parse_values(tokens[1:], line_no, 2, source, interpolate)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise DataError(f"ragged row: {len(values)} values, expected {width}", line_no, None, source)
        series.append([values])
        labels.append(tokens[0])
    if not series:
        raise DataError("no samples", source=source)
    return series, labels


def parse_ucr_tsv(
    text: str,
    name: str = "",
    split: str = "train",
    normalize: bool = True,
    interpolate: bool = False,
    source: str = "",
) -> TimeSeriesDataset:
    series, labels = _parse_ucr_raw(text, source, interpolate)
    return _assemble(name, series, labels, split, normalize)


def _parse_ts_raw(text: str, source: str, interpolate: bool):
    header: dict[str, str] = {}
    declared: list[str] | None = None
    series, labels, dims = [], [], None
    in_data = False
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not in_data:
            if not line.startswith("@"):
                raise DataError(f"unexpected line before @data: {line[:40]!r}", line_no, None, source)
            key, _, rest = line[1:].partition(" ")
            key, rest = key.lower(), rest.strip()
            if key == "data":
                in_data = True
            elif key == "classlabel":
                parts = rest.split()
                if not parts or parts[0].lower() != "true":
                    raise DataError("only classification files (@classLabel true ...) are supported", line_no, None, source)
                declared = parts[1:]
            elif key == "timestamps" and rest.lower() == "true":
                raise DataError("time-stamped .ts files are not supported", line_no, None, source)
            else:
                header[key] = rest
            continue
        fields = line.split(":")
        if len(fields) < 2:
            raise DataError("data line needs at least one dimension and a label", line_no, None, source)
        label = fields[-1].strip()
        if declared is not None and label not in declared:
            raise DataError(f"label {label!r} not declared in @classLabel", line_no, None, source)
        if dims is None:
            dims = len(fields) - 1
        elif len(fields) - 1 != dims:
            raise DataError(f"{len(fields) - 1} dimensions, expected {dims}", line_no, None, source)
        sample = []
        col = 1
        for f in fields[:-1]:
            toks = f.split(",")
            sample.append(_parse_values(toks, line_no, col, source, interpolate))
            col += len(toks)
        series.append(sample)
        labels.append(label)
    if not in_data:
        raise DataError("missing @data section", source=source)
    if not series:
        raise DataError("no samples after @data", source=source)
    if header.get("univariate", "").lower() == "true" and dims != 1:
        raise DataError(f"@univariate true but samples have {dims} dimensions", source=source)
    return series, labels, header.get("problemname", ""), declared


def parse_ts(
    text: str,
    name: str = "",
    split: str = "train",
    normalize: bool = True,
    interpolate: bool = False,
    source: str = "",
) -> TimeSeriesDataset:
    series, labels, problem, _ = _parse_ts_raw(text, source, interpolate)
    return _assemble(name or problem, series, labels, split, normalize)


# ---------------------------------------------------------------- writers


def _fmt(v: float) -> str:
    return repr(float(v))


def to_ucr_tsv(ds: TimeSeriesDataset) -> str:
    if ds.D != 1:
        raise ValueError("the UCR layout holds univariate data only")
    return "".join(
        ds.class_names[ds.y[i]] + "\t" + "\t".join(_fmt(v) for v in ds.X[i, 0]) + "\n" for i in range(len(ds))
    )


def to_ts(ds: TimeSeriesDataset) -> str:
    lines = [
        f"@problemName {ds.name or 'unnamed'}",
        "@timeStamps false",
        f"@univariate {'true' if ds.D == 1 else 'false'}",
        f"@dimensions {ds.D}",
        f"@classLabel true {' '.join(ds.class_names)}",
        "@data",
    ]
    for i in range(len(ds)):
        dims = [",".join(_fmt(v) for v in ds.X[i, d]) for d in range(ds.D)]
        lines.append(":".join(dims + [ds.class_names[ds.y[i]]]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- pairs


def _find(directory: Path, name: str, split: str) -> dict[str, Path]:
    found = {}
    for base in (directory, directory / name):
        for ext in ("tsv", "ts"):
            p = base / f"{name}_{split}.{ext}"
            if p.is_file() and ext not in found:
                found[ext] = p
    return found


def data_root(explicit: str | os.PathLike | None = None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(DATA_ROOT_ENV)
    if env:
        return Path(env)
    raise DataError(f"no dataset root given (use --data-root or set {DATA_ROOT_ENV})")


def load_pair(
    directory,
    name: str,
    normalize: bool = True,
    interpolate: bool = False,
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Load ``<name>_TRAIN`` / ``<name>_TEST`` (both .tsv or both .ts) with a shared encoding."""
    directory = Path(directory)
    train_files, test_files = _find(directory, name, "TRAIN"), _find(directory, name, "TEST")
    if not train_files:
        raise DataError(f"missing {name}_TRAIN.tsv or {name}_TRAIN.ts", source=str(directory))
    if not test_files:
        raise DataError(f"missing {name}_TEST.tsv or {name}_TEST.ts", source=str(directory))
    common = [ext for ext in ("tsv", "ts") if ext in train_files and ext in test_files]
    if not common:
        raise DataError(
            f"train ({'/'.join(train_files)}) and test ({'/'.join(test_files)}) formats differ", source=str(directory)
        )
    ext = common[0]
    raws = []
    for files in (train_files, test_files):
        path = files[ext]
        text = path.read_text()
        if ext == "tsv":
            series, labels = _parse_ucr_raw(text, str(path), interpolate)
        else:
            series, labels, _, _ = _parse_ts_raw(text, str(path), interpolate)
        raws.append((series, labels))
    (tr_s, tr_l), (te_s, te_l) = raws
    unseen = sorted(set(te_l) - set(tr_l))
    if unseen:
        raise DataError(f"test classes {unseen} never occur in the training split", source=str(test_files[ext]))
    if len(tr_s[0]) != len(te_s[0]):
        raise DataError(f"train has {len(tr_s[0])} dimensions, test has {len(te_s[0])}", source=str(directory))
    class_names, _ = encode_labels(tr_l)
    train = _assemble(name, tr_s, tr_l, "train", normalize, class_names)
    test = _assemble(name, te_s, te_l, "test", normalize, class_names)
    W = max(train.W, test.W)
    return pad_to_common_length(train, W), pad_to_common_length(test, W)
