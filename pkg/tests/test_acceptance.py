"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (lines also appear in the
terminal summary) or ``python tests/test_acceptance.py``.  Criterion 5 trains
three real datasets and takes roughly 20 minutes on one core.
"""

from __future__ import annotations

import math
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from adafsnet import tensor  # noqa: E402
from adafsnet.data import DataError, load_pair, parse_ts, parse_ucr_tsv, to_ts, to_ucr_tsv  # noqa: E402
from adafsnet.gradcheck import GRAD_TOL, run_gradient_suite  # noqa: E402
from adafsnet.model import ModelConfig  # noqa: E402
from adafsnet.planner import KernelPlan, build_kernel_sets, coverage_set, sieve_primes, verify_coverage, verify_goldbach  # noqa: E402
from adafsnet.presets import DESK_TARGETS, desk_config  # noqa: E402
from adafsnet.targetdrop import TargetDrop, TargetDropConfig, build_mask, mask_scale, select_targets  # noqa: E402
from adafsnet.tensor import Tensor  # noqa: E402
from adafsnet.train import RunReport, RunRow, TrainConfig, emit_ablation, mpce, pce, run_ablation, run_experiment  # noqa: E402

from tests.conftest import UCR_ROOT, have_dataset  # noqa: E402

RESULTS: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)


def need(*names):
    missing = [n for n in names if not have_dataset(n)]
    return pytest.mark.skipif(bool(missing), reason=f"datasets not found under {UCR_ROOT}: {missing}")


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_suite():
    res = run_gradient_suite(n_shapes=20, seed=0, eps=1e-6)
    worst = max(res.max_error.values())
    ok = res.ok and min(res.shapes_checked.values()) >= 20 and res.seconds < 60
    report("1", ok, f"{len(res.max_error)} ops x 20 shapes, max rel err {worst:.2e} (< {GRAD_TOL}), {res.seconds:.1f}s (< 60s)")
    assert ok


# ---------------------------------------------------------------- 2

PRIMES = [p for p in sieve_primes(97) if p >= 5]


def _brute(P1, P2, P3):
    return sorted({a + b + c - 2 for a in P1 for b in P2 for c in P3})


def test_criterion_2_coverage_oracle():
    start = time.perf_counter()
    equal = all(coverage_set(*build_kernel_sets(p)) == _brute(*build_kernel_sets(p)) for p in PRIMES)
    p7_exact = coverage_set(*build_kernel_sets(7)) == list(range(1, 15))
    ok5, missing5 = verify_coverage(KernelPlan.from_prime(5, 14))
    p5_fails = not ok5 and missing5 == [11, 12, 13, 14]
    seconds = time.perf_counter() - start
    ok = equal and p7_exact and p5_fails and seconds < 10
    report(
        "2",
        ok,
        f"coverage_set == brute force for {len(PRIMES)} primes 5..97: {equal}; p_k=7 covers exactly [1,14]: {p7_exact}; "
        f"p_k=5 misses {missing5} for target 14; {seconds:.2f}s (< 10s)",
    )
    assert ok


@pytest.mark.xfail(strict=True, reason="unattainable as stated: bounded Goldbach gaps (e.g. p_k=11 misses RFs 19, 20)")
def test_criterion_2_contains_one_to_twice_pk():
    gaps = {}
    for p in PRIMES:
        cov = set(coverage_set(*build_kernel_sets(p)))
        miss = [n for n in range(1, 2 * p + 1) if n not in cov]
        if miss:
            gaps[p] = miss
    shown = ", ".join(f"{p}: {m}" for p, m in list(gaps.items())[:3])
    report("2 (clause [1, 2*p_k])", not gaps, f"{len(gaps)} of {len(PRIMES)} primes have gaps ({shown}, ...)")
    assert not gaps


# ---------------------------------------------------------------- 3


def test_criterion_3_goldbach():
    start = time.perf_counter()
    failures = verify_goldbach(20000)
    seconds = time.perf_counter() - start
    ok = failures == [] and seconds < 5
    report("3", ok, f"{len(range(4, 20001, 2))} even numbers in [4, 20000], failures {failures}, {seconds:.2f}s (< 5s)")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_targetdrop_properties():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    bad = []
    worst_identity = 0.0
    for case in range(1000):
        C, W = int(rng.integers(2, 65)), int(rng.integers(4, 257))
        gamma, k = float(rng.uniform(0.01, 0.99)), int(rng.integers(1, W + 1))
        U = rng.normal(size=(2, C, W))
        M = rng.uniform(0.01, 0.99, size=(2, C))  # continuous draws: distinct almost surely
        mask = build_mask(U, M, gamma, k)
        for b in range(2):
            if len(set(M[b])) == C and select_targets(M[b], gamma).T.sum() != math.ceil(gamma * C):
                bad.append((case, "count"))
            for c in range(C):
                zeros = np.flatnonzero(mask.S[b, c] == 0)
                if zeros.size and (np.any(np.diff(zeros) != 1) or zeros.size > 2 * (k // 2) + 1):
                    bad.append((case, "span"))
        kept = mask.S.sum(-1)
        lhs = (U * mask_scale(mask.S)).sum(-1)
        rhs = np.where(kept > 0, W / np.maximum(kept, 1) * (U * mask.S).sum(-1), 0.0)
        err = np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))
        worst_identity = max(worst_identity, float(err.max()))
        if case % 10 == 0:
            td = TargetDrop(C, TargetDropConfig(gamma=gamma, region_length=k), rng)
            a, Ma = td(Tensor(U), training=False)
            b2, _ = td(Tensor(U), training=False)
            if a.data.tobytes() != b2.data.tobytes() or not np.array_equal(a.data, U * Ma.data[:, :, None]):
                bad.append((case, "eval"))
    seconds = time.perf_counter() - start
    ok = not bad and worst_identity < 1e-12 and seconds < 30
    report(
        "4",
        ok,
        f"1000 cases: K=ceil(gamma*C), contiguous span <= 2*floor(k/2)+1, eval drop-free/deterministic "
        f"(violations {len(bad)}); rescale identity max rel err {worst_identity:.1e}; {seconds:.1f}s (< 30s)",
    )
    assert ok


# ---------------------------------------------------------------- 5


@need("ItalyPowerDemand", "Coffee", "GunPoint")
@pytest.mark.parametrize("target", DESK_TARGETS, ids=[t.dataset for t in DESK_TARGETS])
def test_criterion_5_desk_reproduction(target):
    cfg = desk_config(target.max_epochs, seed=0)
    prev = tensor.get_default_dtype()
    tensor.set_default_dtype(cfg.dtype)
    try:
        tr, te = load_pair(UCR_ROOT, target.dataset)
        start = time.perf_counter()
        _, history, acc = run_experiment(tr, te, cfg.model, cfg.train)
        seconds = time.perf_counter() - start
    finally:
        tensor.set_default_dtype(prev)
    ok = acc >= target.min_accuracy and len(history.records) <= target.max_epochs and seconds <= target.max_seconds
    report(
        f"5 ({target.dataset})",
        ok,
        f"test acc {acc:.4f} (>= {target.min_accuracy}) after {len(history.records)} epochs "
        f"(<= {target.max_epochs}), {seconds:.0f}s (<= {target.max_seconds:.0f}s)",
    )
    assert ok


# ---------------------------------------------------------------- 6


@need("GunPoint")
def test_criterion_6_overfit_sanity():
    tr, _ = load_pair(UCR_ROOT, "GunPoint")
    idx = np.concatenate([np.flatnonzero(tr.y == c)[:4] for c in range(2)])
    subset = tr.subset(idx)
    cfg = desk_config(200, dtype="float64", warmup_epochs="10")
    start = time.perf_counter()
    # evaluated on the same 8 samples, in eval mode
    _, history, acc = run_experiment(subset, subset, cfg.model, cfg.train)
    seconds = time.perf_counter() - start
    ok = acc == 1.0 and len(history.records) <= 200 and seconds <= 120
    report("6", ok, f"8-sample 2-class GunPoint subset: train acc {acc:.3f} after {len(history.records)} epochs, {seconds:.1f}s (<= 120s)")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_metric_oracle():
    errors = [Fraction(1, 4), Fraction(1, 2), Fraction(1, 8), Fraction(0), Fraction(3, 4)]
    classes = [2, 4, 2, 1, 3]
    rows = [RunRow(f"d{i}", float(1 - e), c) for i, (e, c) in enumerate(zip(errors, classes))]
    hand = [e / c for e, c in zip(errors, classes)]
    hand_mpce = sum(hand) / len(hand)
    rep = RunReport(rows)
    exact = [r.pce for r in rows] == [float(h) for h in hand] and rep.mpce == float(hand_mpce)
    example = [pce(0.2, 4), pce(0.1, 2)] == [0.05, 0.05] and mpce([0.05, 0.05]) == 0.05
    ok = exact and example
    report("7", ok, f"5-dataset PCEs {[r.pce for r in rows]}, MPCE {rep.mpce} == hand {float(hand_mpce)}; worked example [0.2, 0.1]/[4, 2] exact: {example}")
    assert ok


# ---------------------------------------------------------------- 8

NEGATIVE_UCR = ["1\t0.5\t0.7\n2\t0.1\n", "1\t0.5\tabc\n", "1\t0.5\tinf\n", "1\t0.5\t?\n", "1\n", "", "\n \n"]
NEGATIVE_TS = [
    "@classLabel true a b\n@data\n1,2:c\n",
    "@classLabel true a\n@data\n1,2:3,4:a\n1,2:a\n",
    "@classLabel true a\n1,2:a\n",
    "@classLabel true a\n@data\n1,x:a\n",
    "@classLabel false\n@data\n1,2\n",
    "@timeStamps true\n@data\n",
    "@problemName x\n@classLabel true a\n",
    "@classLabel true a\n@data\n",
    "@univariate true\n@classLabel true a\n@data\n1:2:a\n",
]


@need("GunPoint", "Coffee")
def test_criterion_8_parser_conformance():
    gp_tr, gp_te = load_pair(UCR_ROOT, "GunPoint")
    cf_tr, cf_te = load_pair(UCR_ROOT, "Coffee")
    counts = (len(gp_tr), len(gp_te), gp_tr.W, len(cf_tr), len(cf_te)) == (50, 150, 150, 28, 28)
    structured = 0
    for parser, corpus in ((parse_ucr_tsv, NEGATIVE_UCR), (parse_ts, NEGATIVE_TS)):
        for text in corpus:
            try:
                parser(text)
            except DataError:
                structured += 1
    n_neg = len(NEGATIVE_UCR) + len(NEGATIVE_TS)
    rt = []
    for ds in (gp_tr, cf_te):
        raw = parse_ucr_tsv(to_ucr_tsv(ds), normalize=False)
        rt.append(raw.X.tobytes() == ds.X.tobytes() and raw.y.tolist() == ds.y.tolist() and raw.class_names == ds.class_names)
        again = parse_ts(to_ts(raw), normalize=False)
        rt.append(
            again.X.tobytes() == raw.X.tobytes()
            and again.y.tolist() == raw.y.tolist()
            and again.class_names == raw.class_names
            and again.lengths.tolist() == raw.lengths.tolist()
            and again.constant.tolist() == raw.constant.tolist()
        )
    ok = counts and structured == n_neg and all(rt)
    report(
        "8",
        ok,
        f"GunPoint {len(gp_tr)}/{len(gp_te)}/W={gp_tr.W}, Coffee {len(cf_tr)}/{len(cf_te)}; "
        f"{structured}/{n_neg} negative fixtures -> DataError; round trips identical: {all(rt)}",
    )
    assert ok


# ---------------------------------------------------------------- 9


@need("ItalyPowerDemand", "Coffee", "GunPoint")
def test_criterion_9_ablation_harness():
    names = ["ItalyPowerDemand", "Coffee", "GunPoint"]
    pairs = []
    for n in names:
        tr, te = load_pair(UCR_ROOT, n)
        pairs.append((tr, te.subset(np.arange(min(len(te), 100)))))
    model_cfg = ModelConfig(filters_per_path=1, growth_rate=4, rf_cap=8, dense_kernel_count=2)
    train_cfg = TrainConfig(max_epochs=2, warmup_epochs=1)
    start = time.perf_counter()
    res = run_ablation(pairs, model_cfg, train_cfg, seeds=(0, 1, 2))
    seconds = time.perf_counter() - start
    table = emit_ablation(res, "csv").splitlines()
    header_ok = table[0].split(",") == ["variant", "wins"] + names
    body = [r.split(",") for r in table[1:]]
    shape_ok = len(body) == 5 and all(len(r) == 2 + len(names) for r in body)
    wins_ok = sum(int(r[1]) for r in body) == len(names)
    fps = {r.data_fingerprint for r in res.reports.values()}
    ok = header_ok and shape_ok and wins_ok and len(fps) == 1 and res.seeds == (0, 1, 2)
    report(
        "9",
        ok,
        f"5 variants x {len(names)} datasets x seeds (0,1,2); table {len(body)}x{len(body[0])}, "
        f"wins {res.wins} sum {sum(res.wins.values())}; shared data fingerprint: {len(fps) == 1}; {seconds:.0f}s",
    )
    assert ok


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print("\n".join(RESULTS))
    sys.exit(code)
