import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adafsnet.data import TimeSeriesDataset
from adafsnet.model import ModelConfig, build
from adafsnet.planner import KernelPlan, select_pk
from adafsnet.tensor import softmax_cross_entropy
from adafsnet.train import (
    RunReport,
    RunRow,
    TrainConfig,
    TrainingDiverged,
    VARIANTS,
    Variant,
    accuracy,
    batch_indices,
    emit_ablation,
    emit_report,
    evaluate,
    merge_reports,
    mpce,
    parse_report_csv,
    pce,
    run_ablation,
    train,
    win_counts,
)

TINY = ModelConfig(filters_per_path=1, growth_rate=2, dense_kernel_count=2, rf_cap=6)


def toy_set(n=8, W=10, c=2, seed=0, name="toy"):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % c
    X = np.where(y[:, None, None] == 0, -1.0, 1.0) * np.ones((n, 1, W)) + 0.1 * rng.normal(size=(n, 1, W))
    return TimeSeriesDataset(name, X, y, [str(i) for i in range(c)])


def tiny_model(ds, seed=0, **kw):
    cfg = replace(TINY, num_classes=ds.n_classes, **kw)
    return build(select_pk(ds.W, cfg.rf_cap), cfg, ds.D, seed)


def test_batches_cover_everything_without_singletons():
    rng = np.random.default_rng(0)
    for n in (1, 2, 15, 16, 17, 33):
        batches = batch_indices(n, 16, rng)
        assert sorted(np.concatenate(batches).tolist()) == list(range(n))
        assert n == 1 or min(map(len, batches)) >= 2


def test_history_is_bitwise_reproducible():
    ds = toy_set()
    cfg = TrainConfig(max_epochs=4, warmup_epochs=2, batch_size=4)
    h1 = train(tiny_model(ds), ds, cfg)
    h2 = train(tiny_model(ds), ds, cfg)
    assert h1.to_csv() == h2.to_csv()
    assert h1.preserved == h2.preserved


def test_zero_lr_keeps_parameters_and_loss():
    ds = toy_set()
    m = tiny_model(ds, dense_block_count=0)
    before = [p.data.copy() for p in m.parameters()]
    h = train(m, ds, TrainConfig(lr=0.0, max_epochs=3, warmup_epochs=0, batch_size=len(ds)))
    assert all(np.array_equal(a, p.data) for a, p in zip(before, m.parameters()))
    # one full batch per epoch; only the summation order changes with the shuffle
    np.testing.assert_allclose(h.losses, h.losses[0], rtol=1e-12)


def test_overfits_toy_set():
    ds = toy_set()
    h = train(tiny_model(ds), ds, TrainConfig(max_epochs=200, warmup_epochs=5, batch_size=4, stop_loss=1e-3))
    assert h.records[-1].train_acc == 1.0


def test_respecializes_exactly_once():
    ds = toy_set()
    m = tiny_model(ds)
    h = train(m, ds, TrainConfig(max_epochs=5, warmup_epochs=2, batch_size=4))
    assert h.respecialized_after == 2 and m.respecialized
    assert m.dense_kernels == [h.preserved[j % len(h.preserved)] for j in range(8)]
    kernels = list(m.dense_kernels)
    h2 = train(m, ds, TrainConfig(max_epochs=3, warmup_epochs=1, batch_size=4))
    assert h2.respecialized_after is None and m.dense_kernels == kernels


def test_no_respecialization_without_dense_blocks():
    ds = toy_set()
    m = tiny_model(ds, dense_block_count=0)
    h = train(m, ds, TrainConfig(max_epochs=3, warmup_epochs=1, batch_size=4))
    assert h.respecialized_after is None and not m.respecialized


def test_warmup_zero_uses_uniform_attention():
    ds = toy_set()
    m = tiny_model(ds)
    h = train(m, ds, TrainConfig(max_epochs=1, warmup_epochs=0, batch_size=4))
    assert h.respecialized_after == 0
    assert h.preserved == sorted(set(m.plan.layer_sets[0]), reverse=True)[: TINY.dense_kernel_count]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    ds = toy_set()
    m = tiny_model(ds)
    m.head.weight.data[0, 0] = np.inf
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(m, ds, TrainConfig(max_epochs=2, warmup_epochs=1, batch_size=4))


def test_class_count_mismatch():
    ds = toy_set(c=3, n=9)
    m = tiny_model(toy_set())
    with pytest.raises(ValueError):
        train(m, ds, TrainConfig(max_epochs=1, warmup_epochs=0))
    with pytest.raises(ValueError):
        evaluate(m, ds)


def test_first_batch_loss_near_log_c():
    for c in (2, 3, 5):
        ds = toy_set(n=16, c=c, seed=c)
        m = tiny_model(ds, seed=c)
        loss = float(softmax_cross_entropy(m.forward(ds.X, training=True), ds.y).data)
        assert abs(loss - math.log(c)) < 0.5


def test_untrained_accuracy_near_chance():
    rng = np.random.default_rng(11)
    c = 3
    X = rng.normal(size=(60, 1, 12))
    ds = TimeSeriesDataset("bal", X, np.arange(60) % c, ["a", "b", "c"])
    accs = [evaluate(tiny_model(ds, seed=s), ds) for s in range(20)]
    assert abs(np.mean(accs) - 1 / c) <= 0.15


def test_keep_best_restores_lowest_loss_weights():
    ds = toy_set()
    m = tiny_model(ds)
    h = train(m, ds, TrainConfig(max_epochs=12, warmup_epochs=2, batch_size=4, keep_best=True))
    best = min(h.losses[2:])
    ref = tiny_model(ds)
    h_ref = train(ref, ds, TrainConfig(max_epochs=2 + 1 + h.losses[2:].index(best), warmup_epochs=2, batch_size=4))
    assert h_ref.losses[-1] == best
    for a, b in zip(m.parameters(), ref.parameters()):
        assert a.data.tobytes() == b.data.tobytes()


def test_early_stop_patience():
    ds = toy_set()
    h = train(tiny_model(ds), ds, TrainConfig(max_epochs=300, warmup_epochs=1, batch_size=4, early_stop_patience=3))
    assert len(h.records) < 300


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=5, warmup_epochs=6)
    assert (TrainConfig().lr, TrainConfig().batch_size, TrainConfig().max_epochs) == (0.001, 16, 1500)


# ---------------------------------------------------------------- metrics


def test_accuracy_examples():
    assert accuracy([0] * 9 + [1], [0] * 10) == 0.9
    assert accuracy([1, 2], [1, 2]) == 1.0


def test_pce_mpce_examples():
    assert pce(0.2, 4) == 0.05 and pce(0.0, 3) == 0.0 and pce(1.0, 1) == 1.0
    assert mpce([0.05, 0.1]) == pytest.approx(0.075)
    assert mpce([0.3]) == 0.3
    assert [pce(e, c) for e, c in [(0.2, 4), (0.1, 2)]] == [0.05, 0.05]
    with pytest.raises(ValueError):
        mpce([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.integers(1, 50), st.integers(1, 10)), min_size=1, max_size=8))
def test_metric_identities(rows):
    report = RunReport([RunRow(f"d{i}", min(k, n) / n, c) for i, (k, n, c) in enumerate(rows)])
    for r in report.rows:
        assert r.error + r.accuracy == pytest.approx(1.0, abs=1e-15)
        assert r.pce <= r.error
    assert report.mpce == sum(r.pce for r in report.rows) / len(report.rows)
    assert mpce(list(reversed([r.pce for r in report.rows]))) == pytest.approx(report.mpce, abs=1e-15)


def test_report_formats():
    report = RunReport([RunRow("A", 0.8, 4)])
    csv_text = emit_report(report, "csv")
    assert csv_text.splitlines() == ["name,accuracy,error,classes,pce", "A,0.8000,0.2000,4,0.0500", "MPCE,,,,0.0500"]
    md = emit_report(report, "markdown").splitlines()
    assert md[0] == "| name | accuracy | error | classes | pce |" and md[-1].startswith("| **MPCE**")
    back = parse_report_csv(csv_text)
    assert [(r.name, r.accuracy, r.classes, r.pce) for r in back.rows] == [("A", 0.8, 4, 0.05)]
    assert emit_report(back, "csv") == csv_text
    with pytest.raises(ValueError):
        emit_report(report, "html")
    with pytest.raises(ValueError):
        parse_report_csv("a,b\n1,2\n")


def test_merge_reports_last_wins():
    a = RunReport([RunRow("X", 0.5, 2), RunRow("Y", 0.9, 3)])
    b = RunReport([RunRow("X", 0.75, 2)])
    merged = merge_reports([a, b])
    assert [(r.name, r.accuracy) for r in merged.rows] == [("X", 0.75), ("Y", 0.9)]


# ---------------------------------------------------------------- ablation


def test_win_counts_tie_break_declaration_order():
    acc = {"v1": {"d": 0.5}, "v2": {"d": 0.5}}
    assert win_counts(acc, ["v1", "v2"], ["d"]) == {"v1": 1, "v2": 0}
    assert win_counts(acc, ["v2", "v1"], ["d"]) == {"v2": 1, "v1": 0}


def test_variant_grid():
    names = [v.name for v in VARIANTS]
    assert names == ["os_block", "os_block+dropout", "os_block+1dense", "os_block+2dense", "adafsnet"]
    assert {v.dense_block_count for v in VARIANTS} == {0, 1, 2}
    assert any(v.enable_targetdrop for v in VARIANTS) and not all(v.enable_targetdrop for v in VARIANTS)


def test_ablation_accounting():
    pair = (toy_set(name="d1"), toy_set(seed=1, name="d1"))
    variants = [Variant("a", True, 2), Variant("b", False, 0)]
    res = run_ablation([pair], TINY, TrainConfig(max_epochs=2, warmup_epochs=1, batch_size=4), (0,), variants)
    assert sum(res.wins.values()) == 1
    assert set(res.reports) == {"a", "b"}
    assert all(len(r.rows) == 1 for r in res.reports.values())
    assert res.reports["a"].data_fingerprint == res.reports["b"].data_fingerprint
    assert res.reports["a"].config_fingerprint != res.reports["b"].config_fingerprint
    table = emit_ablation(res, "csv").splitlines()
    assert table[0] == "variant,wins,d1" and len(table) == 3


def test_ablation_identical_variants_tie_to_first():
    pair = (toy_set(name="d"), toy_set(seed=2, name="d"))
    same = [Variant("first", False, 0), Variant("second", False, 0)]
    res = run_ablation([pair], TINY, TrainConfig(max_epochs=2, warmup_epochs=0, batch_size=4), (0,), same)
    assert res.accuracy["first"] == res.accuracy["second"]
    assert res.wins == {"first": 1, "second": 0}
