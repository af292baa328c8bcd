import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from smkc import evalkit
from smkc.benchgen import GenConfig, build_dataset
from smkc.detector import fit_reference, make_projection, score_batch
from smkc.errors import ConfigError
from smkc.evalkit import (
    ABLATIONS,
    DetectorConfig,
    MetricRow,
    aggregate,
    embed,
    evaluate_dataset,
    hashed_batch,
    run_ablation,
    run_protocol,
    sweep_m,
    write_csv,
)
from smkc.kernelrep import batch_features, build_tensor, feature_dim, parse_variant
from smkc.metrics import auprc
from smkc.sketch import HashConfig, build_hashed_sequence

TINY = GenConfig(L=16, n_train_per_C=8, n_val_per_C=4, n_test_per_cell=20, pool_size=200, anomaly_rates=(0.1, 0.2))
DET = DetectorConfig(k=3, d_out=32, chunk=7)


def _row(variant, C, rate, seed, ap, **kw):
    base = dict(
        protocol="p", variant=variant, C=C, anomaly_rate=rate, seed=seed, auprc=ap, auroc=0.5, tpr_at_1fpr=0.0,
        time_build=1.0, time_score=2.0, feature_dim=10, complexity=0.5, collision_value=0.0, collision_presence=0.0,
    )
    base.update(kw)
    return MetricRow(**base)


def test_aggregate_means_over_C_then_seeds():
    rows = [
        _row("a", 3, 0.1, 0, 0.2),
        _row("a", 6, 0.1, 0, 0.4),
        _row("a", 3, 0.1, 1, 0.6),
        _row("a", 6, 0.1, 1, 0.6),
        _row("a", 3, 0.2, 0, 0.9),
    ]
    agg = {r["anomaly_rate"]: r for r in aggregate(rows)}
    assert agg[0.1]["auprc_mean"] == pytest.approx(0.45)
    assert agg[0.1]["auprc_std"] == pytest.approx(0.15)  # ddof=0 over seed means 0.3, 0.6
    assert agg[0.1]["n_seeds"] == 2
    assert agg[0.2]["auprc_std"] == 0.0
    assert agg[0.1]["time_total_mean"] == pytest.approx(3.0)


def test_metric_row_rejects_out_of_range():
    with pytest.raises(ValueError):
        _row("a", 3, 0.1, 0, 1.5)


def test_embed_matches_direct_projection():
    ds = build_dataset("holdout_C", TINY, splits=("train",))
    gs = hashed_batch(ds.train[:10], HashConfig())
    v = parse_variant("log3+bandfeat4")
    spec = make_projection(feature_dim(v, TINY.L, 128), 32, 0)
    P = embed(gs, v, spec, chunk=3)
    expect = np.stack([spec.apply(build_tensor(g, v).reshape(-1)) for g in gs])
    np.testing.assert_allclose(P, expect, atol=1e-10)


def test_evaluate_dataset_matches_manual_pipeline():
    ds = build_dataset("holdout_C", TINY, splits=("train", "test"))
    rows, kept = evaluate_dataset(ds, ["log3"], HashConfig(), DET, keep_scores=True)
    assert len(rows) == len(ds.test)
    v = parse_variant("log3")
    spec = make_projection(feature_dim(v, TINY.L, 128), DET.d_out, DET.proj_seed)
    ref = np.stack([build_hashed_sequence(w, HashConfig()).g for w in ds.train])
    index = fit_reference(spec.apply(batch_features(ref, v)), None, DET.k)
    for row, cell in zip(rows, kept["log3"]):
        ws = ds.test[cell.key]
        q = np.stack([build_hashed_sequence(w, HashConfig()).g for w in ws])
        s, _ = score_batch(spec.apply(batch_features(q, v)), index)
        np.testing.assert_allclose(cell.scores, s, atol=1e-10)
        assert row.auprc == pytest.approx(auprc(s, [w.label for w in ws]))
        assert (row.C, row.anomaly_rate) == cell.key


def test_reference_hygiene_is_enforced():
    ds = build_dataset("holdout_C", TINY, splits=("train", "test"))
    bad = ds.test[ds.test_cells()[0]][0]
    ds.train.append(bad)
    with pytest.raises(AssertionError):
        evaluate_dataset(ds, ["log3"], HashConfig(), DET)


def test_results_do_not_depend_on_threads():
    a, _ = run_protocol("holdout_C", ["log3", "statspool"], TINY, [0, 1], det=DET, threads=1)
    b, _ = run_protocol("holdout_C", ["log3", "statspool"], TINY, [0, 1], det=DET, threads=4)
    strip = lambda r: (r.variant, r.C, r.anomaly_rate, r.seed, r.auprc, r.auroc, r.tpr_at_1fpr)
    assert [strip(r) for r in a] == [strip(r) for r in b]


def test_run_protocol_needs_seeds():
    with pytest.raises(ConfigError):
        run_protocol("holdout_C", ["log3"], TINY, [])


def test_sweep_m_collisions_decrease():
    rows, table = sweep_m(replace(TINY, anomaly_rates=(0.1,)), [0], m_values=(8, 32, 128), det=DET)
    cv = [t["collision_value"] for t in table]
    assert cv[0] > cv[1] > cv[2]
    assert {r.m for r in rows} == {8, 32, 128}
    with pytest.raises(ConfigError):
        sweep_m(TINY, [0], m_values=(0,))


def test_ablation_rows_are_named():
    rows = run_ablation(replace(TINY, anomaly_rates=(0.1,)), [0], ["base", "no_presence_stream"], det=DET)
    assert {r.variant for r in rows} == {"base", "no_presence_stream"}
    assert set(ABLATIONS) >= {"base", "cos_only", "log_only", "lambda_linear_no_saturation"}
    with pytest.raises(ConfigError):
        run_ablation(TINY, [0], ["nope"])


def test_scaling_benchmark_shape():
    rows = evalkit.scaling_benchmark(["log3+bandfeat4", "log3"], TINY, repetitions=1, det=DET, n_ref=10, n_query=5)
    assert [r["variant"] for r in rows] == ["log3+bandfeat4", "log3"]
    for r in rows:
        assert r["time_total"] == pytest.approx(r["time_build"] + r["time_score"])
        assert r["time_build"] > 0
    assert evalkit.build_time_growth("log3", TINY, 16, 32, repetitions=1, n_ref=5, n_query=5) > 0


def test_diagnostic_small_run():
    dc = evalkit.DiagnosticConfig(n_per_class=15, gen=TINY)
    rows = evalkit.cosine_collapse_diagnostic(dc)
    assert [r["kernel"] for r in rows] == ["cos", "logdist"]
    log = rows[1]
    assert log["amplitude_auroc"] > 0.9 and log["additive_auroc"] > 0.9


def test_additive_segment_grows_norms_along_rows():
    g = np.random.default_rng(0).standard_normal((12, 6))
    out = evalkit.additive_segment(g, 2, 5, 1.0)
    sigma = evalkit.robust_bandwidth(g)
    np.testing.assert_allclose(np.linalg.norm(out[2:5], axis=1), np.linalg.norm(g[2:5], axis=1) + sigma)
    assert np.array_equal(out[:2], g[:2]) and np.array_equal(out[5:], g[5:])


def test_rescaling_sensitivity():
    g = build_hashed_sequence(
        build_dataset("holdout_C", TINY, splits=("train",)).train[-1], HashConfig()
    ).g
    d_cos, d_log = evalkit.rescaling_sensitivity(g, np.random.default_rng(0))
    assert d_cos <= 1e-6
    assert d_log >= 0.5


def test_write_csv_formatting(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, [{"a": 1, "b": 0.1, "c": float("nan"), "d": "x"}])
    assert p.read_text() == "a,b,c,d\n1,0.100000,nan,x\n"
    write_csv(p, [_row("v", 3, 0.1, 0, 0.25)], evalkit.row_columns())
    rec = next(csv.DictReader(open(p)))
    assert rec["auprc"] == "0.250000" and rec["m"] == "128"


def test_write_scores_and_summary(tmp_path):
    ds = build_dataset("holdout_C", TINY, splits=("train", "test"))
    _, kept = evaluate_dataset(ds, ["log3"], HashConfig(), DET, keep_scores=True)
    evalkit.write_scores(tmp_path / "s.csv", kept["log3"])
    recs = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(recs) == sum(len(ws) for ws in ds.test.values())
    assert {r["label"] for r in recs} == {"0", "1"}
    evalkit.write_summary(tmp_path / "sum.json", {"seeds": (0, 1)}, {"t": [{"x": np.float64(1.5)}]})
    data = json.loads((tmp_path / "sum.json").read_text())
    assert data == {"config": {"seeds": [0, 1]}, "tables": {"t": [{"x": 1.5}]}}
