"""Experiment protocols, sweeps, ablations, timing and the kernel diagnostic.

Every function here is a thin, deterministic driver over the lower
modules.  Per-cell results are independent of how work is scheduled:
threads only change wall time, never numbers.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .benchgen import GenConfig, LabeledDataset, build_dataset, make_window, window_id
from .detector import (
    StatsPoolKNN,
    fit_reference,
    make_projection,
    robust_standardize,
    score_batch,
)
from .errors import ConfigError
from .kernelrep import (
    RepVariant,
    batch_features,
    complexity_proxy,
    cos_kernel,
    feature_dim,
    logdist_kernel,
    parse_variant,
    robust_bandwidth,
)
from .metrics import auprc, auroc, tpr_at_fpr
from .sketch import HashConfig, Window, build_hashed_sequence, collision_fraction

STATSPOOL = "statspool"
M_SWEEP = (32, 64, 128, 256, 512)

# representation-level ablations: name -> (variant, HashConfig overrides)
ABLATIONS = {
    "base": ("full6", {}),
    "cos_only": ("cos3", {}),
    "log_only": ("log3", {}),
    "no_delta_only": ("no_delta", {}),
    "no_absdelta_only": ("no_absdelta", {}),
    "no_deltas_and_absdeltas": ("no_deltas_and_absdeltas", {}),
    "no_presence_stream": ("full6", {"presence": False}),
    "no_sqrt_nt_normalization": ("full6", {"sqrt_nt": False}),
    "lambda_linear_no_saturation": ("full6", {"saturate": False}),
}


@dataclass
class MetricRow:
    protocol: str
    variant: str
    C: int
    anomaly_rate: float
    seed: int
    auprc: float
    auroc: float
    tpr_at_1fpr: float
    time_build: float
    time_score: float
    feature_dim: int
    complexity: float
    collision_value: float
    collision_presence: float
    m: int = 128

    def __post_init__(self):
        for name in ("auprc", "auroc", "tpr_at_1fpr"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass
class DetectorConfig:
    k: int = 20
    d_out: int = 256
    proj_seed: int = 0
    chunk: int = 256  # windows per feature/projection batch


# ---------------------------------------------------------------------------
# representation + scoring


def hashed_batch(windows: Sequence[Window], hash_cfg: HashConfig) -> np.ndarray:
    return np.stack([build_hashed_sequence(w, hash_cfg).g for w in windows])


def embed(gs: np.ndarray, variant: RepVariant, spec, chunk: int = 256) -> np.ndarray:
    """Features projected to ``spec.d_out`` in fixed-size chunks.

    Chunk boundaries depend only on the window order, so the result does
    not depend on thread count.  Peak memory is one chunk of full features.
    """
    out = []
    for a in range(0, len(gs), chunk):
        out.append(spec.apply(batch_features(gs[a : a + chunk], variant)))
    return np.concatenate(out, axis=0)


def _reference_windows(ds: LabeledDataset) -> List[Window]:
    # structural hygiene: the reference is built from train windows only,
    # and none of them may carry a label or a test identifier
    test_ids = {i for ws in ds.test.values() for w in ws for i in w.ids}
    for w in ds.train:
        if w.label != 0 or w.meta.get("split") != "train":
            raise AssertionError(f"non-normal or non-train window {window_id(w)} in reference set")
        if test_ids.intersection(w.ids):
            raise AssertionError(f"train window {window_id(w)} shares identifiers with test windows")
    return ds.train


def _cell_collisions(windows, hash_cfg):
    cv = np.mean([collision_fraction(w.ids, hash_cfg, "val") for w in windows])
    cp = np.mean([collision_fraction(w.ids, hash_cfg, "pres") for w in windows])
    return float(cv), float(cp)


@dataclass
class CellScores:
    key: tuple
    windows: List[Window]
    scores: np.ndarray
    time_build: float
    time_score: float


def evaluate_dataset(
    ds: LabeledDataset,
    variants: Sequence[str],
    hash_cfg: HashConfig = HashConfig(),
    det: DetectorConfig = DetectorConfig(),
    threads: int = 1,
    keep_scores: bool = False,
):
    """Score every test cell of ``ds`` under each variant.

    Returns ``(rows, scores)`` where ``scores`` maps variant name to a list
    of :class:`CellScores` when ``keep_scores`` is set.
    """
    ref = _reference_windows(ds)
    cells = ds.test_cells()
    rows, kept = [], {}
    L = ds.cfg.L
    g_ref = hashed_batch(ref, hash_cfg) if any(v != STATSPOOL for v in variants) else None
    g_test = {key: hashed_batch(ds.test[key], hash_cfg) for key in cells} if g_ref is not None else {}
    collisions = {key: _cell_collisions(ds.test[key], hash_cfg) for key in cells}

    for vname in variants:
        if vname == STATSPOOL:
            t0 = time.perf_counter()
            model = StatsPoolKNN(k=det.k).fit(ref)
            t_fit = time.perf_counter() - t0

            def run(key):
                t = time.perf_counter()
                s = model.score(ds.test[key])
                return key, s, 0.0, time.perf_counter() - t

            name, dim, proxy = STATSPOOL, 9, float("nan")
        else:
            v = parse_variant(vname)
            spec = make_projection(feature_dim(v, L, hash_cfg.m), det.d_out, det.proj_seed)
            t0 = time.perf_counter()
            index = fit_reference(embed(g_ref, v, spec, det.chunk), None, det.k)
            t_fit = time.perf_counter() - t0

            def run(key, v=v, spec=spec, index=index):
                t = time.perf_counter()
                P = embed(g_test[key], v, spec, det.chunk)
                t_b = time.perf_counter() - t
                t = time.perf_counter()
                s, _ = score_batch(P, index)
                return key, s, t_b, time.perf_counter() - t

            name, dim, proxy = v.name, feature_dim(v, L, hash_cfg.m), complexity_proxy(v, L, 2 * hash_cfg.m)

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(run, cells))
        else:
            results = [run(key) for key in cells]

        for key, s, t_b, t_s in results:
            C, rate = key
            y = np.array([w.label for w in ds.test[key]], dtype=bool)
            cv, cp = collisions[key]
            rows.append(
                MetricRow(
                    protocol=ds.protocol,
                    variant=name,
                    C=C,
                    anomaly_rate=rate,
                    seed=ds.cfg.seed,
                    auprc=auprc(s, y),
                    auroc=auroc(s, y),
                    tpr_at_1fpr=tpr_at_fpr(s, y, 0.01),
                    time_build=t_b,
                    time_score=t_s + t_fit / len(cells),
                    feature_dim=dim,
                    complexity=proxy,
                    collision_value=cv,
                    collision_presence=cp,
                    m=hash_cfg.m,
                )
            )
            if keep_scores:
                kept.setdefault(name, []).append(CellScores(key, ds.test[key], s, t_b, t_s))
    return rows, kept


def run_protocol(
    protocol: str,
    variants: Sequence[str],
    cfg: GenConfig,
    seeds: Sequence[int],
    hash_cfg: HashConfig = HashConfig(),
    det: DetectorConfig = DetectorConfig(),
    threads: int = 1,
    keep_scores: bool = False,
):
    """Generate, represent, score and evaluate for each seed.

    Returns ``(rows, scores)``; ``scores`` is keyed by ``(seed, variant)``.
    """
    if not seeds:
        raise ConfigError("need at least one seed")
    rows, kept = [], {}
    for seed in seeds:
        ds = build_dataset(protocol, replace(cfg, seed=int(seed)), threads=threads, splits=("train", "test"))
        r, k = evaluate_dataset(ds, variants, hash_cfg, det, threads, keep_scores)
        rows.extend(r)
        kept.update({(int(seed), name): cells for name, cells in k.items()})
    return rows, kept


# ---------------------------------------------------------------------------
# aggregation

METRICS = ("auprc", "auroc", "tpr_at_1fpr")
TIMES = ("time_build", "time_score")


def aggregate(rows: Sequence[MetricRow], by=("protocol", "variant", "anomaly_rate", "m")) -> List[dict]:
    """Uniform mean over C within each seed, then mean and std over seeds.

    The std uses ddof=0, so a single seed gives zeros.  Output rows keep
    the first-seen order of their group keys.
    """
    groups: Dict[tuple, Dict[int, List[MetricRow]]] = {}
    for r in rows:
        groups.setdefault(tuple(getattr(r, b) for b in by), {}).setdefault(r.seed, []).append(r)
    out = []
    for key, per_seed in groups.items():
        rec = dict(zip(by, key))
        first = next(iter(per_seed.values()))[0]
        rec["feature_dim"] = first.feature_dim
        rec["complexity"] = first.complexity
        rec["n_seeds"] = len(per_seed)
        for mname in METRICS + TIMES + ("collision_value", "collision_presence"):
            per = np.array([np.mean([getattr(r, mname) for r in rs]) for rs in per_seed.values()])
            rec[f"{mname}_mean"] = float(per.mean())
            rec[f"{mname}_std"] = float(per.std())
        rec["time_total_mean"] = rec["time_build_mean"] + rec["time_score_mean"]
        out.append(rec)
    return out


# ---------------------------------------------------------------------------
# sweeps and ablations


def sweep_m(
    cfg: GenConfig,
    seeds: Sequence[int],
    m_values: Sequence[int] = M_SWEEP,
    variant: str = "full6",
    protocol: str = "holdout_C",
    det: DetectorConfig = DetectorConfig(),
    threads: int = 1,
):
    """Detection metrics and collision fractions per hash width.

    Collision fractions are averaged over the train windows, the fixed id
    population every width sees.  Each seed's dataset is generated once
    and reused for all widths, so AUPRC differences isolate ``m``.
    """
    if not m_values or any(int(m) < 1 for m in m_values):
        raise ConfigError(f"invalid m list {m_values!r}")
    rows, coll = [], {int(m): ([], []) for m in m_values}
    for seed in seeds:
        ds = build_dataset(protocol, replace(cfg, seed=int(seed)), threads=threads, splits=("train", "test"))
        for m in m_values:
            hc = HashConfig(m=int(m))
            r, _ = evaluate_dataset(ds, [variant], hc, det, threads)
            rows.extend(r)
            cv, cp = _cell_collisions(ds.train, hc)
            coll[int(m)][0].append(cv)
            coll[int(m)][1].append(cp)
    table = [
        {"m": m, "collision_value": float(np.mean(v)), "collision_presence": float(np.mean(p))}
        for m, (v, p) in coll.items()
    ]
    return rows, table


def msweep_table(rows, collisions) -> List[dict]:
    agg = {r["m"]: r for r in aggregate(rows, by=("m",))}
    out = []
    for c in collisions:
        a = agg[c["m"]]
        out.append(
            {
                "m": c["m"],
                "auprc_mean": a["auprc_mean"],
                "auprc_std": a["auprc_std"],
                "auroc_mean": a["auroc_mean"],
                "auroc_std": a["auroc_std"],
                "collision_value": c["collision_value"],
                "collision_presence": c["collision_presence"],
            }
        )
    return out


def run_ablation(
    cfg: GenConfig,
    seeds: Sequence[int],
    names: Sequence[str] = tuple(ABLATIONS),
    protocol: str = "holdout_C",
    det: DetectorConfig = DetectorConfig(),
    threads: int = 1,
    hash_cfg: HashConfig = HashConfig(),
) -> List[MetricRow]:
    """Representation-level ablation rows; nothing is trained."""
    unknown = [n for n in names if n not in ABLATIONS]
    if unknown:
        raise ConfigError(f"unknown ablation(s) {unknown}; choose from {sorted(ABLATIONS)}")
    rows = []
    for seed in seeds:
        ds = build_dataset(protocol, replace(cfg, seed=int(seed)), threads=threads, splits=("train", "test"))
        for name in names:
            vname, overrides = ABLATIONS[name]
            r, _ = evaluate_dataset(ds, [vname], replace(hash_cfg, **overrides), det, threads)
            rows.extend(replace(x, variant=name) for x in r)
    return rows


# ---------------------------------------------------------------------------
# scaling benchmark


def _median_time(fn, repetitions: int) -> float:
    fn()  # warm-up, not timed
    ts = []
    for _ in range(repetitions):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return float(np.median(ts))


def benchmark_windows(cfg: GenConfig, n_ref: int = 200, n_query: int = 100, C: int = 8):
    ref = [make_window(cfg, "train", C, 0, i, False, "trn") for i in range(n_ref)]
    qry = [make_window(cfg, "test", C, 0, i, False, "tst") for i in range(n_query)]
    return ref, qry


def scaling_benchmark(
    variants: Sequence[str],
    cfg: GenConfig,
    repetitions: int = 5,
    hash_cfg: HashConfig = HashConfig(),
    det: DetectorConfig = DetectorConfig(),
    n_ref: int = 200,
    n_query: int = 100,
) -> List[dict]:
    """Median wall time of representation build and of kNN scoring.

    Build runs end to end from raw windows: hashed sketch, then flattened
    features, for reference and query windows.  Scoring covers
    projection, index fit and exact search.
    """
    if repetitions < 1:
        raise ConfigError("repetitions must be >= 1")
    ref, qry = benchmark_windows(cfg, n_ref, n_query)
    out = []
    for vname in variants:
        v = parse_variant(vname)
        spec = make_projection(feature_dim(v, cfg.L, hash_cfg.m), det.d_out, det.proj_seed)
        feats = {}

        def build():
            feats["ref"] = batch_features(hashed_batch(ref, hash_cfg), v)
            feats["qry"] = batch_features(hashed_batch(qry, hash_cfg), v)

        def score():
            index = fit_reference(feats["ref"], spec, det.k)
            score_batch(feats["qry"], index)

        t_build = _median_time(build, repetitions)
        t_score = _median_time(score, repetitions)
        out.append(
            {
                "variant": v.name,
                "L": cfg.L,
                "feature_dim": feature_dim(v, cfg.L, hash_cfg.m),
                "complexity": complexity_proxy(v, cfg.L, 2 * hash_cfg.m),
                "time_build": t_build,
                "time_score": t_score,
                "time_total": t_build + t_score,
            }
        )
    return out


def build_time_growth(
    variant: str,
    cfg: GenConfig,
    L_small: int = 64,
    L_large: int = 128,
    repetitions: int = 7,
    hash_cfg: HashConfig = HashConfig(),
    n_ref: int = 200,
    n_query: int = 100,
) -> float:
    """Ratio of median end-to-end build time at ``L_large`` to ``L_small``.

    Repetitions alternate between the two lengths so slow drift in machine
    load affects both medians alike.
    """
    v = parse_variant(variant)
    data = {L: benchmark_windows(replace(cfg, L=L), n_ref, n_query) for L in (L_small, L_large)}

    def build(L):
        ref, qry = data[L]
        batch_features(hashed_batch(ref, hash_cfg), v)
        batch_features(hashed_batch(qry, hash_cfg), v)

    times = {L_small: [], L_large: []}
    for L in times:
        build(L)  # warm-up
    for _ in range(repetitions):
        for L in times:
            t = time.perf_counter()
            build(L)
            times[L].append(time.perf_counter() - t)
    return float(np.median(times[L_large]) / np.median(times[L_small]))


# ---------------------------------------------------------------------------
# cosine-collapse diagnostic


@dataclass
class DiagnosticConfig:
    n_per_class: int = 100
    C: int = 8
    amp_factor: float = 4.0  # segment rows multiplied by this
    add_delta: float = 3.0  # segment row norms grow by this many bandwidths
    seed: int = 0
    gen: GenConfig = field(default_factory=GenConfig)


def _offdiag_mean(K: np.ndarray) -> float:
    L = K.shape[0]
    return float((K.sum() - np.trace(K)) / (L * L - L))


def kernel_summaries(g: np.ndarray):
    """(mean off-diagonal Cos(g), mean off-diagonal LogDist(g))."""
    return _offdiag_mean(cos_kernel(g)), _offdiag_mean(logdist_kernel(g, robust_bandwidth(g)))


def amplitude_segment(g: np.ndarray, s: int, e: int, factor: float) -> np.ndarray:
    out = g.copy()
    out[s:e] *= factor
    return out


def additive_segment(g: np.ndarray, s: int, e: int, delta: float) -> np.ndarray:
    """Add ``delta * sigma(g)`` to each segment row's norm along its own direction."""
    out = g.copy()
    seg = out[s:e]
    nrm = np.linalg.norm(seg, axis=1, keepdims=True)
    out[s:e] = seg + delta * robust_bandwidth(g) * seg / np.where(nrm > 0, nrm, 1.0)
    return out


def cosine_collapse_diagnostic(dc: DiagnosticConfig = DiagnosticConfig(), hash_cfg: HashConfig = HashConfig()) -> List[dict]:
    """2x4 table: kernel family x (task AUROC, task AUPRC).

    Each task draws its own balanced set of normal windows; half are
    perturbed over a short segment.  Scores are kernel summary statistics,
    so no detector is involved.
    """
    gen = replace(dc.gen, seed=dc.seed)
    n = dc.n_per_class
    rng = np.random.default_rng([dc.seed, 7])
    lo, hi = gen.segment_bounds()
    y = np.r_[np.zeros(n), np.ones(n)]
    res = {}
    for ti, (task, fn, par) in enumerate(
        (("amplitude", amplitude_segment, dc.amp_factor), ("additive", additive_segment, dc.add_delta))
    ):
        gs = [
            build_hashed_sequence(make_window(gen, "train", dc.C, ti, i, False, "trn"), hash_cfg).g
            for i in range(2 * n)
        ]
        S = []
        for i, g in enumerate(gs):
            if i >= n:
                ln = int(rng.integers(lo, hi + 1))
                s = int(rng.integers(0, g.shape[0] - ln + 1))
                g = fn(g, s, s + ln, par)
            S.append(kernel_summaries(g))
        S = np.array(S)
        for ki, kernel in enumerate(("cos", "logdist")):
            res[(kernel, task)] = (auroc(S[:, ki], y), auprc(S[:, ki], y))
    return [
        {
            "kernel": kernel,
            "amplitude_auroc": res[(kernel, "amplitude")][0],
            "amplitude_auprc": res[(kernel, "amplitude")][1],
            "additive_auroc": res[(kernel, "additive")][0],
            "additive_auprc": res[(kernel, "additive")][1],
        }
        for kernel in ("cos", "logdist")
    ]


def rescaling_sensitivity(g: np.ndarray, rng: np.random.Generator, seg=None):
    """Kernel response to rescaling.

    Returns ``(max |dCos|, max |dLogDist|)``: the first under a random
    positive per-row rescaling of the whole window, the second under a 2x
    scaling of segment ``seg`` (default: the first quarter).
    """
    scale = rng.uniform(0.5, 2.0, size=(g.shape[0], 1))
    d_cos = np.abs(cos_kernel(g * scale) - cos_kernel(g)).max()
    s, e = seg if seg is not None else (0, g.shape[0] // 4)
    g2 = amplitude_segment(g, s, e, 2.0)
    d_log = np.abs(logdist_kernel(g2, robust_bandwidth(g2)) - logdist_kernel(g, robust_bandwidth(g))).max()
    return float(d_cos), float(d_log)


# ---------------------------------------------------------------------------
# report files


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if np.isnan(v) else f"{float(v):.6f}"
    return str(v)


def write_csv(path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    """Write rows with fixed float formatting so reruns are byte-identical."""
    rows = [asdict(r) if hasattr(r, "__dataclass_fields__") else r for r in rows]
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(columns)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in columns])


def row_columns() -> List[str]:
    return [f.name for f in fields(MetricRow)]


def write_scores(path, cells: Sequence[CellScores]) -> None:
    """Per-window scores; the standardized score is robust within its cell."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["window_id", "C", "anomaly_rate", "label", "anomaly_type", "score", "score_std"])
        for cell in cells:
            z = robust_standardize(cell.scores)
            for w, s, zs in zip(cell.windows, cell.scores, z):
                wr.writerow(
                    [window_id(w), w.C, _fmt(cell.key[1]), w.label, w.anomaly_type or "", _fmt(s), _fmt(zs)]
                )


def write_summary(path, config: dict, tables: dict) -> None:
    with open(path, "w") as fh:
        json.dump({"config": config, "tables": tables}, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
