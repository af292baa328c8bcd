"""Command-line entry point.

    smkc generate --out data/            write a dataset and its index
    smkc run --variants log3,full6       detection metrics (table2_avg.csv)
    smkc sweep-m                         hash-width sweep (table5_msweep.csv)
    smkc bench --variants all            timing table (table1_scaling.csv)
    smkc diagnose                        kernel diagnostic (table7_diagnostic.csv)
    smkc ablate                          representation ablations (table6_ablation.csv)

A JSON config supplies defaults; flags override it.  The resolved config
is written to ``<out>/config.json`` and embedded in ``summary.json``.
Exit codes: 0 success, 1 configuration error, 2 runtime or data error.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import evalkit
from .benchgen import PROTOCOLS, GenConfig, LabeledDataset, build_dataset, window_id
from .errors import ConfigError, GenerationError
from .kernelrep import TABLE1_VARIANTS, parse_variant
from .sketch import HashConfig, Window

MAGIC = b"SMKCDS01"


@dataclass
class DiagnosticSection:
    n_per_class: int = 100
    C: int = 8
    amp_factor: float = 4.0
    add_delta: float = 3.0
    seed: int = 0


@dataclass
class RunConfig:
    protocol: str = "holdout_C"
    seeds: tuple = (0, 1, 2)
    variants: tuple = ("full6", "log3", "cos3", "log3+bandfeat8", "statspool")
    threads: int = 0  # 0: one per CPU
    out: str = "runs/default"
    m_values: tuple = evalkit.M_SWEEP
    repetitions: int = 5
    growth_variants: tuple = ("full6", "log3+bandfeat8")
    ablations: tuple = tuple(evalkit.ABLATIONS)
    gen: GenConfig = field(default_factory=GenConfig)
    hash: HashConfig = field(default_factory=HashConfig)
    detector: evalkit.DetectorConfig = field(default_factory=evalkit.DetectorConfig)
    diagnostic: DiagnosticSection = field(default_factory=DiagnosticSection)

    def resolved_threads(self) -> int:
        return self.threads or os.cpu_count() or 1

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


_SECTIONS = {
    "gen": GenConfig,
    "hash": HashConfig,
    "detector": evalkit.DetectorConfig,
    "diagnostic": DiagnosticSection,
}


def _check_keys(d: dict, cls, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def config_from_dict(d: dict) -> RunConfig:
    """Build a RunConfig, rejecting unknown keys at every level."""
    _check_keys(d, RunConfig, "config")
    kw = {}
    for k, v in d.items():
        if k in _SECTIONS:
            _check_keys(v, _SECTIONS[k], k)
            kw[k] = _SECTIONS[k](**v)
        elif isinstance(v, list):
            kw[k] = tuple(v)
        else:
            kw[k] = v
    return validate(RunConfig(**kw))


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {cfg.protocol!r}; choose from {sorted(PROTOCOLS)}")
    if not cfg.seeds:
        raise ConfigError("seed list is empty")
    if cfg.threads < 0:
        raise ConfigError("threads must be >= 0")
    for v in tuple(cfg.variants) + tuple(cfg.growth_variants):
        if v != evalkit.STATSPOOL:
            parse_variant(v)
    bad = [a for a in cfg.ablations if a not in evalkit.ABLATIONS]
    if bad:
        raise ConfigError(f"unknown ablation(s) {bad}")
    cfg.gen.validate()
    return cfg


def _split_list(text: str, conv=str):
    return tuple(conv(x) for x in text.split(",") if x.strip())


def resolve(args) -> RunConfig:
    """Config file (if any) with command-line flags applied on top."""
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON ({e})") from None
        cfg = config_from_dict(raw)
    else:
        cfg = RunConfig()
    over = {}
    if args.out is not None:
        over["out"] = args.out
    if args.seeds is not None:
        try:
            over["seeds"] = _split_list(args.seeds, int)
        except ValueError:
            raise ConfigError(f"--seeds expects comma-separated integers, got {args.seeds!r}") from None
    if args.variants is not None:
        over["variants"] = TABLE1_VARIANTS if args.variants == "all" else _split_list(args.variants)
    if args.threads is not None:
        over["threads"] = args.threads
    if args.protocol is not None:
        over["protocol"] = args.protocol
    if args.rate is not None:
        over["gen"] = replace(cfg.gen, anomaly_rates=(args.rate,))
    return validate(replace(cfg, **over))


# ---------------------------------------------------------------------------
# dataset files
#
# dataset.bin: MAGIC, uint32 record count, then per window
#   uint32 L, uint32 C, C x (uint16 byte length, utf-8 id),
#   M as L*C uint8, X as L*C little-endian float64 (row-major).
# index.jsonl: one JSON object per record, in file order.


def write_dataset(out: Path, ds: LabeledDataset) -> int:
    out.mkdir(parents=True, exist_ok=True)
    windows = list(ds.all_windows())
    with open(out / "dataset.bin", "wb") as fb, open(out / "index.jsonl", "w") as fi:
        fb.write(MAGIC + struct.pack("<I", len(windows)))
        for w in windows:
            offset = fb.tell()
            fb.write(struct.pack("<II", w.L, w.C))
            for i in w.ids:
                b = i.encode("utf-8")
                fb.write(struct.pack("<H", len(b)) + b)
            fb.write(np.ascontiguousarray(w.M, dtype=np.uint8).tobytes())
            fb.write(np.ascontiguousarray(np.where(w.M > 0, w.X, 0.0), dtype="<f8").tobytes())
            rec = {
                "window_id": window_id(w),
                "offset": offset,
                "split": w.meta["split"],
                "C": w.C,
                "rate": w.meta.get("rate", 0.0),
                "label": int(w.label),
                "anomaly_type": w.anomaly_type,
                "segment": list(w.meta["segment"]) if "segment" in w.meta else None,
            }
            fi.write(json.dumps(rec, sort_keys=True) + "\n")
    return len(windows)


def read_dataset(path: Path):
    """Read ``dataset.bin`` and ``index.jsonl`` back into windows."""
    path = Path(path)
    index = [json.loads(line) for line in (path / "index.jsonl").read_text().splitlines()]
    data = (path / "dataset.bin").read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise GenerationError(f"{path / 'dataset.bin'}: bad magic header")
    (n,) = struct.unpack_from("<I", data, len(MAGIC))
    if n != len(index):
        raise GenerationError(f"record count {n} != index length {len(index)}")
    out = []
    for rec in index:
        pos = rec["offset"]
        L, C = struct.unpack_from("<II", data, pos)
        pos += 8
        ids = []
        for _ in range(C):
            (k,) = struct.unpack_from("<H", data, pos)
            ids.append(data[pos + 2 : pos + 2 + k].decode("utf-8"))
            pos += 2 + k
        M = np.frombuffer(data, np.uint8, L * C, pos).reshape(L, C)
        pos += L * C
        X = np.frombuffer(data, "<f8", L * C, pos).reshape(L, C)
        out.append(Window(ids, X.copy(), M.copy(), rec["label"], rec["anomaly_type"], {"window_id": rec["window_id"]}))
    return out


# ---------------------------------------------------------------------------
# commands


def _prepare(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def cmd_generate(cfg: RunConfig) -> int:
    out = _prepare(cfg)
    gen = replace(cfg.gen, seed=int(cfg.seeds[0]))
    ds = build_dataset(cfg.protocol, gen, threads=cfg.resolved_threads())
    n = write_dataset(out, ds)
    print(f"wrote {n} windows to {out}")
    print(f"  train: {len(ds.train)} windows, C in {sorted({w.C for w in ds.train})}")
    print(f"  val:   {len(ds.val)} windows, prevalence {np.mean([w.label for w in ds.val]):.3f}")
    per_rate = Counter()
    pos = Counter()
    for (C, rate), ws in ds.test.items():
        per_rate[rate] += len(ws)
        pos[rate] += sum(w.label for w in ws)
    print(f"  test:  C in {sorted({C for C, _ in ds.test})}")
    for rate in sorted(per_rate):
        print(f"    rate {rate:.2f}: {per_rate[rate]} windows, prevalence {pos[rate] / per_rate[rate]:.3f}")
    return 0


def cmd_run(cfg: RunConfig) -> int:
    out = _prepare(cfg)
    rows, kept = evalkit.run_protocol(
        cfg.protocol, cfg.variants, cfg.gen, cfg.seeds, cfg.hash, cfg.detector, cfg.resolved_threads(), keep_scores=True
    )
    agg = evalkit.aggregate(rows)
    evalkit.write_csv(out / "per_cell.csv", rows, evalkit.row_columns())
    evalkit.write_csv(out / "table2_avg.csv", agg)
    (out / "scores").mkdir(exist_ok=True)
    for (seed, name), cells in kept.items():
        evalkit.write_scores(out / "scores" / f"{_slug(name)}_seed{seed}.csv", cells)
    evalkit.write_summary(out / "summary.json", cfg.to_dict(), {"table2_avg": agg})
    _print_table(agg, ("variant", "anomaly_rate", "auprc_mean", "auprc_std", "auroc_mean", "tpr_at_1fpr_mean"))
    return 0


def cmd_sweep_m(cfg: RunConfig) -> int:
    out = _prepare(cfg)
    variant = cfg.variants[0] if len(cfg.variants) == 1 else "full6"
    rows, coll = evalkit.sweep_m(
        cfg.gen, cfg.seeds, cfg.m_values, variant, cfg.protocol, cfg.detector, cfg.resolved_threads()
    )
    table = evalkit.msweep_table(rows, coll)
    evalkit.write_csv(out / "table5_msweep.csv", table)
    evalkit.write_csv(out / "msweep_per_cell.csv", rows, evalkit.row_columns())
    evalkit.write_summary(out / "summary.json", cfg.to_dict(), {"table5_msweep": table})
    _print_table(table, ("m", "auprc_mean", "auprc_std", "collision_value", "collision_presence"))
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    out = _prepare(cfg)
    variants = [v for v in cfg.variants if v != evalkit.STATSPOOL]
    table = evalkit.scaling_benchmark(variants, cfg.gen, cfg.repetitions, cfg.hash, cfg.detector)
    growth = [
        {
            "variant": parse_variant(v).name,
            "build_time_ratio_2L": evalkit.build_time_growth(
                v, cfg.gen, cfg.gen.L, 2 * cfg.gen.L, max(cfg.repetitions, 7), hash_cfg=cfg.hash
            ),
        }
        for v in cfg.growth_variants
    ]
    evalkit.write_csv(out / "table1_scaling.csv", table)
    evalkit.write_csv(out / "table1_growth.csv", growth)
    evalkit.write_summary(out / "summary.json", cfg.to_dict(), {"table1_scaling": table, "table1_growth": growth})
    _print_table(table, ("variant", "feature_dim", "complexity", "time_build", "time_score", "time_total"))
    _print_table(growth, ("variant", "build_time_ratio_2L"))
    return 0


def cmd_diagnose(cfg: RunConfig) -> int:
    out = _prepare(cfg)
    dc = evalkit.DiagnosticConfig(**asdict(cfg.diagnostic), gen=cfg.gen)
    table = evalkit.cosine_collapse_diagnostic(dc, cfg.hash)
    evalkit.write_csv(out / "table7_diagnostic.csv", table)
    evalkit.write_summary(out / "summary.json", cfg.to_dict(), {"table7_diagnostic": table})
    _print_table(table, ("kernel", "amplitude_auroc", "amplitude_auprc", "additive_auroc", "additive_auprc"))
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    out = _prepare(cfg)
    rows = evalkit.run_ablation(
        cfg.gen, cfg.seeds, cfg.ablations, cfg.protocol, cfg.detector, cfg.resolved_threads(), cfg.hash
    )
    agg = evalkit.aggregate(rows)
    evalkit.write_csv(out / "table6_ablation.csv", agg)
    evalkit.write_csv(out / "ablation_per_cell.csv", rows, evalkit.row_columns())
    evalkit.write_summary(out / "summary.json", cfg.to_dict(), {"table6_ablation": agg})
    _print_table(agg, ("variant", "anomaly_rate", "auprc_mean", "auprc_std", "auroc_mean"))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "sweep-m": cmd_sweep_m,
    "bench": cmd_bench,
    "diagnose": cmd_diagnose,
    "ablate": cmd_ablate,
}


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def _print_table(rows, cols):
    print("  ".join(f"{c:>16}" for c in cols))
    for r in rows:
        print("  ".join(f"{evalkit._fmt(r[c]):>16}" for c in cols))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smkc", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON run configuration")
        s.add_argument("--out", help="output directory (all files go here)")
        s.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2")
        s.add_argument("--variants", help="comma-separated variant names, or 'all' for the eleven scaling variants")
        s.add_argument("--threads", type=int, help="worker threads (0: one per CPU)")
        s.add_argument("--rate", type=float, help="single anomaly rate for test cells")
        s.add_argument("--protocol", choices=sorted(PROTOCOLS))
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
    except (ConfigError, ValueError, TypeError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (GenerationError, OSError, RuntimeError, ValueError) as e:
        print(f"error in {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
