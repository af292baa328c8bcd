"""Regenerate every result table into one directory.

    python scripts/reproduce_tables.py --out runs/all --seeds 0,1,2

Runs the CLI subcommands in sequence: detection (table2_avg.csv),
hash-width sweep, scaling benchmark, kernel diagnostic and ablations.
Timing tables are only meaningful on an otherwise idle machine.
"""

import argparse
import sys
import time
from pathlib import Path

from smkc import cli
from smkc.kernelrep import TABLE1_VARIANTS

STEPS = (
    ("run", "detection", []),
    ("sweep-m", "m_sweep", ["--rate", "0.1"]),
    ("bench", "scaling", ["--variants", ",".join(TABLE1_VARIANTS)]),
    ("diagnose", "diagnostic", []),
    ("ablate", "ablation", ["--rate", "0.1"]),
)


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--out", default="runs/all")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--threads", default="0")
    p.add_argument("--config", help="JSON run configuration applied to every step")
    p.add_argument("--skip", default="", help="comma-separated step names to skip, e.g. bench,ablate")
    args = p.parse_args()
    skip = set(filter(None, args.skip.split(",")))
    base = ["--seeds", args.seeds, "--threads", args.threads]
    if args.config:
        base += ["--config", args.config]
    for command, sub, extra in STEPS:
        if command in skip:
            continue
        out = Path(args.out) / sub
        t = time.perf_counter()
        print(f"== {command} -> {out}", flush=True)
        rc = cli.main([command, "--out", str(out), *base, *extra])
        if rc:
            return rc
        print(f"   done in {time.perf_counter() - t:.0f}s", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
