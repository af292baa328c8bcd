"""AUROC of each anomaly type against the normal windows of its cell.

    python scripts/per_type_breakdown.py --variants log3,cos3,full6 --seeds 0,1,2

Shows which anomaly types a representation can see at all.  Scores come
from the same RandProj-kNN path as the main protocol; each type is
ranked against all normal windows pooled over test cells.
"""

import argparse
from collections import defaultdict
from dataclasses import replace

import numpy as np

from smkc.benchgen import ANOMALY_TYPES, GenConfig
from smkc.evalkit import DetectorConfig, run_protocol
from smkc.metrics import auroc


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--variants", default="log3,cos3,full6")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--rate", type=float, default=0.2)
    p.add_argument("--protocol", default="holdout_C")
    args = p.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    variants = args.variants.split(",")
    cfg = replace(GenConfig(), anomaly_rates=(args.rate,))
    _, kept = run_protocol(args.protocol, variants, cfg, seeds, det=DetectorConfig(), keep_scores=True)

    table = defaultdict(list)  # (variant, type) -> per-seed AUROC
    for (seed, name), cells in kept.items():
        # standardize within each cell so pooled scores share one scale
        s, types = [], []
        for c in cells:
            z = (c.scores - np.median(c.scores)) / (np.std(c.scores) + 1e-12)
            s.extend(z)
            types.extend(w.anomaly_type for w in c.windows)
        s = np.array(s)
        normal = np.array([t is None for t in types])
        for atype in ANOMALY_TYPES:
            sel = np.array([t == atype for t in types])
            if sel.any():
                y = np.r_[np.zeros(normal.sum()), np.ones(sel.sum())]
                table[(name, atype)].append(auroc(np.r_[s[normal], s[sel]], y))

    print(f"{'type':>22} " + " ".join(f"{v:>10}" for v in variants))
    for atype in ANOMALY_TYPES:
        row = [np.mean(table[(v, atype)]) if table[(v, atype)] else float("nan") for v in variants]
        print(f"{atype:>22} " + " ".join(f"{x:10.3f}" for x in row))


if __name__ == "__main__":
    main()
