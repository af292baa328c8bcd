"""Training-free kNN scoring over projected representations.

Features are mapped to ``d_out`` dimensions with a fixed Gaussian
matrix, l2-normalized, and scored by the mean cosine distance to the K
nearest vectors of a normal-only reference set.  Search is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .sketch import Window

EPS = 1e-12


@dataclass(frozen=True, eq=False)
class ProjectionSpec:
    d_in: int
    d_out: int
    seed: int
    matrix: np.ndarray  # (d_out, d_in)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.matrix.T


def make_projection(d_in: int, d_out: int = 256, seed: int = 0) -> ProjectionSpec:
    """Gaussian JL matrix with N(0, 1/d_out) entries.

    Drawn from a Philox counter-based stream, so the matrix depends only
    on ``(d_in, d_out, seed)``.
    """
    if d_in < 1 or d_out < 1:
        raise ValueError(f"dimensions must be >= 1, got d_in={d_in}, d_out={d_out}")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    mat = rng.standard_normal((d_out, d_in)) / np.sqrt(d_out)
    return ProjectionSpec(d_in, d_out, int(seed), mat)


def _normalize(V: np.ndarray):
    nrm = np.linalg.norm(V, axis=-1, keepdims=True)
    zero = nrm[..., 0] < EPS
    return np.where(zero[..., None], 0.0, V / np.where(zero[..., None], 1.0, nrm)), zero


@dataclass
class ReferenceIndex:
    vectors: np.ndarray  # (N, d_out), unit rows except flagged zeros
    zero: np.ndarray  # (N,) rows stored as zero
    k: int
    spec: Optional[ProjectionSpec]

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    def embed(self, features) -> np.ndarray:
        F = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if self.spec is not None:
            if F.shape[1] != self.spec.d_in:
                raise ValueError(f"feature dim {F.shape[1]} != projection d_in {self.spec.d_in}")
            F = self.spec.apply(F)
        elif F.shape[1] != self.vectors.shape[1]:
            raise ValueError(f"feature dim {F.shape[1]} != reference dim {self.vectors.shape[1]}")
        return F


def fit_reference(features, spec: Optional[ProjectionSpec], k: int = 20) -> ReferenceIndex:
    """Project and normalize normal-only features.  ``spec=None`` skips projection."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 1:
        raise ValueError("need a non-empty 2-D array of reference features")
    if spec is not None and F.shape[1] != spec.d_in:
        raise ValueError(f"feature dim {F.shape[1]} != projection d_in {spec.d_in}")
    if k < 1:
        raise ValueError("k must be >= 1")
    V = spec.apply(F) if spec is not None else F
    V, zero = _normalize(V)
    return ReferenceIndex(V, zero, int(k), spec)


def score_batch(features, index: ReferenceIndex, chunk: int = 1024):
    """Mean cosine distance to the K nearest references for each row.

    Returns ``(scores, zero_query)``.  A zero query is at distance 1
    from every reference.
    """
    Q, zero_q = _normalize(index.embed(features))
    k = min(index.k, index.n)
    out = np.empty(Q.shape[0])
    for a in range(0, Q.shape[0], chunk):
        dist = 1.0 - Q[a : a + chunk] @ index.vectors.T
        dist = np.clip(dist, 0.0, 2.0)
        if k < index.n:
            dist = np.partition(dist, k - 1, axis=1)[:, :k]
        # sorted before summing so the value is independent of reference order
        out[a : a + chunk] = np.sort(dist, axis=1).sum(axis=1) / k
    return out, zero_q


def score_knn(feature, index: ReferenceIndex) -> float:
    s, _ = score_batch(np.asarray(feature)[None, :], index)
    return float(s[0])


def robust_standardize(scores) -> np.ndarray:
    """(s - median) / (1.4826 * MAD + eps)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size < 1:
        raise ValueError("need at least one score")
    med = np.median(s)
    mad = np.median(np.abs(s - med))
    return (s - med) / (1.4826 * mad + EPS)


STATS_NAMES = (
    "mean",
    "std",
    "min",
    "max",
    "skew",
    "mean_abs_diff",
    "observed_fraction",
    "n_t_mean",
    "n_t_std",
)


def stats_pool(w: Window) -> np.ndarray:
    """Nine permutation-invariant window statistics over observed entries."""
    M = w.M.astype(bool)
    v = np.sort(w.X[M])  # sorted so pooling order never depends on column order
    mean = v.mean()
    std = v.std()
    skew = float(np.mean(((v - mean) / std) ** 3)) if std > 0 else 0.0
    both = M[1:] & M[:-1]
    diffs = np.sort(np.abs(w.X[1:] - w.X[:-1])[both])
    mad = diffs.mean() if diffs.size else 0.0
    n_t = M.sum(axis=1).astype(np.float64)
    return np.array(
        [mean, std, v.min(), v.max(), skew, mad, M.mean(), n_t.mean(), n_t.std()],
        dtype=np.float64,
    )


class StatsPoolKNN:
    """Classical baseline: z-scored pooled statistics, cosine kNN, no projection."""

    def __init__(self, k: int = 20):
        self.k = k

    def fit(self, windows):
        S = np.array([stats_pool(w) for w in windows])
        self.mu_ = S.mean(axis=0)
        self.sd_ = S.std(axis=0)
        self.sd_[self.sd_ < EPS] = 1.0
        self.index_ = fit_reference((S - self.mu_) / self.sd_, None, self.k)
        return self

    def score(self, windows) -> np.ndarray:
        S = np.array([stats_pool(w) for w in windows])
        return score_batch((S - self.mu_) / self.sd_, self.index_)[0]
