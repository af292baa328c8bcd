"""Signed feature hashing of variable-cardinality windows.

A window (X, M, ids) with any number of variables C is mapped to a
fixed-width hashed state sequence ``g`` of shape (L, 2m): a value sketch
in the first m columns and a presence sketch in the last m.  Bucket
indices and signs come from MD5 of the identifier with a per-stream
suffix, so there is no hashing seed and results are identical on every
platform.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

STREAM_SUFFIX = {
    "val": "#val",
    "val_sign": "#val_sign",
    "pres": "#pres",
    "pres_sign": "#pres_sign",
    "group": "#group",
    "mix": "#mix",
}


@dataclass
class Window:
    """One multivariate window with a variable set of identified columns.

    ``X`` and ``M`` are (L, C).  Entries of ``X`` where ``M == 0`` are
    stored as 0 and never read.
    """

    ids: tuple
    X: np.ndarray
    M: np.ndarray
    label: int = 0
    anomaly_type: Optional[str] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ids = tuple(self.ids)
        self.X = np.asarray(self.X, dtype=np.float64)
        self.M = np.asarray(self.M, dtype=np.uint8)
        if self.X.ndim != 2 or self.X.shape != self.M.shape:
            raise ValueError(f"X {self.X.shape} and M {self.M.shape} must be equal 2-D shapes")
        if len(self.ids) != self.X.shape[1]:
            raise ValueError(f"{len(self.ids)} ids for {self.X.shape[1]} columns")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("variable ids must be distinct within a window")

    @property
    def L(self) -> int:
        return self.X.shape[0]

    @property
    def C(self) -> int:
        return self.X.shape[1]

    def permuted(self, order: Sequence[int]) -> "Window":
        order = list(order)
        return Window(
            ids=[self.ids[j] for j in order],
            X=self.X[:, order],
            M=self.M[:, order],
            label=self.label,
            anomaly_type=self.anomaly_type,
            meta=dict(self.meta),
        )


@dataclass(frozen=True)
class HashConfig:
    """Sketch parameters.

    ``presence``, ``sqrt_nt`` and ``saturate`` default to the standard
    construction; turning one off yields the matching ablation
    (no presence stream, no 1/sqrt(n_t) scaling, linear lambda).
    """

    m: int = 128
    a_pres: float = 0.2
    presence: bool = True
    sqrt_nt: bool = True
    saturate: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not self.a_pres > 0:
            raise ValueError(f"a_pres must be > 0, got {self.a_pres}")

    @property
    def n_sat(self) -> float:
        return 1.0 / self.a_pres


@dataclass
class HashedSequence:
    g: np.ndarray  # (L, 2m)
    n: np.ndarray  # (L,) observed counts

    @property
    def L(self) -> int:
        return self.g.shape[0]

    @property
    def m(self) -> int:
        return self.g.shape[1] // 2


@lru_cache(maxsize=None)
def _digest_int(key: str) -> int:
    return int.from_bytes(hashlib.md5(key.encode("utf-8")).digest(), "big")


def hash_stream(id: str, stream: str, modulus: int) -> int:
    """MD5(id + suffix) read as a big-endian 128-bit integer, mod ``modulus``."""
    if modulus < 1:
        raise ValueError(f"modulus must be >= 1, got {modulus}")
    return _digest_int(id + STREAM_SUFFIX[stream]) % modulus


def sign_of(id: str, stream: str) -> int:
    """+1 or -1 from the parity of the stream's sign hash."""
    return 1 if hash_stream(id, stream + "_sign", 2) == 0 else -1


def unit_hash(id: str, stream: str) -> float:
    """Deterministic value in [0, 1) from the full 128-bit digest."""
    return _digest_int(id + STREAM_SUFFIX[stream]) / float(1 << 128)


def saturation(n_t, cfg: HashConfig):
    """lambda(n_t) = min(a_pres * n_t, 1); no clamp when ``cfg.saturate`` is off."""
    lam = cfg.a_pres * np.asarray(n_t, dtype=np.float64)
    return np.minimum(lam, 1.0) if cfg.saturate else lam


def _hash_tables(ids: Sequence[str], m: int):
    hv = np.array([hash_stream(i, "val", m) for i in ids], dtype=np.int64)
    sv = np.array([sign_of(i, "val") for i in ids], dtype=np.float64)
    hp = np.array([hash_stream(i, "pres", m) for i in ids], dtype=np.int64)
    sp = np.array([sign_of(i, "pres") for i in ids], dtype=np.float64)
    return hv, sv, hp, sp


def sketch_step(values, mask, ids, cfg: HashConfig):
    """Value and presence sketches of a single time step.

    Returns ``(phi_v, phi_p, n_t)``.  Unobserved entries contribute to
    neither stream.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    phi_v = np.zeros(cfg.m)
    phi_p = np.zeros(cfg.m)
    for j in sorted(range(len(ids)), key=lambda k: ids[k]):
        if not mask[j]:
            continue
        phi_v[hash_stream(ids[j], "val", cfg.m)] += sign_of(ids[j], "val") * values[j]
        phi_p[hash_stream(ids[j], "pres", cfg.m)] += sign_of(ids[j], "pres")
    return phi_v, phi_p, int(mask.sum())


def assemble_g(phi_v, phi_p, n_t: int, cfg: HashConfig) -> np.ndarray:
    """Concatenate the two sketches into g_t; the empty step maps to zero."""
    if n_t < 0:
        raise ValueError("n_t must be non-negative")
    if n_t == 0:
        return np.zeros(2 * cfg.m)
    lam = float(saturation(n_t, cfg)) if cfg.presence else 0.0
    g = np.concatenate([np.asarray(phi_v, float), lam * np.asarray(phi_p, float)])
    if cfg.sqrt_nt:
        g = g / np.sqrt(n_t)
    return g


def build_hashed_sequence(w: Window, cfg: HashConfig) -> HashedSequence:
    """Sketch every time step of ``w``.

    Columns are processed in identifier order, so the output is bitwise
    identical under any permutation of the window's columns.
    """
    order = sorted(range(w.C), key=lambda k: w.ids[k])
    ids = [w.ids[k] for k in order]
    M = w.M[:, order].astype(np.float64)
    X = np.where(M > 0, w.X[:, order], 0.0)
    hv, sv, hp, sp = _hash_tables(ids, cfg.m)

    L = w.L
    phi_v = np.zeros((L, cfg.m))
    phi_p = np.zeros((L, cfg.m))
    # sequential accumulation in sorted-id order keeps sums order-independent
    for j in range(len(ids)):
        phi_v[:, hv[j]] += sv[j] * X[:, j]
        phi_p[:, hp[j]] += sp[j] * M[:, j]

    n = M.sum(axis=1).astype(np.int64)
    lam = saturation(n, cfg) if cfg.presence else np.zeros(L)
    g = np.concatenate([phi_v, lam[:, None] * phi_p], axis=1)
    nz = n > 0
    if cfg.sqrt_nt:
        g[nz] = g[nz] / np.sqrt(n[nz])[:, None]
    g[~nz] = 0.0
    return HashedSequence(g=g, n=n)


def collision_fraction(ids: Sequence[str], cfg: HashConfig, stream: str = "val") -> float:
    """1 - (distinct buckets / number of variables) for one stream."""
    if len(ids) < 1:
        raise ValueError("need at least one id")
    buckets = {hash_stream(i, stream, cfg.m) for i in ids}
    return 1.0 - len(buckets) / len(ids)
