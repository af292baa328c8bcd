"""Hybrid kernel images and their scaled-down variants.

From a hashed sequence ``g`` (L x d) we derive ``g``, its first
difference ``dg`` and ``|dg|``; each yields a cosine channel and a
robust log-distance channel.  The stacked six channels form the full
image; the other variants prune channels, reduce d or L before the
pairwise step, or keep only a band of lags / a set of anchor columns so
that the kernel cost is linear in L.

Array helpers accept a leading batch axis: ``z`` may be (L, d) or
(N, L, d).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numba
import numpy as np

from .errors import ConfigError
from .sketch import HashedSequence

EPS = 1e-12

CHANNELS = ("cos_g", "cos_dg", "cos_adg", "log_g", "log_dg", "log_adg")

CHANNEL_SETS = {
    "full6": CHANNELS,
    "log3": ("log_g", "log_dg", "log_adg"),
    "cos3": ("cos_g", "cos_dg", "cos_adg"),
    "base2": ("cos_g", "log_g"),
    "no_delta": ("cos_g", "cos_adg", "log_g", "log_adg"),
    "no_absdelta": ("cos_g", "cos_dg", "log_g", "log_dg"),
    "no_deltas_and_absdeltas": ("cos_g", "log_g"),
}

# the eleven scaling variants, strongest first as they appear in the benchmark table
TABLE1_VARIANTS = (
    "log3+bandfeat8",
    "log3+bandfeat4",
    "log3",
    "full6+proj128",
    "full6",
    "full6+proj64",
    "log3+anchor16",
    "log3+anchor8",
    "base2",
    "full6+down16",
    "seq",
)


@dataclass(frozen=True)
class RepVariant:
    kind: str = "img"  # img | band | anchor | seq
    channels: tuple = CHANNELS
    proj_dim: Optional[int] = None
    down_len: Optional[int] = None
    w: Optional[int] = None
    r: Optional[int] = None
    proj_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("img", "band", "anchor", "seq"):
            raise ConfigError(f"unknown representation kind {self.kind!r}")
        bad = set(self.channels) - set(CHANNELS)
        if bad:
            raise ConfigError(f"unknown channels {sorted(bad)}")
        for p in ("proj_dim", "down_len", "w", "r"):
            v = getattr(self, p)
            if v is not None and v < 1:
                raise ConfigError(f"{p} must be positive, got {v}")
        if self.kind == "band" and self.w is None:
            raise ConfigError("band variant needs w")
        if self.kind == "anchor" and self.r is None:
            raise ConfigError("anchor variant needs r")

    @property
    def name(self) -> str:
        if self.kind == "seq":
            return "seq"
        base = next((k for k, v in CHANNEL_SETS.items() if v == self.channels), None)
        if base is None:
            base = "[" + ",".join(self.channels) + "]"
        if self.kind == "band":
            return f"{base}+bandfeat{self.w}"
        if self.kind == "anchor":
            return f"{base}+anchor{self.r}"
        if self.proj_dim is not None:
            base += f"+proj{self.proj_dim}"
        if self.down_len is not None:
            base += f"+down{self.down_len}"
        return base

    def __str__(self):
        return self.name


_MOD = re.compile(r"^(proj|down|bandfeat|band|anchor)(\d+)$")


def parse_variant(text: str) -> RepVariant:
    """Parse names like ``full6``, ``log3+bandfeat8``, ``proj64``, ``seq``.

    A bare modifier gets the default channel set of the benchmark table:
    full6 for proj/down, log3 for bandfeat/anchor.
    """
    text = text.strip()
    if text == "seq":
        return RepVariant(kind="seq", channels=())
    parts = text.split("+")
    if parts[0] in CHANNEL_SETS:
        channels, mods = CHANNEL_SETS[parts[0]], parts[1:]
    else:
        channels, mods = None, parts
    kw = {}
    kind = "img"
    for mod in mods:
        mt = _MOD.match(mod)
        if not mt:
            raise ConfigError(f"cannot parse variant {text!r} (bad part {mod!r})")
        key, val = mt.group(1), int(mt.group(2))
        if key == "proj":
            kw["proj_dim"] = val
        elif key == "down":
            kw["down_len"] = val
        elif key in ("band", "bandfeat"):
            kind, kw["w"] = "band", val
        else:
            kind, kw["r"] = "anchor", val
    if channels is None:
        if not mods:
            raise ConfigError(f"unknown variant {text!r}")
        channels = CHANNEL_SETS["log3"] if kind in ("band", "anchor") else CHANNELS
    return RepVariant(kind=kind, channels=channels, **kw)


@dataclass
class Representation:
    variant: RepVariant
    tensor: np.ndarray
    tau: float
    include_tau: bool = False

    @property
    def features(self) -> np.ndarray:
        f = self.tensor.reshape(-1)
        if self.include_tau:
            f = np.append(f, self.tau)
        return f


# ---------------------------------------------------------------------------
# primitives


def first_difference(g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    out = np.zeros_like(g)
    out[..., 1:, :] = g[..., 1:, :] - g[..., :-1, :]
    return out


def _T(a):
    return np.swapaxes(a, -1, -2)


def _unit_rows(z):
    nrm = np.linalg.norm(z, axis=-1, keepdims=True)
    ok = nrm >= EPS
    zn = np.where(ok, z / np.where(ok, nrm, 1.0), 0.0)
    return zn, ok[..., 0]


def _diag(a):
    return np.diagonal(a, axis1=-2, axis2=-1)


def gram(z: np.ndarray) -> np.ndarray:
    """Exactly symmetric Gram matrix of the rows of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    G = z @ _T(z)
    G += _T(G)
    G *= 0.5
    return G


def _cos_from_gram(G):
    nrm = np.sqrt(_diag(G))
    ok = nrm >= EPS
    inv = np.where(ok, 1.0 / np.where(ok, nrm, 1.0), 0.0)
    c = G * (inv[..., :, None] * inv[..., None, :])
    np.clip(c, -1.0, 1.0, out=c)
    idx = np.arange(G.shape[-1])
    c[..., idx, idx] = np.where(ok, 1.0, 0.0)
    c += 1.0
    c *= 0.5
    return c


def _sq_from_gram(G):
    nn = _diag(G)
    D = nn[..., :, None] + nn[..., None, :]
    D -= 2.0 * G
    np.maximum(D, 0.0, out=D)
    idx = np.arange(G.shape[-1])
    D[..., idx, idx] = 0.0
    return D


def cos_kernel(z: np.ndarray) -> np.ndarray:
    """0.5 * (1 + cosine) between all pairs of rows.

    Rows with norm below ``EPS`` have raw cosine 0 with everything,
    themselves included.
    """
    return _cos_from_gram(gram(z))


def pairwise_sq_dists(z: np.ndarray) -> np.ndarray:
    """Exactly symmetric matrix of squared Euclidean row distances."""
    return _sq_from_gram(gram(z))


@lru_cache(maxsize=8)
def _upper(L: int):
    """Row, column and flat indices of the strict upper triangle."""
    iu, ju = np.triu_indices(L, k=1)
    return iu, ju, iu * L + ju


def _median_sqrt(v):
    """Median of sqrt(v) along the last axis.

    sqrt is monotone, so the central order statistics are selected on v;
    for an even count the lower one is the max of the lower partition.
    """
    n = v.shape[-1]
    k = n // 2
    part = np.partition(v, k, axis=-1)
    hi = np.sqrt(part[..., k])
    if n % 2:
        return hi
    return 0.5 * (np.sqrt(part[..., :k].max(axis=-1)) + hi)


def _median_upper(D):
    """Median of sqrt(D) over i < j, floored at ``EPS``."""
    L = D.shape[-1]
    v = D.reshape(D.shape[:-2] + (L * L,))[..., _upper(L)[2]]
    return np.maximum(_median_sqrt(v), EPS)


def robust_bandwidth(z: np.ndarray):
    """Median of the L(L-1)/2 pairwise row distances, floored at ``EPS``."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-2] < 2:
        raise ValueError("bandwidth undefined for fewer than 2 rows")
    return _median_upper(pairwise_sq_dists(z))


def compact_columns(z: np.ndarray) -> np.ndarray:
    """Move each slice's nonzero columns to the front and drop the rest.

    A hashed sequence of C variables touches at most 2C of its d
    columns.  Slices are zero-padded to a common width; zero columns
    change no dot product, norm or distance between rows.
    """
    z = np.asarray(z, dtype=np.float64)
    L, d = z.shape[-2:]
    flat = z.reshape(-1, L, d)
    used = np.any(flat != 0.0, axis=-2)  # (n, d)
    k = max(1, int(used.sum(axis=-1).max()))
    cols = np.argsort(~used, axis=-1, kind="stable")[:, :k]
    keep = np.take_along_axis(used, cols, axis=-1)
    zc = np.take_along_axis(flat, cols[:, None, :], axis=-1) * keep[:, None, :]
    return zc.reshape(z.shape[:-1] + (k,))


@numba.njit(cache=True, nogil=True)
def _upper_sq_dists(zc, nn, out):
    """Squared distances of all row pairs i < j, row-major, clipped at 0."""
    n, L, k = zc.shape
    for b in range(n):
        p = 0
        for i in range(L):
            for j in range(i + 1, L):
                s = 0.0
                for c in range(k):
                    s += zc[b, i, c] * zc[b, j, c]
                d = nn[b, i] + nn[b, j] - 2.0 * s
                out[b, p] = d if d > 0.0 else 0.0
                p += 1


def support_bandwidth(z: np.ndarray):
    """``robust_bandwidth`` computed on each slice's nonzero columns.

    The pair distances behind the exact median then cost L^2 * 2C
    instead of L^2 * d, and no L x L matrix is formed: the distances go
    straight into the buffer the median is selected from.
    """
    z = np.asarray(z, dtype=np.float64)
    L = z.shape[-2]
    if L < 2:
        raise ValueError("bandwidth undefined for fewer than 2 rows")
    zc = compact_columns(z)
    zc = np.ascontiguousarray(zc.reshape((-1,) + zc.shape[-2:]))
    nn = np.einsum("ntk,ntk->nt", zc, zc)
    v = np.empty((zc.shape[0], L * (L - 1) // 2))
    _upper_sq_dists(zc, nn, v)
    out = np.maximum(_median_sqrt(v), EPS)
    return out.reshape(z.shape[:-2]) if z.ndim > 2 else out[0]


def logdist_kernel(z: np.ndarray, sigma) -> np.ndarray:
    """log1p(||z_i - z_j||^2 / (2 sigma^2))."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    D = pairwise_sq_dists(z)
    D /= 2.0 * sigma[..., None, None] ** 2
    return np.log1p(D, out=D)


def scale_token(g: np.ndarray):
    return np.tanh(np.log(robust_bandwidth(g)))


# ---------------------------------------------------------------------------
# variants


@lru_cache(maxsize=16)
def _seq_projection(d_in: int, d_out: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.standard_normal((d_in, d_out)) / np.sqrt(d_out)


def _mean_pool_time(g, L_out):
    L = g.shape[-2]
    starts = (np.arange(L_out) * L) // L_out
    counts = np.diff(np.append(starts, L))
    return np.add.reduceat(g, starts, axis=-2) / counts[:, None]


def _derived(g, channels):
    needed = {c.split("_", 1)[1] for c in channels}
    seqs = {"g": g}
    if needed & {"dg", "adg"}:
        dg = first_difference(g)
        seqs["dg"] = dg
        seqs["adg"] = np.abs(dg)
    return seqs


def _check(variant: RepVariant, L: int, d: int):
    if variant.kind == "band" and not variant.w < L:
        raise ConfigError(f"band width w={variant.w} must be < L={L}")
    if variant.kind == "anchor" and not variant.r <= L:
        raise ConfigError(f"anchor count r={variant.r} must be <= L={L}")
    if variant.down_len is not None and variant.down_len > L:
        raise ConfigError(f"down length {variant.down_len} exceeds L={L}")
    if variant.proj_dim is not None and variant.proj_dim > d:
        raise ConfigError(f"projection dim {variant.proj_dim} exceeds 2m={d}")
    if variant.kind != "seq" and L < 2:
        raise ConfigError("kernel variants need L >= 2")


def _image_channels(z_by_name, channels):
    out = []
    grams, sq = {}, {}
    for ch in channels:
        fam, src = ch.split("_", 1)
        if src not in grams:
            grams[src] = gram(z_by_name[src])
        if fam == "cos":
            out.append(_cos_from_gram(grams[src]))
        else:
            if src not in sq:
                D = _sq_from_gram(grams[src])
                sq[src] = (D, _median_upper(D))
            D, sigma = sq[src]
            K = D / (2.0 * sigma[..., None, None] ** 2)
            out.append(np.log1p(K, out=K))
    return np.stack(out, axis=-3)


def _row_sq_norms(z):
    return np.einsum("...td,...td->...t", z, z)


def _band_channels(z_by_name, channels, w):
    """(K, w, L) lag features; entry (c, l-1, t) pairs t with t+l."""
    out = []
    cache = {}
    any_z = next(iter(z_by_name.values()))
    L = any_z.shape[-2]
    lead = any_z.shape[:-2]
    for ch in channels:
        fam, src = ch.split("_", 1)
        z = z_by_name[src]
        band = np.zeros(lead + (w, L))
        if fam == "cos":
            zn, ok = _unit_rows(z)
            for lag in range(1, w + 1):
                dot = np.einsum("...td,...td->...t", zn[..., :-lag, :], zn[..., lag:, :])
                band[..., lag - 1, : L - lag] = 0.5 * (1.0 + np.clip(dot, -1.0, 1.0))
        else:
            if src not in cache:
                # the bandwidth is the only all-pairs quantity a band needs
                cache[src] = (_row_sq_norms(z), support_bandwidth(z))
            nn, sigma = cache[src]
            denom = 2.0 * np.asarray(sigma)[..., None] ** 2
            for lag in range(1, w + 1):
                dot = np.einsum("...td,...td->...t", z[..., :-lag, :], z[..., lag:, :])
                D = np.maximum(nn[..., :-lag] + nn[..., lag:] - 2.0 * dot, 0.0)
                band[..., lag - 1, : L - lag] = np.log1p(D / denom)
        out.append(band)
    return np.stack(out, axis=-3)


def anchor_indices(L: int, r: int) -> np.ndarray:
    return (np.arange(r) * L) // r


def _anchor_channels(z_by_name, channels, r):
    """(K, L, r) time-to-anchor features."""
    out = []
    cache = {}
    any_z = next(iter(z_by_name.values()))
    L = any_z.shape[-2]
    anchors = anchor_indices(L, r)
    is_self = np.arange(L)[:, None] == anchors[None, :]
    for ch in channels:
        fam, src = ch.split("_", 1)
        z = z_by_name[src]
        if fam == "cos":
            zn, ok = _unit_rows(z)
            c = np.clip(zn @ _T(zn[..., anchors, :]), -1.0, 1.0)
            c = np.where(is_self, np.where(ok, 1.0, 0.0)[..., :, None], c)
            out.append(0.5 * (1.0 + c))
        else:
            if src not in cache:
                cache[src] = (_row_sq_norms(z), support_bandwidth(z))
            nn, sigma = cache[src]
            G = z @ _T(z[..., anchors, :])
            D = np.maximum(nn[..., :, None] + nn[..., None, anchors] - 2.0 * G, 0.0)
            D = np.where(is_self, 0.0, D)
            out.append(np.log1p(D / (2.0 * np.asarray(sigma)[..., None, None] ** 2)))
    return np.stack(out, axis=-3)


def build_tensor(g: np.ndarray, variant: RepVariant) -> np.ndarray:
    """Variant tensor for one (L, d) sequence or a batch (N, L, d)."""
    g = np.asarray(g, dtype=np.float64)
    L, d = g.shape[-2], g.shape[-1]
    _check(variant, L, d)
    if variant.kind == "seq":
        return g.copy()
    z = g
    if variant.proj_dim is not None:
        z = z @ _seq_projection(d, variant.proj_dim, variant.proj_seed)
    if variant.down_len is not None:
        z = _mean_pool_time(z, variant.down_len)
    if variant.kind in ("band", "anchor"):
        # linear-in-L maps only ever touch the occupied columns
        z = compact_columns(z)
    seqs = _derived(z, variant.channels)
    if variant.kind == "band":
        return _band_channels(seqs, variant.channels, variant.w)
    if variant.kind == "anchor":
        return _anchor_channels(seqs, variant.channels, variant.r)
    return _image_channels(seqs, variant.channels)


def feature_dim(variant: RepVariant, L: int, m: int) -> int:
    if variant.kind == "seq":
        return L * 2 * m
    K = len(variant.channels)
    if variant.kind == "band":
        return K * variant.w * L
    if variant.kind == "anchor":
        return K * L * variant.r
    Lp = variant.down_len or L
    return K * Lp * Lp


def build_representation(hs: HashedSequence, variant: RepVariant, include_tau: bool = False) -> Representation:
    tensor = build_tensor(hs.g, variant)
    return Representation(variant, tensor, float(scale_token(hs.g)), include_tau)


def band_features(hs: HashedSequence, w: int, channels: Sequence[str] = CHANNEL_SETS["log3"]) -> Representation:
    return build_representation(hs, RepVariant(kind="band", channels=tuple(channels), w=w))


def anchor_features(hs: HashedSequence, r: int, channels: Sequence[str] = CHANNEL_SETS["log3"]) -> Representation:
    return build_representation(hs, RepVariant(kind="anchor", channels=tuple(channels), r=r))


def batch_features(gs: np.ndarray, variant: RepVariant, include_tau: bool = False, chunk: int = 16) -> np.ndarray:
    """Flattened features for a stack of sequences (N, L, d) -> (N, D).

    Windows are processed ``chunk`` at a time so intermediate arrays stay
    cache-sized; the result does not depend on ``chunk``.
    """
    gs = np.asarray(gs, dtype=np.float64)
    N, L, d = gs.shape
    _check(variant, L, d)
    f = np.empty((N, feature_dim(variant, L, d // 2)))
    for a in range(0, N, chunk):
        f[a : a + chunk] = build_tensor(gs[a : a + chunk], variant).reshape(-1, f.shape[1])
    if include_tau:
        f = np.concatenate([f, scale_token(gs)[:, None]], axis=1)
    return f


def complexity_proxy(variant: RepVariant, L: int, d: int) -> float:
    """Analytical kernel cost relative to the six-channel L x L image."""
    full = 6.0 * L * L * d
    if variant.kind == "seq":
        return L * d / full
    K = len(variant.channels)
    d_eff = variant.proj_dim or d
    if variant.kind == "band":
        return K * L * variant.w * d_eff / full
    if variant.kind == "anchor":
        return K * L * variant.r * d_eff / full
    Lp = variant.down_len or L
    return K * Lp * Lp * d_eff / full
