"""Synthetic sensor-churn benchmark.

Each variable gets a stable identifier; an MD5 hash of the identifier
fixes its group (how it loads on two AR(1) latent factors) and its
mixing weight, so a variable behaves the same in every window it
appears in.  Windows draw C identifiers from a pool, render values,
drop entries at random (never a whole time step), and optionally carry
one injected anomaly on a contiguous segment.

All randomness of a window is keyed by (seed, split, C, cell, index);
any window can be regenerated in isolation and generation order does
not matter.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, GenerationError
from .sketch import Window, hash_stream, unit_hash

ANOMALY_TYPES = (
    "factor_spike",
    "coupling_change",
    "sparse_spikes",
    "channel_reassignment",
    "lag_copy",
    "regime_switch",
)

PAPER_RATES = (0.01, 0.05, 0.10, 0.20)

PROTOCOLS = {
    "in_dist_C": ((1, 2, 3, 4, 6, 8, 12, 16), (1, 2, 3, 4, 6, 8, 12, 16)),
    "holdout_C": ((1, 2, 4, 8), (3, 6, 12, 16)),
}

_SPLIT_CODE = {"train": 0, "val": 1, "test": 2}
_MAX_TRIES = 100


@dataclass
class GenConfig:
    """Generator settings.

    Magnitudes, noise and set sizes are not given by the benchmark
    description; the defaults here were calibrated once so that the
    directional detection checks hold with some margin, then frozen.
    """

    L: int = 64
    p_miss: float = 0.05
    obs_noise_std: float = 0.3
    regimes: tuple = (0.9, 0.98)
    anomaly_rates: tuple = PAPER_RATES
    seg_frac: tuple = (1 / 8, 1 / 4)
    train_C: Optional[tuple] = None  # None: take from the protocol
    test_C: Optional[tuple] = None
    n_train_per_C: int = 250
    n_val_per_C: int = 50
    val_rate: float = 0.10
    n_test_per_cell: int = 400
    pool_size: int = 1000
    mix_range: tuple = (0.5, 1.5)
    spike_magnitude: float = 6.0  # factor_spike pulse, latent-sigma units
    sparse_spike_sigma: float = 10.0  # sparse_spikes size, in units of the variable's observed std
    n_sparse: int = 3
    lag_frac: float = 0.5
    seed: int = 0
    strict_paper: bool = True

    def __post_init__(self):
        self.regimes = tuple(float(r) for r in self.regimes)
        self.anomaly_rates = tuple(float(r) for r in self.anomaly_rates)
        self.seg_frac = tuple(self.seg_frac)
        self.mix_range = tuple(self.mix_range)
        if self.train_C is not None:
            self.train_C = tuple(int(c) for c in self.train_C)
        if self.test_C is not None:
            self.test_C = tuple(int(c) for c in self.test_C)
        self.validate()

    def validate(self):
        if self.L < 8:
            raise ConfigError(f"L must be >= 8, got {self.L}")
        if not 0 <= self.p_miss < 1:
            raise ConfigError(f"p_miss must be in [0, 1), got {self.p_miss}")
        if self.obs_noise_std < 0:
            raise ConfigError("obs_noise_std must be >= 0")
        if not self.regimes or any(abs(r) >= 1 for r in self.regimes):
            raise ConfigError(f"every regime needs |rho| < 1, got {self.regimes}")
        for r in self.anomaly_rates + (self.val_rate,):
            if not 0 <= r <= 1:
                raise ConfigError(f"anomaly rate {r} outside [0, 1]")
        if self.strict_paper:
            bad = [r for r in self.anomaly_rates if not any(math.isclose(r, a) for a in PAPER_RATES)]
            if bad:
                raise ConfigError(
                    f"anomaly rates {bad} not allowed in strict-paper mode; "
                    f"allowed: {{{', '.join(f'{a:.2f}' for a in PAPER_RATES)}}}"
                )
        lo, hi = self.seg_frac
        if not 0 < lo <= hi < 1:
            raise ConfigError(f"bad segment fraction range {self.seg_frac}")
        for Cs in (self.train_C, self.test_C):
            if Cs is not None and (not Cs or min(Cs) < 1 or max(Cs) > self.pool_size):
                raise ConfigError(f"cardinalities {Cs} must lie in [1, pool_size]")

    def cardinalities(self, protocol: str):
        if protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {protocol!r}; choose from {sorted(PROTOCOLS)}")
        tr, te = PROTOCOLS[protocol]
        return self.train_C or tr, self.test_C or te

    def segment_bounds(self):
        lo = max(1, math.ceil(self.seg_frac[0] * self.L))
        hi = max(lo, math.floor(self.seg_frac[1] * self.L))
        return lo, hi


@dataclass
class LabeledDataset:
    protocol: str
    cfg: GenConfig
    train: list
    val: list
    test: dict  # (C, rate) -> list of Window
    train_pool: str = "trn"
    test_pool: str = "tst"

    def test_cells(self):
        return sorted(self.test)

    def all_windows(self):
        yield from self.train
        yield from self.val
        for key in self.test_cells():
            yield from self.test[key]


# ---------------------------------------------------------------------------
# components


def assign_group(id: str) -> int:
    """0: +factor 1, 1: -factor 1, 2: factor 2, 3: noise only."""
    return hash_stream(id, "group", 4)


def mixing_weight(id: str, cfg: GenConfig) -> float:
    lo, hi = cfg.mix_range
    return lo + (hi - lo) * unit_hash(id, "mix")


def _ar1(innov: np.ndarray, rho: float, start: np.ndarray = None, t0: int = 0) -> np.ndarray:
    """Unit-variance AR(1) driven by standard-normal innovations."""
    z = np.empty_like(innov)
    a = math.sqrt(1.0 - rho * rho)
    z[0] = innov[0] if start is None else rho * start + a * innov[0]
    for t in range(1, len(innov)):
        z[t] = rho * z[t - 1] + a * innov[t]
    return z


def sample_latents(rho: float, L: int, rng: np.random.Generator) -> np.ndarray:
    """Two independent stationary AR(1) chains, shape (L, 2), variance 1."""
    if abs(rho) >= 1:
        raise ConfigError(f"|rho| must be < 1, got {rho}")
    return _ar1(rng.standard_normal((L, 2)), rho)


def _loadings(groups: np.ndarray, latents: np.ndarray) -> np.ndarray:
    """Per-variable factor signal f(group, z) of shape (L, C)."""
    L = latents.shape[0]
    out = np.zeros((L, len(groups)))
    out[:, groups == 0] = latents[:, [0]]
    out[:, groups == 1] = -latents[:, [0]]
    out[:, groups == 2] = latents[:, [1]]
    return out


def render_window(ids, latents, rng: np.random.Generator, cfg: GenConfig, noise=None) -> np.ndarray:
    """X[t, j] = w_j * f(group_j, z_t) + noise."""
    groups = np.array([assign_group(i) for i in ids])
    weights = np.array([mixing_weight(i, cfg) for i in ids])
    if noise is None:
        noise = cfg.obs_noise_std * rng.standard_normal((latents.shape[0], len(ids)))
    return weights * _loadings(groups, latents) + noise


def apply_missingness(X: np.ndarray, p_miss: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(1 - p_miss) mask; empty rows get one random entry forced on."""
    if not 0 <= p_miss < 1:
        raise ConfigError(f"p_miss must be in [0, 1), got {p_miss}")
    L, C = X.shape
    M = (rng.random((L, C)) >= p_miss).astype(np.uint8)
    empty = np.flatnonzero(M.sum(axis=1) == 0)
    if len(empty):
        M[empty, rng.integers(0, C, size=len(empty))] = 1
    return M


# ---------------------------------------------------------------------------
# anomalies


@dataclass
class Draft:
    """Everything needed to re-render a window after perturbing a piece of it."""

    ids: tuple
    groups: np.ndarray
    weights: np.ndarray
    rho: float
    innov: np.ndarray
    latents: np.ndarray
    noise: np.ndarray
    M: np.ndarray

    @property
    def X(self) -> np.ndarray:
        return self.weights * _loadings(self.groups, self.latents) + self.noise

    def window(self, X=None, **kw) -> Window:
        X = self.X if X is None else X
        return Window(ids=self.ids, X=np.where(self.M > 0, X, 0.0), M=self.M, **kw)


def _coupled_factors(groups):
    f = []
    if np.any((groups == 0) | (groups == 1)):
        f.append(0)
    if np.any(groups == 2):
        f.append(1)
    return f


def composition_ok(groups: np.ndarray, atype: str) -> bool:
    if atype in ("factor_spike", "coupling_change", "regime_switch"):
        return bool(np.any(groups != 3))
    if atype == "channel_reassignment":
        return len(set(groups[groups != 3].tolist())) >= 2
    return True


def feasible_types(C: int):
    return tuple(t for t in ANOMALY_TYPES if not (t == "channel_reassignment" and C < 2))


def _segment(rng, cfg: GenConfig, min_start: int = 0):
    lo, hi = cfg.segment_bounds()
    length = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(min_start, cfg.L - length + 1))
    return start, start + length


def inject_anomaly(draft: Draft, atype: str, rng: np.random.Generator, cfg: GenConfig) -> Window:
    """Apply one anomaly of type ``atype`` to a contiguous segment.

    The returned window is labeled anomalous and carries the segment in
    ``meta``.  Raises GenerationError when the composition cannot host
    the type or no observed entry changes.
    """
    if atype not in ANOMALY_TYPES:
        raise ConfigError(f"unknown anomaly type {atype!r}")
    if not composition_ok(draft.groups, atype):
        raise GenerationError(f"{atype} needs other variable groups than present (C={len(draft.ids)})")
    X0 = draft.X
    L, C = X0.shape

    if atype == "factor_spike":
        s, e = _segment(rng, cfg)
        k = int(rng.choice(_coupled_factors(draft.groups)))
        lat = draft.latents.copy()
        # the pulse pushes the factor away from zero: an excursion, not a reversal
        sign = 1.0 if lat[s:e, k].mean() >= 0 else -1.0
        lat[s:e, k] += cfg.spike_magnitude * sign
        X = draft.weights * _loadings(draft.groups, lat) + draft.noise
    elif atype == "coupling_change":
        s, e = _segment(rng, cfg)
        j = int(rng.choice(np.flatnonzero(draft.groups != 3)))
        X = X0.copy()
        X[s:e, j] -= 2.0 * draft.weights[j] * _loadings(draft.groups[[j]], draft.latents[s:e])[:, 0]
    elif atype == "sparse_spikes":
        s, e = _segment(rng, cfg)
        tt, jj = np.nonzero(draft.M[s:e])
        pick = rng.choice(len(tt), size=min(cfg.n_sparse, len(tt)), replace=False)
        X = X0.copy()
        # observed std of a variable: sqrt(w^2 + noise^2) for coupled, noise std otherwise
        sd = np.sqrt((draft.groups != 3) * draft.weights**2 + cfg.obs_noise_std**2)
        mag = cfg.sparse_spike_sigma * sd[jj[pick]]
        X[tt[pick] + s, jj[pick]] += mag * rng.choice([-1.0, 1.0], size=len(pick))
    elif atype == "channel_reassignment":
        s, e = _segment(rng, cfg)
        coupled = np.flatnonzero(draft.groups != 3)
        j1 = int(rng.choice(coupled))
        others = coupled[draft.groups[coupled] != draft.groups[j1]]
        j2 = int(rng.choice(others))
        g = draft.groups.copy()
        g[j1], g[j2] = g[j2], g[j1]
        X = X0.copy()
        X[s:e] = (draft.weights * _loadings(g, draft.latents[s:e]) + draft.noise[s:e])
    elif atype == "lag_copy":
        shift = max(1, int(round(cfg.lag_frac * L)))
        s, e = _segment(rng, cfg, min_start=shift)
        X = X0.copy()
        X[s:e] = X0[s - shift : e - shift]
    else:  # regime_switch
        s, _ = _segment(rng, cfg)
        e = L
        choices = [r for r in cfg.regimes if r != draft.rho]
        if not choices:
            raise GenerationError("regime_switch needs at least two regimes")
        rho2 = float(rng.choice(choices))
        lat = draft.latents.copy()
        start = lat[s - 1] if s > 0 else None
        lat[s:] = _ar1(draft.innov[s:], rho2, start=start)
        X = draft.weights * _loadings(draft.groups, lat) + draft.noise

    changed = np.abs(X - X0)[draft.M > 0]
    if not np.any(changed > 1e-9):
        raise GenerationError(f"{atype} produced no observable change (C={C})")
    return draft.window(X, label=1, anomaly_type=atype, meta={"segment": (s, e)})


# ---------------------------------------------------------------------------
# windows and datasets


def window_rng(seed: int, split: str, C: int, cell: int, index: int, tag: int = 1) -> np.random.Generator:
    return np.random.default_rng([int(seed) & (2**64 - 1), _SPLIT_CODE[split], C, cell, tag, index])


def _draft(ids, rng, cfg: GenConfig) -> Draft:
    groups = np.array([assign_group(i) for i in ids])
    weights = np.array([mixing_weight(i, cfg) for i in ids])
    rho = float(rng.choice(cfg.regimes))
    innov = rng.standard_normal((cfg.L, 2))
    latents = _ar1(innov, rho)
    noise = cfg.obs_noise_std * rng.standard_normal((cfg.L, len(ids)))
    M = apply_missingness(noise, cfg.p_miss, rng)
    return Draft(tuple(ids), groups, weights, rho, innov, latents, noise, M)


def make_window(
    cfg: GenConfig, split: str, C: int, cell: int, index: int, anomalous: bool, pool: str
) -> Window:
    """Generate one window from its key alone."""
    rng = window_rng(cfg.seed, split, C, cell, index)
    atype = str(rng.choice(feasible_types(C))) if anomalous else None
    for _ in range(_MAX_TRIES):
        picks = rng.choice(cfg.pool_size, size=C, replace=False)
        ids = [f"{pool}_{i}" for i in sorted(picks)]
        draft = _draft(ids, rng, cfg)
        if not anomalous:
            w = draft.window()
            break
        if not composition_ok(draft.groups, atype):
            continue
        try:
            w = inject_anomaly(draft, atype, rng, cfg)
            break
        except GenerationError:
            continue
    else:
        raise GenerationError(f"could not place a {atype} anomaly at C={C} after {_MAX_TRIES} tries")
    w.meta.update(split=split, C=C, cell=cell, index=index)
    return w


def _labels(cfg: GenConfig, split: str, C: int, cell: int, n: int, rate: float) -> np.ndarray:
    n_anom = int(round(rate * n))
    rng = window_rng(cfg.seed, split, C, cell, 0, tag=0)
    lab = np.zeros(n, dtype=bool)
    lab[rng.permutation(n)[:n_anom]] = True
    return lab


def _generate(jobs, threads: int):
    def run(job):
        return make_window(*job)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(run, jobs))
    return [run(j) for j in jobs]


def build_dataset(protocol: str, cfg: GenConfig, threads: int = 1, splits=("train", "val", "test")) -> LabeledDataset:
    """Train (normal only), validation and per-(C, rate) test windows."""
    train_C, test_C = cfg.cardinalities(protocol)
    jobs = {"train": [], "val": [], "test": []}
    if "train" in splits:
        for C in train_C:
            jobs["train"] += [(cfg, "train", C, 0, i, False, "trn") for i in range(cfg.n_train_per_C)]
    if "val" in splits:
        for C in train_C:
            lab = _labels(cfg, "val", C, 0, cfg.n_val_per_C, cfg.val_rate)
            jobs["val"] += [(cfg, "val", C, 0, i, bool(a), "trn") for i, a in enumerate(lab)]
    cells = []
    if "test" in splits:
        for C in test_C:
            for ri, rate in enumerate(cfg.anomaly_rates):
                lab = _labels(cfg, "test", C, ri + 1, cfg.n_test_per_cell, rate)
                cells.append(((C, rate), len(jobs["test"]), len(lab)))
                jobs["test"] += [(cfg, "test", C, ri + 1, i, bool(a), "tst") for i, a in enumerate(lab)]

    out = {k: _generate(v, threads) for k, v in jobs.items()}
    test = {}
    for key, start, n in cells:
        test[key] = out["test"][start : start + n]
        for w in test[key]:
            w.meta["rate"] = key[1]
    for k in ("train", "val"):
        for w in out[k]:
            w.meta["rate"] = cfg.val_rate if k == "val" else 0.0
    for w in out["train"] + out["val"] + out["test"]:
        w.meta["window_id"] = window_id(w)
    return LabeledDataset(protocol, cfg, out["train"], out["val"], test)


def window_id(w: Window) -> str:
    m = w.meta
    return f"{m['split']}-C{m['C']}-c{m['cell']}-{m['index']:05d}"
