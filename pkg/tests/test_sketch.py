import hashlib
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smkc.sketch import (
    STREAM_SUFFIX,
    HashConfig,
    Window,
    assemble_g,
    build_hashed_sequence,
    collision_fraction,
    hash_stream,
    saturation,
    sign_of,
    sketch_step,
    unit_hash,
)

# digests produced with coreutils: printf '%s' KEY | md5sum
GOLDEN_MD5 = {
    "trn_0#val": "d2b40ccfa72cc591f3487e71655b55b1",
    "trn_0#val_sign": "6dea08f5d64dc74b4bbdac3052a74439",
    "trn_0#pres": "191faf7dc76aa2a457c7a138c09dd618",
    "trn_0#group": "df8e9285ba181a305b77eee017286dc7",
    "trn_0#mix": "bfe8c1ddcf7b219bbe71114a4a5e6a51",
    "tst_7#val": "98270551f9a6598f8a7df2b18976ae98",
    "sensor_a#val": "998d4ba1961544941f9b0b3238e6c6c6",
    "sensor_a#val_sign": "2df8e327e7bc0f14437bccd03ed6ef1d",
    "sensor_b#pres_sign": "4dd35ee65b73b676db131c6040520b09",
}


def _split(key):
    ident, suffix = key.split("#")
    stream = {v: k for k, v in STREAM_SUFFIX.items()}["#" + suffix]
    return ident, stream


@pytest.mark.parametrize("key,hexdigest", sorted(GOLDEN_MD5.items()))
@pytest.mark.parametrize("m", [2, 32, 128, 512, 1000])
def test_hash_stream_matches_external_md5(key, hexdigest, m):
    ident, stream = _split(key)
    assert hash_stream(ident, stream, m) == int(hexdigest, 16) % m


def test_golden_bucket_values():
    assert hash_stream("trn_0", "val", 128) == int("d2b40ccfa72cc591f3487e71655b55b1", 16) % 128
    assert sign_of("sensor_a", "val") == (1 if int(GOLDEN_MD5["sensor_a#val_sign"], 16) % 2 == 0 else -1)
    assert unit_hash("trn_0", "mix") == int(GOLDEN_MD5["trn_0#mix"], 16) / 2.0**128


def test_hash_stream_rejects_bad_modulus():
    with pytest.raises(ValueError):
        hash_stream("a", "val", 0)


@given(st.text(min_size=1, max_size=20))
def test_signs_are_plus_minus_one(ident):
    assert sign_of(ident, "val") in (-1, 1)
    assert sign_of(ident, "pres") in (-1, 1)
    assert 0.0 <= unit_hash(ident, "mix") < 1.0


def test_saturation():
    cfg = HashConfig(a_pres=0.2)
    np.testing.assert_allclose(saturation([0, 1, 5, 10], cfg), [0, 0.2, 1.0, 1.0])
    lin = HashConfig(a_pres=0.2, saturate=False)
    np.testing.assert_allclose(saturation([10], lin), [2.0])
    assert cfg.n_sat == pytest.approx(5.0)


def test_empty_step_is_zero():
    cfg = HashConfig(m=8)
    phi_v, phi_p, n = sketch_step([1.0, 2.0], [0, 0], ["a", "b"], cfg)
    assert n == 0
    assert np.all(assemble_g(phi_v, phi_p, n, cfg) == 0)


def test_single_variable_step():
    cfg = HashConfig(m=16)
    phi_v, phi_p, n = sketch_step([2.0], [1], ["x"], cfg)
    g = assemble_g(phi_v, phi_p, n, cfg)
    hv, hp = hash_stream("x", "val", 16), hash_stream("x", "pres", 16)
    assert g[hv] == pytest.approx(2.0 * sign_of("x", "val"))
    assert g[16 + hp] == pytest.approx(0.2 * sign_of("x", "pres"))
    assert np.count_nonzero(g) == 2


def scalar_oracle(ids, X, M, m, a_pres=0.2):
    """Direct per-entry implementation from hashlib, no shared code."""

    def h(key):
        return int.from_bytes(hashlib.md5(key.encode()).digest(), "big")

    L, C = len(X), len(ids)
    out = []
    for t in range(L):
        gv = [0.0] * m
        gp = [0.0] * m
        n = 0
        for j in sorted(range(C), key=lambda k: ids[k]):
            if not M[t][j]:
                continue
            n += 1
            sv = 1.0 if h(ids[j] + "#val_sign") % 2 == 0 else -1.0
            sp = 1.0 if h(ids[j] + "#pres_sign") % 2 == 0 else -1.0
            gv[h(ids[j] + "#val") % m] += sv * X[t][j]
            gp[h(ids[j] + "#pres") % m] += sp
        if n == 0:
            out.append([0.0] * (2 * m))
            continue
        lam = min(a_pres * n, 1.0)
        s = 1.0 / math.sqrt(n)
        out.append([v * s for v in gv] + [lam * p * s for p in gp])
    return np.array(out)


def _window(seed, L=6, C=5, p=0.3):
    rng = np.random.default_rng(seed)
    ids = [f"var_{i}" for i in rng.choice(50, size=C, replace=False)]
    M = (rng.random((L, C)) > p).astype(np.uint8)
    X = rng.standard_normal((L, C)) * M
    return Window(ids, X, M)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("m", [4, 16, 128])
def test_hashed_sequence_matches_scalar_oracle(seed, m):
    w = _window(seed)
    hs = build_hashed_sequence(w, HashConfig(m=m))
    expect = scalar_oracle(w.ids, w.X.tolist(), w.M.tolist(), m)
    np.testing.assert_allclose(hs.g, expect, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(hs.n, w.M.sum(axis=1))


def test_hashed_sequence_matches_step_function():
    w = _window(11)
    cfg = HashConfig(m=32)
    hs = build_hashed_sequence(w, cfg)
    for t in range(w.L):
        g_t = assemble_g(*sketch_step(w.X[t], w.M[t], w.ids, cfg), cfg)
        np.testing.assert_allclose(hs.g[t], g_t, atol=1e-12)


@given(st.integers(0, 10_000), st.randoms(use_true_random=False))
def test_permutation_invariance_is_bitwise(seed, rnd):
    w = _window(seed, L=5, C=6)
    order = list(range(w.C))
    rnd.shuffle(order)
    a = build_hashed_sequence(w, HashConfig(m=16))
    b = build_hashed_sequence(w.permuted(order), HashConfig(m=16))
    assert np.array_equal(a.g, b.g)
    assert np.array_equal(a.n, b.n)


@given(st.integers(0, 10_000))
def test_unobserved_values_are_ignored(seed):
    w = _window(seed)
    junk = np.where(w.M > 0, w.X, 1e6)
    w2 = Window(w.ids, junk, w.M)
    cfg = HashConfig(m=16)
    assert np.array_equal(build_hashed_sequence(w, cfg).g, build_hashed_sequence(w2, cfg).g)


def test_ablation_flags():
    w = _window(3)
    base = build_hashed_sequence(w, HashConfig(m=16)).g
    nop = build_hashed_sequence(w, HashConfig(m=16, presence=False)).g
    assert nop.shape == base.shape
    assert np.all(nop[:, 16:] == 0)
    np.testing.assert_allclose(nop[:, :16], base[:, :16])
    raw = build_hashed_sequence(w, HashConfig(m=16, sqrt_nt=False)).g
    n = w.M.sum(axis=1)
    nz = n > 0
    np.testing.assert_allclose(raw[nz] / np.sqrt(n[nz])[:, None], base[nz], atol=1e-12)


def test_window_validation():
    with pytest.raises(ValueError):
        Window(["a", "a"], np.zeros((3, 2)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        Window(["a"], np.zeros((3, 2)), np.ones((3, 2)))


def test_collision_fraction():
    cfg = HashConfig(m=1)
    assert collision_fraction(["a", "b", "c", "d"], cfg) == pytest.approx(0.75)
    assert collision_fraction(["a"], HashConfig(m=128)) == 0.0
    ids = [f"x{i}" for i in range(40)]
    buckets = {hash_stream(i, "val", 64) for i in ids}
    assert collision_fraction(ids, HashConfig(m=64)) == pytest.approx(1 - len(buckets) / 40)
