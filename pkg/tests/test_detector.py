import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smkc.detector import (
    STATS_NAMES,
    StatsPoolKNN,
    fit_reference,
    make_projection,
    robust_standardize,
    score_batch,
    score_knn,
    stats_pool,
)
from smkc.sketch import Window


def knn_oracle(q, refs, k):
    """Cosine distances to every reference, fully sorted, mean of the first k."""

    def unit(v):
        n = math.sqrt(sum(x * x for x in v))
        return [0.0] * len(v) if n < 1e-12 else [x / n for x in v]

    qu = unit(q)
    d = sorted(min(2.0, max(0.0, 1.0 - sum(a * b for a, b in zip(qu, unit(r))))) for r in refs)
    k = min(k, len(d))
    return sum(d[:k]) / k


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("k", [1, 3, 20, 50])
def test_score_knn_matches_exhaustive_sort(seed, k):
    rng = np.random.default_rng(seed)
    R = rng.standard_normal((30, 6))
    Q = rng.standard_normal((7, 6))
    index = fit_reference(R, None, k)
    got, zero = score_batch(Q, index, chunk=3)
    assert not zero.any()
    for i, q in enumerate(Q):
        expect = knn_oracle(q.tolist(), R.tolist(), k)
        assert got[i] == pytest.approx(expect, abs=1e-12)
        assert score_knn(q, index) == pytest.approx(expect, abs=1e-12)


def test_score_knn_with_projection_matches_oracle_on_projected_vectors():
    rng = np.random.default_rng(3)
    spec = make_projection(40, 16, seed=5)
    R, Q = rng.standard_normal((25, 40)), rng.standard_normal((4, 40))
    index = fit_reference(R, spec, 5)
    got, _ = score_batch(Q, index)
    for i in range(len(Q)):
        expect = knn_oracle(spec.apply(Q[i]).tolist(), spec.apply(R).tolist(), 5)
        assert got[i] == pytest.approx(expect, abs=1e-12)


def test_zero_query_scores_one():
    R = np.eye(4)
    index = fit_reference(R, None, 2)
    s, zero = score_batch(np.zeros((1, 4)), index)
    assert zero[0]
    assert s[0] == pytest.approx(1.0)


@given(st.integers(0, 10_000), st.randoms(use_true_random=False))
def test_scores_do_not_depend_on_reference_order(seed, rnd):
    rng = np.random.default_rng(seed)
    R, Q = rng.standard_normal((15, 5)), rng.standard_normal((3, 5))
    perm = list(range(15))
    rnd.shuffle(perm)
    a, _ = score_batch(Q, fit_reference(R, None, 4))
    b, _ = score_batch(Q, fit_reference(R[perm], None, 4))
    assert np.array_equal(a, b)


@given(st.integers(0, 10_000))
def test_scores_bounded(seed):
    rng = np.random.default_rng(seed)
    s, _ = score_batch(rng.standard_normal((5, 4)), fit_reference(rng.standard_normal((9, 4)), None, 3))
    assert np.all((s >= 0) & (s <= 2))


def test_projection_is_deterministic_and_scaled():
    a = make_projection(300, 256, seed=1)
    b = make_projection(300, 256, seed=1)
    assert np.array_equal(a.matrix, b.matrix)
    assert not np.array_equal(a.matrix, make_projection(300, 256, seed=2).matrix)
    assert a.matrix.shape == (256, 300)
    assert a.matrix.var() == pytest.approx(1 / 256, rel=0.02)
    with pytest.raises(ValueError):
        make_projection(0, 4)


def test_fit_reference_validation():
    spec = make_projection(8, 4)
    with pytest.raises(ValueError):
        fit_reference(np.zeros((3, 5)), spec)
    with pytest.raises(ValueError):
        fit_reference(np.zeros((0, 8)), spec)
    with pytest.raises(ValueError):
        fit_reference(np.ones((3, 8)), spec, k=0)
    index = fit_reference(np.ones((3, 8)), spec)
    with pytest.raises(ValueError):
        score_batch(np.ones((1, 7)), index)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=50))
def test_robust_standardize_preserves_order(v):
    s = np.array(v)
    z = robust_standardize(s)
    i, j = np.triu_indices(len(s), 1)
    assert np.all(np.sign(z[i] - z[j]) * np.sign(s[i] - s[j]) >= 0)


def test_robust_standardize_values():
    z = robust_standardize([1.0, 2.0, 3.0, 4.0, 100.0])
    assert z[2] == pytest.approx(0.0)
    assert z[3] == pytest.approx(1 / 1.4826, rel=1e-9)


def _win(seed, C=4, L=10):
    rng = np.random.default_rng(seed)
    M = (rng.random((L, C)) > 0.2).astype(np.uint8)
    M[0] = 1
    return Window([f"s{i}" for i in range(C)], rng.standard_normal((L, C)), M)


def test_stats_pool_values_and_permutation_invariance():
    w = _win(0)
    f = stats_pool(w)
    assert f.shape == (len(STATS_NAMES),)
    obs = w.X[w.M.astype(bool)]
    assert f[0] == pytest.approx(obs.mean())
    assert f[2] == pytest.approx(obs.min()) and f[3] == pytest.approx(obs.max())
    assert f[6] == pytest.approx(w.M.mean())
    assert np.array_equal(f, stats_pool(w.permuted([3, 1, 0, 2])))


def test_stats_pool_knn_self_match_scores_zero():
    normal = [_win(s) for s in range(40)]
    det = StatsPoolKNN(k=1).fit(normal)
    s = det.score(normal[:5] + [_win(100)])
    np.testing.assert_allclose(s[:5], 0.0, atol=1e-12)
    assert s[5] > 0
