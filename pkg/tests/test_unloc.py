from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from kdunloc.metrics import CrossDistanceMatrix
from kdunloc.unloc import (
    UnlocConfig,
    borda,
    compare_row,
    fit_distance_map,
    localize,
    ordinal_comparisons,
    rank_aggregate,
    unfold,
    unfold_objective,
    write_trace,
)


def euclid(a):
    return np.linalg.norm(a[:, None] - a[None], axis=2)


def cross(anchors, target, f=lambda v: v):
    kk = f(euclid(anchors))
    kt = f(np.linalg.norm(anchors - target, axis=1))
    return CrossDistanceMatrix(kk, kt, [f"u{i}" for i in range(len(anchors))])


def brute_rank(v):
    """Rank of each entry by counting strictly smaller / larger entries."""
    v = np.asarray(v)
    return np.array([np.sum(v < x) - np.sum(v > x) for x in v])


def random_instance(rng, k=None):
    k = k or int(rng.integers(3, 7))
    while True:
        a = rng.uniform(-5, 5, (k, 2))
        if np.linalg.svd(a - a.mean(0), compute_uv=False)[1] > 0.5:
            return a, rng.uniform(-5, 5, 2)


# ------------------------------------------------------------------ comparisons


def test_sorted_row_total_order():
    c = compare_row(np.array([1.0, 2.0, 3.0]))
    assert c.tolist() == [[0, 1, -1], [0, 2, -1], [1, 2, -1]]


def test_tie_sign_zero():
    c = compare_row(np.array([1.0, 1.0 + 1e-12, 3.0]))
    assert c[0, 2] == 0


def test_comparison_count():
    a = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    o = ordinal_comparisons(cross(a, np.array([0.3, 0.3])))
    assert o.n_entities == 4
    assert all(len(c) == 6 for c in o.comparisons.values())
    assert all(set(c[:, 2].tolist()) <= {-1, 0, 1} for c in o.comparisons.values())


def test_borda_cases():
    s = borda(compare_row(np.array([1.0, 2.0, 3.0])), 3)
    assert s[0] < s[1] < s[2]
    assert np.all(borda(compare_row(np.ones(4)), 4) == 0)
    d = np.array([0.1, 0.4, 0.2, 0.9])
    s = borda(compare_row(d), 4)
    assert np.array_equal(np.argsort(s), np.argsort(d))
    assert np.array_equal(brute_rank(s), brute_rank(d))


def test_borda_cyclic_input_still_scores():
    cyc = np.array([[0, 1, -1], [1, 2, -1], [0, 2, 1]])
    s = borda(cyc, 3)
    assert np.all(np.isfinite(s)) and np.allclose(s, s[0])


@given(
    st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=9),
    st.sampled_from([np.sqrt, np.exp, lambda v: v**3 + 2 * v, lambda v: np.log1p(v)]),
)
def test_borda_invariant_to_increasing_maps(vals, f):
    d = np.round(np.array(vals), 3)
    fd = f(d)
    # the map must not collapse distinct values below the tie tolerance
    assume(np.all(np.abs(np.diff(np.sort(np.unique(fd)))) > 1e-6))
    assume(len(np.unique(fd)) == len(np.unique(d)))
    a = borda(compare_row(d), len(d))
    b = borda(compare_row(fd), len(d))
    assert np.array_equal(a, b)
    assert np.array_equal(brute_rank(a), brute_rank(d))


# ------------------------------------------------------------------ distance map


def test_fit_identity():
    d = np.array([0.0, 1.0, 2.5, 4.0, 7.0])
    m = fit_distance_map(d, d)
    assert abs(m.slope - 1) <= 1e-9 and abs(m.intercept) <= 1e-9


def test_fit_inverse_affine():
    d = np.array([0.0, 1.0, 2.5, 4.0, 7.0])
    m = fit_distance_map(2 * d + 1, d)
    assert abs(m.slope - 0.5) <= 1e-9 and abs(m.intercept + 0.5) <= 1e-9
    assert np.allclose(m(2 * d + 1), d)


def test_fit_degenerate_and_clamped():
    with pytest.raises(ValueError):
        fit_distance_map(np.ones(4), np.arange(4.0))
    m = fit_distance_map(np.arange(4.0), -np.arange(4.0))
    assert m.clamped and m.slope > 0


def test_isotonic_map_monotone():
    p = np.linspace(0, 1, 20)
    m = fit_distance_map(p, p**2, kind="isotonic")
    q = np.linspace(-0.1, 1.1, 50)
    assert np.all(np.diff(m(q)) >= 0)
    assert np.allclose(m(p), p**2)


# ------------------------------------------------------------------ unfold


def test_unfold_triangle():
    a = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 3.0]])
    t = np.array([1.0, 1.0])
    e = unfold(a, np.linalg.norm(a - t, axis=1))
    assert np.linalg.norm(e.coords - t) <= 1e-3
    assert e.residual <= 1e-6
    assert e.restarts_used == 8 and not e.ambiguous


def test_unfold_zero_distances_gives_centroid():
    a = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 3.0], [5.0, 5.0]])
    e = unfold(a, np.zeros(4))
    assert np.allclose(e.coords, a.mean(0), atol=1e-6)


def test_unfold_two_anchors_ambiguous():
    e = unfold(np.array([[0.0, 0.0], [2.0, 0.0]]), np.array([1.0, 1.0]))
    assert e.ambiguous
    assert np.all(np.isfinite(e.coords))


def test_unfold_rejects_bad_input():
    a = np.eye(3)[:, :2]
    with pytest.raises(ValueError):
        unfold(a, np.array([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        unfold(a, np.ones(2))


def test_unfold_exact_recovery_100():
    rng = np.random.default_rng(2024)
    misses = 0
    for i in range(100):
        a, t = random_instance(rng)
        e = unfold(a, np.linalg.norm(a - t, axis=1), seed=i)
        misses += np.linalg.norm(e.coords - t) > 1e-3
    assert misses == 0


@given(st.integers(0, 10_000))
def test_unfold_beats_every_start(seed):
    rng = np.random.default_rng(seed)
    a, _ = random_instance(rng)
    est = rng.uniform(0, 8, len(a))
    e = unfold(a, est, seed=seed)
    starts = [*a, a.mean(0)]
    assert all(e.residual <= unfold_objective(s, a, est) + 1e-12 for s in starts)
    assert e.residual == min(e.start_residuals)
    assert e.residual >= 0


def test_unfold_deterministic():
    rng = np.random.default_rng(1)
    a, _ = random_instance(rng, 5)
    est = rng.uniform(1, 4, 5)
    x, y = unfold(a, est, seed=3), unfold(a, est, seed=3)
    assert np.array_equal(x.coords, y.coords)


# ------------------------------------------------------------------ localize


def test_localize_scaled_distances():
    # ordinal data only brackets each target distance between two anchor
    # distances, so resolution needs a reasonably dense anchor set
    g = np.linspace(0, 10, 5)
    a = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    rng = np.random.default_rng(11)
    diam = euclid(a).max()
    for _ in range(10):
        t = rng.uniform(2, 8, 2)
        e = localize(cross(a, t, lambda v: 3 * v), a)
        assert np.linalg.norm(e.coords - t) <= 0.05 * diam


def test_localize_scattered_anchors_reference_maps():
    rng = np.random.default_rng(12)
    for _ in range(10):
        a = rng.uniform(0, 10, (49, 2))
        t = rng.uniform(2, 8, 2)
        e = localize(cross(a, t, lambda v: 3 * v), a, UnlocConfig(pooling="reference"))
        assert np.linalg.norm(e.coords - t) <= 0.05 * euclid(a).max()


def test_localize_template_sample():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 10, (6, 2))
    for m in range(6):
        e = localize(cross(a, a[m]), a)
        assert np.argmin(np.linalg.norm(a - e.coords, axis=1)) == m


@pytest.mark.parametrize("distort", [lambda v: 2 * v + 1, lambda v: v**2])
def test_localize_distortion_keeps_nearest_anchor(distort):
    rng = np.random.default_rng(8)
    agree = 0
    for _ in range(40):
        a, t = random_instance(rng, 6)
        base = localize(cross(a, t, lambda v: 3 * v), a).coords
        dist = localize(cross(a, t, distort), a).coords
        nearest = lambda x: np.argmin(np.linalg.norm(a - x, axis=1))
        agree += nearest(base) == nearest(dist)
    assert agree >= 38


@given(st.integers(0, 10_000))
def test_localize_anchor_permutation(seed):
    rng = np.random.default_rng(seed)
    a, t = random_instance(rng, 5)
    d = cross(a, t, lambda v: v**1.5)
    perm = rng.permutation(5)
    dp = CrossDistanceMatrix(d.known_known[np.ix_(perm, perm)], d.known_test[perm], [d.user_order[i] for i in perm])
    x = localize(d, a).coords
    y = localize(dp, a[perm]).coords
    assert np.allclose(x, y, atol=1e-6 * (1 + euclid(a).max()))


def test_localize_reference_pooling_and_trace(tmp_path):
    rng = np.random.default_rng(3)
    a, t = random_instance(rng, 5)
    d = cross(a, t)
    e = localize(d, a, UnlocConfig(pooling="reference"), trace=True)
    assert np.linalg.norm(e.coords - t) < 0.25 * euclid(a).max()
    p = tmp_path / "trace.json"
    write_trace(e, str(p))
    tr = json.loads(p.read_text())
    assert {"comparisons", "proxies", "maps", "start_residuals", "coords"} <= set(tr)
    with pytest.raises(ValueError):
        write_trace(localize(d, a), str(p))


def test_localize_shape_mismatch():
    a = np.eye(3)[:, :2]
    with pytest.raises(ValueError):
        localize(cross(a, np.zeros(2)), np.vstack([a, [[5.0, 5.0]]]))


def test_rank_aggregate_target_last():
    a = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])
    o = ordinal_comparisons(cross(a, a[0]))
    s = rank_aggregate(o, 0)
    # target coincides with the reference: both sit at the lowest score
    assert s[0] == s[3] == 0.0 and s[2] == 1.0
