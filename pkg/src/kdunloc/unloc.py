"""Ordinal unfolding-based localization of a test sample among anchor points.

Only the ordering of each reference row of the cross-distance matrix is used:
comparisons -> Borda scores (distance proxies) -> a monotone proxy-to-distance
map fitted on the anchors, whose pairwise distances are known -> multi-start
unfolding for the target position.

Row ``r`` of the ordinal data compares, from reference anchor ``r``, the
entities ``0..N-1`` (anchors) and ``N`` (the target). The distance of entity
``e`` from reference ``r`` is the score of ``e``'s samples against ``r``'s
template: ``known_known[e, r]`` for anchors and ``known_test[r]`` for the target.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import isotonic_regression, minimize

from .metrics import CrossDistanceMatrix

logger = logging.getLogger(__name__)

TIE_TOL = 1e-9
SLOPE_FLOOR = 1e-9


@dataclass(frozen=True)
class OrdinalData:
    """``comparisons[r]`` is an ``(m, 3)`` int array of ``(i, j, sign)`` rows;
    ``sign = -1`` means entity ``i`` is closer to reference ``r`` than ``j``."""

    comparisons: dict[int, np.ndarray]
    n_entities: int

    @property
    def target(self) -> int:
        return self.n_entities - 1


def reference_rows(d: CrossDistanceMatrix) -> np.ndarray:
    """``(N, N + 1)`` matrix of distances seen from each reference anchor."""
    kk = np.asarray(d.known_known, dtype=float)
    kt = np.asarray(d.known_test, dtype=float)
    if kk.ndim != 2 or kk.shape[0] != kk.shape[1] or kt.shape != (kk.shape[0],):
        raise ValueError("cross-distance matrix has inconsistent shapes")
    if not (np.all(np.isfinite(kk)) and np.all(np.isfinite(kt))):
        raise ValueError("cross-distance matrix contains non-finite values")
    return np.column_stack([kk.T, kt])


def compare_row(row: np.ndarray, tie_tol: float = TIE_TOL) -> np.ndarray:
    pairs = np.array(list(combinations(range(len(row)), 2)), dtype=np.int64).reshape(-1, 2)
    diff = row[pairs[:, 0]] - row[pairs[:, 1]]
    sign = np.where(np.abs(diff) <= tie_tol, 0, np.sign(diff)).astype(np.int64)
    return np.column_stack([pairs, sign])


def ordinal_comparisons(d: CrossDistanceMatrix, tie_tol: float = TIE_TOL) -> OrdinalData:
    rows = reference_rows(d)
    return OrdinalData({r: compare_row(rows[r], tie_tol) for r in range(rows.shape[0])}, rows.shape[1])


def borda(comparisons: np.ndarray, n_entities: int) -> np.ndarray:
    """Wins minus losses per entity ("farther" counts as a win), rescaled to [0, 1]."""
    if len(comparisons) == 0:
        raise ValueError("no comparisons to aggregate")
    score = np.zeros(n_entities)
    i, j, s = comparisons[:, 0], comparisons[:, 1], comparisons[:, 2].astype(float)
    np.add.at(score, i, s)
    np.add.at(score, j, -s)
    lo, hi = score.min(), score.max()
    if hi == lo:
        return np.zeros(n_entities)
    return (score - lo) / (hi - lo)


def rank_aggregate(o: OrdinalData, r: int) -> np.ndarray:
    return borda(o.comparisons[r], o.n_entities)


@dataclass(frozen=True)
class DistanceMap:
    """Monotone proxy -> distance map.

    ``kind`` is ``"affine"`` (``slope``/``intercept``) or ``"isotonic"``
    (piecewise-linear through ``knots_x``/``knots_y``).
    """

    kind: str = "affine"
    slope: float = 1.0
    intercept: float = 0.0
    clamped: bool = False
    knots_x: tuple[float, ...] = ()
    knots_y: tuple[float, ...] = ()

    def __call__(self, proxy: np.ndarray) -> np.ndarray:
        p = np.asarray(proxy, dtype=float)
        if self.kind == "isotonic":
            return np.interp(p, self.knots_x, self.knots_y)
        return self.slope * p + self.intercept

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "slope": self.slope,
            "intercept": self.intercept,
            "clamped": self.clamped,
            "knots_x": list(self.knots_x),
            "knots_y": list(self.knots_y),
        }


def fit_distance_map(proxies: np.ndarray, distances: np.ndarray, kind: str = "affine") -> DistanceMap:
    """Least-squares monotone fit of ``distances`` on ``proxies`` (paired arrays).

    The affine slope is kept positive: a non-positive least-squares slope is
    replaced by ``SLOPE_FLOOR`` with the intercept refitted, and ``clamped`` set.
    """
    p = np.asarray(proxies, dtype=float).ravel()
    d = np.asarray(distances, dtype=float).ravel()
    if p.shape != d.shape:
        raise ValueError("proxies and distances differ in shape")
    if len(np.unique(p)) < 2:
        raise ValueError("need at least 2 distinct proxy values to fit a distance map")
    if kind == "isotonic":
        order = np.argsort(p, kind="stable")
        ux, inv = np.unique(p[order], return_inverse=True)
        sums = np.bincount(inv, weights=d[order])
        counts = np.bincount(inv)
        fit = isotonic_regression(sums / counts, weights=counts, increasing=True).x
        return DistanceMap("isotonic", knots_x=tuple(ux.tolist()), knots_y=tuple(fit.tolist()))
    if kind != "affine":
        raise ValueError(f"unknown distance map kind {kind!r}")
    pm, dm = p.mean(), d.mean()
    slope = float(np.sum((p - pm) * (d - dm)) / np.sum((p - pm) ** 2))
    clamped = slope <= 0
    if clamped:
        logger.debug("non-positive proxy->distance slope %.3g clamped", slope)
        slope = SLOPE_FLOOR
    return DistanceMap("affine", slope, float(dm - slope * pm), clamped)


@dataclass
class LocalizationEstimate:
    coords: np.ndarray
    residual: float
    restarts_used: int
    ambiguous: bool = False
    start_residuals: list[float] = field(default_factory=list)
    trace: dict | None = None


def unfold_objective(x: np.ndarray, anchors: np.ndarray, est: np.ndarray) -> float:
    r = np.sqrt(np.sum((anchors - x) ** 2, axis=1)) - est
    return float(r @ r)


def anchors_ambiguous(anchors: np.ndarray) -> bool:
    """True when the anchors do not affinely span the space."""
    k, dim = anchors.shape
    if k < dim + 1:
        return True
    centred = anchors - anchors.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    return bool(sv[dim - 1] <= 1e-9 * max(sv[0], 1e-300))


def multilaterate(anchors: np.ndarray, est: np.ndarray) -> np.ndarray:
    """Least-squares solution of the circle equations differenced against anchor 0.

    Exact when ``est`` holds true distances; otherwise just a good start, and
    one that may lie outside the anchors' bounding box.
    """
    c0, d0 = anchors[0], est[0]
    lhs = 2.0 * (anchors[1:] - c0)
    rhs = np.sum(anchors[1:] ** 2, axis=1) - c0 @ c0 - est[1:] ** 2 + d0**2
    return np.linalg.lstsq(lhs, rhs, rcond=None)[0]


def unfold(
    anchors: np.ndarray,
    est_dists: np.ndarray,
    restarts: int = 8,
    seed: int = 0,
) -> LocalizationEstimate:
    """Minimise ``sum_m (|x - C_m| - d_m)^2`` by multi-start Nelder-Mead.

    Starts are every anchor, the anchor centroid, the linearised
    multilateration solution (when the anchors span the space), then random
    points in the anchor bounding box until ``restarts`` starts are used.
    Ties between starts go to the lowest start index.
    """
    a = np.atleast_2d(np.asarray(anchors, dtype=float))
    est = np.asarray(est_dists, dtype=float)
    k, dim = a.shape
    if est.shape != (k,):
        raise ValueError(f"{k} anchors but {est.size} distances")
    if np.any(est < 0) or not np.all(np.isfinite(est)):
        raise ValueError("estimated distances must be finite and non-negative")
    ambiguous = anchors_ambiguous(a)
    if ambiguous:
        logger.debug("anchors do not span %d dimensions; estimate may be reflection-ambiguous", dim)

    rng = np.random.default_rng(seed)
    lo, hi = a.min(axis=0), a.max(axis=0)
    starts = [*a, a.mean(axis=0)]
    if not ambiguous:
        starts.append(multilaterate(a, est))
    for _ in range(max(0, restarts - len(starts))):
        starts.append(lo + (hi - lo) * rng.random(dim))
    span = float(np.max(hi - lo)) if k > 1 else 1.0
    span = span if span > 0 else max(float(np.max(est)), 1.0)
    step = 0.1 * span

    best_x, best_f = None, np.inf
    residuals = []
    for x0 in starts:
        x0 = np.asarray(x0, dtype=float)
        simplex = np.vstack([x0, x0 + step * np.eye(dim)])
        # fatol sits just above float round-off of J near its minimum
        fatol = 1e-13 * (1.0 + float(est @ est))
        opts = {"initial_simplex": simplex, "xatol": 1e-10 * span, "fatol": fatol, "maxiter": 1000 * dim}
        res = minimize(unfold_objective, x0, args=(a, est), method="Nelder-Mead", options=opts)
        # one restart from the optimum shakes NM out of a collapsed simplex
        simplex = np.vstack([res.x, res.x + 1e-3 * span * np.eye(dim)])
        opts["initial_simplex"] = simplex
        res = minimize(unfold_objective, res.x, args=(a, est), method="Nelder-Mead", options=opts)
        f = unfold_objective(res.x, a, est)
        f0 = unfold_objective(x0, a, est)
        if f0 < f:
            f, xr = f0, x0
        else:
            xr = res.x
        residuals.append(f)
        if f < best_f:
            best_x, best_f = xr, f
    return LocalizationEstimate(np.asarray(best_x), float(best_f), len(starts), ambiguous, residuals)


@dataclass(frozen=True)
class UnlocConfig:
    restarts: int = 8
    map_kind: str = "affine"
    # "global" pools all anchor pairs; "reference" fits one map per reference row
    pooling: str = "global"
    include_self: bool = True
    tie_tol: float = TIE_TOL
    seed: int = 0


def _euclid(a: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - a[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def localize(
    d: CrossDistanceMatrix,
    anchors: np.ndarray,
    config: UnlocConfig | None = None,
    trace: bool = False,
) -> LocalizationEstimate:
    """Place the target of ``d`` among ``anchors`` (same order as ``d.user_order``)."""
    cfg = config or UnlocConfig()
    a = np.atleast_2d(np.asarray(anchors, dtype=float))
    n = a.shape[0]
    if len(d.user_order) != n or np.shape(d.known_known) != (n, n):
        raise ValueError(f"{n} anchors do not match a {len(d.user_order)}-user cross-distance matrix")
    o = ordinal_comparisons(d, cfg.tie_tol)
    proxies = np.stack([rank_aggregate(o, r) for r in range(n)])
    true_d = _euclid(a)
    mask = np.ones((n, n), dtype=bool)
    if not cfg.include_self:
        np.fill_diagonal(mask, False)

    if cfg.pooling == "reference":
        maps = []
        for r in range(n):
            try:
                maps.append(fit_distance_map(proxies[r, :n][mask[r]], true_d[r][mask[r]], cfg.map_kind))
            except ValueError:
                maps.append(fit_distance_map(proxies[:, :n][mask], true_d[mask], cfg.map_kind))
        est = np.array([maps[r](proxies[r, n]) for r in range(n)], dtype=float)
    elif cfg.pooling == "global":
        dmap = fit_distance_map(proxies[:, :n][mask], true_d[mask], cfg.map_kind)
        maps = [dmap]
        est = dmap(proxies[:, n])
    else:
        raise ValueError(f"unknown pooling {cfg.pooling!r}")
    est = np.maximum(np.asarray(est, dtype=float).ravel(), 0.0)
    result = unfold(a, est, cfg.restarts, cfg.seed)
    if trace:
        result.trace = {
            "user_order": list(d.user_order),
            "comparisons": {str(r): c.tolist() for r, c in o.comparisons.items()},
            "proxies": proxies.tolist(),
            "maps": [m.to_dict() for m in maps],
            "estimated_distances": est.tolist(),
            "anchor_distances": true_d.tolist(),
            "start_residuals": result.start_residuals,
            "coords": result.coords.tolist(),
            "residual": result.residual,
        }
    return result


def write_trace(est: LocalizationEstimate, path: str) -> None:
    if est.trace is None:
        raise ValueError("estimate carries no trace; call localize(..., trace=True)")
    with open(path, "w") as fh:
        json.dump(est.trace, fh, indent=1)
