"""Cluster-count estimation in the reduced space: DBSCAN, GMM + BIC, X-means.

Every method returns a :class:`ClusterResult` whose labels are compact
(``0..k-1``, ``-1`` for DBSCAN noise) and whose centroids are the member means.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

RIDGE = 1e-6


@dataclass
class ClusterResult:
    labels: np.ndarray
    k: int
    centroids: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "labels": self.labels.tolist(),
            "k": self.k,
            "centroids": self.centroids.tolist(),
            "method": self.method,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ClusterResult:
        cent = np.asarray(d["centroids"], float)
        return cls(np.asarray(d["labels"], int), int(d["k"]), cent, d["method"], d.get("diagnostics", {}))


def _finish(x: np.ndarray, labels: np.ndarray, method: str, diagnostics: dict | None = None) -> ClusterResult:
    """Relabel to 0..k-1 by first appearance and recompute member-mean centroids."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full_like(labels, -1)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(labels):
        if lab < 0:
            continue
        if lab not in mapping:
            mapping[int(lab)] = len(mapping)
        out[i] = mapping[int(lab)]
    k = len(mapping)
    cent = np.array([x[out == j].mean(axis=0) for j in range(k)]).reshape(k, x.shape[1])
    return ClusterResult(out, k, cent, method, diagnostics or {})


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.maximum(np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T, 0.0)


# --------------------------------------------------------------------- DBSCAN


def default_eps(x: np.ndarray, min_samples: int = 5, percentile: float = 90.0) -> float:
    """Percentile of the distance to each point's ``min_samples``-th nearest neighbour."""
    x = np.atleast_2d(np.asarray(x, float))
    n = x.shape[0]
    if n < 2:
        return 1.0
    d = np.sqrt(_sq_dists(x, x))
    d.sort(axis=1)
    kth = d[:, min(min_samples, n - 1)]
    eps = float(np.percentile(kth, percentile))
    return eps if eps > 0 else 1e-12


def dbscan(x: np.ndarray, eps: float | None = None, min_samples: int = 5) -> ClusterResult:
    """Density clustering with Euclidean ``eps``-neighbourhoods (self included).

    Points are scanned in index order; a border point joins the first cluster
    that reaches it.
    """
    x = np.atleast_2d(np.asarray(x, float))
    if eps is None:
        eps = default_eps(x, min_samples)
    if eps <= 0 or min_samples < 1:
        raise ValueError("eps must be > 0 and min_samples >= 1")
    n = x.shape[0]
    within = _sq_dists(x, x) <= eps * eps
    neighbours = [np.flatnonzero(row) for row in within]
    core = np.array([len(nb) >= min_samples for nb in neighbours])
    labels = np.full(n, -1, dtype=np.int64)
    current = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = current
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for nb in neighbours[j]:
                if labels[nb] == -1:
                    labels[nb] = current
                    queue.append(nb)
        current += 1
    res = _finish(x, labels, "dbscan", {"eps": float(eps), "min_samples": int(min_samples)})
    res.diagnostics["noise"] = int(np.sum(res.labels == -1))
    return res


# --------------------------------------------------------------------- k-means


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else int(rng.integers(n))
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def kmeans(
    x: np.ndarray, centers: np.ndarray, max_iter: int = 300, tol: float = 1e-10
) -> tuple[np.ndarray, np.ndarray, float]:
    """Lloyd iterations from ``centers``; empty clusters keep their old centre."""
    centers = np.array(centers, dtype=float, copy=True)
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        labels = np.argmin(_sq_dists(x, centers), axis=1)
        new = centers.copy()
        for j in range(len(centers)):
            members = x[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = float(np.max(np.sum((new - centers) ** 2, axis=1)))
        centers = new
        if shift <= tol:
            break
    labels = np.argmin(_sq_dists(x, centers), axis=1)
    inertia = float(np.sum((x - centers[labels]) ** 2))
    return labels, centers, inertia


# --------------------------------------------------------------------- GMM


def bic(loglik: float, n: int, q: int) -> float:
    """``-2 log L + ln(n) q``; lower is better."""
    if n < 1 or q < 1:
        raise ValueError(f"bic needs n >= 1 and q >= 1 (got n={n}, q={q})")
    return -2.0 * loglik + math.log(n) * q


def gmm_param_count(k: int, d: int) -> int:
    return k * (d + d * (d + 1) // 2) + (k - 1)


class EMCollapse(RuntimeError):
    """A mixture component lost all its weight in every restart."""


@dataclass
class GMMModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    loglik: float
    history: list[float]
    n_iter: int

    def log_resp(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-point log of weighted component densities and total log density."""
        lw = _weighted_log_prob(x, self.weights, self.means, self.covariances)
        m = lw.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(lw - m).sum(axis=1))
        return lw - lse[:, None], lse

    def responsibilities(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_resp(x)[0])

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.log_resp(x)[0], axis=1)


def _weighted_log_prob(x, weights, means, covs) -> np.ndarray:
    n, d = x.shape
    out = np.empty((n, len(weights)))
    for j in range(len(weights)):
        chol = np.linalg.cholesky(covs[j])
        z = np.linalg.solve(chol, (x - means[j]).T)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, j] = np.log(weights[j]) - 0.5 * (d * math.log(2 * math.pi) + logdet + np.sum(z * z, axis=0))
    return out


def _m_step(x: np.ndarray, resp: np.ndarray, ridge: float):
    nk = resp.sum(axis=0)
    weights = nk / x.shape[0]
    means = (resp.T @ x) / np.maximum(nk, 1e-300)[:, None]
    d = x.shape[1]
    covs = np.empty((len(nk), d, d))
    for j in range(len(nk)):
        diff = x - means[j]
        covs[j] = (resp[:, j, None] * diff).T @ diff / max(nk[j], 1e-300) + ridge * np.eye(d)
    return weights, means, covs


def gmm_fit(
    x: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 500,
    tol: float = 1e-9,
    restarts: int = 5,
    ridge: float = RIDGE,
) -> GMMModel:
    """EM for a full-covariance Gaussian mixture, seeded by k-means++.

    ``history`` holds the log-likelihood after every E-step; a component whose
    weight drops under 1e-8 triggers a fresh seeding, at most ``restarts`` times.
    """
    x = np.atleast_2d(np.asarray(x, float))
    n, d = x.shape
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n (k={k}, n={n})")
    rng = np.random.default_rng(seed)
    for attempt in range(restarts):
        centers = kmeans_pp(x, k, rng)
        labels = np.argmin(_sq_dists(x, centers), axis=1)
        resp = np.zeros((n, k))
        resp[np.arange(n), labels] = 1.0
        weights, means, covs = _m_step(x, resp, ridge)
        if np.any(weights < 1e-8):
            continue
        history: list[float] = []
        collapsed = False
        for it in range(max_iter):
            lw = _weighted_log_prob(x, weights, means, covs)
            m = lw.max(axis=1, keepdims=True)
            lse = m[:, 0] + np.log(np.exp(lw - m).sum(axis=1))
            history.append(float(lse.sum()))
            if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * max(1.0, abs(history[-1])):
                break
            resp = np.exp(lw - lse[:, None])
            weights, means, covs = _m_step(x, resp, ridge)
            if np.any(weights < 1e-8):
                collapsed = True
                break
        if collapsed:
            logger.debug("EM collapse for k=%d on attempt %d", k, attempt)
            continue
        return GMMModel(weights, means, covs, history[-1], history, len(history))
    raise EMCollapse(f"EM collapsed for k={k} in {restarts} attempts")


def gmm_select(x: np.ndarray, k_range: Iterable[int] = range(1, 9), seed: int = 0) -> ClusterResult:
    """Fit each candidate k and keep the smallest BIC; hard labels by arg-max responsibility."""
    x = np.atleast_2d(np.asarray(x, float))
    n, d = x.shape
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ValueError("k_range is empty")
    if ks[-1] > n:
        raise ValueError(f"k_range max {ks[-1]} exceeds n={n}")
    table: dict[str, float | str] = {}
    best: tuple[float, int, GMMModel] | None = None
    for k in ks:
        try:
            model = gmm_fit(x, k, seed=seed + 7919 * k)
        except (EMCollapse, np.linalg.LinAlgError) as exc:
            table[str(k)] = f"error: {exc}"
            continue
        score = bic(model.loglik, n, gmm_param_count(k, d))
        table[str(k)] = score
        if best is None or score < best[0]:
            best = (score, k, model)
    if best is None:
        raise EMCollapse(f"every candidate failed: {table}")
    labels = best[2].predict(x)
    res = _finish(x, labels, "gmm", {"bic": table, "selected_components": best[1]})
    return res


# --------------------------------------------------------------------- X-means


def spherical_loglik(x: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    """Maximum log-likelihood of a shared-variance spherical Gaussian mixture
    whose mixing weights are the cluster proportions."""
    r, m = x.shape
    k = len(centers)
    sse = float(np.sum((x - centers[labels]) ** 2))
    # unbiased per-dimension variance
    var = max(sse / (max(r - k, 1) * m), 1e-12)
    sizes = np.bincount(labels, minlength=k)
    sizes = sizes[sizes > 0]
    mixing = float(np.sum(sizes * np.log(sizes / r)))
    return mixing - 0.5 * r * m * math.log(2 * math.pi * var) - 0.5 * sse / var


def spherical_bic(x: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    r, m = x.shape
    k = len(centers)
    q = (k - 1) + m * k + 1
    return bic(spherical_loglik(x, labels, centers), r, q)


def _split_two(x: np.ndarray, rng: np.random.Generator, tries: int = 3):
    best = None
    for _ in range(tries):
        labels, centers, inertia = kmeans(x, kmeans_pp(x, 2, rng))
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    return best


def xmeans(
    x: np.ndarray,
    k_max: int = 10,
    seed: int = 0,
    k_init: int = 1,
    min_split_size: int | None = None,
) -> ClusterResult:
    """X-means: grow k by locally tested 2-splits, refining globally between rounds.

    A region's split is kept when the two-centre spherical-Gaussian BIC of the
    region is lower than its one-centre BIC. Each round's structure is scored
    with the same BIC over all points and the lowest-scoring one is returned. Regions smaller than
    ``min_split_size`` (default ``2 * (d + 1)``) are not split.
    """
    x = np.atleast_2d(np.asarray(x, float))
    n, d = x.shape
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if min_split_size is None:
        min_split_size = 2 * (d + 1)
    rng = np.random.default_rng(seed)
    k_init = max(1, min(k_init, k_max, n))
    labels, centers, _ = kmeans(x, kmeans_pp(x, k_init, rng))
    # every visited structure is scored globally; the best one is reported
    rounds = [{"k": int(len(centers)), "bic": spherical_bic(x, labels, centers)}]
    best = (rounds[0]["bic"], labels, centers)
    while len(centers) < k_max:
        new_centers = []
        n_split = 0
        budget = k_max - len(centers)
        for j, c in enumerate(centers):
            region = x[labels == j]
            if n_split < budget and len(region) >= min_split_size:
                parent = spherical_bic(region, np.zeros(len(region), dtype=np.int64), c[None, :])
                sub_labels, sub_centers, _ = _split_two(region, rng)
                if min(np.bincount(sub_labels, minlength=2)) > 0:
                    child = spherical_bic(region, sub_labels, sub_centers)
                    if child < parent:
                        new_centers.extend(sub_centers)
                        n_split += 1
                        continue
            new_centers.append(c)
        if n_split == 0:
            break
        labels, centers, _ = kmeans(x, np.array(new_centers))
        keep = np.unique(labels)
        centers = centers[keep]
        labels = np.searchsorted(keep, labels)
        score = spherical_bic(x, labels, centers)
        rounds.append({"k": int(len(centers)), "bic": score})
        if score < best[0]:
            best = (score, labels, centers)
    res = _finish(x, best[1], "xmeans", {"rounds": rounds, "k_max": k_max})
    res.diagnostics["bic"] = best[0]
    return res
