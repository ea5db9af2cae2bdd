"""Dimensionality reduction: PCA, RBF kernel PCA and exact t-SNE."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)


def _orient(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _sym_eigh_desc(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return w[::-1], v[:, ::-1]


def _check_2d(m: np.ndarray, n_features: int | None = None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if n_features is not None and x.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {x.shape[1]}")
    return x


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (out_dims, n_features), orthonormal rows
    eigenvalues: np.ndarray
    kind: str = "pca"

    @property
    def out_dims(self) -> int:
        return self.components.shape[0]

    def transform(self, m: np.ndarray) -> np.ndarray:
        return pca_apply(self, m)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
        }


def pca_fit(m: np.ndarray, out_dims: int = 2) -> PCAModel:
    """Leading eigenvectors of the sample covariance (``ddof=1``)."""
    x = _check_2d(m)
    n, p = x.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 rows")
    if not 1 <= out_dims <= p:
        raise ValueError(f"out_dims must be in [1, {p}], got {out_dims}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    w, v = _sym_eigh_desc(cov)
    comps = _orient(v[:, :out_dims]).T
    return PCAModel(mean, comps, np.maximum(w[:out_dims], 0.0))


def pca_apply(model: PCAModel, m: np.ndarray) -> np.ndarray:
    x = _check_2d(m, model.mean.size)
    return (x - model.mean) @ model.components.T


def median_gamma(m: np.ndarray) -> float:
    """``1 / median`` of the off-diagonal pairwise squared distances."""
    x = _check_2d(m)
    d2 = _sq_dists(x, x)
    iu = np.triu_indices(x.shape[0], 1)
    med = float(np.median(d2[iu])) if iu[0].size else 0.0
    return 1.0 / med if med > 0 else 1.0


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * _sq_dists(a, b))


class RankError(ValueError):
    """Centred kernel has fewer usable eigenvalues than requested dimensions."""


@dataclass(frozen=True)
class KPCAModel:
    train: np.ndarray
    gamma: float
    alphas: np.ndarray  # unit eigenvectors of the centred kernel, (n, out_dims)
    lambdas: np.ndarray
    kernel_col_means: np.ndarray
    kernel_mean: float
    kind: str = "kpca"

    @property
    def out_dims(self) -> int:
        return self.alphas.shape[1]

    def transform(self, m: np.ndarray) -> np.ndarray:
        return kpca_apply(self, m)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "train": self.train.tolist(),
            "gamma": self.gamma,
            "alphas": self.alphas.tolist(),
            "lambdas": self.lambdas.tolist(),
        }


def kpca_fit(m: np.ndarray, out_dims: int = 2, gamma: float | None = None) -> KPCAModel:
    """Kernel PCA with ``k(x, y) = exp(-gamma |x - y|^2)``.

    ``gamma`` defaults to :func:`median_gamma` of the training rows.
    """
    x = _check_2d(m)
    n = x.shape[0]
    if n < 2:
        raise ValueError("kernel PCA needs at least 2 rows")
    if gamma is None:
        gamma = median_gamma(x)
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    k = rbf_kernel(x, x, gamma)
    col_means = k.mean(axis=0)
    total = float(k.mean())
    kc = k - col_means[None, :] - col_means[:, None] + total
    w, v = _sym_eigh_desc(kc)
    # eigenvalues of the uncentred kernel are at most n; anything this small is noise
    tol = 1e-9 * n
    usable = int(np.sum(w > tol))
    if usable < out_dims:
        raise RankError(
            f"centred kernel has usable rank {usable} < out_dims={out_dims} (gamma={gamma:g})"
        )
    return KPCAModel(x.copy(), float(gamma), _orient(v[:, :out_dims]), w[:out_dims], col_means, total)


def kpca_apply(model: KPCAModel, m: np.ndarray) -> np.ndarray:
    x = _check_2d(m, model.train.shape[1])
    k = rbf_kernel(x, model.train, model.gamma)
    kc = k - model.kernel_col_means[None, :] - k.mean(axis=1, keepdims=True) + model.kernel_mean
    return kc @ model.alphas / np.sqrt(model.lambdas)


def kpca_from_dict(d: dict) -> KPCAModel:
    train = np.asarray(d["train"], float)
    k = rbf_kernel(train, train, float(d["gamma"]))
    return KPCAModel(
        train, float(d["gamma"]), np.asarray(d["alphas"], float), np.asarray(d["lambdas"], float),
        k.mean(axis=0), float(k.mean()),
    )


def pca_from_dict(d: dict) -> PCAModel:
    return PCAModel(np.asarray(d["mean"], float), np.asarray(d["components"], float), np.asarray(d["eigenvalues"], float))


@dataclass
class TSNEResult:
    embedding: np.ndarray
    kl: float
    initial_kl: float
    perplexity: float
    learning_rate: float
    iterations: int
    seed: int
    entropies: np.ndarray = field(repr=False)
    kind: str = "tsne"

    @property
    def out_dims(self) -> int:
        return self.embedding.shape[1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "embedding": self.embedding.tolist(),
            "kl": self.kl,
            "perplexity": self.perplexity,
            "learning_rate": self.learning_rate,
            "iterations": self.iterations,
            "seed": self.seed,
        }


def joint_probabilities(x: np.ndarray, perplexity: float) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrised affinities ``(p_{j|i} + p_{i|j}) / 2n`` and per-point entropies."""
    d2 = _sq_dists(x, x)
    cond, _, ent = _kernels.perplexity_search(d2, perplexity, 1e-6, 200)
    p = (cond + cond.T) / (2.0 * x.shape[0])
    return np.maximum(p, 1e-300) * (1 - np.eye(x.shape[0])), ent


def default_perplexity(n: int) -> float:
    return max(1.0, min(30.0, (n - 1) / 3.0))


def tsne_embed(
    m: np.ndarray,
    out_dims: int = 2,
    perplexity: float | None = None,
    iterations: int = 1000,
    seed: int = 0,
    learning_rate: float | None = None,
    exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
) -> TSNEResult:
    """Exact t-SNE with momentum, adaptive gains and early exaggeration.

    ``perplexity=None`` uses ``min(30, (n - 1) / 3)``; an explicit value must
    satisfy ``n >= 3 * perplexity + 1``. ``learning_rate=None`` uses
    ``n / exaggeration``.
    """
    x = _check_2d(m)
    n = x.shape[0]
    if out_dims not in (2, 3):
        raise ValueError(f"t-SNE out_dims must be 2 or 3, got {out_dims}")
    if perplexity is None:
        perplexity = default_perplexity(n)
    elif n < 3 * perplexity + 1 or perplexity <= 0:
        raise ValueError(f"perplexity {perplexity} infeasible for {n} points (need n >= 3*perplexity + 1)")
    if learning_rate is None:
        learning_rate = n / exaggeration

    p, ent = joint_probabilities(x, perplexity)
    rng = np.random.default_rng(seed)
    y = 1e-4 * rng.standard_normal((n, out_dims))
    _, kl0 = _kernels.tsne_grad(p, y, 1.0)
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    for it in range(iterations):
        early = it < exaggeration_iters
        grad, _ = _kernels.tsne_grad(p, y, exaggeration if early else 1.0)
        momentum = 0.5 if early else 0.8
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - learning_rate * gains * grad
        y = y + update
        y -= y.mean(axis=0)
    _, kl = _kernels.tsne_grad(p, y, 1.0)
    return TSNEResult(y, float(kl), float(kl0), float(perplexity), float(learning_rate), iterations, seed, ent)
