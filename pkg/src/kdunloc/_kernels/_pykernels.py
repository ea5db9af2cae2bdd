"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature and
output; tests check the two agree.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def perplexity_search(
    dist2: np.ndarray, perplexity: float, tol: float = 1e-6, max_iter: int = 200
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise Gaussian bandwidth search, vectorised over rows.

    Returns the conditional probability matrix (row ``i`` is ``p_{j|i}``),
    the precisions ``beta_i = 1 / (2 sigma_i^2)`` and the achieved entropies (nats).
    """
    d = np.array(dist2, dtype=np.float64, copy=True)
    n = d.shape[0]
    np.fill_diagonal(d, np.inf)
    d -= d.min(axis=1, keepdims=True)
    np.fill_diagonal(d, 0.0)
    off = ~np.eye(n, dtype=bool)
    target = np.log(perplexity)

    beta = np.ones(n)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        p = np.exp(-d * beta[:, None]) * off
        sp = p.sum(axis=1)
        h = np.log(sp) + beta * (d * p).sum(axis=1) / sp
        diff = h - target
        done |= np.abs(diff) <= tol
        if done.all():
            break
        up = (diff > 0) & ~done
        down = (diff < 0) & ~done
        lo[up] = beta[up]
        beta[up] = np.where(np.isinf(hi[up]), beta[up] * 2.0, 0.5 * (beta[up] + hi[up]))
        hi[down] = beta[down]
        beta[down] = 0.5 * (beta[down] + lo[down])

    p = np.exp(-d * beta[:, None]) * off
    sp = p.sum(axis=1)
    h = np.log(sp) + beta * (d * p).sum(axis=1) / sp
    return p / sp[:, None], beta, h


def tsne_grad(p: np.ndarray, y: np.ndarray, exaggeration: float = 1.0) -> tuple[np.ndarray, float]:
    """Exact t-SNE gradient and KL(P || Q) for joint probabilities ``p``."""
    sq = np.sum(y * y, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * y @ y.T, 0.0)
    num = 1.0 / (1.0 + d2)
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    w = (exaggeration * p - q) * num
    grad = 4.0 * (w.sum(axis=1)[:, None] * y - w @ y)
    mask = p > 0
    kl = float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], _EPS))))
    return grad, kl


def scaled_manhattan_matrix(x: np.ndarray, means: np.ndarray, mads: np.ndarray) -> np.ndarray:
    """``out[i, k] = mean_j |x[i, j] - means[k, j]| / mads[k, j]``."""
    x = np.asarray(x, dtype=np.float64)
    diff = np.abs(x[:, None, :] - means[None, :, :]) / mads[None, :, :]
    return diff.mean(axis=2)
