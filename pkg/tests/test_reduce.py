from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from kdunloc.reduce import (
    RankError,
    joint_probabilities,
    kpca_fit,
    median_gamma,
    pca_fit,
    rbf_kernel,
    tsne_embed,
)
from kdunloc import _kernels


def pdist(a):
    return np.sqrt(((a[:, None, :] - a[None, :, :]) ** 2).sum(-1))


# ------------------------------------------------------------------ PCA


def test_pca_rank_one_line():
    t = np.linspace(-3, 5, 9)
    x = np.column_stack([t, 2 * t])
    z = pca_fit(x, 1).transform(x)
    d0, d1 = pdist(x), pdist(z)
    mask = d0 > 0
    assert np.max(np.abs(d1[mask] - d0[mask]) / d0[mask]) <= 1e-9


def test_pca_full_basis_isometry():
    x = np.random.default_rng(0).normal(size=(20, 4))
    m = pca_fit(x, 4)
    z = m.transform(x)
    recon = z @ m.components + m.mean
    assert np.max(np.abs(recon - x)) <= 1e-9


def test_pca_three_points_closed_form():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = pca_fit(x, 2)
    # covariance (ddof=1) is [[1/3, -1/6], [-1/6, 1/3]]: eigenvalues 1/2 and 1/6,
    # eigenvectors (1, -1)/sqrt2 and (1, 1)/sqrt2
    assert m.eigenvalues == pytest.approx([0.5, 1 / 6], abs=1e-12)
    v1 = m.components[0]
    assert abs(abs(v1 @ np.array([1, -1]) / np.sqrt(2)) - 1) < 1e-12
    v2 = m.components[1]
    assert abs(abs(v2 @ np.array([1, 1]) / np.sqrt(2)) - 1) < 1e-12
    for v in m.components:
        assert v[np.argmax(np.abs(v))] > 0


def test_pca_apply_consistency():
    x = np.random.default_rng(1).normal(size=(15, 5))
    m = pca_fit(x, 3)
    assert np.allclose(m.transform(x[:1]), m.transform(x)[:1])
    assert np.allclose(m.transform(m.mean), 0.0)
    assert m.transform(x[0]).shape == (1, 3)
    g = m.components @ m.components.T
    assert np.max(np.abs(g - np.eye(3))) <= 1e-8
    with pytest.raises(ValueError):
        pca_fit(x, 6)
    with pytest.raises(ValueError):
        m.transform(np.zeros((1, 4)))


def test_pca_variance_bookkeeping():
    x = np.random.default_rng(2).gamma(2, 1, size=(100, 6))
    m = pca_fit(x, 3)
    z = m.transform(x)
    total = np.var(z, axis=0, ddof=1).sum()
    assert abs(total - m.eigenvalues.sum()) <= 1e-8 * m.eigenvalues.sum()


@given(
    hnp.arrays(np.float64, st.tuples(st.integers(3, 15), st.integers(2, 5)), elements=st.floats(-100, 100)),
    st.integers(1, 2),
)
def test_pca_contraction(x, k):
    m = pca_fit(x, k)
    z = m.transform(x)
    xc = x - m.mean
    assert np.all(pdist(z) <= pdist(xc) + 1e-7 * (1 + pdist(xc)))


# ------------------------------------------------------------------ kernel PCA


def test_kpca_degenerate_gamma():
    x = np.random.default_rng(0).random((6, 2))
    with pytest.raises(RankError, match="usable rank"):
        kpca_fit(x, 2, gamma=1e-300)
    with pytest.raises(ValueError):
        kpca_fit(x, 2, gamma=0.0)
    with pytest.raises(ValueError):
        kpca_fit(x, 2, gamma=-1.0)


def test_kpca_apply_matches_fit_embedding():
    x = np.random.default_rng(3).normal(size=(30, 4))
    m = kpca_fit(x, 3)
    fit_embed = m.alphas * np.sqrt(m.lambdas)
    assert np.max(np.abs(m.transform(x) - fit_embed)) <= 1e-8
    assert np.all(m.lambdas > 0)


def test_kpca_two_blobs_oracle():
    rng = np.random.default_rng(5)
    r = 0.1
    a = rng.normal(0, r / 2, (15, 3))
    b = rng.normal(0, r / 2, (15, 3)) + np.array([10 * r * 2, 0, 0])
    x = np.vstack([a, b])
    gamma = median_gamma(x)
    # independent solve of the 2n x 2n centred kernel
    k = np.exp(-gamma * ((x[:, None] - x[None]) ** 2).sum(-1))
    n = len(x)
    c = np.eye(n) - np.ones((n, n)) / n
    w, v = scipy.linalg.eigh(c @ k @ c)
    oracle = v[:, -1] * np.sqrt(w[-1])
    z = kpca_fit(x, 1, gamma).transform(x)[:, 0]
    assert np.allclose(np.abs(z), np.abs(oracle), atol=1e-8)
    lo_a, hi_a = z[:15].min(), z[:15].max()
    lo_b, hi_b = z[15:].min(), z[15:].max()
    assert hi_a < lo_b or hi_b < lo_a


@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 4)), elements=st.floats(-10, 10)))
def test_rbf_kernel_psd(x):
    k = rbf_kernel(x, x, median_gamma(x))
    assert np.allclose(k, k.T)
    assert np.linalg.eigvalsh(k).min() >= -1e-8


# ------------------------------------------------------------------ t-SNE


def test_perplexity_search_hits_entropy():
    x = np.random.default_rng(7).normal(size=(80, 5))
    d2 = ((x[:, None] - x[None]) ** 2).sum(-1)
    for perp in (5.0, 15.0, 26.0):
        cond, _, _ = _kernels.perplexity_search(d2, perp, 1e-6, 200)
        p = np.where(cond > 0, cond, 1.0)
        entropy = -(cond * np.log(p)).sum(axis=1)
        assert np.max(np.abs(entropy - np.log(perp))) <= 1e-4
        assert np.allclose(cond.sum(axis=1), 1.0)


def test_joint_probabilities_symmetric():
    x = np.random.default_rng(8).normal(size=(20, 3))
    p, _ = joint_probabilities(x, 5.0)
    assert np.allclose(p, p.T)
    assert abs(p.sum() - 1.0) < 1e-9


def test_tsne_kl_decreases_and_deterministic():
    x = np.random.default_rng(9).normal(size=(40, 6))
    r = tsne_embed(x, 2, iterations=300, seed=4)
    assert r.kl <= r.initial_kl
    assert np.all(np.isfinite(r.embedding))
    r2 = tsne_embed(x, 2, iterations=300, seed=4)
    assert np.array_equal(r.embedding, r2.embedding)


def test_tsne_duplicates_close():
    rng = np.random.default_rng(10)
    base = rng.normal(size=(30, 5))
    x = np.vstack([base, base[:5]])
    y = tsne_embed(x, 2, iterations=500, seed=1).embedding
    d = pdist(y)
    med = np.median(d[np.triu_indices(len(x), 1)])
    for i in range(5):
        assert d[i, 30 + i] < med


def test_tsne_errors():
    x = np.random.default_rng(0).normal(size=(20, 3))
    with pytest.raises(ValueError, match="perplexity"):
        tsne_embed(x, 2, perplexity=10.0)
    with pytest.raises(ValueError):
        tsne_embed(x, 4)
    assert tsne_embed(x, 3, iterations=50).embedding.shape == (20, 3)
