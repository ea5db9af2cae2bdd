# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()


def perplexity_search(dist2, double perplexity, double tol=1e-6, int max_iter=200):
    cdef double[:, ::1] d = np.ascontiguousarray(dist2, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0]
    out_p = np.zeros((n, n), dtype=np.float64)
    out_beta = np.ones(n, dtype=np.float64)
    out_h = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] p = out_p
    cdef double[::1] betas = out_beta
    cdef double[::1] hs = out_h
    cdef double target = log(perplexity)
    cdef Py_ssize_t i, j
    cdef int it
    cdef double beta, lo, hi, dmin, sp, sdp, h, diff, v

    with nogil:
        for i in range(n):
            dmin = INFINITY
            for j in range(n):
                if j != i and d[i, j] < dmin:
                    dmin = d[i, j]
            beta = 1.0
            lo = 0.0
            hi = INFINITY
            for it in range(max_iter + 1):
                sp = 0.0
                sdp = 0.0
                for j in range(n):
                    if j == i:
                        p[i, j] = 0.0
                        continue
                    v = exp(-(d[i, j] - dmin) * beta)
                    p[i, j] = v
                    sp = sp + v
                    sdp = sdp + (d[i, j] - dmin) * v
                h = log(sp) + beta * sdp / sp
                diff = h - target
                if fabs(diff) <= tol or it == max_iter:
                    break
                if diff > 0:
                    lo = beta
                    if hi == INFINITY:
                        beta = beta * 2.0
                    else:
                        beta = 0.5 * (beta + hi)
                else:
                    hi = beta
                    beta = 0.5 * (beta + lo)
            for j in range(n):
                p[i, j] = p[i, j] / sp
            betas[i] = beta
            hs[i] = h
    return out_p, out_beta, out_h


def tsne_grad(p_in, y_in, double exaggeration=1.0):
    cdef double[:, ::1] p = np.ascontiguousarray(p_in, dtype=np.float64)
    cdef double[:, ::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t dims = y.shape[1]
    out = np.zeros((n, dims), dtype=np.float64)
    cdef double[:, ::1] grad = out
    num_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] num = num_arr
    cdef Py_ssize_t i, j, k
    cdef double zsum = 0.0, d2, t, w, q, kl = 0.0

    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                d2 = 0.0
                for k in range(dims):
                    t = y[i, k] - y[j, k]
                    d2 = d2 + t * t
                t = 1.0 / (1.0 + d2)
                num[i, j] = t
                num[j, i] = t
                zsum = zsum + 2.0 * t
        for i in range(n):
            for j in range(n):
                if j == i:
                    continue
                q = num[i, j] / zsum
                w = (exaggeration * p[i, j] - q) * num[i, j]
                for k in range(dims):
                    grad[i, k] = grad[i, k] + 4.0 * w * (y[i, k] - y[j, k])
                if p[i, j] > 0:
                    if q < 1e-12:
                        q = 1e-12
                    kl = kl + p[i, j] * log(p[i, j] / q)
    return out, kl


def scaled_manhattan_matrix(x_in, means_in, mads_in):
    cdef double[:, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, ::1] m = np.ascontiguousarray(means_in, dtype=np.float64)
    cdef double[:, ::1] s = np.ascontiguousarray(mads_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], kk = m.shape[0], p = x.shape[1]
    out = np.zeros((n, kk), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, k, j
    cdef double acc
    if p == 0:
        return out
    with nogil:
        for i in range(n):
            for k in range(kk):
                acc = 0.0
                for j in range(p):
                    acc = acc + fabs(x[i, j] - m[k, j]) / s[k, j]
                o[i, k] = acc / p
    return out
