# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled embedding-bag kernels.

Signatures and summation order mirror ``_pykernels`` so the two backends are
interchangeable. Mean pooling sums rows in ascending token-id order, which
makes it invariant to token permutation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


cdef void _order(const i64[:] row, Py_ssize_t n, int mode, i64* out) noexcept nogil:
    # decay mode keeps positional order; mean mode insertion-sorts token ids
    cdef Py_ssize_t i, j
    cdef i64 key
    for i in range(n):
        out[i] = row[i]
    if mode == 0:
        for i in range(1, n):
            key = out[i]
            j = i - 1
            while j >= 0 and out[j] > key:
                out[j + 1] = out[j]
                j -= 1
            out[j + 1] = key


cdef void _weights(Py_ssize_t n, int mode, double* w) noexcept nogil:
    cdef Py_ssize_t i
    cdef double total = 0.0
    if mode == 0:
        for i in range(n):
            w[i] = 1.0 / n
    else:
        for i in range(n):
            total += 1.0 / (i + 1)
        for i in range(n):
            w[i] = (1.0 / (i + 1)) / total


cdef void _pool_into(const f64[:, :] E, const i64[:, :] tokens, const i64[:] lengths,
                     int mode, f64[:, :] pooled, i64* buf, double* w) noexcept nogil:
    cdef Py_ssize_t b, i, k, n
    cdef Py_ssize_t B = tokens.shape[0]
    cdef Py_ssize_t h = E.shape[1]
    cdef i64 t
    for b in range(B):
        n = lengths[b]
        _order(tokens[b], n, mode, buf)
        _weights(n, mode, w)
        for k in range(h):
            pooled[b, k] = 0.0
        for i in range(n):
            t = buf[i]
            for k in range(h):
                pooled[b, k] += w[i] * E[t, k]


cdef void _logits_into(const f64[:, :] pooled, const f64[:, :] W, const f64[:] bias,
                       f64[:, :] out) noexcept nogil:
    cdef Py_ssize_t b, k, c
    cdef Py_ssize_t B = pooled.shape[0]
    cdef Py_ssize_t h = W.shape[0]
    cdef Py_ssize_t C = W.shape[1]
    for b in range(B):
        for c in range(C):
            out[b, c] = bias[c]
        for k in range(h):
            for c in range(C):
                out[b, c] += pooled[b, k] * W[k, c]


cdef double _softmax_row(f64[:] row) noexcept nogil:
    # in-place softmax; returns log-partition
    cdef Py_ssize_t c
    cdef Py_ssize_t C = row.shape[0]
    cdef double m = row[0]
    cdef double s = 0.0
    for c in range(1, C):
        if row[c] > m:
            m = row[c]
    for c in range(C):
        row[c] = exp(row[c] - m)
        s += row[c]
    for c in range(C):
        row[c] = row[c] / s
    return m + log(s)


def pool(const f64[:, :] E, const i64[:, :] tokens, const i64[:] lengths, int mode):
    cdef Py_ssize_t B = tokens.shape[0]
    cdef Py_ssize_t L = tokens.shape[1]
    out = np.zeros((B, E.shape[1]), dtype=np.float64)
    cdef f64[:, :] pooled = out
    cdef i64* buf = <i64*> malloc(max(L, 1) * sizeof(i64))
    cdef double* w = <double*> malloc(max(L, 1) * sizeof(double))
    try:
        with nogil:
            _pool_into(E, tokens, lengths, mode, pooled, buf, w)
    finally:
        free(buf)
        free(w)
    return out


def predict_proba(const f64[:, :] E, const f64[:, :] W, const f64[:] bias,
                  const i64[:, :] tokens, const i64[:] lengths, int mode):
    cdef Py_ssize_t B = tokens.shape[0]
    cdef Py_ssize_t b
    pooled_arr = pool(E, tokens, lengths, mode)
    probs_arr = np.empty((B, W.shape[1]), dtype=np.float64)
    cdef f64[:, :] pooled = pooled_arr
    cdef f64[:, :] probs = probs_arr
    with nogil:
        _logits_into(pooled, W, bias, probs)
        for b in range(B):
            _softmax_row(probs[b])
    return probs_arr


def loss_grad(const f64[:, :] E, const f64[:, :] W, const f64[:] bias,
              const i64[:, :] tokens, const i64[:] lengths, const i64[:] labels,
              int mode, f64[:, :] gE, f64[:, :] gW, f64[:] gb):
    """Mean cross-entropy; gradients are accumulated into zeroed gE, gW, gb."""
    cdef Py_ssize_t B = tokens.shape[0]
    cdef Py_ssize_t L = tokens.shape[1]
    cdef Py_ssize_t h = E.shape[1]
    cdef Py_ssize_t C = W.shape[1]
    cdef Py_ssize_t b, i, k, c, n
    cdef double total = 0.0
    cdef double inv_b = 1.0 / B
    cdef double acc
    cdef i64 t
    pooled_arr = np.empty((B, h), dtype=np.float64)
    probs_arr = np.empty((B, C), dtype=np.float64)
    dpool_arr = np.empty(h, dtype=np.float64)
    cdef f64[:, :] pooled = pooled_arr
    cdef f64[:, :] probs = probs_arr
    cdef f64[:] dpool = dpool_arr
    cdef i64* buf = <i64*> malloc(max(L, 1) * sizeof(i64))
    cdef double* w = <double*> malloc(max(L, 1) * sizeof(double))
    try:
        with nogil:
            _pool_into(E, tokens, lengths, mode, pooled, buf, w)
            _logits_into(pooled, W, bias, probs)
            for b in range(B):
                acc = probs[b, labels[b]]
                total += _softmax_row(probs[b]) - acc
            for b in range(B):
                for c in range(C):
                    probs[b, c] *= inv_b
                probs[b, labels[b]] -= inv_b
                for c in range(C):
                    gb[c] += probs[b, c]
                for k in range(h):
                    acc = 0.0
                    for c in range(C):
                        gW[k, c] += pooled[b, k] * probs[b, c]
                        acc += W[k, c] * probs[b, c]
                    dpool[k] = acc
                n = lengths[b]
                _order(tokens[b], n, mode, buf)
                _weights(n, mode, w)
                for i in range(n):
                    t = buf[i]
                    for k in range(h):
                        gE[t, k] += w[i] * dpool[k]
    finally:
        free(buf)
        free(w)
    return total * inv_b
