# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Native kernels: per-segment softmax, argmax, and gradient reductions.

Same contracts as the pure-numpy fallback.  Inner sums use Kahan
compensation in a fixed ascending order, so results are deterministic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


cdef double _kth_largest(double* buf, Py_ssize_t n, Py_ssize_t k) noexcept nogil:
    """Quickselect for the k-th largest value (k is 1-based); mutates buf."""
    cdef Py_ssize_t lo = 0, hi = n - 1, target = k - 1
    cdef Py_ssize_t i, j
    cdef double pivot, tmp
    while lo < hi:
        pivot = buf[(lo + hi) // 2]
        i = lo
        j = hi
        # partition descending: values > pivot to the left
        while i <= j:
            while buf[i] > pivot:
                i += 1
            while buf[j] < pivot:
                j -= 1
            if i <= j:
                tmp = buf[i]
                buf[i] = buf[j]
                buf[j] = tmp
                i += 1
                j -= 1
        if target <= j:
            hi = j
        elif target >= i:
            lo = i
        else:
            return buf[target]
    return buf[target]


cdef void _segment_softmax(const f64* scores, f64* out, Py_ssize_t k,
                           double alpha, Py_ssize_t cap) noexcept nogil:
    cdef Py_ssize_t i, n_greater, n_ties_needed
    cdef double zmax, total, comp, y, t, thresh
    cdef double* work
    if cap <= 0 or cap >= k:
        # unmasked: plain log-sum-exp softmax
        zmax = -INFINITY
        for i in range(k):
            if alpha * scores[i] > zmax:
                zmax = alpha * scores[i]
        total = 0.0
        comp = 0.0
        for i in range(k):
            out[i] = exp(alpha * scores[i] - zmax)
            y = out[i] - comp
            t = total + y
            comp = (t - total) - y
            total = t
        for i in range(k):
            out[i] /= total
        return
    # masked: keep the cap highest scores, ties broken by lower index
    work = <double*> malloc(k * sizeof(double))
    for i in range(k):
        work[i] = scores[i]
    thresh = _kth_largest(work, k, cap)
    free(work)
    n_greater = 0
    for i in range(k):
        if scores[i] > thresh:
            n_greater += 1
    n_ties_needed = cap - n_greater
    zmax = -INFINITY
    for i in range(k):
        if scores[i] > thresh:
            out[i] = 1.0  # marker: kept
        elif scores[i] == thresh and n_ties_needed > 0:
            out[i] = 1.0
            n_ties_needed -= 1
        else:
            out[i] = 0.0
        if out[i] != 0.0 and alpha * scores[i] > zmax:
            zmax = alpha * scores[i]
    total = 0.0
    comp = 0.0
    for i in range(k):
        if out[i] != 0.0:
            out[i] = exp(alpha * scores[i] - zmax)
            y = out[i] - comp
            t = total + y
            comp = (t - total) - y
            total = t
    for i in range(k):
        if out[i] != 0.0:
            out[i] /= total


def batch_gibbs(const f64[::1] scores, const i64[::1] offsets, double alpha, long cap):
    """Per-segment softmax of alpha*scores with optional top-cap masking."""
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1
    cdef cnp.ndarray[f64, ndim=1] out = np.empty(scores.shape[0], dtype=np.float64)
    cdef f64[::1] out_v = out
    cdef Py_ssize_t t, lo, hi
    with nogil:
        for t in range(n_seg):
            lo = offsets[t]
            hi = offsets[t + 1]
            _segment_softmax(&scores[lo], &out_v[lo], hi - lo, alpha, cap)
    return out


def segment_argmax(const f64[::1] scores, const i64[::1] offsets):
    """Index (local to its segment) of the max score; ties to lower index."""
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1
    cdef cnp.ndarray[i64, ndim=1] out = np.empty(n_seg, dtype=np.int64)
    cdef i64[::1] out_v = out
    cdef Py_ssize_t t, lo, hi, i, best
    with nogil:
        for t in range(n_seg):
            lo = offsets[t]
            hi = offsets[t + 1]
            best = lo
            for i in range(lo + 1, hi):
                if scores[i] > scores[best]:
                    best = i
            out_v[t] = best - lo
    return out


cdef void _kahan_add(f64* acc, f64* comp, Py_ssize_t d, double w, const f64* row) noexcept nogil:
    cdef Py_ssize_t j
    cdef double y, t
    for j in range(d):
        y = w * row[j] - comp[j]
        t = acc[j] + y
        comp[j] = (t - acc[j]) - y
        acc[j] = t


def chosen_stats(const f64[::1] probs, const i64[::1] offsets, const i64[::1] chosen,
                 const f64[:, ::1] features, double alpha):
    """Per segment: chosen-row probability and alpha*(features[chosen] - E[features])."""
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1
    cdef Py_ssize_t d = features.shape[1]
    cdef cnp.ndarray[f64, ndim=1] prob = np.empty(n_seg, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=2] grad = np.zeros((n_seg, d), dtype=np.float64)
    cdef f64[::1] prob_v = prob
    cdef f64[:, ::1] grad_v = grad
    cdef Py_ssize_t t, lo, hi, i, j, c
    cdef double* comp = <double*> malloc(d * sizeof(double))
    with nogil:
        for t in range(n_seg):
            lo = offsets[t]
            hi = offsets[t + 1]
            c = lo + chosen[t]
            prob_v[t] = probs[c]
            for j in range(d):
                comp[j] = 0.0
            for i in range(lo, hi):
                _kahan_add(&grad_v[t, 0], comp, d, probs[i], &features[i, 0])
            for j in range(d):
                grad_v[t, j] = alpha * (features[c, j] - grad_v[t, j])
    free(comp)
    return prob, grad


def direct_stats(const f64[::1] probs, const i64[::1] offsets, const f64[::1] values,
                 const f64[:, ::1] features, double alpha):
    """Per segment: V = sum(values*probs) and alpha*(sum(values*probs*f) - V*E[f])."""
    cdef Py_ssize_t n_seg = offsets.shape[0] - 1
    cdef Py_ssize_t d = features.shape[1]
    cdef cnp.ndarray[f64, ndim=1] value = np.empty(n_seg, dtype=np.float64)
    cdef cnp.ndarray[f64, ndim=2] grad = np.empty((n_seg, d), dtype=np.float64)
    cdef f64[::1] value_v = value
    cdef f64[:, ::1] grad_v = grad
    cdef Py_ssize_t t, lo, hi, i, j
    cdef double vy, tt, comp_v, w
    cdef double* expected = <double*> malloc(d * sizeof(double))
    cdef double* weighted = <double*> malloc(d * sizeof(double))
    cdef double* comp_e = <double*> malloc(d * sizeof(double))
    cdef double* comp_w = <double*> malloc(d * sizeof(double))
    with nogil:
        for t in range(n_seg):
            lo = offsets[t]
            hi = offsets[t + 1]
            value_v[t] = 0.0
            comp_v = 0.0
            for j in range(d):
                expected[j] = 0.0
                weighted[j] = 0.0
                comp_e[j] = 0.0
                comp_w[j] = 0.0
            for i in range(lo, hi):
                w = probs[i] * values[i]
                vy = w - comp_v
                tt = value_v[t] + vy
                comp_v = (tt - value_v[t]) - vy
                value_v[t] = tt
                _kahan_add(expected, comp_e, d, probs[i], &features[i, 0])
                _kahan_add(weighted, comp_w, d, w, &features[i, 0])
            for j in range(d):
                grad_v[t, j] = alpha * (weighted[j] - value_v[t] * expected[j])
    free(expected)
    free(weighted)
    free(comp_e)
    free(comp_w)
    return value, grad
