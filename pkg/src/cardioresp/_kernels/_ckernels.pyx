# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics mirror ``_pykernels`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, qsort
from libc.string cimport memmove
from libc.math cimport INFINITY, NAN

cnp.import_array()


cdef struct Pair:
    double v
    long long y


cdef int _cmp_pair(const void* a, const void* b) noexcept nogil:
    cdef double va = (<Pair*>a).v
    cdef double vb = (<Pair*>b).v
    if va < vb:
        return -1
    if va > vb:
        return 1
    return 0


def best_split(const double[:, :] X, y, const cnp.intp_t[:] idx,
               const cnp.intp_t[:] order, Py_ssize_t n_try, Py_ssize_t min_leaf):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t n_order = order.shape[0]
    cdef long long best_f = -1
    cdef double best_t = 0.0
    cdef double best_s = -INFINITY
    if n < 2 or n < 2 * min_leaf:
        return int(best_f), best_t, best_s

    cdef const cnp.int64_t[:] yv = np.ascontiguousarray(y, dtype=np.int64)
    cdef Pair* buf = <Pair*>malloc(n * sizeof(Pair))
    if buf == NULL:
        raise MemoryError()

    cdef Py_ssize_t i, k, f, visited = 0
    cdef long long s_tot = 0, s_left, f_left, s_right, f_right, n_left, n_right
    cdef double s, lo, hi, thr, feat_best
    cdef Py_ssize_t feat_i
    cdef bint any_ok

    for i in range(n):
        s_tot += yv[idx[i]]

    try:
        with nogil:
            for k in range(n_order):
                if visited >= n_try:
                    break
                f = order[k]
                for i in range(n):
                    buf[i].v = X[idx[i], f]
                    buf[i].y = yv[idx[i]]
                qsort(buf, n, sizeof(Pair), _cmp_pair)
                any_ok = False
                feat_best = -INFINITY
                feat_i = -1
                s_left = 0
                for i in range(n - 1):
                    s_left += buf[i].y
                    n_left = i + 1
                    n_right = n - n_left
                    if n_left < min_leaf or n_right < min_leaf:
                        continue
                    if not (buf[i].v < buf[i + 1].v):
                        continue
                    any_ok = True
                    f_left = n_left - s_left
                    s_right = s_tot - s_left
                    f_right = n_right - s_right
                    s = (<double>(s_left * s_left + f_left * f_left)) / (<double>n_left) + \
                        (<double>(s_right * s_right + f_right * f_right)) / (<double>n_right)
                    if s > feat_best:
                        feat_best = s
                        feat_i = i
                if not any_ok:
                    continue
                visited += 1
                if feat_best > best_s or (feat_best == best_s and f < best_f):
                    lo = buf[feat_i].v
                    hi = buf[feat_i + 1].v
                    thr = (lo + hi) * 0.5
                    if thr >= hi:
                        thr = lo
                    best_f = f
                    best_t = thr
                    best_s = feat_best
    finally:
        free(buf)
    return int(best_f), best_t, best_s


def apply_tree(const double[:, :] X, const cnp.intp_t[:] feature,
               const double[:] threshold, const cnp.intp_t[:] left,
               const cnp.intp_t[:] right):
    cdef Py_ssize_t n = X.shape[0]
    out = np.empty(n, dtype=np.intp)
    cdef cnp.intp_t[:] o = out
    cdef Py_ssize_t r
    cdef cnp.intp_t node
    with nogil:
        for r in range(n):
            node = 0
            while feature[node] >= 0:
                if X[r, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            o[r] = node
    return out


cdef Py_ssize_t _lower_bound(double* a, Py_ssize_t n, double v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


def trailing_median(p, Py_ssize_t window, Py_ssize_t first):
    cdef const double[:] x = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    out = np.full(n, np.nan)
    if first < window:
        raise ValueError("first must be >= window")
    if first >= n:
        return out
    cdef double[:] o = out
    cdef double* w = <double*>malloc(window * sizeof(double))
    if w == NULL:
        raise MemoryError()
    cdef Py_ssize_t t, j, pos
    cdef Py_ssize_t half = window // 2
    cdef bint even = (window % 2 == 0)
    try:
        with nogil:
            for j in range(window):
                w[j] = x[first - window + j]
            # insertion sort of the initial window
            for j in range(1, window):
                pos = _lower_bound(w, j, x[first - window + j])
                memmove(&w[pos + 1], &w[pos], (j - pos) * sizeof(double))
                w[pos] = x[first - window + j]
            for t in range(first, n):
                if even:
                    o[t] = (w[half - 1] + w[half]) / 2.0
                else:
                    o[t] = w[half]
                if t == n - 1:
                    break
                # drop x[t - window], insert x[t]
                pos = _lower_bound(w, window, x[t - window])
                memmove(&w[pos], &w[pos + 1], (window - pos - 1) * sizeof(double))
                pos = _lower_bound(w, window - 1, x[t])
                memmove(&w[pos + 1], &w[pos], (window - 1 - pos) * sizeof(double))
                w[pos] = x[t]
    finally:
        free(w)
    return out
