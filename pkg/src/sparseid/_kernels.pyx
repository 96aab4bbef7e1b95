# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Must stay result-identical to ``_kernels_py``."""
import numpy as np

from libc.math cimport fabs
from libc.stdlib cimport malloc, free


cdef double _kth_largest(double* a, Py_ssize_t n, Py_ssize_t k) noexcept nogil:
    # Hoare quickselect, descending; reorders a in place
    cdef Py_ssize_t lo = 0, hi = n - 1, i, j
    cdef double pivot, tmp
    while lo < hi:
        pivot = a[(lo + hi) // 2]
        i = lo
        j = hi
        while i <= j:
            while a[i] > pivot:
                i += 1
            while a[j] < pivot:
                j -= 1
            if i <= j:
                tmp = a[i]
                a[i] = a[j]
                a[j] = tmp
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            return a[k]
    return a[k]


def support_mask(F, Py_ssize_t S):
    cdef const double[:, ::1] f = np.ascontiguousarray(F, dtype=np.float64)
    cdef Py_ssize_t M = f.shape[0], L = f.shape[1]
    out = np.zeros((M, L), dtype=np.uint8)
    cdef unsigned char[:, ::1] mask = out
    cdef Py_ssize_t m, j, need
    cdef double thr, a
    cdef double* buf
    cdef double* absrow
    if S <= 0:
        return out.view(bool)
    if S >= L:
        out[:] = 1
        return out.view(bool)
    buf = <double*>malloc(2 * L * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    absrow = buf + L
    try:
        with nogil:
            for m in range(M):
                for j in range(L):
                    absrow[j] = fabs(f[m, j])
                    buf[j] = absrow[j]
                thr = _kth_largest(buf, L, S - 1)
                need = S
                for j in range(L):
                    need -= absrow[j] > thr
                for j in range(L):
                    a = absrow[j]
                    if a > thr:
                        mask[m, j] = 1
                    elif a == thr and need > 0:
                        mask[m, j] = 1
                        need -= 1
    finally:
        free(buf)
    return out.view(bool)


def score_codebook(codes, b):
    cdef const signed char[:, ::1] c = np.ascontiguousarray(codes, dtype=np.int8)
    cdef const signed char[::1] q = np.ascontiguousarray(b, dtype=np.int8)
    cdef Py_ssize_t M = c.shape[0], L = c.shape[1]
    if q.shape[0] != L:
        raise ValueError("length mismatch")
    idx_arr = np.flatnonzero(np.asarray(q)).astype(np.intp)
    cdef const Py_ssize_t[::1] idx = idx_arr
    cdef Py_ssize_t nnz = idx.shape[0]
    sim_arr = np.zeros(M, dtype=np.int64)
    dis_arr = np.zeros(M, dtype=np.int64)
    cdef long long[::1] sim = sim_arr
    cdef long long[::1] dis = dis_arr
    qv_arr = np.asarray(q)[idx_arr].astype(np.int8)
    cdef const signed char[::1] qv = qv_arr
    cdef Py_ssize_t m, t
    cdef int v
    cdef long long s, d
    with nogil:
        for m in range(M):
            s = 0
            d = 0
            # branchless: codes are random, branches would mispredict
            for t in range(nnz):
                v = c[m, idx[t]] * qv[t]
                s += v > 0
                d += v < 0
            sim[m] = s
            dis[m] = d
    return sim_arr, dis_arr


def pack_ternary(codes):
    cdef const signed char[:, ::1] c = np.ascontiguousarray(codes, dtype=np.int8)
    cdef Py_ssize_t M = c.shape[0], L = c.shape[1]
    out = np.zeros((M, (L + 3) // 4), dtype=np.uint8)
    cdef unsigned char[:, ::1] p = out
    cdef Py_ssize_t m, j
    cdef unsigned char s
    with nogil:
        for m in range(M):
            for j in range(L):
                if c[m, j] == 1:
                    s = 1
                elif c[m, j] == -1:
                    s = 2
                else:
                    continue
                p[m, j >> 2] |= s << (6 - 2 * (j & 3))
    return out


def unpack_ternary(packed, Py_ssize_t L):
    cdef const unsigned char[:, ::1] p = np.ascontiguousarray(packed, dtype=np.uint8)
    cdef Py_ssize_t M = p.shape[0]
    if p.shape[1] != (L + 3) // 4:
        raise ValueError("packed row width does not match L")
    out = np.zeros((M, L), dtype=np.int8)
    cdef signed char[:, ::1] c = out
    cdef Py_ssize_t m, j, width = p.shape[1] * 4
    cdef unsigned char s
    cdef int bad = 0
    with nogil:
        for m in range(M):
            for j in range(width):
                s = (p[m, j >> 2] >> (6 - 2 * (j & 3))) & 3
                if s == 3:
                    bad = 1
                elif j >= L:
                    if s != 0:
                        bad = 2
                elif s == 1:
                    c[m, j] = 1
                elif s == 2:
                    c[m, j] = -1
    if bad == 1:
        raise ValueError("invalid ternary symbol 0b11")
    if bad == 2:
        raise ValueError("non-zero padding bits")
    return out
