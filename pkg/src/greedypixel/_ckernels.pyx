# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics match ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()


def conv3x3_forward(x, weight, bias):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(weight, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t B = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    cdef Py_ssize_t F = wv.shape[0]
    out = np.empty((B, F, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, f, c, h, w, i, j, hh, ww
    cdef double acc
    with nogil:
        for b in range(B):
            for f in range(F):
                for h in range(H):
                    for w in range(W):
                        acc = bv[f]
                        for c in range(C):
                            for i in range(3):
                                hh = h + i - 1
                                if hh < 0 or hh >= H:
                                    continue
                                for j in range(3):
                                    ww = w + j - 1
                                    if ww < 0 or ww >= W:
                                        continue
                                    acc = acc + wv[f, c, i, j] * xv[b, c, hh, ww]
                        ov[b, f, h, w] = acc
    return out


def conv3x3_input_grad(gz, weight):
    cdef double[:, :, :, ::1] gv = np.ascontiguousarray(gz, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(weight, dtype=np.float64)
    cdef Py_ssize_t B = gv.shape[0], F = gv.shape[1], H = gv.shape[2], W = gv.shape[3]
    cdef Py_ssize_t C = wv.shape[1]
    out = np.zeros((B, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, f, c, h, w, i, j, hh, ww
    cdef double g
    with nogil:
        for b in range(B):
            for f in range(F):
                for h in range(H):
                    for w in range(W):
                        g = gv[b, f, h, w]
                        if g == 0.0:
                            continue
                        for c in range(C):
                            for i in range(3):
                                hh = h + i - 1
                                if hh < 0 or hh >= H:
                                    continue
                                for j in range(3):
                                    ww = w + j - 1
                                    if ww < 0 or ww >= W:
                                        continue
                                    ov[b, c, hh, ww] += wv[f, c, i, j] * g
    return out


def coupon_collector_counts(Py_ssize_t m, states):
    cdef uint64_t[::1] sv = np.array(states, dtype=np.uint64)
    cdef Py_ssize_t trials = sv.shape[0]
    counts = np.zeros(trials, dtype=np.int64)
    cdef int64_t[::1] cv = counts
    cdef cnp.uint8_t[::1] visited = np.zeros(m, dtype=np.uint8)
    cdef Py_ssize_t t, k, cell, seen
    cdef uint64_t s, r
    cdef int64_t n
    with nogil:
        for t in range(trials):
            for k in range(m):
                visited[k] = 0
            s = sv[t]
            seen = 0
            n = 0
            while seen < m:
                s ^= s >> 12
                s ^= s << 25
                s ^= s >> 27
                r = s * <uint64_t>0x2545F4914F6CDD1DULL
                cell = <Py_ssize_t>(((r >> 32) * <uint64_t>m) >> 32)
                n += 1
                if not visited[cell]:
                    visited[cell] = 1
                    seen += 1
            cv[t] = n
    return counts
