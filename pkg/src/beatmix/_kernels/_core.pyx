# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: beat-tracking dynamic program and exact nearest-neighbor
search. Semantics are mirrored by the pure-Python fallback module; keep the
two in lockstep (scan order and tie-breaking included)."""

from libc.math cimport INFINITY

import numpy as np


def beat_dp(double[::1] score, double[::1] penalty, Py_ssize_t gap_min,
            Py_ssize_t gap_max, double start_threshold):
    """Forward pass of the beat-tracking DP.

    ``penalty[g]`` is the cost of placing consecutive beats ``g`` frames
    apart (valid for gap_min <= g <= gap_max). Predecessors are scanned from
    nearest to farthest; ties keep the nearest. Returns (backlink, cumscore).
    """
    cdef Py_ssize_t n = score.shape[0]
    backlink_arr = np.empty(n, dtype=np.int64)
    cumscore_arr = np.empty(n, dtype=np.float64)
    cdef long long[::1] backlink = backlink_arr
    cdef double[::1] cumscore = cumscore_arr
    cdef Py_ssize_t i, j, lo, hi, best_j
    cdef double best, cand
    cdef bint first_beat = True

    for i in range(n):
        best = -INFINITY
        best_j = -1
        hi = i - gap_min
        lo = i - gap_max
        if lo < 0:
            lo = 0
        if hi >= 0:
            j = hi
            while j >= lo:
                cand = cumscore[j] - penalty[i - j]
                if cand > best:
                    best = cand
                    best_j = j
                j -= 1
        if best_j >= 0:
            cumscore[i] = score[i] + best
        else:
            cumscore[i] = score[i]
        # chain may only start on a frame with appreciable onset strength
        if first_beat and score[i] < start_threshold:
            backlink[i] = -1
        else:
            backlink[i] = best_j
            first_beat = False
    return backlink_arr, cumscore_arr


def nn_max_dot(double[:, ::1] queries, double[:, ::1] refs):
    """Per-query maximum dot product over all reference rows.

    The inner sum runs left to right over the feature dimension, so results
    are bit-reproducible and independent of how callers tile the queries.
    Ties keep the lowest reference index. Returns (best, index).
    """
    cdef Py_ssize_t n = queries.shape[0]
    cdef Py_ssize_t m = refs.shape[0]
    cdef Py_ssize_t d = queries.shape[1]
    if refs.shape[1] != d:
        raise ValueError("queries and refs disagree on dimensionality")
    best_arr = np.empty(n, dtype=np.float64)
    idx_arr = np.empty(n, dtype=np.int64)
    cdef double[::1] best = best_arr
    cdef long long[::1] idx = idx_arr
    cdef Py_ssize_t i, j, k, best_j
    cdef double acc, b

    for i in range(n):
        b = -INFINITY
        best_j = -1
        for j in range(m):
            acc = 0.0
            for k in range(d):
                acc = acc + queries[i, k] * refs[j, k]
            if acc > b:
                b = acc
                best_j = j
        best[i] = b
        idx[i] = best_j
    return best_arr, idx_arr
