# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scans for regression-tree splits and Kendall pair counting.

Arithmetic order mirrors ``_pykernels`` exactly so both backends return
bit-identical results.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def best_split(const double[:, ::1] xs, const double[:, ::1] ys, Py_ssize_t min_leaf):
    """Best least-squares split over pre-sorted columns.

    ``xs[:, j]`` holds feature j in ascending order and ``ys[:, j]`` the
    targets permuted the same way. Returns ``(feature, position, gain)``
    where the split puts rows ``0..position`` of the sorted column on the
    left. ``feature == -1`` when no valid split exists.
    """
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t f = xs.shape[1]
    cdef Py_ssize_t j, i
    cdef double total, sl, sr, nl, nr, gain, base
    cdef double best_gain = -1.0
    cdef Py_ssize_t best_f = -1, best_i = -1
    cdef double nd = <double>n
    if n < 2:
        return -1, -1, 0.0
    with nogil:
        for j in range(f):
            total = 0.0
            for i in range(n):
                total = total + ys[i, j]
            base = total * total / nd
            sl = 0.0
            for i in range(n - 1):
                sl = sl + ys[i, j]
                if i + 1 < min_leaf or n - i - 1 < min_leaf:
                    continue
                if not (xs[i, j] < xs[i + 1, j]):
                    continue
                nl = <double>(i + 1)
                nr = nd - nl
                sr = total - sl
                gain = sl * sl / nl + sr * sr / nr - base
                if best_f == -1 or gain > best_gain:
                    best_gain = gain
                    best_f = j
                    best_i = i
    if best_f == -1:
        return -1, -1, 0.0
    return int(best_f), int(best_i), float(best_gain)


def kendall_counts(const double[::1] x, const double[::1] y):
    """Return ``(concordant - discordant, pairs tied in x, pairs tied in y)``."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, j
    cdef long long s = 0, tx = 0, ty = 0
    cdef double dx, dy
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                dx = x[j] - x[i]
                dy = y[j] - y[i]
                if dx == 0:
                    tx += 1
                if dy == 0:
                    ty += 1
                if dx != 0 and dy != 0:
                    if (dx > 0) == (dy > 0):
                        s += 1
                    else:
                        s -= 1
    return int(s), int(tx), int(ty)
