# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled gray-level co-occurrence counting.

Hot kernel of the radiomics feature extractor: counts ordered pairs of
quantized gray levels at a fixed pixel offset. The numpy fallback with the
same contract lives in ``privmass._glcm_np``.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def glcm_counts(levels, int dy, int dx, int n_levels):
    """Ordered co-occurrence counts of ``levels`` at offset (dy, dx).

    Returns an (n_levels, n_levels) int64 matrix M with M[a, b] = number of
    pixel pairs (p, p + (dy, dx)) inside the image where p has level a and
    the neighbor has level b.
    """
    cdef cnp.int64_t[:, :] lv = np.ascontiguousarray(levels, dtype=np.int64)
    cdef Py_ssize_t h = lv.shape[0]
    cdef Py_ssize_t w = lv.shape[1]
    counts_arr = np.zeros((n_levels, n_levels), dtype=np.int64)
    cdef cnp.int64_t[:, :] counts = counts_arr
    cdef Py_ssize_t y0 = -dy if dy < 0 else 0
    cdef Py_ssize_t y1 = h - dy if dy > 0 else h
    cdef Py_ssize_t x0 = -dx if dx < 0 else 0
    cdef Py_ssize_t x1 = w - dx if dx > 0 else w
    cdef Py_ssize_t y, x
    for y in range(y0, y1):
        for x in range(x0, x1):
            counts[lv[y, x], lv[y + dy, x + dx]] += 1
    return counts_arr
