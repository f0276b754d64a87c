# cython: language_level=3
"""Compiled template-match counter for sample entropy.

Counts, over the first n-m templates, the unordered pairs whose
length-m windows stay within Chebyshev distance r (count B) and whose
length-(m+1) extensions also do (count A). Self-matches are excluded
by construction (j > i).
"""

import numpy as np

cimport cython


@cython.boundscheck(False)
@cython.wraparound(False)
def match_counts(double[::1] x, int m, double r):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nm = n - m
    cdef Py_ssize_t i, j, k
    cdef double diff
    cdef long long a = 0, b = 0
    cdef bint within
    if m < 1:
        raise ValueError("m must be >= 1")
    if nm < 2:
        raise ValueError("series too short for the template length")
    for i in range(nm):
        for j in range(i + 1, nm):
            within = True
            for k in range(m):
                diff = x[i + k] - x[j + k]
                if diff < 0:
                    diff = -diff
                if diff > r:
                    within = False
                    break
            if within:
                b += 1
                diff = x[i + m] - x[j + m]
                if diff < 0:
                    diff = -diff
                if diff <= r:
                    a += 1
    return int(a), int(b)
