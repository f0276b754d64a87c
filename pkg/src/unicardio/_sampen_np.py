"""NumPy fallback for the sample-entropy match counter.

Same contract as the compiled extension in ``_sampen.pyx``: unordered
template pairs over the first n-m windows, Chebyshev distance, counts
(A, B) for lengths m+1 and m. Builds two (n-m, n-m) distance matrices,
so it is meant for the segment lengths this package works with
(hundreds of samples), not hour-long records.
"""

import numpy as np


def match_counts(x, m: int, r: float) -> tuple[int, int]:
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.size
    nm = n - m
    if m < 1:
        raise ValueError("m must be >= 1")
    if nm < 2:
        raise ValueError("series too short for the template length")
    # running Chebyshev distance between all template pairs
    d = np.abs(np.subtract.outer(x[:nm], x[:nm]))
    for k in range(1, m):
        np.maximum(d, np.abs(np.subtract.outer(x[k:k + nm], x[k:k + nm])), out=d)
    iu = np.triu_indices(nm, k=1)
    b_pairs = d[iu] <= r
    last = x[m:m + nm]
    a_pairs = b_pairs & (np.abs(np.subtract.outer(last, last))[iu] <= r)
    return int(np.count_nonzero(a_pairs)), int(np.count_nonzero(b_pairs))
