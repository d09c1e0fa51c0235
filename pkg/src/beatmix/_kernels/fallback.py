"""Pure-Python/NumPy fallback for the compiled kernels.

``beat_dp`` is bit-identical to the compiled version: both consume the same
precomputed penalty table and make identical scan-order and tie-breaking
choices. ``nn_max_dot`` delegates the inner products to BLAS, which may
reorder summation; values can differ from the compiled kernel in the last
few ulps (the compiled kernel is the reference semantics).
"""

import numpy as np


def beat_dp(score, penalty, gap_min, gap_max, start_threshold):
    score = np.asarray(score, dtype=np.float64)
    penalty = np.asarray(penalty, dtype=np.float64)
    n = score.size
    backlink = np.empty(n, dtype=np.int64)
    cumscore = np.empty(n, dtype=np.float64)
    first_beat = True
    for i in range(n):
        hi = i - gap_min
        lo = max(0, i - gap_max)
        best_j = -1
        if hi >= 0:
            # candidates ordered by ascending j, then reversed so argmax's
            # first-occurrence rule keeps the nearest predecessor on ties
            cand = cumscore[lo : hi + 1] - penalty[i - hi : i - lo + 1][::-1]
            rev = cand[::-1]
            k = int(np.argmax(rev))
            best_j = hi - k
            cumscore[i] = score[i] + rev[k]
        else:
            cumscore[i] = score[i]
        if first_beat and score[i] < start_threshold:
            backlink[i] = -1
        else:
            backlink[i] = best_j
            first_beat = False
    return backlink, cumscore


def nn_max_dot(queries, refs, chunk=256):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    if queries.shape[1] != refs.shape[1]:
        raise ValueError("queries and refs disagree on dimensionality")
    n = queries.shape[0]
    best = np.empty(n, dtype=np.float64)
    idx = np.empty(n, dtype=np.int64)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        sims = queries[lo:hi] @ refs.T
        loc = np.argmax(sims, axis=1)
        idx[lo:hi] = loc
        best[lo:hi] = sims[np.arange(hi - lo), loc]
    return best, idx
