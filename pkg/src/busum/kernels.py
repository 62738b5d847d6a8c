"""Hot inner-loop kernels: numba-compiled by default, pure numpy/python fallback.

Set BUSM_NUMBA=0 to force the fallback path (also taken automatically when
numba is not importable).  `BACKEND` records which path is active.
`benchmarks/bench_kernels.py` compares the two.

All kernels work on int32/float32 arrays; callers intern tokens to ids first.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "lcs_length",
    "copy_labels_from_ids",
    "match_run_lengths",
    "scatter_copy_sums",
    "scatter_copy_sums_batch",
]


def _lcs_length_py(a: np.ndarray, b: np.ndarray) -> int:
    # rolling-row LCS DP
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return 0
    row = np.zeros(m + 1, dtype=np.int32)
    for i in range(n):
        prev = 0
        ai = a[i]
        for j in range(1, m + 1):
            tmp = row[j]
            if ai == b[j - 1]:
                row[j] = prev + 1
            elif row[j - 1] > row[j]:
                row[j] = row[j - 1]
            prev = tmp
    return int(row[m])


def _match_run_lengths_py(seq: np.ndarray, source: np.ndarray) -> np.ndarray:
    """run[i] = length of the longest prefix of seq[i:] occurring contiguously in source."""
    n, m = len(seq), len(source)
    run = np.zeros(n, dtype=np.int32)
    if n == 0 or m == 0:
        return run
    # L[j] over source positions: longest common extension of seq[i:] and source[j:],
    # computed rowwise from the last seq position backward.
    nxt = np.zeros(m + 1, dtype=np.int32)
    for i in range(n - 1, -1, -1):
        cur = np.zeros(m + 1, dtype=np.int32)
        eq = source == seq[i]
        cur[:m][eq] = nxt[1:][eq] + 1
        run[i] = cur.max()
        nxt = cur
    return run


def _copy_labels_from_ids_py(src: np.ndarray, tgt: np.ndarray) -> np.ndarray:
    n = len(src)
    labels = np.zeros(n, dtype=np.uint8)
    if n == 0 or len(tgt) == 0:
        return labels
    # A[s]: longest span starting at s that occurs contiguously in the target.
    best = _match_run_lengths_py(src, tgt)
    # pm[s]: longest shared prefix between src[s:] and any earlier src position.
    m = len(src)
    pm = np.zeros(n, dtype=np.int32)
    nxt = np.zeros(m + 1, dtype=np.int32)
    ext = np.zeros((n, n), dtype=np.int32)
    for i in range(n - 1, -1, -1):
        cur = np.zeros(m + 1, dtype=np.int32)
        eq = src == src[i]
        cur[:m][eq] = nxt[1:][eq] + 1
        ext[i] = cur[:m]
        nxt = cur
    for s in range(1, n):
        pm[s] = ext[:s, s].max() if s > 0 else 0
    # longest span containing p that occurs in the target
    maxlen = np.zeros(n, dtype=np.int32)
    for s in range(n):
        a = int(best[s])
        if a > 0:
            e = s + a  # exclusive
            maxlen[s:e] = np.maximum(maxlen[s:e], a)
    for p in range(n):
        L = int(maxlen[p])
        if L == 0:
            continue
        for s in range(max(0, p - L + 1), p + 1):
            if best[s] >= L and s + L > p and pm[s] < L:
                labels[p] = 1
                break
    return labels


def _scatter_copy_sums_py(weights: np.ndarray, ids: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size, dtype=weights.dtype)
    np.add.at(out, ids, weights)
    return out


def _scatter_copy_sums_batch_py(weights: np.ndarray, ids: np.ndarray, size: int) -> np.ndarray:
    bsz, n = weights.shape
    out = np.zeros((bsz, size), dtype=weights.dtype)
    flat = ids + (np.arange(bsz, dtype=np.int64)[:, None] * size)
    np.add.at(out.reshape(-1), flat.reshape(-1), weights.reshape(-1))
    return out


def _use_numba() -> bool:
    flag = os.environ.get("BUSM_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "no", "off"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


if _use_numba():
    from numba import njit

    BACKEND = "numba"

    @njit(cache=True)
    def lcs_length(a, b):  # type: ignore[misc]
        n, m = len(a), len(b)
        if n == 0 or m == 0:
            return 0
        row = np.zeros(m + 1, dtype=np.int32)
        for i in range(n):
            prev = 0
            ai = a[i]
            for j in range(1, m + 1):
                tmp = row[j]
                if ai == b[j - 1]:
                    row[j] = prev + 1
                elif row[j - 1] > row[j]:
                    row[j] = row[j - 1]
                prev = tmp
        return int(row[m])

    @njit(cache=True)
    def match_run_lengths(seq, source):  # type: ignore[misc]
        n, m = len(seq), len(source)
        run = np.zeros(n, dtype=np.int32)
        if n == 0 or m == 0:
            return run
        nxt = np.zeros(m + 1, dtype=np.int32)
        cur = np.zeros(m + 1, dtype=np.int32)
        for i in range(n - 1, -1, -1):
            mx = 0
            for j in range(m):
                if source[j] == seq[i]:
                    cur[j] = nxt[j + 1] + 1
                    if cur[j] > mx:
                        mx = cur[j]
                else:
                    cur[j] = 0
            run[i] = mx
            nxt, cur = cur, nxt
        return run

    @njit(cache=True)
    def copy_labels_from_ids(src, tgt):  # type: ignore[misc]
        n = len(src)
        labels = np.zeros(n, dtype=np.uint8)
        if n == 0 or len(tgt) == 0:
            return labels
        best = match_run_lengths(src, tgt)
        # pairwise longest common extension within the source, for first-occurrence tests
        ext = np.zeros((n, n), dtype=np.int32)
        for i in range(n - 1, -1, -1):
            for j in range(n - 1, -1, -1):
                if src[i] == src[j]:
                    if i + 1 < n and j + 1 < n:
                        ext[i, j] = ext[i + 1, j + 1] + 1
                    else:
                        ext[i, j] = 1
        pm = np.zeros(n, dtype=np.int32)
        for s in range(n):
            mx = 0
            for sp in range(s):
                if ext[sp, s] > mx:
                    mx = ext[sp, s]
            pm[s] = mx
        maxlen = np.zeros(n, dtype=np.int32)
        for s in range(n):
            a = best[s]
            for p in range(s, s + a):
                if a > maxlen[p]:
                    maxlen[p] = a
        for p in range(n):
            L = maxlen[p]
            if L == 0:
                continue
            lo = p - L + 1
            if lo < 0:
                lo = 0
            for s in range(lo, p + 1):
                if best[s] >= L and s + L > p and pm[s] < L:
                    labels[p] = 1
                    break
        return labels

    @njit(cache=True)
    def scatter_copy_sums(weights, ids, size):  # type: ignore[misc]
        out = np.zeros(size, dtype=weights.dtype)
        for i in range(len(ids)):
            out[ids[i]] += weights[i]
        return out

    @njit(cache=True)
    def scatter_copy_sums_batch(weights, ids, size):  # type: ignore[misc]
        bsz, n = weights.shape
        out = np.zeros((bsz, size), dtype=weights.dtype)
        for b in range(bsz):
            for i in range(n):
                out[b, ids[b, i]] += weights[b, i]
        return out

else:
    BACKEND = "numpy"
    lcs_length = _lcs_length_py
    match_run_lengths = _match_run_lengths_py
    copy_labels_from_ids = _copy_labels_from_ids_py
    scatter_copy_sums = _scatter_copy_sums_py
    scatter_copy_sums_batch = _scatter_copy_sums_batch_py
