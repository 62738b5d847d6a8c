"""Compare the numba kernels against the pure numpy/python fallback.

Run twice to see both paths:
    python benchmarks/bench_kernels.py            # numba (default)
    BUSM_NUMBA=0 python benchmarks/bench_kernels.py
Workloads mirror real usage: ROUGE-L LCS on summary-vs-reference lengths,
copy-label alignment on truncated news documents, phrase-run matching, and
the per-step occurrence scatter-add of the copy mixture.
"""

import time

import numpy as np

from busum import kernels


def bench(label, fn, repeat=5):
    fn()  # warmup / JIT compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    print(f"{label:<42} {min(times) * 1e3:9.3f} ms  (backend={kernels.BACKEND})")


def main():
    rng = np.random.default_rng(0)
    cand = rng.integers(0, 50, size=80).astype(np.int32)
    ref = rng.integers(0, 50, size=100).astype(np.int32)
    src = rng.integers(0, 300, size=400).astype(np.int32)
    tgt = rng.integers(0, 300, size=100).astype(np.int32)
    attn = rng.random((10, 400)).astype(np.float32)
    ids = rng.integers(0, 5200, size=(10, 400)).astype(np.int64)

    bench("lcs_length 80x100 x200 pairs",
          lambda: [kernels.lcs_length(cand, ref) for _ in range(200)])
    bench("copy_labels_from_ids 400x100 x50 docs",
          lambda: [kernels.copy_labels_from_ids(src, tgt) for _ in range(50)])
    bench("match_run_lengths 100-in-400 x200",
          lambda: [kernels.match_run_lengths(tgt, src) for _ in range(200)])
    bench("scatter_copy_sums_batch 10x400 -> 5200 x500",
          lambda: [kernels.scatter_copy_sums_batch(attn, ids, 5200) for _ in range(500)])


if __name__ == "__main__":
    main()
