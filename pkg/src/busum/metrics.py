"""ROUGE-1/2/L, extractive baselines, and copy-behavior analyses."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .corpus import ExamplePair

HIST_BUCKETS = [str(k) for k in range(1, 11)] + ["11+"]


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "RougeScore":
        denom = precision + recall
        f1 = 2.0 * precision * recall / denom if denom > 0 else 0.0
        return cls(precision=precision, recall=recall, f1=f1)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    """Clipped n-gram overlap precision/recall/F1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = _ngrams(candidate, n)
    ref = _ngrams(reference, n)
    overlap = sum(min(count, ref.get(gram, 0)) for gram, count in cand.items())
    cand_total = sum(cand.values())
    ref_total = sum(ref.values())
    precision = overlap / cand_total if cand_total else 0.0
    recall = overlap / ref_total if ref_total else 0.0
    return RougeScore.from_pr(precision, recall)


def _intern_pair(a: Sequence[str], b: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    table: dict[str, int] = {}
    out = []
    for seq in (a, b):
        ids = np.empty(len(seq), dtype=np.int32)
        for i, tok in enumerate(seq):
            ids[i] = table.setdefault(tok, len(table))
        out.append(ids)
    return out[0], out[1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    """Longest-common-subsequence precision/recall/F1."""
    if not candidate or not reference:
        return RougeScore.from_pr(0.0, 0.0)
    c_ids, r_ids = _intern_pair(candidate, reference)
    lcs = kernels.lcs_length(c_ids, r_ids)
    return RougeScore.from_pr(lcs / len(candidate), lcs / len(reference))


def corpus_rouge(candidates: Sequence[Sequence[str]],
                 references: Sequence[Sequence[str]]) -> dict[str, RougeScore]:
    """Macro-averaged ROUGE-1/2/L over aligned candidate/reference pairs."""
    if len(candidates) != len(references):
        raise ValueError("candidate/reference count mismatch")
    sums = {"rouge-1": [0.0, 0.0, 0.0], "rouge-2": [0.0, 0.0, 0.0], "rouge-l": [0.0, 0.0, 0.0]}
    for cand, ref in zip(candidates, references):
        for key, score in (("rouge-1", rouge_n(cand, ref, 1)),
                           ("rouge-2", rouge_n(cand, ref, 2)),
                           ("rouge-l", rouge_l(cand, ref))):
            sums[key][0] += score.precision
            sums[key][1] += score.recall
            sums[key][2] += score.f1
    n = max(1, len(candidates))
    return {key: RougeScore(precision=v[0] / n, recall=v[1] / n, f1=v[2] / n)
            for key, v in sums.items()}


def lead_k(document: ExamplePair, k: int) -> list[str]:
    """First min(k, #sentences) source sentences, concatenated."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [tok for sent in document.source_sentences[:k] for tok in sent]


def select_top_sentences(document: ExamplePair, q: Sequence[float], k: int) -> list[str]:
    """Top-k sentences by mean selection probability, emitted in document order."""
    q = np.asarray(q, dtype=np.float64)
    n = len(document.source_tokens())
    if len(q) != n:
        raise ValueError(f"q length {len(q)} != flattened source length {n}")
    means = []
    pos = 0
    for idx, sent in enumerate(document.source_sentences):
        means.append((-float(q[pos : pos + len(sent)].mean()), idx))
        pos += len(sent)
    chosen = sorted(idx for _, idx in sorted(means)[:k])
    return [tok for idx in chosen for tok in document.source_sentences[idx]]


def extract_words_threshold(document: ExamplePair, q: Sequence[float],
                            target_len: int) -> list[str]:
    """Tokens above the q threshold whose selected count is closest to target_len.

    The threshold is found by binary search over the observed q values; on a
    tie the larger token count wins.
    """
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    tokens = document.source_tokens()
    q = np.asarray(q, dtype=np.float64)
    if len(q) != len(tokens):
        raise ValueError(f"q length {len(q)} != flattened source length {len(tokens)}")
    q_sorted = np.sort(q)
    candidates = np.concatenate(([q_sorted[0] - 1.0], np.unique(q_sorted)))
    counts = len(q) - np.searchsorted(q_sorted, candidates, side="right")
    gap = np.abs(counts - target_len)
    best_gap = gap.min()
    best_count = counts[gap == best_gap].max()
    tau = candidates[(gap == best_gap) & (counts == best_count)][0]
    return [tok for tok, qi in zip(tokens, q) if qi > tau]


def copied_word_precision(generated: Sequence[str], source: Sequence[str],
                          reference: Sequence[str]) -> float | None:
    """Of generated tokens found in the source, the percentage also in the reference.

    None when the summary copies nothing (undefined).
    """
    src = set(source)
    ref = set(reference)
    copied = [tok for tok in generated if tok in src]
    if not copied:
        return None
    return 100.0 * sum(tok in ref for tok in copied) / len(copied)


def copy_phrase_histogram(generated: Sequence[str], source: Sequence[str]) -> dict[str, int]:
    """Bucketed lengths of maximal copied runs, greedy longest-match left to right.

    Each copied token counts in the bucket of its run length; buckets 1..10
    and 11+.
    """
    hist = {b: 0 for b in HIST_BUCKETS}
    if not generated or not source:
        return hist
    g_ids, s_ids = _intern_pair(generated, source)
    runs = kernels.match_run_lengths(g_ids, s_ids)
    i = 0
    while i < len(generated):
        length = int(runs[i])
        if length < 1:
            i += 1
            continue
        bucket = str(length) if length <= 10 else "11+"
        hist[bucket] += length
        i += length
    return hist


def novel_word_rate(generated: Sequence[str], source: Sequence[str]) -> float:
    """Percentage of summary tokens absent from the source token set."""
    if not generated:
        raise ValueError("empty summary")
    src = set(source)
    return 100.0 * sum(tok not in src for tok in generated) / len(generated)


def rouge_report_rows(scores: dict[str, RougeScore]) -> list[tuple[str, float]]:
    """Flat (metric, value) rows, values x100 rounded to 2 decimals."""
    rows = []
    for key in ("rouge-1", "rouge-2", "rouge-l"):
        sc = scores[key]
        rows.append((f"{key}-p", round(100.0 * sc.precision, 2)))
        rows.append((f"{key}-r", round(100.0 * sc.recall, 2)))
        rows.append((f"{key}-f", round(100.0 * sc.f1, 2)))
    return rows
