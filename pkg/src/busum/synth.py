"""Synthetic extractive-summarization corpora for end-to-end verification.

Documents mix a "salient" and a "filler" half of the vocabulary; two spans
planted in distinct sentences are dense in salient tokens and become the
reference summary (with light token-replacement noise).  Selection is
therefore learnable from token identity plus context, and gold copy labels
recovered by span alignment approximate the planted spans.
"""

from __future__ import annotations

import numpy as np

from .corpus import ExamplePair


def _word(idx: int) -> str:
    return f"w{idx:03d}"


def generate_corpus(
    n_docs: int,
    seed: int = 0,
    vocab_size: int = 200,
    n_salient: int = 100,
    sentence_len: tuple[int, int] = (12, 15),
    sentences: tuple[int, int] = (3, 4),
    span_len: tuple[int, int] = (4, 8),
    salient_inside: float = 0.9,
    salient_outside: float = 0.08,
    noise: float = 0.05,
    id_prefix: str = "doc",
) -> list[ExamplePair]:
    """Generate documents of 30-60 tokens whose targets are two noisy source spans."""
    rng = np.random.default_rng(seed)
    filler = np.arange(vocab_size - n_salient)
    salient = np.arange(vocab_size - n_salient, vocab_size)
    docs = []
    for d in range(n_docs):
        n_sents = int(rng.integers(sentences[0], sentences[1] + 1))
        lens = [int(rng.integers(sentence_len[0], sentence_len[1] + 1)) for _ in range(n_sents)]
        span_sents = sorted(rng.choice(n_sents, size=2, replace=False).tolist())
        spans: list[tuple[int, int, int]] = []  # (sentence, start, length)
        sents: list[list[str]] = []
        for s, slen in enumerate(lens):
            words = np.where(rng.random(slen) < salient_outside,
                             rng.choice(salient, size=slen),
                             rng.choice(filler, size=slen))
            if s in span_sents:
                # keep one token of padding at both sentence edges
                length = int(rng.integers(span_len[0], min(span_len[1], slen - 2) + 1))
                start = int(rng.integers(1, slen - length))
                inside = np.where(rng.random(length) < salient_inside,
                                  rng.choice(salient, size=length),
                                  rng.choice(filler, size=length))
                words[start : start + length] = inside
                spans.append((s, start, length))
            sents.append([_word(int(w)) for w in words])
        targets = []
        for s, start, length in spans:
            toks = list(sents[s][start : start + length])
            for j in range(length):
                if rng.random() < noise:
                    toks[j] = _word(int(rng.integers(0, vocab_size)))
            targets.append(toks)
        docs.append(ExamplePair(
            id=f"{id_prefix}-{d:05d}",
            source_sentences=sents,
            target_sentences=targets,
        ))
    return docs
