"""Dataset ingestion: tokenization, vocabulary, truncation, copy-label alignment.

Datasets are UTF-8 JSON-lines, one example per line:
    {"id": "...", "src_sents": ["...", ...], "tgt_sents": ["...", ...],
     "copy_labels": [0, 1, ...]}          # copy_labels optional
Sentence strings are tokenized on load; `write_dataset` joins tokens with
single spaces, so load/write round-trips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import kernels

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<bos>", "<eos>"
RESERVED = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

_PUNCT = set('.,;:!?"\'()-')


class DatasetError(ValueError):
    """Raised for malformed dataset files."""


def tokenize(raw: str) -> list[str]:
    """Lowercase and split on whitespace, isolating punctuation as separate tokens."""
    out = []
    for chunk in raw.lower().split():
        buf = []
        for ch in chunk:
            if ch in _PUNCT:
                if buf:
                    out.append("".join(buf))
                    buf = []
                out.append(ch)
            else:
                buf.append(ch)
        if buf:
            out.append("".join(buf))
    return out


@dataclass
class ExamplePair:
    """One source document / reference summary pair."""

    id: str
    source_sentences: list[list[str]]
    target_sentences: list[list[str]]
    copy_labels: list[int] | None = None

    def __post_init__(self) -> None:
        if not self.source_tokens():
            raise DatasetError(f"example {self.id}: empty source")
        if not self.target_tokens():
            raise DatasetError(f"example {self.id}: empty target")
        if self.copy_labels is not None:
            n = len(self.source_tokens())
            if len(self.copy_labels) != n:
                raise DatasetError(
                    f"example {self.id}: copy_labels length {len(self.copy_labels)} != source length {n}"
                )
            if any(t not in (0, 1) for t in self.copy_labels):
                raise DatasetError(f"example {self.id}: copy_labels must be 0/1")

    def source_tokens(self) -> list[str]:
        return [t for sent in self.source_sentences for t in sent]

    def target_tokens(self) -> list[str]:
        return [t for sent in self.target_sentences for t in sent]


@dataclass
class Vocabulary:
    """Token/id mapping with reserved ids 0..3 for PAD, UNK, BOS, EOS."""

    itos: list[str] = field(default_factory=lambda: list(RESERVED))
    stoi: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.stoi:
            self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id_of(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self.itos[idx]

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, UNK_ID) for t in tokens], dtype=np.int32)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.itos[len(RESERVED):]:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        itos = list(RESERVED)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tok = line.rstrip("\n")
                if tok:
                    itos.append(tok)
        return cls(itos=itos)


def build_vocab(corpus: Iterable[ExamplePair], max_size: int) -> Vocabulary:
    """Most frequent max_size tokens over source+target sides; ties lexicographic."""
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    counts: dict[str, int] = {}
    empty = True
    for ex in corpus:
        empty = False
        for tok in ex.source_tokens():
            counts[tok] = counts.get(tok, 0) + 1
        for tok in ex.target_tokens():
            counts[tok] = counts.get(tok, 0) + 1
    if empty:
        raise ValueError("empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    itos = list(RESERVED) + [tok for tok, _ in ranked[:max_size]]
    return Vocabulary(itos=itos)


def _intern(*seqs: Sequence[str]) -> list[np.ndarray]:
    table: dict[str, int] = {}
    out = []
    for seq in seqs:
        ids = np.empty(len(seq), dtype=np.int32)
        for i, tok in enumerate(seq):
            ids[i] = table.setdefault(tok, len(table))
        out.append(ids)
    return out


def align_copy_labels(source: Sequence[str], target: Sequence[str]) -> list[int]:
    """Tag source tokens inside maximal common spans, first source occurrence only.

    A position is tagged 1 iff it lies in a contiguous source span that also
    occurs contiguously in the target, is the longest such span covering the
    position, and is the first occurrence of that exact span in the source.
    """
    if not source:
        raise ValueError("source must be nonempty")
    src_ids, tgt_ids = _intern(source, target)
    return kernels.copy_labels_from_ids(src_ids, tgt_ids).astype(int).tolist()


def aligned_source_positions(source: Sequence[str], target: Sequence[str]) -> list[list[int]]:
    """Per target position, the gold source positions under the same span rules.

    Mirrors align_copy_labels from the target side: for target position j, take
    every longest span containing j that occurs in the source, anchor it at its
    first source occurrence, and record the position aligned with j.  Empty
    list = not a copied token.
    """
    if not target:
        return []
    src_ids, tgt_ids = _intern(source, target)
    n, m = len(src_ids), len(tgt_ids)
    gold: list[list[int]] = [[] for _ in range(m)]
    if n == 0:
        return gold
    # best[j]: longest prefix of tgt[j:] occurring contiguously in source
    best = kernels.match_run_lengths(tgt_ids, src_ids)
    maxlen = np.zeros(m, dtype=np.int32)
    for s in range(m):
        a = int(best[s])
        if a > 0:
            maxlen[s : s + a] = np.maximum(maxlen[s : s + a], a)
    src_list = src_ids.tolist()
    for j in range(m):
        L = int(maxlen[j])
        if L == 0:
            continue
        positions: set[int] = set()
        for s in range(max(0, j - L + 1), j + 1):
            if best[s] < L or s + L <= j:
                continue
            span = tgt_ids[s : s + L].tolist()
            # first occurrence of this span in the source
            for p in range(n - L + 1):
                if src_list[p : p + L] == span:
                    positions.add(p + (j - s))
                    break
        gold[j] = sorted(positions)
    return gold


def truncate_example(ex: ExamplePair, max_src: int, max_tgt: int) -> ExamplePair:
    """Cut whole tokens from the end; recompute copy labels, never carry them over."""
    if max_src < 1 or max_tgt < 1:
        raise ValueError("max_src and max_tgt must be >= 1")

    def cut(sents: list[list[str]], limit: int) -> list[list[str]]:
        out, used = [], 0
        for sent in sents:
            if used >= limit:
                break
            keep = sent[: limit - used]
            if keep:
                out.append(list(keep))
                used += len(keep)
        return out

    src = cut(ex.source_sentences, max_src)
    tgt = cut(ex.target_sentences, max_tgt)
    labels = None
    if ex.copy_labels is not None:
        labels = align_copy_labels(
            [t for s in src for t in s], [t for s in tgt for t in s]
        )
    return ExamplePair(id=ex.id, source_sentences=src, target_sentences=tgt, copy_labels=labels)


def _parse_line(obj: dict, lineno: int) -> ExamplePair:
    for fieldname in ("id", "src_sents", "tgt_sents"):
        if fieldname not in obj:
            raise DatasetError(f"missing field {fieldname} at line {lineno}")
    src = [tokenize(s) for s in obj["src_sents"]]
    tgt = [tokenize(s) for s in obj["tgt_sents"]]
    src = [s for s in src if s]
    tgt = [s for s in tgt if s]
    labels = obj.get("copy_labels")
    if labels is not None:
        labels = [int(v) for v in labels]
    try:
        return ExamplePair(
            id=str(obj["id"]), source_sentences=src, target_sentences=tgt, copy_labels=labels
        )
    except DatasetError as err:
        raise DatasetError(f"{err} (line {lineno})") from None


def load_dataset(path: str) -> list[ExamplePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise DatasetError(f"malformed line {lineno}: {err.msg}") from None
            if not isinstance(obj, dict):
                raise DatasetError(f"malformed line {lineno}: expected object")
            pairs.append(_parse_line(obj, lineno))
    return pairs


def write_dataset(pairs: Iterable[ExamplePair], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in pairs:
            obj: dict = {
                "id": ex.id,
                "src_sents": [" ".join(s) for s in ex.source_sentences],
                "tgt_sents": [" ".join(s) for s in ex.target_sentences],
            }
            if ex.copy_labels is not None:
                obj["copy_labels"] = ex.copy_labels
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def sentence_examples(pairs: Iterable[ExamplePair]) -> list[tuple[list[str], list[int]]]:
    """Split labeled documents into per-sentence (tokens, labels) tagging examples."""
    out = []
    for ex in pairs:
        if ex.copy_labels is None:
            raise ValueError(f"example {ex.id} has no copy labels")
        pos = 0
        for sent in ex.source_sentences:
            out.append((sent, ex.copy_labels[pos : pos + len(sent)]))
            pos += len(sent)
    return out
