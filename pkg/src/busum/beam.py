"""Penalized beam search.

Score: logprob / lp(|y|, alpha) - beta * (sum_i max(1, colsum_i) - n), with
trigram-repeat pruning and a hard minimum length (EOS forbidden below it).
The search core runs over an abstract per-step distribution callback so the
same machinery decodes the pointer-generator and hand-set toy tables.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import BOS_ID, EOS_ID, PAD_ID, ExamplePair, Vocabulary
from .masking import MaskConfig, hard_mask, masked_joint, soft_mask
from .pointer_gen import PGParams, build_extended, decode_step, encode_source
from .tensor import Tensor, matmul, no_grad


@dataclass
class InferenceConfig:
    beam_size: int = 5
    alpha: float = 0.0  # length penalty strength
    beta: float = 0.0  # coverage penalty strength
    min_length: int = 1
    max_length: int = 30
    block_trigrams: bool = True
    mask: MaskConfig | None = None
    mask_mode: str = "none"  # none | hard | soft
    eos_id: int = EOS_ID
    forbidden_ids: tuple[int, ...] = (PAD_ID, BOS_ID)

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.min_length > self.max_length:
            raise ValueError("min_length must not exceed max_length")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.mask_mode not in ("none", "hard", "soft"):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")


def length_penalty(length: int, alpha: float) -> float:
    """lp = (5 + |y|)^alpha / 6^alpha."""
    if length < 1:
        raise ValueError("length must be >= 1")
    return ((5.0 + length) / 6.0) ** alpha


def coverage_penalty(attention_history: Sequence[np.ndarray], beta: float) -> float:
    """beta * (sum_i max(1, column_sum_i) - n) >= 0; subtracted from the score."""
    history = list(attention_history)
    if beta == 0.0 or not history:
        return 0.0
    n = len(history[0])
    for vec in history:
        if len(vec) != n:
            raise ValueError("coverage_penalty: inconsistent attention vector lengths")
    col = np.zeros(n, dtype=np.float64)
    for vec in history:
        col += np.asarray(vec, dtype=np.float64)
    return float(beta * (np.maximum(1.0, col).sum() - n))


def hypothesis_score(logprob: float, length: int, attention_history: Sequence[np.ndarray],
                     cfg: InferenceConfig) -> float:
    """s = logprob / lp - coverage penalty magnitude; higher is better."""
    return logprob / length_penalty(length, cfg.alpha) - coverage_penalty(
        attention_history, cfg.beta
    )


@dataclass
class Hypothesis:
    tokens: list[int] = field(default_factory=list)
    logprob: float = 0.0
    state: tuple[np.ndarray, ...] = ()
    attention_history: list[np.ndarray] = field(default_factory=list)
    trigrams: set[tuple[int, int, int]] = field(default_factory=set)
    finished: bool = False
    coverage: np.ndarray | None = None  # cached attention column sums

    def score(self, cfg: InferenceConfig) -> float:
        length = max(1, len(self.tokens))
        lp = length_penalty(length, cfg.alpha)
        cp = 0.0
        if cfg.beta > 0.0 and self.coverage is not None:
            cp = cfg.beta * float(np.maximum(1.0, self.coverage).sum() - len(self.coverage))
        return self.logprob / lp - cp


def trigram_allows(hyp: Hypothesis, candidate_token: int) -> bool:
    """False iff appending the candidate repeats a trigram already emitted."""
    if len(hyp.tokens) < 2:
        return True
    return (hyp.tokens[-2], hyp.tokens[-1], candidate_token) not in hyp.trigrams


StepFn = Callable[[np.ndarray, tuple[np.ndarray, ...]], tuple[np.ndarray, np.ndarray, tuple[np.ndarray, ...]]]


def _sort_key(cfg: InferenceConfig):
    def key(hyp: Hypothesis):
        return (-hyp.score(cfg), tuple(hyp.tokens))

    return key


def beam_search_core(step_fn: StepFn, init_state: tuple[np.ndarray, ...], source_len: int,
                     cfg: InferenceConfig, bos_id: int = BOS_ID) -> tuple[Hypothesis, list[str]]:
    """Generic penalized beam search over a per-step log-distribution callback.

    step_fn(prev_tokens (K,), states) -> (log_probs (K, V), attention (K, n),
    new states); states are tuples of arrays with a leading K dim.  Returns
    the best finished hypothesis (ties broken by lower token-id sequence), or
    the best unfinished one with a warning when nothing finished.
    """
    warnings: list[str] = []
    live = [Hypothesis(state=tuple(np.asarray(s)[0] for s in init_state),
                       coverage=np.zeros(source_len, dtype=np.float64))]
    finished: list[Hypothesis] = []
    key = _sort_key(cfg)
    last_live: list[Hypothesis] = live
    for _ in range(cfg.max_length + 1):
        if not live:
            break
        prev = np.array([h.tokens[-1] if h.tokens else bos_id for h in live], dtype=np.int64)
        states = tuple(np.stack([h.state[i] for h in live]) for i in range(len(live[0].state)))
        log_probs, attention, new_states = step_fn(prev, states)
        vocab = log_probs.shape[1]
        candidates: list[Hypothesis] = []
        for k, hyp in enumerate(live):
            row = log_probs[k]
            attn_row = attention[k].astype(np.float64)
            state_k = tuple(s[k] for s in new_states)
            at_cap = len(hyp.tokens) >= cfg.max_length
            # shortlist by token log-prob; with keep >= vocab the expansion is exhaustive
            keep = min(vocab, max(2 * cfg.beam_size + 5, cfg.beam_size + len(hyp.tokens) + 2))
            order = np.argsort(-row, kind="stable")[:keep].tolist()
            if cfg.eos_id < vocab and cfg.eos_id not in order:
                order.append(cfg.eos_id)
            for token in order:
                if token in cfg.forbidden_ids:
                    continue
                if token == cfg.eos_id:
                    if len(hyp.tokens) < cfg.min_length:
                        continue
                    candidates.append(replace(
                        hyp, logprob=hyp.logprob + float(row[token]), finished=True,
                    ))
                    continue
                if at_cap:
                    continue
                if cfg.block_trigrams and not trigram_allows(hyp, token):
                    continue
                cand = Hypothesis(
                    tokens=hyp.tokens + [token],
                    logprob=hyp.logprob + float(row[token]),
                    state=state_k,
                    attention_history=hyp.attention_history + [attn_row],
                    trigrams=set(hyp.trigrams),
                    coverage=hyp.coverage + attn_row,
                )
                if len(cand.tokens) >= 3:
                    cand.trigrams.add(tuple(cand.tokens[-3:]))
                candidates.append(cand)
        # finished and live expansions compete for the beam slots
        slots = sorted(candidates, key=key)[: cfg.beam_size]
        finished = sorted(finished + [c for c in slots if c.finished], key=key)[: cfg.beam_size]
        live = [c for c in slots if not c.finished]
        if live:
            last_live = live
    if finished:
        return finished[0], warnings
    warnings.append("no-finished-hypothesis")
    return sorted(last_live, key=key)[0], warnings


@dataclass
class DecodeResult:
    id: str
    tokens: list[int]  # extended-vocab ids
    token_strings: list[str]
    summary: str
    score: float
    warnings: list[str]
    attention_history: list[np.ndarray]


def beam_search(params: PGParams, pair: ExamplePair, vocab: Vocabulary,
                cfg: InferenceConfig, q: np.ndarray | None = None) -> DecodeResult:
    """Decode one document, optionally constraining copy attention with q."""
    src_tokens = pair.source_tokens()
    ext = build_extended(src_tokens, vocab)
    n = len(src_tokens)
    warnings: list[str] = []
    mask_mode = cfg.mask_mode
    if mask_mode != "none":
        if q is None:
            raise ValueError("masked decoding requires per-document q")
        if len(q) != n:
            raise ValueError(f"q length {len(q)} != source length {n}")
    mask_cfg = cfg.mask or MaskConfig()
    if mask_mode == "hard":
        eligible = np.asarray(q, dtype=np.float64) > mask_cfg.epsilon
        if not eligible.any():
            warnings.append("mask-empty-fallback")
            mask_mode = "none"

    with no_grad():
        hs, (h0, c0) = encode_source(params, ext.base_ids[None, :])
        additive_pre = (matmul(hs, params.att_w1).data
                        if params.dims.attention == "additive" else None)
    hs_data = hs.data
    ext_ids = ext.ext_ids.astype(np.int64)

    def step_fn(prev: np.ndarray, states: tuple[np.ndarray, ...]):
        with no_grad():
            pre = Tensor(additive_pre) if additive_pre is not None else None
            step = decode_step(params, prev, (Tensor(states[0]), Tensor(states[1])),
                               Tensor(hs_data), additive_pre=pre)
            attn = step.attention.data.astype(np.float64)
            gen = step.generation.data.astype(np.float64)
            p_copy = step.switch.data.astype(np.float64)
        if mask_mode == "hard":
            weights, _ = hard_mask(attn, np.asarray(q, dtype=np.float64), mask_cfg)
            joint = masked_joint(weights, gen, p_copy, ext_ids, ext.ext_size)
        elif mask_mode == "soft":
            weights = soft_mask(attn, np.asarray(q, dtype=np.float64))
            joint = masked_joint(weights, gen, p_copy, ext_ids, ext.ext_size)
        else:
            joint = masked_joint(attn, gen, p_copy, ext_ids, ext.ext_size, renormalize=False)
        logs = np.log(np.maximum(joint, 1e-300))
        new_states = (step.state[0].data, step.state[1].data)
        return logs, attn, new_states

    best, core_warnings = beam_search_core(
        step_fn, (h0.data, c0.data), n, cfg, bos_id=BOS_ID
    )
    warnings.extend(core_warnings)
    token_strings = [ext.token_of(t, vocab) for t in best.tokens]
    return DecodeResult(
        id=pair.id,
        tokens=list(best.tokens),
        token_strings=token_strings,
        summary=" ".join(token_strings),
        score=best.score(cfg),
        warnings=warnings,
        attention_history=best.attention_history,
    )
