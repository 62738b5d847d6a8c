"""Independent oracles and small utilities shared by the test modules.

Everything here is deliberately written as direct rule transcription
(enumeration, brute force), independent of the library's algorithms.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from busum.beam import InferenceConfig, hypothesis_score
from busum.tensor import Tensor


def to_f64(params) -> None:
    """Flip a model's parameters to float64 in place for gradient checks."""
    for t in params.parameters().values():
        t.data = t.data.astype(np.float64)


def oracle_copy_labels(source: list, target: list) -> list[int]:
    """Brute-force span alignment: enumerate all spans, apply the rules directly."""
    n = len(source)
    occurs = []
    for s in range(n):
        for e in range(s, n):
            span = source[s : e + 1]
            if any(target[j : j + len(span)] == span
                   for j in range(len(target) - len(span) + 1)):
                occurs.append((s, e))
    labels = [0] * n
    for p in range(n):
        covering = [(s, e) for (s, e) in occurs if s <= p <= e]
        if not covering:
            continue
        longest = max(e - s + 1 for s, e in covering)
        for s, e in covering:
            if e - s + 1 != longest:
                continue
            span = source[s : e + 1]
            first = next(i for i in range(n - longest + 1)
                         if source[i : i + longest] == span)
            if first == s:
                labels[p] = 1
                break
    return labels


def oracle_lcs(a: list, b: list) -> int:
    """Subsequence enumeration over the shorter side (exponential, for tiny inputs)."""
    short, other = (a, b) if len(a) <= len(b) else (b, a)
    best = 0
    for mask in range(1 << len(short)):
        sub = [short[i] for i in range(len(short)) if mask >> i & 1]
        if len(sub) <= best:
            continue
        pos = 0
        ok = True
        for tok in sub:
            while pos < len(other) and other[pos] != tok:
                pos += 1
            if pos == len(other):
                ok = False
                break
            pos += 1
        if ok:
            best = len(sub)
    return best


class ToyModel:
    """Hand-set Markov step tables driving the beam-search core.

    Distributions depend on (step index, previous token).  Real tokens are
    0..n_real-1, EOS is n_real, BOS is n_real+1 (never emitted).  The state
    is a step counter so the core can be driven without a neural model.
    """

    def __init__(self, rng: np.random.Generator, n_real: int = 3, horizon: int = 3,
                 n_src: int = 3):
        self.n_real = n_real
        self.eos = n_real
        self.bos = n_real + 1
        self.horizon = horizon
        self.n_src = n_src
        v = n_real + 1
        self.logp = rng.uniform(-3.0, 0.0, size=(horizon + 1, self.bos + 1, v))
        self.logp -= np.log(np.exp(self.logp).sum(axis=-1, keepdims=True))
        raw = rng.random((horizon + 1, self.bos + 1, n_src)) + 0.05
        self.attn = raw / raw.sum(axis=-1, keepdims=True)

    def step_fn(self, prev: np.ndarray, states):
        step = int(states[0][0, 0])
        logs = self.logp[step][prev]
        attns = self.attn[step][prev]
        return logs, attns, (states[0] + 1.0,)

    def init_state(self):
        return (np.zeros((1, 1)),)

    def enumerate_best(self, cfg: InferenceConfig):
        """Exhaustive scoring of every candidate sequence under the same rules."""
        finished = []
        unfinished = []
        for length in range(1, cfg.max_length + 1):
            for seq in product(range(self.n_real), repeat=length):
                if cfg.block_trigrams and has_repeated_trigram(seq):
                    continue
                logprob = 0.0
                history = []
                prev = self.bos
                for step, token in enumerate(seq):
                    logprob += self.logp[step][prev][token]
                    history.append(self.attn[step][prev])
                    prev = token
                if length == cfg.max_length:
                    unfinished.append((seq, logprob, list(history)))
                if length >= cfg.min_length:
                    total = logprob + self.logp[length][prev][self.eos]
                    finished.append((seq, total, list(history)))
        pool = finished if finished else unfinished
        scored = [(-hypothesis_score(lp, max(1, len(seq)), hist, cfg), seq)
                  for seq, lp, hist in pool]
        scored.sort()
        return list(scored[0][1]), -scored[0][0]


def has_repeated_trigram(seq) -> bool:
    seen = set()
    for i in range(len(seq) - 2):
        tri = tuple(seq[i : i + 3])
        if tri in seen:
            return True
        seen.add(tri)
    return False


def sample_params(params_dict: dict, rng: np.random.Generator, k: int) -> dict:
    names = sorted(params_dict)
    take = min(k, len(names))
    chosen = rng.choice(len(names), size=take, replace=False)
    return {names[i]: params_dict[names[i]] for i in sorted(chosen)}


# ---------------------------------------------------------------------------
# gradient-check instance builders (tiny random models, float64)
# ---------------------------------------------------------------------------

WORDS = [f"k{i}" for i in range(9)]


def _random_pairs(rng, n_pairs=2, with_labels=False):
    from busum.corpus import ExamplePair, align_copy_labels

    pairs = []
    for i in range(n_pairs):
        n = int(rng.integers(3, 7))
        m = int(rng.integers(2, 4))
        src = [WORDS[int(j)] for j in rng.integers(0, len(WORDS), n)]
        tgt = [WORDS[int(j)] for j in rng.integers(0, len(WORDS), m)]
        labels = align_copy_labels(src, tgt) if with_labels else None
        pairs.append(ExamplePair(f"g{i}", [src], [tgt], labels))
    return pairs


def make_selector_check(rng):
    from busum.corpus import build_vocab
    from busum.selector import SelectorDims, init_selector, selector_forward, selector_loss

    pairs = _random_pairs(rng, with_labels=True)
    vocab = build_vocab(pairs, 9)
    dims = SelectorDims(vocab_size=len(vocab), static_dim=3, ctx_dim=4, tagger_hidden=2,
                        dropout=0.0)
    params = init_selector(dims, rng)
    to_f64(params)
    params.static_table.data = params.static_table.data.astype(np.float64)
    ids = np.stack([vocab.encode(pairs[0].source_tokens()[:3])])
    labels = np.asarray(pairs[0].copy_labels[:3], dtype=np.float64)[None, :]

    def f(ps):
        q = selector_forward(params, ids)
        return selector_loss(q, labels)

    return params.parameters(), f


def make_pg_check(rng, mode="baseline"):
    from busum.corpus import build_vocab
    from busum.masking import TrainMode, copy_supervision_loss, multitask_loss
    from busum.pointer_gen import PGDims, forward_teacher_forced, init_pg, make_batch
    from busum.selector import selector_loss

    mode = TrainMode.parse(mode)
    pairs = _random_pairs(rng, with_labels=True)
    vocab = build_vocab(pairs, 7)  # small vocab so extended ids appear
    dims = PGDims(vocab_size=len(vocab), emb_dim=3, enc_hidden=2, dec_hidden=4,
                  attention=str(rng.choice(["bilinear", "dot", "additive"])),
                  with_selector_head=mode in (TrainMode.MULTI_TASK, TrainMode.DIFFMASK))
    params = init_pg(dims, rng)
    to_f64(params)
    batch = make_batch(pairs, vocab,
                       with_labels=dims.with_selector_head,
                       with_gold_attn=mode is TrainMode.MASK_ONLY)
    head = {TrainMode.MULTI_TASK: "tag", TrainMode.DIFFMASK: "mask"}.get(mode, "none")

    def f(ps):
        res = forward_teacher_forced(params, batch, head=head)
        nll = res.nll_mean()
        if mode is TrainMode.MASK_ONLY:
            return multitask_loss(nll, copy_supervision_loss(
                res.attentions, batch.gold_attn, batch.tgt_mask).mean(), 1.0)
        if mode in (TrainMode.MULTI_TASK, TrainMode.DIFFMASK):
            return multitask_loss(nll, selector_loss(
                res.selector_q, batch.copy_labels, mask=batch.src_mask), 1.0)
        return nll

    return params.parameters(), f


def make_masked_joint_check(rng, hard=True):
    """Gradient path through the lambda-scaled mask and joint renormalization."""
    from busum.tensor import Tensor, clip, concat, log, mul, softmax
    from busum.pointer_gen import scatter_copy_probs

    n = int(rng.integers(2, 7))
    v = int(rng.integers(2, 5))
    oov = int(rng.integers(1, 3))
    lam = float(rng.uniform(0.5, 3.0))
    q = rng.random(n)
    eps = 0.5
    if hard and not (q > eps).any():
        q[int(rng.integers(0, n))] = 0.9
    elig = (q > eps).astype(np.float64) if hard else q
    ids = rng.integers(0, v + oov, size=(1, n)).astype(np.int64)
    gold = int(rng.integers(0, v + oov))
    params = {
        "attn_logits": Tensor(rng.normal(size=(1, n)), requires_grad=True),
        "gen_logits": Tensor(rng.normal(size=(1, v)), requires_grad=True),
        "switch_logit": Tensor(rng.normal(size=(1, 1)), requires_grad=True),
    }

    def f(ps):
        from busum.tensor import sigmoid

        attn = softmax(ps["attn_logits"], axis=-1)
        gen = softmax(ps["gen_logits"], axis=-1)
        p_copy = sigmoid(ps["switch_logit"])
        weights = mul(mul(attn, elig), lam) if hard else mul(attn, elig)
        copy_side = scatter_copy_probs(weights, ids, v + oov)
        pad = Tensor(np.zeros((1, oov)))
        gen_side = concat([gen, pad], axis=-1)
        joint = mul(copy_side, p_copy) + mul(gen_side, 1.0 - p_copy)
        joint = joint / joint.sum(axis=-1, keepdims=True)
        return -log(clip(joint[np.arange(1), np.array([gold])], 1e-12, 1.0)).sum()

    return params, f
