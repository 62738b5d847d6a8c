"""Pointer-generator summarizer: attentional seq2seq with a latent copy switch.

The per-step output distribution is a convex mixture of a generation softmax
over the base vocabulary and the attention distribution regrouped over an
extended vocabulary (base ids plus per-example ids for source-only OOV
tokens).  Training maximizes marginal likelihood under the mixture; the
switch is never supervised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import corpus, kernels
from .corpus import BOS_ID, EOS_ID, UNK_ID, ExamplePair, Vocabulary
from .nn import LSTMWeights, bilstm, init_lstm, lstm_cell_forward
from .tensor import (
    Tensor,
    apply_op,
    backward,
    clip,
    concat,
    log,
    matmul,
    mul,
    no_grad,
    parameter,
    reshape,
    sigmoid,
    softmax,
    stack,
    tanh,
    zeros_param,
)
from .optim import adagrad_init, adagrad_step, clip_gradients, zero_grads

ATTENTION_KINDS = ("bilinear", "dot", "additive")


@dataclass
class PGDims:
    vocab_size: int
    emb_dim: int = 32
    enc_hidden: int = 32
    dec_hidden: int = 64
    attention: str = "bilinear"
    with_selector_head: bool = False

    def __post_init__(self) -> None:
        if 2 * self.enc_hidden != self.dec_hidden:
            raise ValueError(
                f"decoder hidden ({self.dec_hidden}) must equal 2x encoder hidden ({self.enc_hidden})"
            )
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"unknown attention kind {self.attention!r}; choose from {ATTENTION_KINDS}")


@dataclass
class PGParams:
    dims: PGDims
    src_emb: Tensor
    tgt_emb: Tensor
    enc: tuple[LSTMWeights, LSTMWeights]
    dec: LSTMWeights
    bridge_h: Tensor
    bridge_h_b: Tensor
    bridge_c: Tensor
    bridge_c_b: Tensor
    w_att: Tensor | None  # bilinear
    att_w1: Tensor | None  # additive
    att_w2: Tensor | None
    att_v: Tensor | None
    w_out: Tensor
    b_out: Tensor
    w_switch: Tensor
    b_switch: Tensor
    w_q: Tensor | None = None  # multi-task / diffmask selector head
    b_q: Tensor | None = None

    def parameters(self) -> dict[str, Tensor]:
        out = {"src_emb": self.src_emb, "tgt_emb": self.tgt_emb,
               "bridge_h": self.bridge_h, "bridge_h_b": self.bridge_h_b,
               "bridge_c": self.bridge_c, "bridge_c_b": self.bridge_c_b,
               "w_out": self.w_out, "b_out": self.b_out,
               "w_switch": self.w_switch, "b_switch": self.b_switch}
        for direction, w in zip(("f", "b"), self.enc):
            out[f"enc.{direction}.wx"] = w.wx
            out[f"enc.{direction}.wh"] = w.wh
            out[f"enc.{direction}.b"] = w.b
        out["dec.wx"] = self.dec.wx
        out["dec.wh"] = self.dec.wh
        out["dec.b"] = self.dec.b
        for name in ("w_att", "att_w1", "att_w2", "att_v", "w_q", "b_q"):
            t = getattr(self, name)
            if t is not None:
                out[name] = t
        return out

    def all_tensors(self) -> dict[str, Tensor]:
        return self.parameters()


def init_pg(dims: PGDims, rng: np.random.Generator) -> PGParams:
    two_e = 2 * dims.enc_hidden
    d = dims.dec_hidden
    v = dims.vocab_size
    w_att = att_w1 = att_w2 = att_v = None
    if dims.attention == "bilinear":
        w_att = parameter((d, two_e), rng, name="w_att")
    elif dims.attention == "additive":
        att_w1 = parameter((two_e, d), rng, name="att_w1")
        att_w2 = parameter((d, d), rng, name="att_w2")
        att_v = parameter((d, 1), rng, name="att_v")
    w_q = b_q = None
    if dims.with_selector_head:
        w_q = parameter((two_e, 1), rng, name="w_q")
        b_q = zeros_param((1,), name="b_q")
    return PGParams(
        dims=dims,
        src_emb=parameter((v, dims.emb_dim), rng, name="src_emb"),
        tgt_emb=parameter((v, dims.emb_dim), rng, name="tgt_emb"),
        enc=(init_lstm(rng, dims.emb_dim, dims.enc_hidden, "enc.f"),
             init_lstm(rng, dims.emb_dim, dims.enc_hidden, "enc.b")),
        dec=init_lstm(rng, dims.emb_dim, d, "dec"),
        bridge_h=parameter((two_e, d), rng, name="bridge_h"),
        bridge_h_b=zeros_param((d,), name="bridge_h_b"),
        bridge_c=parameter((two_e, d), rng, name="bridge_c"),
        bridge_c_b=zeros_param((d,), name="bridge_c_b"),
        w_att=w_att, att_w1=att_w1, att_w2=att_w2, att_v=att_v,
        w_out=parameter((d + two_e, v), rng, name="w_out"),
        b_out=zeros_param((v,), name="b_out"),
        w_switch=parameter((d + two_e + dims.emb_dim, 1), rng, name="w_switch"),
        b_switch=zeros_param((1,), name="b_switch"),
        w_q=w_q, b_q=b_q,
    )


def pg_from_tensors(dims: PGDims, tensors: dict) -> PGParams:
    def ten(name: str) -> Tensor:
        t = tensors[name]
        data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float32)
        return Tensor(data, requires_grad=True, name=name)

    def opt(name: str) -> Tensor | None:
        return ten(name) if name in tensors else None

    def lstm(tag: str) -> LSTMWeights:
        return LSTMWeights(wx=ten(f"{tag}.wx"), wh=ten(f"{tag}.wh"), b=ten(f"{tag}.b"))

    return PGParams(
        dims=dims,
        src_emb=ten("src_emb"), tgt_emb=ten("tgt_emb"),
        enc=(lstm("enc.f"), lstm("enc.b")), dec=lstm("dec"),
        bridge_h=ten("bridge_h"), bridge_h_b=ten("bridge_h_b"),
        bridge_c=ten("bridge_c"), bridge_c_b=ten("bridge_c_b"),
        w_att=opt("w_att"), att_w1=opt("att_w1"), att_w2=opt("att_w2"), att_v=opt("att_v"),
        w_out=ten("w_out"), b_out=ten("b_out"),
        w_switch=ten("w_switch"), b_switch=ten("b_switch"),
        w_q=opt("w_q"), b_q=opt("b_q"),
    )


@dataclass
class ExtendedVocabExample:
    """Per-example extended-vocabulary bookkeeping for the copy mechanism."""

    tokens: list[str]
    base_ids: np.ndarray  # (n,) base vocab ids, UNK where OOV
    ext_ids: np.ndarray  # (n,) base id, or vocab_size + k for the k-th distinct OOV
    oov_tokens: list[str]
    vocab_size: int

    @property
    def ext_size(self) -> int:
        return self.vocab_size + len(self.oov_tokens)

    def occurrences(self) -> dict[int, list[int]]:
        occ: dict[int, list[int]] = {}
        for pos, ext in enumerate(self.ext_ids.tolist()):
            occ.setdefault(int(ext), []).append(pos)
        return occ

    def token_of(self, ext_id: int, vocab: Vocabulary) -> str:
        if ext_id < self.vocab_size:
            return vocab.token_of(ext_id)
        return self.oov_tokens[ext_id - self.vocab_size]


def build_extended(tokens: Sequence[str], vocab: Vocabulary) -> ExtendedVocabExample:
    base = vocab.encode(tokens)
    ext = base.copy()
    oov: list[str] = []
    oov_index: dict[str, int] = {}
    for pos, tok in enumerate(tokens):
        if base[pos] == UNK_ID and tok not in vocab:
            idx = oov_index.setdefault(tok, len(oov))
            if idx == len(oov):
                oov.append(tok)
            ext[pos] = len(vocab) + idx
    return ExtendedVocabExample(tokens=list(tokens), base_ids=base, ext_ids=ext,
                                oov_tokens=oov, vocab_size=len(vocab))


def target_ext_ids(tokens: Sequence[str], vocab: Vocabulary, ex: ExtendedVocabExample) -> np.ndarray:
    oov_index = {tok: i for i, tok in enumerate(ex.oov_tokens)}
    ids = np.empty(len(tokens), dtype=np.int32)
    for j, tok in enumerate(tokens):
        if tok in vocab:
            ids[j] = vocab.id_of(tok)
        elif tok in oov_index:
            ids[j] = len(vocab) + oov_index[tok]
        else:
            ids[j] = UNK_ID
    return ids


def encode_source(params: PGParams, ids: np.ndarray, mask: np.ndarray | None = None):
    """Encoder states (B, n, 2E) plus the bridged decoder init state."""
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ValueError("encode_source: empty source")
    steps = ids.shape[1]
    xs = [params.src_emb[ids[:, t]] for t in range(steps)]
    states, (hf, cf), (hb, cb) = bilstm(xs, params.enc[0], params.enc[1], mask=mask)
    hs = stack(states, axis=1)  # (B, n, 2E)
    final_h = concat([hf, hb], axis=-1)
    final_c = concat([cf, cb], axis=-1)
    h0 = matmul(final_h, params.bridge_h) + params.bridge_h_b
    c0 = matmul(final_c, params.bridge_c) + params.bridge_c_b
    return hs, (h0, c0)


@dataclass
class DecoderStepOutput:
    attention: Tensor  # (B, n)
    generation: Tensor  # (B, V)
    switch: Tensor  # (B, 1) probability of copying
    state: tuple[Tensor, Tensor]
    input_emb: Tensor


def attention_scores(params: PGParams, h_dec: Tensor, hs: Tensor,
                     additive_pre: Tensor | None = None) -> Tensor:
    kind = params.dims.attention
    if kind == "bilinear":
        u = matmul(h_dec, params.w_att)  # (B, 2E)
        scores = matmul(hs, reshape(u, (u.shape[0], u.shape[1], 1)))
    elif kind == "dot":
        scores = matmul(hs, reshape(h_dec, (h_dec.shape[0], h_dec.shape[1], 1)))
    else:  # additive
        pre = additive_pre if additive_pre is not None else matmul(hs, params.att_w1)
        mixed = tanh(pre + reshape(matmul(h_dec, params.att_w2),
                                   (h_dec.shape[0], 1, params.att_w2.shape[1])))
        scores = matmul(mixed, params.att_v)
    return reshape(scores, (scores.shape[0], scores.shape[1]))


def decode_step(params: PGParams, prev_ids: np.ndarray, state: tuple[Tensor, Tensor],
                hs: Tensor, src_mask: np.ndarray | None = None,
                additive_pre: Tensor | None = None) -> DecoderStepOutput:
    """One teacher-forcing/beam step: attention, generation softmax, copy switch."""
    x = params.tgt_emb[np.where(prev_ids >= params.dims.vocab_size, UNK_ID, prev_ids)]
    h, c = lstm_cell_forward(x, state[0], state[1], params.dec)
    scores = attention_scores(params, h, hs, additive_pre=additive_pre)
    if src_mask is not None:
        scores = scores + (1.0 - src_mask) * -1e9
    attn = softmax(scores, axis=-1)
    ctx = reshape(matmul(reshape(attn, (attn.shape[0], 1, attn.shape[1])), hs),
                  (attn.shape[0], hs.shape[2]))
    out_in = concat([h, ctx], axis=-1)
    gen = softmax(matmul(out_in, params.w_out) + params.b_out, axis=-1)
    switch = sigmoid(matmul(concat([h, ctx, x], axis=-1), params.w_switch) + params.b_switch)
    return DecoderStepOutput(attention=attn, generation=gen, switch=switch,
                             state=(h, c), input_emb=x)


def scatter_copy_probs(attn: Tensor, ext_ids: np.ndarray, size: int) -> Tensor:
    """Regroup attention over extended-vocab ids (sum over occurrences)."""
    ids = np.ascontiguousarray(ext_ids, dtype=np.int64)
    if attn.data.ndim == 2:
        data = kernels.scatter_copy_sums_batch(np.ascontiguousarray(attn.data), ids, size)

        def bw(g):
            return (np.take_along_axis(np.ascontiguousarray(g), ids, axis=1),)
    else:
        data = kernels.scatter_copy_sums(np.ascontiguousarray(attn.data), ids, size)

        def bw(g):
            return (g[ids],)

    return apply_op(data, (attn,), bw)


def joint_copy_distribution(step: DecoderStepOutput, occurrences: dict[int, list[int]],
                            ext_size: int) -> Tensor:
    """Mixture P(w) = p(copy)*sum_{i: x_i=w} a_i + p(gen)*P_gen(w) over the extended vocab.

    `occurrences` must partition all source positions.
    """
    n = step.attention.shape[-1]
    seen = sorted(pos for positions in occurrences.values() for pos in positions)
    if seen != list(range(n)):
        raise ValueError("occurrence map inconsistent with source length")
    ext_ids = np.empty(n, dtype=np.int64)
    for ext, positions in occurrences.items():
        for pos in positions:
            ext_ids[pos] = ext
    batched = np.broadcast_to(ext_ids, (step.attention.shape[0], n))
    return assemble_joint(step, batched, ext_size)


def assemble_joint(step: DecoderStepOutput, ext_ids: np.ndarray, ext_size: int,
                   copy_weights: Tensor | None = None) -> Tensor:
    """Joint extended-vocab distribution; renormalized when copy weights were masked."""
    bsz, v = step.generation.shape
    copy_side = scatter_copy_probs(copy_weights if copy_weights is not None else step.attention,
                                   ext_ids, ext_size)
    pad = Tensor(np.zeros((bsz, ext_size - v), dtype=step.generation.dtype))
    gen_side = concat([step.generation, pad], axis=-1)
    joint = mul(copy_side, step.switch) + mul(gen_side, 1.0 - step.switch)
    if copy_weights is not None:
        total = joint.sum(axis=-1, keepdims=True)
        joint = joint / total
    return joint


@dataclass
class Batch:
    ids: list[str]
    src_ids: np.ndarray  # (B, Ts) base ids
    src_ext_ids: np.ndarray  # (B, Ts)
    src_mask: np.ndarray
    ext_size: int
    dec_in: np.ndarray  # (B, Tt) BOS + target base ids
    dec_out: np.ndarray  # (B, Tt) target ext ids + EOS
    tgt_mask: np.ndarray
    copy_labels: np.ndarray | None  # (B, Ts) floats
    gold_attn: np.ndarray | None  # (B, Tt, Ts) 0/1 alignment for copied steps
    examples: list[ExtendedVocabExample]


def make_batch(pairs: Sequence[ExamplePair], vocab: Vocabulary,
               with_labels: bool = False, with_gold_attn: bool = False) -> Batch:
    exts = [build_extended(p.source_tokens(), vocab) for p in pairs]
    bsz = len(pairs)
    ts = max(len(e.tokens) for e in exts)
    tgts = [p.target_tokens() for p in pairs]
    tt = max(len(t) for t in tgts) + 1  # room for EOS / BOS shift
    src_ids = np.zeros((bsz, ts), dtype=np.int32)
    src_ext = np.zeros((bsz, ts), dtype=np.int32)
    src_mask = np.zeros((bsz, ts), dtype=np.float32)
    dec_in = np.zeros((bsz, tt), dtype=np.int32)
    dec_out = np.zeros((bsz, tt), dtype=np.int32)
    tgt_mask = np.zeros((bsz, tt), dtype=np.float32)
    labels = np.zeros((bsz, ts), dtype=np.float32) if with_labels else None
    gold = np.zeros((bsz, tt, ts), dtype=np.float32) if with_gold_attn else None
    max_oov = max(len(e.oov_tokens) for e in exts)
    ext_size = len(vocab) + max_oov
    for b, (pair, ext, tgt) in enumerate(zip(pairs, exts, tgts)):
        n = len(ext.tokens)
        src_ids[b, :n] = ext.base_ids
        src_ext[b, :n] = ext.ext_ids
        src_mask[b, :n] = 1.0
        t_base = vocab.encode(tgt)
        t_ext = target_ext_ids(tgt, vocab, ext)
        m = len(tgt)
        dec_in[b, 0] = BOS_ID
        dec_in[b, 1 : m + 1] = t_base
        dec_out[b, :m] = t_ext
        dec_out[b, m] = EOS_ID
        tgt_mask[b, : m + 1] = 1.0
        if with_labels:
            if pair.copy_labels is None:
                raise ValueError(f"example {pair.id} has no copy labels")
            labels[b, :n] = pair.copy_labels
        if with_gold_attn:
            aligned = corpus.aligned_source_positions(pair.source_tokens(), tgt)
            for j, positions in enumerate(aligned):
                for pos in positions:
                    gold[b, j, pos] = 1.0
    return Batch(ids=[p.id for p in pairs], src_ids=src_ids, src_ext_ids=src_ext,
                 src_mask=src_mask, ext_size=ext_size, dec_in=dec_in, dec_out=dec_out,
                 tgt_mask=tgt_mask, copy_labels=labels, gold_attn=gold, examples=exts)


@dataclass
class TeacherForcedResult:
    log_probs: Tensor  # (B, Tt) masked log P(gold)
    attentions: list[Tensor]  # per step (B, Ts)
    selector_q: Tensor | None  # (B, Ts) from the shared-encoder head
    tgt_mask: np.ndarray

    def nll_mean(self) -> Tensor:
        """Mean over each example's target length, then over the batch."""
        return self.per_example_nll().mean()

    def per_example_nll(self) -> Tensor:
        lengths = np.maximum(self.tgt_mask.sum(axis=-1), 1.0).astype(self.log_probs.dtype)
        return -(self.log_probs.sum(axis=-1) / lengths)

    def nll_sum(self) -> float:
        return -float(self.log_probs.data.sum())

    def token_count(self) -> float:
        return float(self.tgt_mask.sum())


def selector_head_q(params: PGParams, hs: Tensor) -> Tensor:
    if params.w_q is None or params.b_q is None:
        raise ValueError("model has no selector head (multi-task/diffmask only)")
    logits = reshape(matmul(hs, params.w_q), (hs.shape[0], hs.shape[1])) + params.b_q
    return sigmoid(logits)


def forward_teacher_forced(params: PGParams, batch: Batch, head: str = "none",
                           soft_mask_q: Tensor | None = None) -> TeacherForcedResult:
    """Teacher-forced pass.

    head="tag" computes the shared-encoder selection head without touching the
    mixture (Multi-Task); head="mask" additionally soft-masks the copy
    attention by the head's q (DiffMask).  An explicit soft_mask_q masks with
    externally supplied probabilities.
    """
    if head not in ("none", "tag", "mask"):
        raise ValueError(f"unknown head mode {head!r}")
    hs, state = encode_source(params, batch.src_ids, mask=batch.src_mask)
    additive_pre = matmul(hs, params.att_w1) if params.dims.attention == "additive" else None
    head_q = selector_head_q(params, hs) if head in ("tag", "mask") else None
    q = soft_mask_q
    if head == "mask":
        q = head_q
    steps = batch.dec_in.shape[1]
    bsz = batch.dec_in.shape[0]
    logps = []
    attentions = []
    ext_ids64 = np.ascontiguousarray(batch.src_ext_ids, dtype=np.int64)
    rows = np.arange(bsz)
    for t in range(steps):
        step = decode_step(params, batch.dec_in[:, t], state, hs,
                           src_mask=batch.src_mask, additive_pre=additive_pre)
        state = step.state
        attentions.append(step.attention)
        weights = mul(step.attention, q) if q is not None else None
        joint = assemble_joint(step, ext_ids64, batch.ext_size, copy_weights=weights)
        gold = joint[rows, batch.dec_out[:, t]]
        logp = log(clip(gold, 1e-12, 1.0))
        logps.append(mul(logp, batch.tgt_mask[:, t]))
    log_matrix = stack(logps, axis=1)
    return TeacherForcedResult(log_probs=log_matrix, attentions=attentions,
                               selector_q=head_q, tgt_mask=batch.tgt_mask)


def sequence_nll(params: PGParams, pair: ExamplePair, vocab: Vocabulary) -> Tensor:
    """Teacher-forced negative log-likelihood, mean over the target length."""
    batch = make_batch([pair], vocab)
    return forward_teacher_forced(params, batch).nll_mean()


def head_q_for(params: PGParams, tokens: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    """Selection probabilities from the shared-encoder head for one document."""
    ids = vocab.encode(tokens)[None, :]
    with no_grad():
        hs, _ = encode_source(params, ids)
        q = selector_head_q(params, hs)
    return q.data[0].astype(np.float64)


@dataclass
class PGTrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 0.15
    accum0: float = 0.1
    clip_norm: float = 2.0
    multitask_weight: float = 1.0
    val_fraction: float = 0.05
    seed: int = 0


def lr_schedule_step(lr: float, val_ppl: float, prev_ppl: float | None,
                     decay_started: bool) -> tuple[float, bool]:
    """Halve the rate after each epoch once validation perplexity first fails
    to decrease."""
    if prev_ppl is not None and val_ppl >= prev_ppl:
        decay_started = True
    if decay_started:
        lr /= 2.0
    return lr, decay_started


def validation_perplexity(params: PGParams, batches: list[Batch], mode: "TrainMode") -> float:
    """exp(total NLL / total target tokens) under the mode's predictive mixture."""
    from .masking import TrainMode

    head = "mask" if mode is TrainMode.DIFFMASK else "none"
    total_nll, total_tokens = 0.0, 0.0
    with no_grad():
        for batch in batches:
            res = forward_teacher_forced(params, batch, head=head)
            total_nll += res.nll_sum()
            total_tokens += res.token_count()
    return float(np.exp(total_nll / max(1.0, total_tokens)))


def train_summarizer(dataset: Sequence[ExamplePair], vocab: Vocabulary, dims: PGDims,
                     cfg: PGTrainConfig, mode: "TrainMode | str" = "baseline",
                     val_dataset: Sequence[ExamplePair] | None = None,
                     params: PGParams | None = None):
    """Adagrad training with gradient clipping and the halving LR schedule.

    The learning rate halves after each epoch once validation perplexity
    first fails to decrease.  Returns (params, history); history rows are
    {"epoch", "train_nll", "val_ppl", "lr"}.
    """
    from .masking import TrainMode, copy_supervision_loss, multitask_loss
    from .selector import selector_loss

    if isinstance(mode, str):
        mode = TrainMode.parse(mode)
    pairs = list(dataset)
    if not pairs:
        raise ValueError("empty dataset")
    needs_labels = mode in (TrainMode.MULTI_TASK, TrainMode.DIFFMASK)
    needs_gold = mode is TrainMode.MASK_ONLY
    if dims.with_selector_head != needs_labels:
        dims = PGDims(vocab_size=dims.vocab_size, emb_dim=dims.emb_dim,
                      enc_hidden=dims.enc_hidden, dec_hidden=dims.dec_hidden,
                      attention=dims.attention, with_selector_head=needs_labels)
    rng = np.random.default_rng(cfg.seed)
    init_rng, shuffle_rng = rng.spawn(2)
    if params is None:
        params = init_pg(dims, init_rng)

    if val_dataset is None:
        n_val = 0
        if cfg.val_fraction > 0 and len(pairs) > 1:
            n_val = max(1, int(round(len(pairs) * cfg.val_fraction)))
        val_pairs = pairs[len(pairs) - n_val :] if n_val else []
        train_pairs = pairs[: len(pairs) - n_val] or pairs
    else:
        val_pairs = list(val_dataset)
        train_pairs = pairs

    order = shuffle_rng.permutation(len(train_pairs))
    train_batches = [
        make_batch([train_pairs[i] for i in order[s : s + cfg.batch_size]], vocab,
                   with_labels=needs_labels, with_gold_attn=needs_gold)
        for s in range(0, len(order), cfg.batch_size)
    ]
    val_batches = [
        make_batch(val_pairs[s : s + cfg.batch_size], vocab)
        for s in range(0, len(val_pairs), cfg.batch_size)
    ] if val_pairs else []

    opt = adagrad_init(params.parameters(), lr=cfg.lr, accum0=cfg.accum0)
    history: list[dict] = []
    prev_ppl: float | None = None
    decay_started = False
    head = {TrainMode.MULTI_TASK: "tag", TrainMode.DIFFMASK: "mask"}.get(mode, "none")
    for epoch in range(cfg.epochs):
        batch_order = shuffle_rng.permutation(len(train_batches))
        nll_total, nll_batches = 0.0, 0
        for bi in batch_order:
            batch = train_batches[bi]
            res = forward_teacher_forced(params, batch, head=head)
            nll = res.nll_mean()
            if mode is TrainMode.MASK_ONLY:
                aux = copy_supervision_loss(res.attentions, batch.gold_attn, batch.tgt_mask)
                loss = multitask_loss(nll, aux.mean(), cfg.multitask_weight)
            elif mode in (TrainMode.MULTI_TASK, TrainMode.DIFFMASK):
                tag = selector_loss(res.selector_q, batch.copy_labels, mask=batch.src_mask)
                loss = multitask_loss(nll, tag, cfg.multitask_weight)
            else:
                loss = nll
            zero_grads(params.parameters())
            backward(loss)
            clip_gradients(params.parameters(), cfg.clip_norm)
            adagrad_step(params.parameters(), opt)
            nll_total += float(nll.data)
            nll_batches += 1
        val_ppl = validation_perplexity(params, val_batches, mode) if val_batches else None
        if val_ppl is not None:
            opt.lr, decay_started = lr_schedule_step(opt.lr, val_ppl, prev_ppl, decay_started)
            prev_ppl = val_ppl
        history.append({"epoch": epoch + 1, "train_nll": nll_total / max(1, nll_batches),
                        "val_ppl": val_ppl, "lr": opt.lr})
    return params, history
