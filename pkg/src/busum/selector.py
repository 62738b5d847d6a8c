"""Word-level content selector: two-channel embeddings feeding a BiLSTM tagger.

The static channel is a frozen word-vector table (file-loaded, or seeded
random when no file is given) with one trainable UNK row.  The contextual
channel is a small jointly trained 2-layer bidirectional LSTM encoder whose
layer states h^(0..2) are mixed by four trainable scalars into e^(c).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import corpus
from .nn import LSTMWeights, bilstm, init_lstm
from .tensor import (
    Tensor,
    backward,
    clip,
    concat,
    dropout,
    log,
    matmul,
    mul,
    no_grad,
    parameter,
    sigmoid,
    stack,
    zeros_param,
)
from .optim import adagrad_init, adagrad_step, zero_grads


@dataclass
class SelectorDims:
    vocab_size: int
    static_dim: int = 32
    ctx_dim: int = 32
    tagger_hidden: int = 64
    dropout: float = 0.5

    def __post_init__(self) -> None:
        if self.ctx_dim % 2:
            raise ValueError("ctx_dim must be even (split across directions)")


@dataclass
class SelectorParams:
    dims: SelectorDims
    static_table: Tensor  # frozen (V, static_dim)
    static_known: np.ndarray  # (V,) 1.0 where the row came from the vector file
    static_unk: Tensor  # trainable row for out-of-file words
    ctx_emb: Tensor
    ctx_l1: tuple[LSTMWeights, LSTMWeights]
    ctx_l2: tuple[LSTMWeights, LSTMWeights]
    gamma: Tensor  # (1,)
    layer_scales: Tensor  # (3,) raw s_0..2
    tag_l1: tuple[LSTMWeights, LSTMWeights]
    tag_l2: tuple[LSTMWeights, LSTMWeights]
    w_s: Tensor
    b_s: Tensor

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {"static_unk": self.static_unk, "ctx_emb": self.ctx_emb,
                                  "gamma": self.gamma, "layer_scales": self.layer_scales,
                                  "w_s": self.w_s, "b_s": self.b_s}
        for tag, pair in (("ctx_l1", self.ctx_l1), ("ctx_l2", self.ctx_l2),
                          ("tag_l1", self.tag_l1), ("tag_l2", self.tag_l2)):
            for direction, w in zip(("f", "b"), pair):
                out[f"{tag}.{direction}.wx"] = w.wx
                out[f"{tag}.{direction}.wh"] = w.wh
                out[f"{tag}.{direction}.b"] = w.b
        return out

    def all_tensors(self) -> dict[str, Tensor | np.ndarray]:
        out: dict[str, Tensor | np.ndarray] = dict(self.parameters())
        out["static_table"] = self.static_table
        out["static_known"] = self.static_known.astype(np.float32)
        return out


def init_selector(dims: SelectorDims, rng: np.random.Generator,
                  static_table: np.ndarray | None = None,
                  static_known: np.ndarray | None = None) -> SelectorParams:
    half = dims.ctx_dim // 2
    table = static_table
    if table is None:
        # stands in for pre-trained vectors, so unit scale rather than weight scale
        table = rng.uniform(-1.0, 1.0, size=(dims.vocab_size, dims.static_dim)).astype(np.float32)
        static_known = np.ones(dims.vocab_size, dtype=np.float32)
    if static_known is None:
        static_known = np.ones(dims.vocab_size, dtype=np.float32)
    tag_in = dims.static_dim + dims.ctx_dim
    th = dims.tagger_hidden
    return SelectorParams(
        dims=dims,
        static_table=Tensor(table.astype(np.float32)),
        static_known=static_known.astype(np.float32),
        static_unk=parameter((dims.static_dim,), rng, name="static_unk"),
        ctx_emb=parameter((dims.vocab_size, dims.ctx_dim), rng, name="ctx_emb"),
        ctx_l1=(init_lstm(rng, dims.ctx_dim, half, "ctx_l1.f"),
                init_lstm(rng, dims.ctx_dim, half, "ctx_l1.b")),
        ctx_l2=(init_lstm(rng, dims.ctx_dim, half, "ctx_l2.f"),
                init_lstm(rng, dims.ctx_dim, half, "ctx_l2.b")),
        gamma=Tensor(np.ones(1, dtype=np.float32), requires_grad=True, name="gamma"),
        layer_scales=Tensor(np.full(3, 1.0 / 3.0, dtype=np.float32), requires_grad=True,
                            name="layer_scales"),
        tag_l1=(init_lstm(rng, tag_in, th, "tag_l1.f"), init_lstm(rng, tag_in, th, "tag_l1.b")),
        tag_l2=(init_lstm(rng, 2 * th, th, "tag_l2.f"), init_lstm(rng, 2 * th, th, "tag_l2.b")),
        w_s=parameter((2 * th, 1), rng, name="w_s"),
        b_s=zeros_param((1,), name="b_s"),
    )


def mix_layers(layers: list[Tensor], gamma: Tensor, scales: Tensor) -> Tensor:
    """e^(c) = gamma * sum_l s_l * h^(l), raw (unnormalized) scalars."""
    if len(layers) != 3:
        raise ValueError(f"expected 3 layer states, got {len(layers)}")
    mixed = mul(layers[0], scales[0:1])
    mixed = mixed + mul(layers[1], scales[1:2])
    mixed = mixed + mul(layers[2], scales[2:3])
    return mul(mixed, gamma)


def contextual_layers(params: SelectorParams, ids: np.ndarray,
                      mask: np.ndarray | None = None) -> list[list[Tensor]]:
    """Per-step layer states [h0_t, h1_t, h2_t] of the contextual encoder."""
    steps = ids.shape[1]
    h0 = [params.ctx_emb[ids[:, t]] for t in range(steps)]
    h1, _, _ = bilstm(h0, params.ctx_l1[0], params.ctx_l1[1], mask=mask)
    h2, _, _ = bilstm(h1, params.ctx_l2[0], params.ctx_l2[1], mask=mask)
    return [h0, h1, h2]


def contextual_embed(params: SelectorParams, ids: np.ndarray,
                     mask: np.ndarray | None = None) -> list[Tensor]:
    """Per-step mixed contextual embeddings e^(c)."""
    h0, h1, h2 = contextual_layers(params, ids, mask=mask)
    return [mix_layers([h0[t], h1[t], h2[t]], params.gamma, params.layer_scales)
            for t in range(len(h0))]


def selector_forward(params: SelectorParams, ids: np.ndarray,
                     mask: np.ndarray | None = None, training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Selection probabilities q, shape (batch, steps), each in [0, 1]."""
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ValueError("selector_forward: empty token sequence")
    if training and rng is None:
        raise ValueError("training forward needs an rng for dropout")
    steps = ids.shape[1]
    e_c = contextual_embed(params, ids, mask=mask)
    rate = params.dims.dropout
    xs = []
    for t in range(steps):
        known = params.static_known[ids[:, t]][:, None]
        e_w = mul(params.static_table[ids[:, t]], known) + mul(params.static_unk, 1.0 - known)
        x = concat([e_w, e_c[t]], axis=-1)
        if training:
            x = dropout(x, rate, rng, training=True)
        xs.append(x)
    s1, _, _ = bilstm(xs, params.tag_l1[0], params.tag_l1[1], mask=mask)
    s2, _, _ = bilstm(s1, params.tag_l2[0], params.tag_l2[1], mask=mask)
    logits = []
    for t in range(steps):
        h = s2[t]
        if training:
            h = dropout(h, rate, rng, training=True)
        logits.append(matmul(h, params.w_s) + params.b_s)
    return sigmoid(concat(logits, axis=-1))


def selector_loss(q: Tensor, labels: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1-1e-7]."""
    if q.shape != labels.shape:
        raise ValueError(f"selector_loss: q shape {q.shape} != labels shape {labels.shape}")
    t = labels.astype(q.dtype)
    qc = clip(q, 1e-7, 1.0 - 1e-7)
    per_tok = -(mul(log(qc), t) + mul(log(1.0 - qc), 1.0 - t))
    if mask is None:
        return per_tok.mean() if per_tok.data.ndim else per_tok
    m = mask.astype(q.dtype)
    return mul(per_tok, m).sum() / float(m.sum())


def compute_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Exact ROC AUC: P(score_pos > score_neg) + 0.5 * P(tie), via average ranks."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if pos == 0 or neg == 0:
        raise ValueError("AUC undefined: need at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = float(ranks[labels == 1].sum())
    u = rank_sum_pos - pos * (pos + 1) / 2.0
    return u / (pos * neg)


@dataclass
class SelectorTrainConfig:
    epochs: int = 5
    batch_size: int = 16
    lr: float = 0.15
    accum0: float = 0.1
    max_examples: int = 100_000
    val_fraction: float = 0.05
    seed: int = 0


def _pad_batch(sentences: list[tuple[list[int], list[int]]]):
    width = max(len(ids) for ids, _ in sentences)
    bsz = len(sentences)
    ids = np.zeros((bsz, width), dtype=np.int32)
    labels = np.zeros((bsz, width), dtype=np.float32)
    mask = np.zeros((bsz, width), dtype=np.float32)
    for i, (tok_ids, labs) in enumerate(sentences):
        ids[i, : len(tok_ids)] = tok_ids
        labels[i, : len(labs)] = labs
        mask[i, : len(tok_ids)] = 1.0
    return ids, labels, mask


def _encode_sentences(vocab: corpus.Vocabulary, sents: list[tuple[list[str], list[int]]]):
    return [(vocab.encode(toks).tolist(), list(labs)) for toks, labs in sents]


def evaluate_auc(params: SelectorParams, encoded: list[tuple[list[int], list[int]]],
                 batch_size: int = 32) -> float:
    scores: list[float] = []
    labels: list[int] = []
    with no_grad():
        for start in range(0, len(encoded), batch_size):
            chunk = encoded[start : start + batch_size]
            ids, labs, mask = _pad_batch(chunk)
            q = selector_forward(params, ids).data
            real = mask > 0
            scores.extend(q[real].tolist())
            labels.extend(labs[real].astype(int).tolist())
    return compute_auc(np.array(scores), np.array(labels))


@dataclass
class SelectorTrainResult:
    params: SelectorParams
    history: list[dict] = field(default_factory=list)
    best_auc: float | None = None


def train_selector(dataset: list[corpus.ExamplePair], vocab: corpus.Vocabulary,
                   dims: SelectorDims, cfg: SelectorTrainConfig,
                   val_dataset: list[corpus.ExamplePair] | None = None,
                   static_table: np.ndarray | None = None,
                   static_known: np.ndarray | None = None) -> SelectorTrainResult:
    """Sequence-labeling training with Adagrad; returns the best-val-AUC params.

    One training example is one sentence; at most cfg.max_examples sentences
    are consumed.
    """
    sents = corpus.sentence_examples(dataset)
    if not sents or not any(any(l) for _, l in sents):
        raise ValueError("no labeled examples to train on")
    rng = np.random.default_rng(cfg.seed)
    init_rng, shuffle_rng, drop_rng = rng.spawn(3)
    params = init_selector(dims, init_rng, static_table=static_table, static_known=static_known)

    encoded = _encode_sentences(vocab, sents)
    if val_dataset is not None:
        val_encoded = _encode_sentences(vocab, corpus.sentence_examples(val_dataset))
        train_encoded = encoded
    else:
        n_val = max(1, int(round(len(encoded) * cfg.val_fraction)))
        val_encoded = encoded[-n_val:]
        train_encoded = encoded[:-n_val]
    train_encoded = train_encoded[: cfg.max_examples]
    if not train_encoded:
        raise ValueError("no labeled examples to train on")

    opt = adagrad_init(params.parameters(), lr=cfg.lr, accum0=cfg.accum0)
    best = SelectorTrainResult(params=params)
    consumed = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_encoded))
        total_loss, total_batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_encoded[i] for i in order[start : start + cfg.batch_size]]
            ids, labels, mask = _pad_batch(batch)
            q = selector_forward(params, ids, mask=mask, training=True, rng=drop_rng)
            loss = selector_loss(q, labels, mask=mask)
            zero_grads(params.parameters())
            backward(loss)
            adagrad_step(params.parameters(), opt)
            total_loss += loss.item()
            total_batches += 1
            consumed += len(batch)
        try:
            auc = evaluate_auc(params, val_encoded)
        except ValueError:
            auc = None
        best.history.append({"epoch": epoch + 1, "train_loss": total_loss / max(1, total_batches),
                             "val_auc": auc, "examples_consumed": consumed})
        if auc is not None and (best.best_auc is None or auc > best.best_auc):
            best.best_auc = auc
            best.params = _clone_params(params)
    if best.best_auc is None:
        best.params = params
    return best


def _clone_params(params: SelectorParams) -> SelectorParams:
    named = params.all_tensors()
    rebuilt = {}
    for name, t in named.items():
        if isinstance(t, Tensor):
            rebuilt[name] = Tensor(t.data.copy(), requires_grad=t.requires_grad, name=t.name)
        else:
            rebuilt[name] = t.copy()
    return selector_from_tensors(params.dims, rebuilt)


def selector_from_tensors(dims: SelectorDims, tensors: dict) -> SelectorParams:
    def ten(name: str, grad: bool = True) -> Tensor:
        t = tensors[name]
        if isinstance(t, Tensor):
            return Tensor(t.data, requires_grad=grad, name=name)
        return Tensor(np.asarray(t, dtype=np.float32), requires_grad=grad, name=name)

    def lstm_pair(tag: str) -> tuple[LSTMWeights, LSTMWeights]:
        return tuple(
            LSTMWeights(wx=ten(f"{tag}.{d}.wx"), wh=ten(f"{tag}.{d}.wh"), b=ten(f"{tag}.{d}.b"))
            for d in ("f", "b")
        )  # type: ignore[return-value]

    known = tensors["static_known"]
    known = known.data if isinstance(known, Tensor) else np.asarray(known)
    return SelectorParams(
        dims=dims,
        static_table=ten("static_table", grad=False),
        static_known=known.astype(np.float32).reshape(-1),
        static_unk=ten("static_unk"),
        ctx_emb=ten("ctx_emb"),
        ctx_l1=lstm_pair("ctx_l1"),
        ctx_l2=lstm_pair("ctx_l2"),
        gamma=ten("gamma"),
        layer_scales=ten("layer_scales"),
        tag_l1=lstm_pair("tag_l1"),
        tag_l2=lstm_pair("tag_l2"),
        w_s=ten("w_s"),
        b_s=ten("b_s"),
    )


def predict_q(params: SelectorParams, tokens: list[str], vocab: corpus.Vocabulary) -> np.ndarray:
    """Per-token selection probabilities for one document."""
    if not tokens:
        raise ValueError("selector_forward: empty token sequence")
    ids = vocab.encode(tokens)[None, :]
    with no_grad():
        q = selector_forward(params, ids)
    return q.data[0].astype(np.float64)


def load_word_vectors(path: str, dim: int) -> dict[str, np.ndarray]:
    """Whitespace-separated text vectors: word then `dim` floats per line."""
    table: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise ValueError(
                    f"word-vector file line {lineno}: expected {dim} floats, got {len(parts) - 1}"
                )
            table[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float32)
    return table


def static_table_from_vectors(vocab: corpus.Vocabulary, vectors: dict[str, np.ndarray],
                              dim: int) -> tuple[np.ndarray, np.ndarray]:
    table = np.zeros((len(vocab), dim), dtype=np.float32)
    known = np.zeros(len(vocab), dtype=np.float32)
    for idx, tok in enumerate(vocab.itos):
        vec = vectors.get(tok)
        if vec is not None:
            table[idx] = vec
            known[idx] = 1.0
    return table, known
