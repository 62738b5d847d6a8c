import numpy as np
import pytest

from busum.corpus import EOS_ID, UNK_ID, ExamplePair, build_vocab
from busum.pointer_gen import (
    Batch,
    DecoderStepOutput,
    PGDims,
    PGTrainConfig,
    build_extended,
    decode_step,
    encode_source,
    forward_teacher_forced,
    init_pg,
    joint_copy_distribution,
    lr_schedule_step,
    make_batch,
    scatter_copy_probs,
    sequence_nll,
    target_ext_ids,
    train_summarizer,
)
from busum.tensor import Tensor, backward

from helpers import to_f64


def small_corpus():
    return [
        ExamplePair("a", [["the", "cat", "sat"], ["dogs", "run", "fast"]],
                    [["the", "cat", "zzz"]]),
        ExamplePair("b", [["a", "b", "qq", "d"]], [["b", "qq"]]),
    ]


def small_model(seed=3, vocab=None, **kw):
    pairs = small_corpus()
    vocab = vocab or build_vocab(pairs, 8)
    dims = PGDims(vocab_size=len(vocab), emb_dim=4, enc_hidden=3, dec_hidden=6, **kw)
    return init_pg(dims, np.random.default_rng(seed)), vocab, pairs


class TestDims:
    def test_encoder_decoder_dimension_invariant(self):
        with pytest.raises(ValueError, match="2x encoder hidden"):
            PGDims(vocab_size=10, emb_dim=4, enc_hidden=3, dec_hidden=5)

    def test_unknown_attention_rejected(self):
        with pytest.raises(ValueError, match="attention"):
            PGDims(vocab_size=10, emb_dim=4, enc_hidden=3, dec_hidden=6, attention="cosine")


class TestExtendedVocab:
    def test_every_position_mapped_and_contiguous(self):
        pairs = small_corpus()
        vocab = build_vocab(pairs, 4)
        ext = build_extended(pairs[0].source_tokens(), vocab)
        n = len(ext.tokens)
        assert ext.base_ids.shape == (n,) and ext.ext_ids.shape == (n,)
        oov_ids = sorted(set(int(i) for i in ext.ext_ids if i >= len(vocab)))
        assert oov_ids == list(range(len(vocab), len(vocab) + len(ext.oov_tokens)))
        occ = ext.occurrences()
        assert sorted(p for ps in occ.values() for p in ps) == list(range(n))

    def test_repeated_oov_shares_one_id(self):
        vocab = build_vocab(small_corpus(), 2)
        ext = build_extended(["zz", "yy", "zz"], vocab)
        assert ext.ext_ids[0] == ext.ext_ids[2] != ext.ext_ids[1]

    def test_target_ext_ids_fall_back_to_unk(self):
        vocab = build_vocab(small_corpus(), 8)
        ext = build_extended(["qq", "the"], vocab)
        ids = target_ext_ids(["the", "qq", "nowhere"], vocab, ext)
        assert ids[0] == vocab.id_of("the")
        assert ids[1] == ext.ext_ids[0]
        assert ids[2] == UNK_ID


class TestEncoder:
    def test_single_token_single_state(self):
        params, vocab, _ = small_model()
        hs, (h0, c0) = encode_source(params, np.array([[5]]))
        assert hs.shape == (1, 1, 6)
        assert h0.shape == (1, 6) and c0.shape == (1, 6)

    def test_empty_source_rejected(self):
        params, _, _ = small_model()
        with pytest.raises(ValueError, match="empty source"):
            encode_source(params, np.zeros((1, 0), dtype=np.int32))

    def test_reversed_input_swaps_direction_halves(self):
        params, vocab, _ = small_model()
        # share weights across directions so the forward pass of x equals the
        # backward pass of reversed(x)
        for attr in ("wx", "wh", "b"):
            getattr(params.enc[1], attr).data = getattr(params.enc[0], attr).data.copy()
        ids = np.array([[1, 4, 6, 2]])
        hs_fwd = encode_source(params, ids)[0].data[0]
        hs_rev = encode_source(params, ids[:, ::-1].copy())[0].data[0]
        e = params.dims.enc_hidden
        assert np.allclose(hs_fwd[:, :e], hs_rev[::-1, e:], atol=1e-6)
        assert np.allclose(hs_fwd[:, e:], hs_rev[::-1, :e], atol=1e-6)

    def test_matches_independent_recompute(self):
        params, vocab, _ = small_model(seed=9)
        to_f64(params)
        ids = np.array([[2, 5]])
        hs, (h0, c0) = encode_source(params, ids)

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        def cell(x, h, c, w):
            hid = w.wh.data.shape[0]
            gates = x @ w.wx.data + h @ w.wh.data + w.b.data
            i, f = sig(gates[:hid]), sig(gates[hid:2 * hid])
            g, o = np.tanh(gates[2 * hid:3 * hid]), sig(gates[3 * hid:])
            c2 = f * c + i * g
            return o * np.tanh(c2), c2

        xs = [params.src_emb.data[i] for i in ids[0]]
        hf = cf = np.zeros(3)
        fwd = []
        for x in xs:
            hf, cf = cell(x, hf, cf, params.enc[0])
            fwd.append(hf)
        hb = cb = np.zeros(3)
        bwd = [None, None]
        for t in (1, 0):
            hb, cb = cell(xs[t], hb, cb, params.enc[1])
            bwd[t] = hb
        states = [np.concatenate([f, b]) for f, b in zip(fwd, bwd)]
        assert np.allclose(hs.data[0], states, atol=1e-9)
        bridge_in_h = np.concatenate([fwd[-1], bwd[0]])
        assert np.allclose(h0.data[0], bridge_in_h @ params.bridge_h.data + params.bridge_h_b.data,
                           atol=1e-9)


class TestDecodeStep:
    def test_identical_encoder_states_give_uniform_attention(self):
        params, vocab, _ = small_model()
        hs = Tensor(np.tile(np.float32([[0.3, -0.2, 0.1, 0.5, 0.0, -0.4]]), (1, 5, 1)))
        state = (Tensor(np.zeros((1, 6), dtype=np.float32)),
                 Tensor(np.zeros((1, 6), dtype=np.float32)))
        out = decode_step(params, np.array([2]), state, hs)
        assert np.allclose(out.attention.data, 0.2, atol=1e-6)

    def test_switch_saturation(self):
        params, vocab, pairs = small_model()
        params.b_switch.data[:] = 50.0
        batch = make_batch(pairs, vocab)
        hs, state = encode_source(params, batch.src_ids, mask=batch.src_mask)
        out = decode_step(params, batch.dec_in[:, 0], state, hs, src_mask=batch.src_mask)
        assert (out.switch.data >= 1.0 - 1e-9).all()

    def test_bilinear_scores_match_hand_computation(self):
        params, vocab, _ = small_model(seed=1)
        to_f64(params)
        hs_np = np.random.default_rng(0).normal(size=(1, 2, 6))
        state = (Tensor(np.random.default_rng(1).normal(size=(1, 6))),
                 Tensor(np.zeros((1, 6))))
        out = decode_step(params, np.array([2]), state, Tensor(hs_np))
        # recompute: attention = softmax(h_dec W hs_i)
        x = params.tgt_emb.data[2]
        w = params.dec

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        gates = x @ w.wx.data + state[0].data[0] @ w.wh.data + w.b.data
        i, f = sig(gates[:6]), sig(gates[6:12])
        g, o = np.tanh(gates[12:18]), sig(gates[18:])
        c = f * 0.0 + i * g
        h = o * np.tanh(c)
        scores = np.array([h @ params.w_att.data @ hs_np[0, t] for t in range(2)])
        e = np.exp(scores - scores.max())
        assert np.allclose(out.attention.data[0], e / e.sum(), atol=1e-9)

    def test_attention_sums_to_one_with_padding(self):
        params, vocab, pairs = small_model()
        batch = make_batch(pairs, vocab)
        hs, state = encode_source(params, batch.src_ids, mask=batch.src_mask)
        out = decode_step(params, batch.dec_in[:, 0], state, hs, src_mask=batch.src_mask)
        assert np.allclose(out.attention.data.sum(axis=-1), 1.0, atol=1e-6)
        assert np.allclose(out.attention.data[1, 4:], 0.0, atol=1e-8)  # padded positions


def stub_step(attn, gen, switch):
    return DecoderStepOutput(
        attention=Tensor(np.asarray(attn, dtype=np.float64)[None, :]),
        generation=Tensor(np.asarray(gen, dtype=np.float64)[None, :]),
        switch=Tensor(np.array([[switch]], dtype=np.float64)),
        state=(None, None), input_emb=None,
    )


class TestJointDistribution:
    def test_pure_copy_concentrates(self):
        step = stub_step([0.0, 0.0, 0.0, 1.0], [0.25, 0.25, 0.25, 0.25], 1.0)
        occ = {7: [3], 5: [0, 1], 6: [2]}
        joint = joint_copy_distribution(step, occ, ext_size=9)
        assert abs(joint.data[0, 7] - 1.0) < 1e-12

    def test_pure_generation_pads_zeros(self):
        step = stub_step([0.2, 0.8], [0.1, 0.9, 0.0, 0.0], 0.0)
        joint = joint_copy_distribution(step, {0: [0], 1: [1]}, ext_size=6)
        assert np.allclose(joint.data[0], [0.1, 0.9, 0, 0, 0, 0])

    def test_occurrence_summation(self):
        step = stub_step([0.2, 0.3, 0.5], [1.0, 0.0], 1.0)
        joint = joint_copy_distribution(step, {0: [0, 2], 1: [1]}, ext_size=2)
        assert np.allclose(joint.data[0], [0.7, 0.3])

    def test_inconsistent_occurrence_map_rejected(self):
        step = stub_step([0.5, 0.5], [1.0], 0.5)
        with pytest.raises(ValueError, match="occurrence map inconsistent"):
            joint_copy_distribution(step, {0: [0]}, ext_size=2)
        with pytest.raises(ValueError, match="occurrence map inconsistent"):
            joint_copy_distribution(step, {0: [0, 0], 1: [1]}, ext_size=2)

    def test_convexity_property(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n, v, oov = int(rng.integers(1, 7)), int(rng.integers(2, 6)), int(rng.integers(0, 3))
            attn = rng.dirichlet(np.ones(n))
            gen = rng.dirichlet(np.ones(v))
            p = float(rng.random())
            ids = rng.integers(0, v + oov, size=n)
            step = stub_step(attn, gen, p)
            occ = {}
            for pos, ext in enumerate(ids):
                occ.setdefault(int(ext), []).append(pos)
            joint = joint_copy_distribution(step, occ, ext_size=v + oov).data[0]
            assert (joint >= -1e-12).all()
            assert abs(joint.sum() - 1.0) < 1e-6

    def test_occurrence_completeness(self):
        rng = np.random.default_rng(1)
        attn = Tensor(rng.dirichlet(np.ones(9))[None, :])
        ids = rng.integers(0, 5, size=(1, 9)).astype(np.int64)
        sums = scatter_copy_probs(attn, ids, 5)
        assert abs(float(sums.data.sum()) - 1.0) < 1e-9


class TestSequenceNLL:
    def test_manual_recompute_and_mean_over_length(self):
        params, vocab, pairs = small_model(seed=11)
        batch = make_batch([pairs[0]], vocab)
        res = forward_teacher_forced(params, batch)
        nll = float(res.nll_mean().data)
        manual = -res.log_probs.data[0][batch.tgt_mask[0] > 0].mean()
        assert abs(nll - manual) < 1e-6
        assert abs(float(sequence_nll(params, pairs[0], vocab).data) - nll) < 1e-6

    def test_hand_aggregation(self):
        # two steps with gold probabilities 0.5 and 0.25
        logp = Tensor(np.log(np.array([[0.5, 0.25]])))
        mask = np.ones((1, 2), dtype=np.float32)
        from busum.pointer_gen import TeacherForcedResult
        res = TeacherForcedResult(log_probs=logp, attentions=[], selector_q=None, tgt_mask=mask)
        assert abs(float(res.nll_mean().data) - 1.0397207708399179) < 1e-9

    def test_oov_target_maps_to_unk_without_error(self):
        params, vocab, _ = small_model()
        pair = ExamplePair("c", [["the", "cat"]], [["neverseen"]])
        nll = sequence_nll(params, pair, vocab)
        assert np.isfinite(float(nll.data))

    def test_teacher_forcing_deterministic(self):
        params, vocab, pairs = small_model(seed=2)
        batch = make_batch(pairs, vocab)
        a = float(forward_teacher_forced(params, batch).nll_mean().data)
        b = float(forward_teacher_forced(params, batch).nll_mean().data)
        assert a == b


class TestTraining:
    def test_empty_dataset_rejected(self):
        params, vocab, _ = small_model()
        with pytest.raises(ValueError, match="empty dataset"):
            train_summarizer([], vocab, params.dims, PGTrainConfig(epochs=1))

    def test_zero_epochs_returns_initialization(self):
        _, vocab, pairs = small_model()
        dims = PGDims(vocab_size=len(vocab), emb_dim=4, enc_hidden=3, dec_hidden=6)
        cfg = PGTrainConfig(epochs=0, seed=4)
        params, history = train_summarizer(pairs, vocab, dims, cfg, val_dataset=pairs)
        fresh = init_pg(dims, np.random.default_rng(4).spawn(2)[0])
        for name, t in params.parameters().items():
            assert np.array_equal(t.data, fresh.parameters()[name].data), name
        assert history == []

    def test_lr_schedule_hand_case(self):
        # validation perplexity [10, 11, ...] -> lr 0.075 after epoch 2
        lr, started = 0.15, False
        lr, started = lr_schedule_step(lr, 10.0, None, started)
        assert lr == 0.15 and not started
        lr, started = lr_schedule_step(lr, 11.0, 10.0, started)
        assert lr == 0.075 and started
        # latched: halves every epoch afterwards
        lr, started = lr_schedule_step(lr, 9.0, 11.0, started)
        assert lr == 0.0375

    def test_one_epoch_runs_and_logs(self):
        _, vocab, pairs = small_model()
        dims = PGDims(vocab_size=len(vocab), emb_dim=4, enc_hidden=3, dec_hidden=6)
        params, history = train_summarizer(pairs, vocab, dims,
                                           PGTrainConfig(epochs=2, batch_size=2, seed=0),
                                           val_dataset=pairs)
        assert [h["epoch"] for h in history] == [1, 2]
        assert set(history[0]) == {"epoch", "train_nll", "val_ppl", "lr"}
        assert history[0]["val_ppl"] > 0

    def test_training_deterministic(self):
        _, vocab, pairs = small_model()
        dims = PGDims(vocab_size=len(vocab), emb_dim=4, enc_hidden=3, dec_hidden=6)
        runs = []
        for _ in range(2):
            params, history = train_summarizer(pairs, vocab, dims,
                                               PGTrainConfig(epochs=2, batch_size=2, seed=9),
                                               val_dataset=pairs)
            runs.append((history, {k: v.data.copy() for k, v in params.parameters().items()}))
        assert runs[0][0] == runs[1][0]
        for name in runs[0][1]:
            assert np.array_equal(runs[0][1][name], runs[1][1][name])

    def test_mode_heads(self):
        from busum.corpus import align_copy_labels

        _, vocab, pairs = small_model()
        labeled = [ExamplePair(p.id, p.source_sentences, p.target_sentences,
                               align_copy_labels(p.source_tokens(), p.target_tokens()))
                   for p in pairs]
        dims = PGDims(vocab_size=len(vocab), emb_dim=4, enc_hidden=3, dec_hidden=6)
        cfg = PGTrainConfig(epochs=1, batch_size=2, seed=0)
        for mode, has_head in (("baseline", False), ("mask-only", False),
                               ("multi-task", True), ("diffmask", True)):
            params, _ = train_summarizer(labeled, vocab, dims, cfg, mode=mode,
                                         val_dataset=labeled)
            assert (params.w_q is not None) == has_head, mode
