import math

import numpy as np
import pytest

from busum.nn import LSTMWeights, bilstm, init_lstm, lstm_cell_forward, run_lstm
from busum.optim import (
    adagrad_init,
    adagrad_step,
    AdagradState,
    clip_gradients,
    finite_difference_check,
    global_grad_norm,
    zero_grads,
)
from busum.tensor import Tensor


def weights(wx, wh, b):
    return LSTMWeights(wx=Tensor(np.asarray(wx, dtype=np.float64), requires_grad=True),
                       wh=Tensor(np.asarray(wh, dtype=np.float64), requires_grad=True),
                       b=Tensor(np.asarray(b, dtype=np.float64), requires_grad=True))


class TestLSTMCell:
    def test_zero_everything_gives_zero(self):
        w = weights(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
        h, c = lstm_cell_forward(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 2))),
                                 Tensor(np.zeros((1, 2))), w)
        assert np.allclose(h.data, 0.0) and np.allclose(c.data, 0.0)

    def test_forget_gate_saturation(self):
        rng = np.random.default_rng(0)
        hid = 2
        w = weights(rng.uniform(-0.1, 0.1, (3, 8)), rng.uniform(-0.1, 0.1, (2, 8)), np.zeros(8))
        w.b.data[hid : 2 * hid] = 50.0  # forget gate saturates to 1
        x = Tensor(rng.uniform(-1, 1, (1, 3)))
        h_prev = Tensor(rng.uniform(-1, 1, (1, hid)))
        c_prev = Tensor(rng.uniform(-1, 1, (1, hid)))
        _, c = lstm_cell_forward(x, h_prev, c_prev, w)
        gates = x.data @ w.wx.data + h_prev.data @ w.wh.data + w.b.data
        i = 1.0 / (1.0 + np.exp(-gates[:, :hid]))
        g = np.tanh(gates[:, 2 * hid : 3 * hid])
        assert np.allclose(c.data, c_prev.data + i * g, atol=1e-5)

    def test_single_unit_hand_computed(self):
        # scalar cell, every equation evaluated with math.* below
        wx = [[0.5, -0.3, 0.8, 0.1]]
        wh = [[0.2, 0.4, -0.6, 0.9]]
        b = [0.05, -0.1, 0.2, 0.0]
        w = weights(wx, wh, b)
        x, hp, cp = 0.7, -0.2, 0.3
        h, c = lstm_cell_forward(Tensor([[x]]), Tensor([[hp]]), Tensor([[cp]]), w)

        def sig(v):
            return 1.0 / (1.0 + math.exp(-v))

        i = sig(x * 0.5 + hp * 0.2 + 0.05)
        f = sig(x * -0.3 + hp * 0.4 - 0.1)
        g = math.tanh(x * 0.8 + hp * -0.6 + 0.2)
        o = sig(x * 0.1 + hp * 0.9 + 0.0)
        c_hand = f * cp + i * g
        h_hand = o * math.tanh(c_hand)
        assert abs(float(c.data) - c_hand) < 1e-9
        assert abs(float(h.data) - h_hand) < 1e-9

    def test_shape_errors_name_offender(self):
        w = weights(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
        with pytest.raises(ValueError, match="x has dim"):
            lstm_cell_forward(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 2))),
                              Tensor(np.zeros((1, 2))), w)
        with pytest.raises(ValueError, match="h_prev"):
            lstm_cell_forward(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 3))),
                              Tensor(np.zeros((1, 2))), w)
        with pytest.raises(ValueError, match="c_prev"):
            lstm_cell_forward(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 2))),
                              Tensor(np.zeros((1, 3))), w)


class TestRunLSTM:
    def test_masked_steps_carry_state(self):
        rng = np.random.default_rng(1)
        w = init_lstm(rng, 3, 4, "t")
        xs_full = [Tensor(rng.uniform(-1, 1, (1, 3)).astype(np.float32)) for _ in range(4)]
        mask = np.array([[1, 1, 0, 0]], dtype=np.float32)
        _, h_m, c_m = run_lstm(xs_full, w, mask=mask)
        _, h_s, c_s = run_lstm(xs_full[:2], w)
        assert np.allclose(h_m.data, h_s.data, atol=1e-6)
        assert np.allclose(c_m.data, c_s.data, atol=1e-6)

    def test_reverse_direction_final_state(self):
        rng = np.random.default_rng(2)
        w = init_lstm(rng, 3, 4, "t")
        xs = [Tensor(rng.uniform(-1, 1, (1, 3)).astype(np.float32)) for _ in range(3)]
        states_fwd, _, _ = run_lstm(xs, w)
        states_rev, h_rev, _ = run_lstm(xs[::-1], w)
        # running reversed input forward equals running original in reverse
        states_native, h_nat, _ = run_lstm(xs, w, reverse=True)
        for a, b in zip(states_rev, states_native[::-1]):
            assert np.allclose(a.data, b.data, atol=1e-6)
        assert np.allclose(h_rev.data, h_nat.data, atol=1e-6)

    def test_bilstm_concat_dims(self):
        rng = np.random.default_rng(3)
        f, b = init_lstm(rng, 3, 4, "f"), init_lstm(rng, 3, 4, "b")
        xs = [Tensor(rng.uniform(-1, 1, (2, 3)).astype(np.float32)) for _ in range(5)]
        states, _, _ = bilstm(xs, f, b)
        assert all(s.shape == (2, 8) for s in states)


class TestAdagrad:
    def test_zero_grad_no_change(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        p.grad = np.array([0.0], dtype=np.float32)
        st = adagrad_init({"p": p}, lr=0.15, accum0=0.1)
        adagrad_step({"p": p}, st)
        assert p.data[0] == 1.0

    def test_hand_value(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        p.grad = np.array([1.0], dtype=np.float32)
        st = adagrad_init({"p": p}, lr=0.15, accum0=0.1)
        adagrad_step({"p": p}, st)
        assert abs(st.accumulators["p"][0] - 1.1) < 1e-6
        assert abs(p.data[0] - (1.0 - 0.15 / math.sqrt(1.1))) < 1e-6

    def test_second_step_smaller(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        st = adagrad_init({"p": p}, lr=0.15, accum0=0.1)
        p.grad = np.array([1.0], dtype=np.float32)
        before = p.data.copy()
        adagrad_step({"p": p}, st)
        first = abs(before[0] - p.data[0])
        before = p.data.copy()
        adagrad_step({"p": p}, st)
        second = abs(before[0] - p.data[0])
        assert second < first

    def test_uninitialized_state_rejected(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([1.0], dtype=np.float32)
        with pytest.raises(ValueError, match="uninitialized"):
            adagrad_step({"p": p}, AdagradState(lr=0.15, accum0=0.1))

    def test_accumulator_never_below_initial(self):
        rng = np.random.default_rng(4)
        p = Tensor(rng.uniform(-1, 1, 16).astype(np.float32), requires_grad=True)
        st = adagrad_init({"p": p}, lr=0.15, accum0=0.1)
        for _ in range(25):
            p.grad = rng.normal(0, 0.3, 16).astype(np.float32)
            adagrad_step({"p": p}, st)
            assert (st.accumulators["p"] >= 0.1).all()
        assert np.isfinite(p.data).all()

    def test_grads_left_untouched(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        p.grad = np.array([0.5], dtype=np.float32)
        st = adagrad_init({"p": p})
        adagrad_step({"p": p}, st)
        assert p.grad[0] == 0.5


class TestClipping:
    def test_identity_below_threshold(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.full(4, 0.1, dtype=np.float32)
        norm = clip_gradients({"p": p}, max_norm=2.0)
        assert norm < 2.0 and np.allclose(p.grad, 0.1)

    def test_rescales_to_threshold(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.full(4, 10.0, dtype=np.float32)
        clip_gradients({"p": p}, max_norm=2.0)
        assert abs(global_grad_norm({"p": p}) - 2.0) < 1e-5


class TestFiniteDifference:
    def test_quadratic_hand_case(self):
        w = Tensor(np.array([3.0]), requires_grad=True)
        err = finite_difference_check(lambda ps: (ps["w"] * ps["w"]).sum(), {"w": w}, eps=1e-3)
        assert err <= 1e-5

    def test_constant_function(self):
        w = Tensor(np.array([2.0]), requires_grad=True)
        err = finite_difference_check(lambda ps: (ps["w"] * 0.0).sum(), {"w": w})
        assert err <= 1e-8

    def test_nondeterministic_rejected(self):
        state = {"n": 0}
        w = Tensor(np.array([1.0]), requires_grad=True)

        def f(ps):
            state["n"] += 1
            return (ps["w"] * float(state["n"])).sum()

        with pytest.raises(ValueError, match="non-deterministic"):
            finite_difference_check(f, {"w": w})

    def test_bad_eps_rejected(self):
        w = Tensor(np.array([1.0]), requires_grad=True)
        with pytest.raises(ValueError, match="eps"):
            finite_difference_check(lambda ps: ps["w"].sum(), {"w": w}, eps=0.0)


def test_zero_grads():
    p = Tensor(np.ones(3), requires_grad=True)
    p.grad = np.ones(3, dtype=np.float32)
    zero_grads({"p": p})
    assert p.grad is None
