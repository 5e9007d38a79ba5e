import math

import numpy as np
import pytest

from caconv.bilstm import (HeadParams, LSTMCellParams, LSTMState, bilstm_run, class_head,
                           init_bilstm, lstm_step, run_stream, zero_state)
from caconv.errors import DimensionError
from caconv.gradcheck import numerical_gradient, relative_error
from caconv.tensor import Tensor, backward, mean, square, stack

NAMES = ["W_cv", "W_iv", "W_fv", "W_ov", "W_ch", "W_ih", "W_fh", "W_oh", "W_ic", "W_fc", "W_oc",
         "b_c", "b_i", "b_f", "b_o"]


def filled(hidden, n_in, value=0.0, **over):
    arrays = {}
    for n in NAMES:
        if n.startswith("b_"):
            shape = (hidden,)
        elif n.endswith("v"):
            shape = (hidden, n_in)
        else:
            shape = (hidden, hidden)
        arrays[n] = np.full(shape, value, dtype=float)
    arrays.update(over)
    return LSTMCellParams.from_arrays(arrays)


def random_cell(rng, hidden, n_in, scale=0.5):
    arrays = {}
    for n, t in filled(hidden, n_in).named().items():
        arrays[n] = rng.normal(scale=scale, size=t.shape)
    return LSTMCellParams.from_arrays(arrays)


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestStep:
    def test_zero_fixed_point(self):
        p = filled(3, 4)
        s = lstm_step(p, Tensor(np.zeros(4)), zero_state(3))
        assert not s.c.data.any() and not s.h.data.any()

    def test_zero_fixed_point_any_input(self):
        rng = np.random.default_rng(0)
        p = filled(3, 6)
        for _ in range(20):
            s = lstm_step(p, Tensor(rng.normal(size=6) * 10), zero_state(3))
            assert not s.c.data.any() and not s.h.data.any()

    def test_scalar_hand_evaluation(self):
        p = filled(1, 1, 1.0, b_c=np.zeros(1), b_i=np.zeros(1), b_f=np.zeros(1),
                   b_o=np.zeros(1))
        prev = LSTMState(c=Tensor([1.0]), h=Tensor([0.0]))
        s = lstm_step(p, Tensor([0.0]), prev)
        # oracle: the cell equations evaluated with the math module
        cand = math.tanh(0.0)
        i = f = sig(1.0)
        c = i * cand + f * 1.0
        o = sig(c)
        h = o * math.tanh(c)
        assert abs(s.c.item() - c) < 1e-12
        assert abs(s.h.item() - h) < 1e-12
        assert s.c.item() == pytest.approx(0.7311, abs=1e-4)
        assert s.h.item() == pytest.approx(0.4210, abs=1e-4)

    def test_output_gate_reads_new_cell(self):
        # only W_oc is non-zero; if o read c_prev the result would differ
        p = filled(1, 1, 0.0, W_oc=np.array([[5.0]]), b_i=np.array([10.0]),
                   b_c=np.array([2.0]), b_f=np.array([-10.0]))
        prev = LSTMState(c=Tensor([-3.0]), h=Tensor([0.0]))
        s = lstm_step(p, Tensor([0.0]), prev)
        c = s.c.item()
        assert s.h.item() == pytest.approx(sig(5.0 * c) * math.tanh(c), abs=1e-14)

    def test_forget_gate_limit(self):
        rng = np.random.default_rng(1)
        base = random_cell(rng, 3, 2)
        arrays = {k: v.data for k, v in base.named().items()}
        arrays["b_f"] = np.full(3, -800.0)
        p = LSTMCellParams.from_arrays(arrays)
        v, prev = Tensor(rng.normal(size=2)), LSTMState(Tensor(rng.normal(size=3)),
                                                         Tensor(rng.normal(size=3) * 0.5))
        s = lstm_step(p, v, prev)
        pd = p.named()
        h0, c0, vv = prev.h.data, prev.c.data, v.data
        cand = np.tanh(pd["W_cv"].data @ vv + pd["W_ch"].data @ h0 + pd["b_c"].data)
        i = 1 / (1 + np.exp(-(pd["W_iv"].data @ vv + pd["W_ih"].data @ h0
                              + pd["W_ic"].data @ c0 + pd["b_i"].data)))
        np.testing.assert_allclose(s.c.data, i * cand, rtol=1e-12, atol=1e-300)

    def test_bounded_states(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            p = random_cell(rng, 4, 3, scale=3.0)
            s = zero_state(4)
            for _ in range(5):
                s = lstm_step(p, Tensor(rng.normal(size=3) * 5), s)
                assert (np.abs(s.h.data) < 1).all()

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            lstm_step(filled(2, 3), Tensor(np.zeros(4)), zero_state(2))


class TestBidirectional:
    def test_single_step(self):
        rng = np.random.default_rng(3)
        A, B = random_cell(rng, 3, 4), random_cell(rng, 3, 4)
        v = Tensor(rng.normal(size=4))
        ((h, hr),) = bilstm_run(A, B, [v])
        assert np.array_equal(h.data, lstm_step(A, v, zero_state(3)).h.data)
        assert np.array_equal(hr.data, lstm_step(B, v, zero_state(3)).h.data)

    def test_reversal_duality(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            N = int(rng.integers(1, 7))
            A, B = random_cell(rng, 3, 5), random_cell(rng, 3, 5)
            vs = [Tensor(rng.normal(size=5)) for _ in range(N)]
            back = [hr.data for _, hr in bilstm_run(A, B, vs)]
            fwd_swapped = [h.data for h, _ in bilstm_run(B, A, vs[::-1])]
            assert all(np.array_equal(x, y) for x, y in zip(back, fwd_swapped[::-1]))

    def test_class_count_enforced(self):
        rng = np.random.default_rng(5)
        A = random_cell(rng, 2, 3)
        with pytest.raises(DimensionError):
            bilstm_run(A, A, [Tensor(np.zeros(3))] * 3, n_classes=17)
        assert len(bilstm_run(A, A, [Tensor(np.zeros(3))] * 8, n_classes=8)) == 8

    def test_batched_matches_single(self):
        rng = np.random.default_rng(6)
        A, B = random_cell(rng, 3, 4), random_cell(rng, 3, 4)
        V = rng.normal(size=(5, 2, 4))  # steps x batch x input
        batch = bilstm_run(A, B, [Tensor(V[l]) for l in range(5)])
        for b in range(2):
            single = bilstm_run(A, B, [Tensor(V[l, b]) for l in range(5)])
            for (h1, r1), (h2, r2) in zip(batch, single):
                np.testing.assert_allclose(h1.data[b], h2.data, rtol=1e-13, atol=1e-15)
                np.testing.assert_allclose(r1.data[b], r2.data, rtol=1e-13, atol=1e-15)


class TestHead:
    def test_zero_head(self):
        head = HeadParams(Tensor(np.zeros((2, 4))), Tensor(np.zeros(2)))
        assert class_head(Tensor(np.ones(2)), Tensor(np.ones(2)), head, 1).item() == 0.5

    def test_hand_example(self):
        head = HeadParams(Tensor([[1.0, 1.0]]), Tensor([0.0]))
        p = class_head(Tensor([0.4208]), Tensor([0.1]), head, 0).item()
        assert p == pytest.approx(1 / (1 + math.exp(-0.5208)), abs=1e-15)
        assert p == pytest.approx(0.6273, abs=1e-4)

    def test_monotone_in_bias(self):
        h, hr = Tensor([0.3]), Tensor([-0.2])
        probs = [class_head(h, hr, HeadParams(Tensor([[0.5, 0.5]]), Tensor([b])), 0).item()
                 for b in np.linspace(-10, 30, 41)]
        assert all(b > a for a, b in zip(probs, probs[1:]) if b < 1.0)
        assert probs[-1] == pytest.approx(1.0)

    def test_dim_mismatch(self):
        head = HeadParams(Tensor(np.zeros((1, 3))), Tensor([0.0]))
        with pytest.raises(DimensionError):
            class_head(Tensor([0.0]), Tensor([0.0]), head, 0)


class TestInit:
    def test_range(self):
        fwd, bwd, head = init_bilstm(8, 16, 5, 0)
        for cell in (fwd, bwd):
            for t in cell.named().values():
                assert np.abs(t.data).max() <= 0.1
        assert np.abs(head.weights.data).max() <= 0.1 and np.abs(head.biases.data).max() <= 0.1
        assert head.weights.shape == (5, 16)

    def test_same_seed(self):
        a, b = init_bilstm(4, 6, 3, 9), init_bilstm(4, 6, 3, 9)
        for ca, cb in zip(a[:2], b[:2]):
            assert all(np.array_equal(x.data, y.data) for x, y in
                       zip(ca.named().values(), cb.named().values()))

    def test_full_scale_width_constructible(self):
        fwd, _, head = init_bilstm(2048, 4, 2, 0)
        assert fwd.hidden == 2048 and head.weights.shape == (2, 4096)


def test_gradient_three_step_unrolled():
    rng = np.random.default_rng(8)
    fwd, bwd, head = init_bilstm(3, 4, 3, 1)
    for t in list(fwd.named().values()) + list(bwd.named().values()):
        t.data *= 5.0  # move away from the near-linear regime
    vs = [Tensor(rng.normal(size=4), requires_grad=True) for _ in range(3)]
    target = np.array([1.0, 0.0, 1.0])

    def loss():
        pairs = bilstm_run(fwd, bwd, vs)
        probs = stack([class_head(h, hr, head, l) for l, (h, hr) in enumerate(pairs)])
        return mean(square(probs - Tensor(target)))

    backward(loss())
    tensors = list(fwd.named().values()) + list(bwd.named().values()) + [head.weights,
                                                                            head.biases] + vs
    for t in tensors:
        num = numerical_gradient(lambda: loss().item(), t.data)
        assert relative_error(t.grad, num) < 1e-4


def test_every_class_output_depends_on_its_own_input():
    rng = np.random.default_rng(9)
    for _ in range(5):
        fwd, bwd, head = init_bilstm(4, 3, 4, int(rng.integers(1000)))
        vs = [Tensor(rng.normal(size=3), requires_grad=True) for _ in range(4)]
        for l in range(4):
            for v in vs:
                v.zero_grad()
            pairs = bilstm_run(fwd, bwd, vs)
            backward(class_head(*pairs[l], head, l))
            assert np.abs(vs[l].grad).max() > 0
            # recurrence carries information from every other step too
            assert all(np.abs(v.grad).max() > 0 for v in vs)
