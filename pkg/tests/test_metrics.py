from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from caconv.errors import DimensionError, UsageError
from caconv.metrics import (Summary, evaluate, example_prf2, f_beta, label_prf,
                            mean_example_metrics)


def set_oracle(pred, truth):
    """Exact example scores from label sets, same edge conventions as the library."""
    P = {i for i, b in enumerate(pred) if b}
    T = {i for i, b in enumerate(truth) if b}
    tp = len(P & T)
    if not P:
        return (Fraction(1),) * 3 if not T else (Fraction(0),) * 3
    p = Fraction(tp, len(P))
    r = Fraction(tp, len(T)) if T else Fraction(1)
    f2 = Fraction(0) if p == 0 and r == 0 else 5 * p * r / (4 * p + r)
    return p, r, f2


def label_oracle(preds, truths):
    N = len(preds[0])
    out = []
    for c in range(N):
        P = {i for i, row in enumerate(preds) if row[c]}
        T = {i for i, row in enumerate(truths) if row[c]}
        if not T:
            out.append(None)
            continue
        p = Fraction(len(P & T), len(P)) if P else Fraction(0)
        out.append((p, Fraction(len(P & T), len(T))))
    return out


class TestExample:
    def test_perfect(self):
        assert example_prf2([1, 0, 1], [1, 0, 1]) == (1.0, 1.0, 1.0)

    def test_two_one_one(self):
        p, r, f2 = example_prf2([1, 1, 1, 0], [1, 1, 0, 1])
        assert p == 2 / 3 and r == 2 / 3
        assert f2 == 2 / 3

    def test_zero_true_positives(self):
        assert example_prf2([1, 0, 0], [0, 1, 0])[2] == 0.0
        assert example_prf2([0, 0, 0], [0, 1, 0]) == (0.0, 0.0, 0.0)
        assert example_prf2([1, 0, 0], [0, 0, 0])[2] == 0.0

    def test_both_empty(self):
        assert example_prf2([0, 0], [0, 0]) == (1.0, 1.0, 1.0)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            example_prf2([1, 0], [1, 0, 1])

    def test_f2_equals_r_when_p_equals_r(self):
        for x in np.linspace(0.01, 1, 50):
            assert f_beta(x, x) == pytest.approx(x, rel=1e-14)

    @given(st.floats(0.001, 1.0), st.floats(0.001, 1.0), st.floats(0.0, 0.5))
    def test_monotone_and_bounded(self, p, r, dp):
        f = f_beta(p, r)
        assert 0.0 <= f <= 1.0
        assert f_beta(min(1.0, p + dp), r) >= f - 1e-15
        assert f_beta(p, min(1.0, r + dp)) >= f - 1e-15


class TestMeans:
    def test_single(self):
        assert mean_example_metrics([[1, 1, 1, 0]], [[1, 1, 0, 1]]) == pytest.approx(
            (2 / 3, 2 / 3, 2 / 3))

    def test_one_and_zero(self):
        f2, _, _ = mean_example_metrics([[1, 0], [1, 0]], [[1, 0], [0, 1]])
        assert f2 == 0.5

    def test_empty(self):
        with pytest.raises(UsageError):
            mean_example_metrics([], [])

    def test_random_batches_against_set_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            preds = rng.integers(0, 2, size=(20, 6))
            truths = rng.integers(0, 2, size=(20, 6))
            f2, pe, re = mean_example_metrics(preds, truths)
            exact = [set_oracle(p, t) for p, t in zip(preds, truths)]
            assert f2 == pytest.approx(float(sum(e[2] for e in exact) / 20), abs=1e-14)
            assert pe == pytest.approx(float(sum(e[0] for e in exact) / 20), abs=1e-14)
            assert re == pytest.approx(float(sum(e[1] for e in exact) / 20), abs=1e-14)

    def test_thousand_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            pred, truth = rng.integers(0, 2, size=(2, n))
            got = example_prf2(pred, truth)
            want = set_oracle(pred, truth)
            assert all(g == pytest.approx(float(w), abs=1e-15) for g, w in zip(got, want))


class TestLabel:
    def test_perfect(self):
        y = np.array([[1, 0], [0, 1], [1, 1]])
        rep = label_prf(y, y)
        assert (rep.precision == 1).all() and (rep.recall == 1).all()

    def test_hand_counts(self):
        rep = label_prf([[1], [0], [1]], [[1], [1], [0]])
        assert rep.precision[0] == 0.5 and rep.recall[0] == 0.5
        c = rep.counts[0]
        assert (c.tp, c.fp, c.fn) == (1, 1, 1)

    def test_absent_class_excluded(self):
        rep = label_prf([[1, 1], [0, 1]], [[1, 0], [0, 0]])
        assert np.isnan(rep.precision[1]) and np.isnan(rep.recall[1])
        assert rep.mean_precision == 1.0 and rep.mean_recall == 1.0

    def test_random_against_set_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            preds = rng.integers(0, 2, size=(int(rng.integers(1, 30)), 5))
            truths = (rng.random(preds.shape) < rng.uniform(0, 0.6)).astype(int)
            rep = label_prf(preds, truths)
            for c, want in enumerate(label_oracle(preds.tolist(), truths.tolist())):
                if want is None:
                    assert np.isnan(rep.precision[c]) and np.isnan(rep.recall[c])
                else:
                    assert rep.precision[c] == pytest.approx(float(want[0]), abs=1e-15)
                    assert rep.recall[c] == pytest.approx(float(want[1]), abs=1e-15)

    def test_empty(self):
        with pytest.raises(UsageError):
            label_prf(np.zeros((0, 3)), np.zeros((0, 3)))


def test_evaluate_thresholds():
    rng = np.random.default_rng(1)
    probs = rng.uniform(0.01, 0.99, size=(10, 4))
    truths = rng.integers(0, 2, size=(10, 4))
    truths[:, 0] = 1
    s, _ = evaluate(probs, truths, threshold=0.0)
    # every label predicted positive: recall is 1 for every example
    per_example = [example_prf2([1] * 4, t)[1] for t in truths]
    assert all(r == 1.0 for r in per_example) and s.re == 1.0
    s, _ = evaluate(probs, truths, threshold=1.0)
    assert s.mean_f2 == 0.0


def test_summary_formatting():
    line = Summary(0.85284, 0.7345, 0.9108, 0.7814, 0.8539).csv_line()
    assert line == "0.8528,73.45,91.08,78.14,85.39"
