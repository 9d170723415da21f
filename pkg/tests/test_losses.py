import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, cross_entropy_direct, relative_error, top2_enumerated, top2_hard_enumerated
from top2sar.losses import (
    InvalidStatsError,
    LossConfig,
    LossError,
    class_weights,
    combined_data_loss,
    cross_entropy,
    top2_hard_reference,
    top2_smooth_loss,
)

REFERENCE_COUNTS = [24930, 2979, 4485, 6029, 4911, 2240, 6826]


class TestClassWeights:
    def test_reference_counts(self):
        # (1/6) * (1 - N_y / 52400) evaluated by hand for classes 0 and 5
        w = class_weights(REFERENCE_COUNTS)
        assert sum(REFERENCE_COUNTS) == 52400
        assert w[0] == pytest.approx(0.0873728, abs=1e-7)
        assert w[5] == pytest.approx(0.1595420, abs=1e-7)
        assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_uniform(self):
        np.testing.assert_allclose(class_weights([13] * 7), np.full(7, 1 / 7), atol=1e-15)

    def test_two_classes(self):
        np.testing.assert_allclose(class_weights([1, 3]), [0.75, 0.25])

    def test_minority_weighted_more(self):
        w = class_weights(REFERENCE_COUNTS)
        assert np.argmax(w) == np.argmin(REFERENCE_COUNTS)
        assert np.argmin(w) == np.argmax(REFERENCE_COUNTS)

    @pytest.mark.parametrize("counts", [[5], [], [0, 0, 0], [3, -1]])
    def test_invalid(self, counts):
        with pytest.raises(InvalidStatsError):
            class_weights(counts)

    @given(st.lists(st.integers(0, 10**6), min_size=2, max_size=40).filter(lambda c: sum(c) > 0))
    def test_sum_to_one(self, counts):
        w = class_weights(counts)
        assert abs(w.sum() - 1.0) < 1e-12
        assert np.all((w >= 0) & (w <= 1))


class TestTop2Examples:
    def test_two_classes_is_zero(self, rng):
        for _ in range(20):
            out = top2_smooth_loss(rng.normal(size=2) * 10, int(rng.integers(2)), tau=rng.uniform(0.1, 5))
            assert out.value == 0.0
            np.testing.assert_array_equal(out.grad, [0.0, 0.0])

    def test_three_zero_scores(self):
        # pairs {0,1},{0,2} contribute e^0 each, {1,2} contributes e^1
        assert top2_smooth_loss([0.0, 0.0, 0.0], 0, 1.0).value == pytest.approx(math.log((2 + math.e) / 2), rel=1e-14)
        assert top2_smooth_loss([0.0, 0.0, 0.0], 0, 1.0).value == pytest.approx(0.858297, abs=1e-6)

    def test_dominant_true_score(self):
        expected = math.log(1 + math.exp(-4) / 2)
        assert top2_smooth_loss([10.0, 0.0, 0.0], 0, 1.0).value == pytest.approx(expected, rel=1e-13)
        assert expected == pytest.approx(0.0091161, abs=1e-7)

    def test_batch_matches_single(self, rng):
        s = rng.normal(size=(6, 5)) * 3
        y = rng.integers(0, 5, size=6)
        batch = top2_smooth_loss(s, y, 0.7)
        for i in range(6):
            single = top2_smooth_loss(s[i], y[i], 0.7)
            assert batch.value[i] == pytest.approx(single.value, rel=1e-13)
            np.testing.assert_allclose(batch.grad[i], single.grad, rtol=1e-12, atol=1e-15)

    def test_matches_enumeration(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 11))
            s = rng.uniform(-30, 30, size=n)
            y = int(rng.integers(n))
            tau = float(rng.uniform(0.1, 10))
            ref = top2_enumerated(s, y, tau)
            got = top2_smooth_loss(s, y, tau).value
            if ref == 0:
                assert got == 0
            else:
                assert abs(got - float(ref)) / float(ref) < 1e-9


class TestTop2Errors:
    def test_label_out_of_range(self):
        with pytest.raises(LossError):
            top2_smooth_loss([1.0, 2.0, 3.0], 3)
        with pytest.raises(LossError):
            top2_smooth_loss([1.0, 2.0, 3.0], -1)

    @pytest.mark.parametrize("tau", [0.0, -1.0, float("nan"), float("inf")])
    def test_bad_tau(self, tau):
        with pytest.raises(LossError):
            top2_smooth_loss([1.0, 2.0, 3.0], 0, tau)

    def test_non_finite_scores(self):
        with pytest.raises(LossError):
            top2_smooth_loss([1.0, float("nan"), 3.0], 0)
        with pytest.raises(LossError):
            cross_entropy([1.0, float("inf")], 0)

    def test_single_class_rejected(self):
        with pytest.raises(LossError):
            top2_smooth_loss([1.0], 0)


class TestHardReference:
    def test_examples(self):
        assert top2_hard_reference([10.0, 0.0, 0.0], 0) == 0.0
        assert top2_hard_reference([0.0, 5.0, 5.0], 0) == 3.5
        assert top2_hard_reference([4.0, -2.0], 1) == 0.0

    def test_matches_enumeration(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 9))
            s = rng.normal(size=n) * 4
            y = int(rng.integers(n))
            assert top2_hard_reference(s, y) == pytest.approx(top2_hard_enumerated(s, y), abs=1e-12)

    def test_temperature_limit(self, rng):
        bound = 1e-3 * math.log(21)
        for _ in range(100):
            s = rng.normal(size=7) * 3
            y = int(rng.integers(7))
            gap = abs(top2_smooth_loss(s, y, 1e-3).value - top2_hard_reference(s, y))
            assert gap <= bound + 1e-12


class TestCrossEntropy:
    def test_uniform(self):
        assert cross_entropy(np.full(7, 0.3), 4).value == pytest.approx(math.log(7), rel=1e-14)

    def test_two_class(self):
        assert cross_entropy([1.0, 0.0], 0).value == pytest.approx(math.log(1 + math.exp(-1)), rel=1e-14)
        assert cross_entropy([1.0, 0.0], 0).value == pytest.approx(0.313262, abs=1e-6)

    def test_dominant(self):
        v = cross_entropy([50.0, 0, 0, 0, 0, 0, 0], 0).value
        assert 0 < v < 1e-20
        assert v == pytest.approx(6 * math.exp(-50), rel=1e-12)

    def test_matches_direct(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 10))
            s = rng.uniform(-30, 30, size=n)
            y = int(rng.integers(n))
            ref = cross_entropy_direct(s, y)
            assert cross_entropy(s, y).value == pytest.approx(ref, rel=1e-12, abs=1e-300)

    def test_gradient_is_softmax_minus_onehot(self):
        out = cross_entropy([0.0, math.log(3.0)], 1)
        np.testing.assert_allclose(out.grad, [0.25, -0.25], atol=1e-15)


class TestCombined:
    def test_lambda_zero_is_cross_entropy(self, rng):
        s, y, w = rng.normal(size=7), 3, class_weights(REFERENCE_COUNTS)
        a = combined_data_loss(s, y, w, LossConfig(lam=0.0))
        b = cross_entropy(s, y)
        assert a.value == b.value
        np.testing.assert_array_equal(a.grad, b.grad)

    def test_lambda_one_is_weighted_top2(self, rng):
        s, y, w = rng.normal(size=7), 5, class_weights(REFERENCE_COUNTS)
        a = combined_data_loss(s, y, w, LossConfig(lam=1.0, tau=0.5))
        b = top2_smooth_loss(s, y, 0.5)
        assert a.value == w[5] * b.value
        np.testing.assert_array_equal(a.grad, w[5] * b.grad)

    def test_hand_example(self):
        # 0.8 * ln 3 + 0.2 * (1/3) * ln((2 + e) / 2)
        expected = 0.8 * math.log(3) + (0.2 / 3) * math.log((2 + math.e) / 2)
        got = combined_data_loss([0.0, 0.0, 0.0], 0, [1 / 3] * 3, LossConfig(0.2, 1.0)).value
        assert got == pytest.approx(expected, rel=1e-14)
        assert got == pytest.approx(0.936110, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(LossError):
            combined_data_loss([0.0, 1.0, 2.0], 0, [0.5, 0.5])

    @pytest.mark.parametrize("kw", [{"lam": -0.1}, {"lam": 1.5}, {"tau": 0.0}, {"mu": -1.0}])
    def test_config_validation(self, kw):
        with pytest.raises(LossError):
            LossConfig(**kw)

    def test_default_values(self):
        cfg = LossConfig()
        assert (cfg.lam, cfg.tau, cfg.mu) == (0.2, 1.0, 0.25)


class TestGradients:
    @pytest.mark.parametrize("loss", ["top2", "ce", "combined"])
    def test_finite_differences(self, rng, loss):
        w = class_weights(REFERENCE_COUNTS)
        cfg = LossConfig(lam=0.2, tau=float(rng.uniform(0.3, 3)))
        fns = {
            "top2": lambda s, y: top2_smooth_loss(s, y, cfg.tau),
            "ce": cross_entropy,
            "combined": lambda s, y: combined_data_loss(s, y, w, cfg),
        }
        f = fns[loss]
        for _ in range(30):
            s = rng.normal(size=7) * 2
            y = int(rng.integers(7))
            fd = central_difference(lambda v: f(v, y).value, s)
            assert relative_error(f(s, y).grad, fd) < 1e-5


scores = st.integers(2, 10).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-30, 30), min_size=n, max_size=n),
        st.integers(0, n - 1),
        st.floats(0.1, 10),
    )
)


class TestProperties:
    @settings(max_examples=300, deadline=None)
    @given(scores, st.floats(-100, 100))
    def test_translation_invariance(self, case, c):
        s, y, tau = case
        s = np.array(s)
        assert abs(top2_smooth_loss(s + c, y, tau).value - top2_smooth_loss(s, y, tau).value) <= 1e-9
        assert abs(cross_entropy(s + c, y).value - cross_entropy(s, y).value) <= 1e-9

    @settings(max_examples=300, deadline=None)
    @given(scores)
    def test_gradient_sums_to_zero_and_true_score_descends(self, case):
        s, y, tau = case
        for out in (top2_smooth_loss(s, y, tau), cross_entropy(s, y)):
            assert abs(out.grad.sum()) <= 1e-9
            assert out.grad[y] <= 0.0
            assert np.all(np.isfinite(out.grad))

    @settings(max_examples=300, deadline=None)
    @given(scores)
    def test_nonnegative(self, case):
        s, y, tau = case
        t2 = top2_smooth_loss(s, y, tau).value
        assert cross_entropy(s, y).value >= 0.0
        if len(s) == 2:
            assert t2 == 0.0
        else:
            assert t2 > 0.0

    def test_vanishes_under_dominance(self):
        for n in range(3, 11):
            s = np.zeros(n)
            s[n // 2] = 50.0
            assert top2_smooth_loss(s, n // 2, 1.0).value < 1e-6
