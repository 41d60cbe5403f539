import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from deeplms.errors import DomainError
from deeplms.filters import PredictionTrace
from deeplms.metrics import (
    LearningCurve,
    convergence_index,
    convergence_report,
    learning_curve,
    moving_average,
    steady_state_mse,
)


def trace(errors, warmup=0):
    e = np.asarray(errors, float)
    return PredictionTrace(np.arange(e.size), e, np.zeros_like(e), e, warmup)


class TestLearningCurve:
    def test_single_trace_no_smoothing(self):
        e = np.array([1.0, -2.0, 0.5])
        c = learning_curve([trace(e)], 1)
        np.testing.assert_array_equal(c.values, e ** 2)

    def test_zero_errors(self):
        assert not learning_curve([trace(np.zeros(9))], 5).values.any()

    def test_mean_of_squares(self):
        c = learning_curve([trace([1, 1]), trace([3, 3])], 1)
        np.testing.assert_array_equal(c.values, [5.0, 5.0])
        assert c.ensemble_size == 2

    def test_warmup_excluded(self):
        c = learning_curve([trace([9, 9, 1, 2], warmup=2)], 1)
        np.testing.assert_array_equal(c.values, [1.0, 4.0])
        assert c.start == 2

    def test_plain_arrays(self):
        c = learning_curve([np.array([2.0, 0.0])], 1)
        np.testing.assert_array_equal(c.values, [4.0, 0.0])

    def test_empty(self):
        with pytest.raises(DomainError):
            learning_curve([])

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            learning_curve([trace([1, 2]), trace([1, 2, 3])])

    def test_smoothing_preserves_constant(self):
        np.testing.assert_allclose(moving_average(np.full(30, 2.5), 7), 2.5, rtol=1e-15)

    def test_centered_average(self):
        np.testing.assert_allclose(moving_average([0, 3, 6, 9, 12], 3), [1.5, 3, 6, 9, 10.5])

    @given(st.lists(st.lists(st.floats(-5, 5), min_size=6, max_size=6), min_size=1, max_size=5),
           st.randoms())
    def test_permutation_invariant(self, errs, rnd):
        shuffled = list(errs)
        rnd.shuffle(shuffled)
        a = learning_curve([trace(e) for e in errs], 3).values
        b = learning_curve([trace(e) for e in shuffled], 3).values
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-300)
        assert np.all(a >= 0)

    def test_csv(self, tmp_path):
        c = learning_curve([trace([0, 0, 1, 2], warmup=2)], 1)
        c.to_csv(tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text().splitlines() == [
            "n,mse_smoothed,mse_raw", "2,1.0,1.0", "3,4.0,4.0"]


class TestSteadyState:
    def test_constant(self):
        assert steady_state_mse(np.full(17, 0.37), 0.2) == 0.37

    def test_whole_curve(self):
        assert steady_state_mse([1.0, 2.0, 3.0, 6.0], 1.0) == 3.0

    def test_tail_half(self):
        assert steady_state_mse([4, 4, 2, 2], 0.5) == 2.0

    def test_learning_curve_input(self):
        c = LearningCurve(np.array([3.0, 1.0]), np.array([3.0, 1.0]), 1, 1)
        assert steady_state_mse(c, 0.5) == 1.0

    @pytest.mark.parametrize("tf", [0.0, -0.1, 1.5])
    def test_bad_fraction(self, tf):
        with pytest.raises(DomainError):
            steady_state_mse([1.0], tf)

    def test_empty(self):
        with pytest.raises(DomainError):
            steady_state_mse([], 0.5)


class TestConvergenceIndex:
    def test_immediately_converged(self):
        assert convergence_index(np.ones(100), 1.0, 0.1, 50) == 0

    def test_crossing_at_37(self):
        # geometric decay toward 1.0; threshold 1.1 first met at n = 37
        n = np.arange(200)
        rate = (0.1 / 4.0) ** (1 / 36.5)
        curve = 1.0 + 4.0 * rate ** n
        assert curve[36] > 1.1 >= curve[37]
        assert convergence_index(curve, 1.0, 0.1, 1) == 37

    def test_dwell_skips_transient_dip(self):
        curve = np.r_[5.0, 1.0, 5.0, np.ones(10)]
        assert convergence_index(curve, 1.0, 0.1, 1) == 1
        assert convergence_index(curve, 1.0, 0.1, 5) == 3

    def test_not_converged(self):
        assert convergence_index(np.full(100, 2.0), 1.0, 0.1, 10) is None

    def test_dwell_must_fit(self):
        assert convergence_index(np.ones(5), 1.0, 0.1, 6) is None

    @pytest.mark.parametrize("delta, dwell", [(0.0, 5), (0.1, 0)])
    def test_bad_arguments(self, delta, dwell):
        with pytest.raises(DomainError):
            convergence_index(np.ones(5), 1.0, delta, dwell)

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=60), st.floats(0.01, 1),
           st.floats(0.01, 1), st.integers(1, 10))
    def test_monotone_in_delta(self, curve, d1, d2, dwell):
        tight, loose = sorted((d1, d2))
        a = convergence_index(curve, 1.0, tight, dwell)
        b = convergence_index(curve, 1.0, loose, dwell)
        if a is not None:
            assert b is not None and b <= a


def test_report():
    curve = np.r_[np.full(50, 3.0), np.full(150, 1.2)]
    rep = convergence_report(curve, 1.0, 0.1, 10, 0.2)
    assert rep.steady_state_mse == pytest.approx(1.2)
    assert rep.convergence_index == 50
    assert rep.excess_mse == pytest.approx(0.2)
    assert rep.converged
