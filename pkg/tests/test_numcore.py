import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paramest.numcore import (
    DimensionError,
    RealizationError,
    TimeGrid,
    adjugate,
    det,
    filter_step,
    numeric_rank,
    realize_rational,
    rk4_step,
    run_filter,
)


def square_matrices(max_n=6):
    return st.integers(1, max_n).flatmap(
        lambda n: st.lists(
            st.floats(-10, 10, allow_nan=False), min_size=n * n, max_size=n * n
        ).map(lambda v: np.array(v).reshape(n, n))
    )


class TestDet:
    def test_identity(self):
        assert det(np.eye(4)) == 1.0

    def test_rank_deficient_exact_zero(self):
        assert det(np.array([[1.0, 1.0], [1.0, 1.0]])) == 0.0

    def test_2x2_cofactor(self):
        # by hand: 2*2 - 1*1 = 3
        assert det(np.array([[2.0, 1.0], [1.0, 2.0]])) == 3.0

    def test_non_square_raises(self):
        with pytest.raises(DimensionError):
            det(np.ones((2, 3)))

    def test_matches_lu_large(self):
        rng = np.random.default_rng(3)
        m = rng.normal(size=(7, 7))
        assert det(m) == pytest.approx(np.linalg.det(m), rel=1e-10)


class TestAdjugate:
    def test_2x2_layout(self):
        m = np.array([[3.0, -2.0], [7.0, 5.0]])
        expected = np.array([[5.0, 2.0], [-7.0, 3.0]])
        assert np.array_equal(adjugate(m), expected)

    def test_identity(self):
        assert np.array_equal(adjugate(np.eye(3)), np.eye(3))

    def test_singular_by_cofactors(self):
        m = np.array([[1.0, 1.0], [1.0, 1.0]])
        assert np.array_equal(adjugate(m), np.array([[1.0, -1.0], [-1.0, 1.0]]))

    def test_non_square_raises(self):
        with pytest.raises(DimensionError):
            adjugate(np.ones((3, 2)))

    @settings(max_examples=150, deadline=None)
    @given(square_matrices())
    def test_cayley_identity(self, m):
        q = m.shape[0]
        lhs = adjugate(m) @ m
        rhs = det(m) * np.eye(q)
        scale = 1.0 + np.max(np.abs(m)) ** q
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale

    @settings(max_examples=100, deadline=None)
    @given(square_matrices())
    def test_det_of_adjugate(self, m):
        q = m.shape[0]
        d = det(m)
        # the relative error scales with the condition number, so restrict
        # the check to honestly nonsingular draws
        if abs(d) < 1e-3 or np.linalg.cond(m) > 1e6:
            return
        assert det(adjugate(m)) == pytest.approx(d ** (q - 1), rel=1e-8)

    def test_singular_5x5_falls_back_to_cofactors(self):
        rng = np.random.default_rng(11)
        m = rng.normal(size=(5, 5))
        m[:, 4] = m[:, 0] + m[:, 1]  # exactly dependent columns
        adj = adjugate(m)
        assert np.max(np.abs(adj @ m - det(m) * np.eye(5))) < 1e-10


class TestNumericRank:
    def test_identity(self):
        assert numeric_rank(np.eye(3), 1e-9) == 3

    def test_duplicated_column(self):
        m = np.array([[1.0, 2.0, 1.0], [0.0, 1.0, 0.0], [3.0, 0.0, 3.0]])
        assert numeric_rank(m, 1e-9) <= 2

    def test_tiny_singular_value(self):
        # exact singular values are 1 and 1e-15
        m = np.array([[1.0, 0.0], [0.0, 1e-15]])
        assert numeric_rank(m, 1e-9) == 1

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            numeric_rank(np.eye(2), 0.0)


class TestRk4:
    def test_exponential_decay(self):
        out = rk4_step(lambda t, x: -x, 0.0, np.array([1.0]), 0.01)
        assert abs(out[0] - math.exp(-0.01)) <= 1e-10

    def test_zero_field(self):
        out = rk4_step(lambda t, x: np.zeros(2), 0.0, np.array([4.0, -1.0]), 0.3)
        assert np.array_equal(out, np.array([4.0, -1.0]))

    def test_constant_field_exact(self):
        out = rk4_step(lambda t, x: np.array([1.0]), 0.0, np.array([0.0]), 0.1)
        assert out[0] == pytest.approx(0.1, abs=1e-15)

    def test_fourth_order_convergence(self):
        def solve(h):
            x = np.array([1.0])
            for k in range(round(1.0 / h)):
                x = rk4_step(lambda t, y: -y, k * h, x, h)
            return abs(x[0] - math.exp(-1.0))

        assert solve(0.1) / solve(0.05) >= 14.0

    def test_overflow_carries_time(self):
        from paramest.numcore import NumericOverflowError

        with pytest.raises(NumericOverflowError) as err:
            rk4_step(lambda t, x: x * np.inf, 2.5, np.array([1.0]), 0.1)
        assert err.value.t == 2.5


class TestRealizeRational:
    def test_strictly_proper_two_states(self):
        lam = 3.0
        f = realize_rational([lam**2], [1.0, 2 * lam, lam**2])
        assert f.n_states == 2
        assert np.all(f.D == 0.0)

    def test_biproper_long_division(self):
        # P^2/(P+lam)^2 = 1 - (2 lam P + lam^2)/(P+lam)^2
        lam = 2.0
        f = realize_rational([1.0, 0.0, 0.0], [1.0, 2 * lam, lam**2])
        assert f.n_states == 2
        assert f.D[0, 0] == 1.0
        assert np.allclose(f.C.ravel(), [-(lam**2), -2 * lam])

    def test_first_order(self):
        f = realize_rational([1.0], [1.0, 1.0])
        assert f.A[0, 0] == -1.0 and f.B[0, 0] == 1.0 and f.C[0, 0] == 1.0 and f.D[0, 0] == 0.0

    def test_improper_raises(self):
        with pytest.raises(RealizationError):
            realize_rational([1.0, 0.0, 0.0], [1.0, 1.0])

    def test_constant_denominator_raises(self):
        with pytest.raises(RealizationError):
            realize_rational([1.0], [2.0])


class TestFilterStep:
    def test_double_pole_step_response(self):
        # unit step through lam^2/(P+lam)^2 -> 1 - (1+lam t) e^(-lam t)
        lam = 1.0
        f = realize_rational([lam**2], [1.0, 2 * lam, lam**2])
        h = 1e-3
        worst = 0.0
        for k in range(3000):
            y = filter_step(f, 1.0, h)
            t = (k + 1) * h
            worst = max(worst, abs(y[0] - (1.0 - (1.0 + lam * t) * math.exp(-lam * t))))
        assert worst <= 1e-6

    def test_zero_input_zero_state(self):
        f = realize_rational([1.0], [1.0, 2.0])
        for _ in range(10):
            assert filter_step(f, 0.0, 0.01)[0] == 0.0

    def test_partial_fractions_closed_form(self):
        # 1/(P+1) driven by e^(-2t) -> e^(-t) - e^(-2t)
        f = realize_rational([1.0], [1.0, 1.0])
        h = 1e-3
        worst = 0.0
        for k in range(4000):
            y = f.step(lambda t: math.exp(-2 * t), h)
            t = (k + 1) * h
            worst = max(worst, abs(y[0] - (math.exp(-t) - math.exp(-2 * t))))
        assert worst <= 1e-6

    def test_run_filter_linear_interp(self):
        f = realize_rational([1.0], [1.0, 1.0])
        h = 1e-3
        ts = np.arange(0, 4.0 + h / 2, h)
        u = np.exp(-2 * ts)
        out = run_filter(f, u, h, interp="linear")
        expected = np.exp(-ts) - np.exp(-2 * ts)
        assert np.max(np.abs(out[:, 0] - expected)) <= 1e-6

    def test_input_dimension_checked(self):
        f = realize_rational([1.0], [1.0, 1.0])
        with pytest.raises(DimensionError):
            f.step(np.array([1.0, 2.0]), 0.01)


class TestTimeGrid:
    def test_times(self):
        g = TimeGrid(h=0.5, n_steps=4)
        assert np.allclose(g.times(), [0.0, 0.5, 1.0, 1.5, 2.0])

    def test_zero_length(self):
        g = TimeGrid(h=0.1, n_steps=0)
        assert g.n_samples == 0 and g.times().size == 0

    def test_bad_step(self):
        with pytest.raises(ValueError):
            TimeGrid(h=0.0, n_steps=5)


class TestRunFilterHold:
    def test_hold_mode_step_input(self):
        # for piecewise-constant inputs holding is exact
        f = realize_rational([1.0], [1.0, 1.0])
        h = 1e-3
        u = np.ones(2001)
        out = run_filter(f, u, h, interp="hold")
        ts = np.arange(2001) * h
        assert np.max(np.abs(out[:, 0] - (1 - np.exp(-ts)))) <= 1e-10

    def test_empty_input(self):
        f = realize_rational([1.0], [1.0, 1.0])
        assert run_filter(f, np.empty(0), 0.01).shape == (0, 1)


class TestNumericRankEdges:
    def test_vector_input(self):
        assert numeric_rank(np.array([1.0, 2.0]), 1e-9) == 1

    def test_empty(self):
        assert numeric_rank(np.empty((0, 0)), 1e-9) == 0

    def test_zero_matrix(self):
        assert numeric_rank(np.zeros((3, 3)), 1e-9) == 0
