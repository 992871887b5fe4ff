import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from expertmatch.simplex import LPInfeasible, feasible_point, solve_bounded_lp


def _random_lp(r, m, n):
    A = r.integers(-3, 4, size=(m, n)).astype(float)
    x_feas = r.random(n)
    b = A @ x_feas
    return A, b, np.zeros(n), np.ones(n), r.normal(size=n)


class TestSimplex:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(2, 9), st.sampled_from(["bland", "dantzig"]))
    def test_matches_highs(self, seed, m, n, rule):
        r = np.random.default_rng(seed)
        A, b, lb, ub, c = _random_lp(r, m, n)
        ref = linprog(-c, A_eq=A, b_eq=b, bounds=list(zip(lb, ub)), method="highs")
        assert ref.status == 0
        res = solve_bounded_lp(c, A, b, lb, ub, rule=rule)
        assert res.objective == pytest.approx(-ref.fun, abs=1e-7)
        assert np.allclose(A @ res.x, b, atol=1e-7)
        assert np.all(res.x >= -1e-9) and np.all(res.x <= 1 + 1e-9)

    def test_infeasible(self):
        A = np.array([[1.0, 1.0]])
        with pytest.raises(LPInfeasible):
            solve_bounded_lp([1, 1], A, [3.0], [0, 0], [1, 1])

    def test_empty_bounds(self):
        with pytest.raises(LPInfeasible):
            solve_bounded_lp([1], np.ones((1, 1)), [1.0], [2.0], [1.0])

    def test_degenerate_assignment_lp(self):
        # 3x3 assignment polytope with all-equal costs is highly degenerate
        n = 3
        A = np.zeros((2 * n, n * n))
        for i in range(n):
            for j in range(n):
                A[i, i * n + j] = 1
                A[n + j, i * n + j] = 1
        res = solve_bounded_lp(np.ones(n * n), A, np.ones(2 * n), np.zeros(n * n), np.ones(n * n))
        assert res.objective == pytest.approx(3.0)

    def test_feasible_point(self):
        A = np.array([[1.0, 2.0, -1.0]])
        x = feasible_point(A, [1.5], np.zeros(3), np.ones(3))
        assert A @ x == pytest.approx([1.5])

    def test_warm_start_hint_checked(self):
        A = np.eye(2)
        with pytest.raises(ValueError):
            solve_bounded_lp([1, 1], A, [0.5, 0.5], [0, 0], [1, 1], x0=[0.0, 0.5], basis_hint=[0, 1])
