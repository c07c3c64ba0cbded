import numpy as np
import pytest

from models.errors import BudgetExceeded, InvalidParameters
from solver.hedge_solver import nonneg_constraints, solve_constrained, solve_unconstrained
from solver.sparse_selector import (SparseSelector, brute_force, greedy_backward, greedy_forward,
                                    lasso_kkt_residual, lasso_path, leaps_and_bounds, soft_threshold)
from tests.helpers import make_moments, random_moments


@pytest.fixture
def instances(rng):
    return [random_moments(rng, n, extra=5) for n in (3, 5, 8, 8, 10)]


class TestExactSelection:
    def test_leaps_and_bounds_matches_enumeration(self, instances):
        for m in instances:
            for d in range(m.n + 1):
                exact = brute_force(m, d)
                bnb = leaps_and_bounds(m, d)
                assert bnb.support == exact.support
                assert bnb.eps2 == exact.eps2
                assert bnb.certified

    def test_many_random_instances(self, rng):
        for n in rng.integers(2, 11, size=24):
            m = random_moments(rng, int(n), extra=int(rng.integers(1, 6)))
            for d in range(m.n + 1):
                exact = brute_force(m, d)
                bnb = leaps_and_bounds(m, d)
                assert bnb.support == exact.support
                assert bnb.eps2 == exact.eps2

    def test_nonnegative_variant(self, instances):
        for m in instances[:3]:
            for d in range(m.n + 1):
                exact = brute_force(m, d, nonneg=True)
                bnb = leaps_and_bounds(m, d, nonneg=True)
                assert bnb.support == exact.support
                assert bnb.eps2 == exact.eps2
                assert np.all(bnb.v >= 0)

    def test_empty_and_full_support(self, instances):
        m = instances[2]
        empty = leaps_and_bounds(m, 0)
        assert empty.support == ()
        assert empty.eps2 == m.A
        full = leaps_and_bounds(m, m.n)
        assert full.eps2 == pytest.approx(solve_unconstrained(m).eps2, abs=1e-12)

    def test_errors_decrease_with_d(self, instances):
        m = instances[3]
        errors = [leaps_and_bounds(m, d).eps2 for d in range(m.n + 1)]
        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))

    def test_full_nonnegative_support_is_constrained_optimum(self, instances):
        m = instances[1]
        step = brute_force(m, m.n, nonneg=True)
        sol = solve_constrained(m, nonneg_constraints(m.n))
        assert step.eps2 == pytest.approx(sol.eps2, abs=1e-12)

    def test_budget(self, instances):
        with pytest.raises(BudgetExceeded):
            brute_force(instances[2], 4, budget=10)

    def test_cardinality_range(self, instances):
        with pytest.raises(InvalidParameters):
            leaps_and_bounds(instances[0], instances[0].n + 1)

    def test_timeout_returns_uncertified_incumbent(self, instances):
        m = instances[4]
        step = leaps_and_bounds(m, 4, timeout=0.0)
        assert not step.certified
        assert step.eps2 >= brute_force(m, 4).eps2
        assert len(step.support) == 4


class TestGreedy:
    def test_first_pick_maximises_squared_correlation(self, instances):
        for m in instances:
            path = greedy_forward(m, 1)
            best = int(np.argmax(m.B ** 2 / np.diag(m.C)))
            assert path.at(1).support == (best,)
            assert path.at(0).eps2 == m.A

    def test_never_beats_exact(self, instances):
        for m in instances:
            forward = greedy_forward(m)
            backward = greedy_backward(m)
            for d in range(m.n + 1):
                exact = brute_force(m, d).eps2
                assert forward.at(d).eps2 >= exact - 1e-12
                assert backward.at(d).eps2 >= exact - 1e-12

    def test_nested_supports(self, instances):
        path = greedy_forward(instances[3])
        for a, b in zip(path.steps, path.steps[1:]):
            assert set(a.support) <= set(b.support)
            assert b.d == a.d + 1

    def test_backward_path_shape(self, instances):
        m = instances[1]
        path = greedy_backward(m)
        assert [s.d for s in path.steps] == list(range(m.n, -1, -1))
        assert path.at(0).eps2 == m.A

    def test_backward_single_asset(self):
        path = greedy_backward(make_moments(3.0, [2.0], [[4.0]]))
        assert [s.support for s in path.steps] == [(0,), ()]

    def test_backward_keeps_best_asset_of_diagonal_instance(self):
        m = make_moments(5.0, [1.0, 2.0, 0.5], np.diag([1.0, 2.0, 1.0]))
        # error reductions B_i^2 / C_ii are 1, 2 and 0.25
        assert greedy_backward(m).at(1).support == (1,)

    def test_nonnegative_forward(self, instances):
        path = greedy_forward(instances[2], nonneg=True)
        assert all(np.all(s.v >= 0) for s in path.steps)


class TestLasso:
    def test_soft_threshold(self):
        assert soft_threshold(3.0, 1.0) == 2.0
        assert soft_threshold(-3.0, 1.0) == -2.0
        assert soft_threshold(0.5, 1.0) == 0.0

    def test_large_penalty_gives_empty_hedge(self, instances):
        m = instances[2]
        lam = 2 * np.max(np.abs(m.B))
        path = lasso_path(m, [lam, 1.01 * lam])
        assert all(s.support == () for s in path.steps)

    def test_identity_covariance_is_soft_threshold(self):
        B = np.array([1.0, -0.4, 0.1, 0.7])
        m = make_moments(2.0, B, np.eye(4))
        step = lasso_path(m, [0.5]).steps[0]
        expected = np.sign(B) * np.maximum(np.abs(B) - 0.25, 0.0)
        np.testing.assert_allclose(step.v, expected, atol=1e-12)
        assert step.support == (0, 1, 3)

    def test_vanishing_penalty_recovers_unconstrained(self, instances):
        m = instances[1]
        step = lasso_path(m, [1e-10]).steps[0]
        np.testing.assert_allclose(step.v, solve_unconstrained(m).v, atol=1e-6)

    def test_path_satisfies_kkt(self, instances):
        for m in instances:
            for step in lasso_path(m).steps:
                assert step.converged
                assert lasso_kkt_residual(step.v, m, step.lam) < 1e-8

    def test_default_grid(self, instances):
        m = instances[0]
        grid = SparseSelector(m).default_lambda_grid()
        assert len(grid) == 50
        assert grid[0] == pytest.approx(2 * np.max(np.abs(m.B)))
        assert grid[-1] == pytest.approx(grid[0] * 1e-6)

    def test_nonnegative_path(self, instances):
        m = instances[3]
        for step in lasso_path(m, nonneg=True).steps:
            assert np.all(step.v >= 0)
            assert lasso_kkt_residual(step.v, m, step.lam, nonneg=True) < 1e-8

    def test_penalty_must_be_positive(self, instances):
        with pytest.raises(InvalidParameters):
            lasso_path(instances[0], [0.0])

    def test_reported_error_is_full_data_error(self, instances):
        from solver.hedge_solver import hedging_error
        m = instances[4]
        for step in lasso_path(m).steps:
            assert step.eps2 == hedging_error(step.v, m)
