import math

import numpy as np
import pytest

from fswbary.core import (BarycenterProblem, ConvergenceError,
                          primal_objective, residue)
from fswbary.dual import DualState, log_b_stack, log_col_marginals, phi
from fswbary.ibp import ibp_col_update, ibp_row_update, ibp_solve
from fswbary.lp_oracle import assemble_lp, solve_lp_exact
from fswbary.rounding import round_plans

from conftest import random_problem


def _zero_cost_problem(weights, omega=None):
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    m, n = weights.shape
    support = np.arange(n, dtype=float)[:, None]
    return BarycenterProblem.from_weights(support, weights, omega=omega,
                                          costs=np.zeros((m, n, n)))


class TestRowUpdate:
    def test_uniform_zero_cost(self):
        prob = _zero_cost_problem([[0.5, 0.5]])
        out = ibp_row_update(DualState.zeros(1, 2), prob, eta=1.0)
        assert np.allclose(out.lam, -2.0 * math.log(2.0), rtol=1e-15)
        assert np.array_equal(out.tau, np.zeros((1, 2)))

    def test_fixed_point(self, rng):
        prob = random_problem(rng, 2, 4)
        state = DualState(rng.normal(size=(2, 4)), rng.normal(size=(2, 4)))
        once = ibp_row_update(state, prob, eta=0.5)
        twice = ibp_row_update(once, prob, eta=0.5)
        assert np.abs(twice.lam - once.lam).max() <= 1e-14

    def test_residue_vanishes_after_update(self, rng):
        prob = random_problem(rng, 3, 4)
        state = DualState(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
        out = ibp_row_update(state, prob, eta=0.5)
        stack = np.exp(log_b_stack(out.lam, out.tau, prob.costs, 0.5))
        assert residue(prob, stack) <= 1e-12

    def test_rejects_zero_weights(self):
        prob = _zero_cost_problem([[1.0, 0.0]])
        with pytest.raises(ValueError):
            ibp_row_update(DualState.zeros(1, 2), prob, eta=1.0)


class TestColUpdate:
    def test_fixed_point_when_already_common(self, rng):
        weights = np.tile(np.array([0.3, 0.7]), (2, 1))
        prob = _zero_cost_problem(weights)
        state = DualState(np.tile(rng.normal(size=2), (2, 1)),
                          np.zeros((2, 2)))
        out = ibp_col_update(state, prob, eta=1.0)
        assert np.abs(out.tau - state.tau).max() <= 1e-14

    def test_single_measure_is_noop(self, rng):
        prob = random_problem(rng, 1, 3)
        state = DualState(rng.normal(size=(1, 3)), np.zeros((1, 3)))
        out = ibp_col_update(state, prob, eta=0.7)
        assert np.abs(out.tau - state.tau).max() <= 1e-15

    def test_geometric_mean_of_marginals(self):
        # l(B_1) = (1, 1) and l(B_2) = (4, 4); the common marginal is (2, 2)
        prob = _zero_cost_problem([[0.5, 0.5], [0.5, 0.5]])
        lam = np.stack([np.full(2, math.log(0.5)), np.full(2, math.log(2.0))])
        state = DualState(lam, np.zeros((2, 2)))
        out = ibp_col_update(state, prob, eta=1.0)
        log_l = log_col_marginals(log_b_stack(out.lam, out.tau, prob.costs, 1.0))
        assert np.allclose(np.exp(log_l), 2.0, rtol=1e-12)

    def test_preserves_constraint(self, rng):
        prob = random_problem(rng, 3, 4)
        tau = rng.normal(size=(3, 4))
        tau -= prob.omega @ tau
        state = DualState(rng.normal(size=(3, 4)), tau)
        out = ibp_col_update(state, prob, eta=0.5)
        assert out.constraint_gap(prob.omega) <= 1e-13


class TestIbpSolve:
    def test_identical_measures_zero_diag_cost(self, rng):
        w = rng.uniform(0.1, 1.0, size=4)
        w /= w.sum()
        prob = random_problem(rng, 2, 4)
        prob = BarycenterProblem.from_weights(prob.support, np.tile(w, (2, 1)),
                                              costs=prob.costs)
        plans, _, report = ibp_solve(prob, eta=0.02, eps_prime=1e-8)
        assert primal_objective(prob, plans) <= 1e-6

    def test_single_point_support(self):
        prob = BarycenterProblem.from_weights(np.zeros((1, 1)), [[1.0], [1.0]],
                                              costs=np.zeros((2, 1, 1)))
        plans, _, report = ibp_solve(prob, eta=1.0, eps_prime=1e-10)
        assert report.residue_history[0] == (0, 0.0)
        assert np.allclose(plans.plans, 1.0)

    def test_phi_monotone_along_run(self, rng):
        prob = random_problem(rng, 3, 5)
        _, _, report = ibp_solve(prob, eta=0.1, eps_prime=1e-9, check_every=1)
        objs = [v for _, v in report.objective_history]
        assert all(b <= a + 1e-9 for a, b in zip(objs, objs[1:]))

    def test_constraint_and_common_marginal_along_run(self, rng):
        prob = random_problem(rng, 3, 4)
        eta = 0.2
        state = DualState.zeros(3, 4)
        for _ in range(60):
            state = ibp_col_update(state, prob, eta)
            assert state.constraint_gap(prob.omega) <= 1e-10
            log_l = log_col_marginals(log_b_stack(state.lam, state.tau,
                                                  prob.costs, eta))
            l = np.exp(log_l)
            assert np.abs(l - l[0]).max() <= 1e-10
            state = ibp_row_update(state, prob, eta)
            assert state.constraint_gap(prob.omega) <= 1e-10

    def test_weak_duality_against_lp(self, rng):
        prob = random_problem(rng, 3, 4)
        plans, _, _ = ibp_solve(prob, eta=0.05, eps_prime=1e-7)
        rounded, _ = round_plans(plans.plans, prob.weight_matrix, prob.omega)
        lp_value = solve_lp_exact(assemble_lp(prob)).value
        assert primal_objective(prob, rounded) >= lp_value - 1e-9

    def test_iteration_cap_raises_with_partial_report(self, rng):
        prob = random_problem(rng, 2, 4)
        with pytest.raises(ConvergenceError) as err:
            ibp_solve(prob, eta=0.05, eps_prime=1e-12, max_iter=3)
        assert err.value.report is not None
        assert err.value.report.iterations == 3
        assert err.value.report.residue_history

    def test_final_residue_meets_threshold(self, rng):
        prob = random_problem(rng, 4, 6)
        _, _, report = ibp_solve(prob, eta=0.1, eps_prime=1e-6)
        assert report.final_residue <= 1e-6
