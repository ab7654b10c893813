import math

import numpy as np
import pytest

from fswbary.core import BarycenterProblem, NumericalError
from fswbary.dual import (DualState, canonicalize_dual, compute_B, dual_radii,
                          grad_phi, log_b_stack, phi, project_onto_P)
from fswbary.ibp import ibp_solve

from conftest import (finite_difference_grad, mass_capped_state,
                      random_problem, random_simplex)


def _zero_cost_problem(weights, omega=None):
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    m, n = weights.shape
    support = np.arange(n, dtype=float)[:, None]
    return BarycenterProblem.from_weights(support, weights, omega=omega,
                                          costs=np.zeros((m, n, n)))


class TestComputeB:
    def test_all_zero_inputs_give_ones(self):
        B = compute_B(np.zeros(3), np.zeros(3), np.zeros((3, 3)), eta=1.0)
        assert np.array_equal(B, np.ones((3, 3)))

    def test_row_scaling(self):
        B = compute_B(np.full(2, math.log(2.0)), np.zeros(2),
                      np.zeros((2, 2)), eta=1.0)
        assert np.allclose(B, 2.0 * np.ones((2, 2)), rtol=1e-15)

    def test_cost_suppression(self):
        C = np.array([[0.0, 1.0], [1.0, 0.0]])
        B = compute_B(np.zeros(2), np.zeros(2), C, eta=1.0)
        e = math.exp(-1.0)
        assert np.allclose(B, [[1.0, e], [e, 1.0]], rtol=1e-15)

    def test_overflow_raises(self):
        with pytest.raises(NumericalError):
            compute_B(np.full(2, 800.0), np.zeros(2), np.zeros((2, 2)), eta=1.0)

    def test_rejects_nonpositive_eta(self):
        with pytest.raises(ValueError):
            compute_B(np.zeros(2), np.zeros(2), np.zeros((2, 2)), eta=0.0)


class TestPhi:
    def test_zero_state_zero_cost(self):
        prob = _zero_cost_problem([np.full(3, 1.0 / 3.0)])
        state = DualState.zeros(1, 3)
        assert phi(state, prob, eta=1.0) == pytest.approx(9.0, rel=1e-14)

    def test_log_weights_state(self, rng):
        u = random_simplex(rng, 4, floor=0.05)
        prob = _zero_cost_problem([u])
        state = DualState(np.log(u)[None, :], np.zeros((1, 4)))
        expected = 4.0 - float(u @ np.log(u))
        assert phi(state, prob, eta=1.0) == pytest.approx(expected, rel=1e-13)

    def test_midpoint_convexity(self, rng):
        prob = random_problem(rng, 3, 4)
        eta = 0.6
        for _ in range(25):
            a = DualState(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
            b = DualState(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
            mid = DualState(0.5 * (a.lam + b.lam), 0.5 * (a.tau + b.tau))
            avg = 0.5 * (phi(a, prob, eta) + phi(b, prob, eta))
            assert phi(mid, prob, eta) <= avg + 1e-10 * max(1.0, abs(avg))


class TestGradPhi:
    def test_uniform_zero_state(self):
        prob = _zero_cost_problem([[0.5, 0.5]])
        d_lam, d_tau = grad_phi(DualState.zeros(1, 2), prob, eta=1.0)
        assert np.allclose(d_lam, 1.5)
        assert np.allclose(d_tau, 2.0)

    def test_matches_finite_differences(self, rng):
        prob = random_problem(rng, 2, 3)
        eta = 0.8
        for _ in range(10):
            state = DualState(0.5 * rng.normal(size=(2, 3)),
                              0.5 * rng.normal(size=(2, 3)))
            d_lam, d_tau = grad_phi(state, prob, eta)
            fd_lam, fd_tau = finite_difference_grad(state, prob, eta)
            scale = max(1.0, np.abs(d_lam).max(), np.abs(d_tau).max())
            assert np.abs(d_lam - fd_lam).max() <= 1e-6 * scale
            assert np.abs(d_tau - fd_tau).max() <= 1e-6 * scale

    def test_lambda_block_vanishes_at_optimum(self, rng):
        prob = random_problem(rng, 3, 4)
        _, state, _ = ibp_solve(prob, eta=0.2, eps_prime=1e-11, check_every=1)
        d_lam, _ = grad_phi(state, prob, eta=0.2)
        assert np.abs(d_lam).max() <= 1e-10


class TestDualRadii:
    def test_tau_radius(self, rng):
        prob = random_problem(rng, 2, 3)
        prob = BarycenterProblem(prob.measures, prob.omega,
                                 prob.costs / prob.max_cost, prob.p)
        radii = dual_radii(prob, eta=0.5)
        assert radii.r_tau == pytest.approx(8.0)

    def test_lambda_radius(self):
        n = 10
        weights = np.full((1, n), 1.0 / n)  # min weight 0.1
        support = np.arange(n, dtype=float)[:, None]
        costs = np.zeros((1, n, n))
        costs[0, 0, 1] = costs[0, 1, 0] = 1.0
        prob = BarycenterProblem.from_weights(support, weights, costs=costs)
        radii = dual_radii(prob, eta=0.5)
        assert radii.r_lambda == pytest.approx(
            10.0 + math.log(10.0) - math.log(0.1), rel=1e-12)
        assert radii.r_lambda == pytest.approx(14.60517018598809, rel=1e-10)

    def test_l2_fields(self, rng):
        prob = random_problem(rng, 2, 5)
        radii = dual_radii(prob, eta=0.3)
        assert radii.r_lambda_l2 == pytest.approx(math.sqrt(5) * radii.r_lambda)
        assert radii.r_tau_l2 == pytest.approx(math.sqrt(5) * radii.r_tau)

    def test_zero_weight_rejected(self):
        prob = BarycenterProblem.from_weights([[0.0], [1.0]], [[1.0, 0.0]])
        with pytest.raises(ValueError):
            dual_radii(prob, eta=0.5)


class TestProjectOntoP:
    def test_feasible_unchanged(self, rng):
        omega = random_simplex(rng, 3)
        tau = rng.normal(size=(3, 4))
        tau -= np.outer(np.ones(3), omega @ tau)
        assert np.allclose(project_onto_P(tau, omega), tau, atol=1e-15)

    def test_constant_blocks_project_to_zero(self):
        omega = np.array([0.25, 0.75])
        tau = np.full((2, 3), 4.2)
        assert np.allclose(project_onto_P(tau, omega), 0.0, atol=1e-14)

    def test_random_projection_is_feasible(self, rng):
        omega = random_simplex(rng, 4)
        tau = 5.0 * rng.normal(size=(4, 6))
        out = project_onto_P(tau, omega)
        assert np.abs(omega @ out).max() <= 1e-14


class TestShiftInvariance:
    def test_compensated_shifts_preserve_B_and_phi(self, rng):
        prob = random_problem(rng, 3, 4)
        eta = 0.7
        state = DualState(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
        c = rng.normal(size=3)
        shifted = DualState(state.lam + c[:, None], state.tau - c[:, None])
        a = np.exp(log_b_stack(state.lam, state.tau, prob.costs, eta))
        b = np.exp(log_b_stack(shifted.lam, shifted.tau, prob.costs, eta))
        assert np.allclose(a, b, rtol=1e-12)
        # compensate the linear term so the objective is preserved too
        comp = c - float(prob.omega @ c) / prob.omega[0] * np.eye(3)[0]
        balanced = DualState(state.lam + comp[:, None], state.tau - comp[:, None])
        assert phi(balanced, prob, eta) == pytest.approx(
            phi(state, prob, eta), rel=1e-12)


class TestCanonicalize:
    def test_already_canonical_unchanged(self, rng):
        prob = random_problem(rng, 3, 4)
        tau = rng.normal(size=(3, 4))
        tau -= 0.5 * (tau.max(axis=1) + tau.min(axis=1))[:, None]  # centered
        tau = project_onto_P(tau, prob.omega)
        tau -= 0.5 * (tau.max(axis=1) + tau.min(axis=1))[:, None]
        state = DualState(rng.normal(size=(3, 4)), tau)
        out = canonicalize_dual(state, prob)
        assert np.allclose(out.lam, state.lam, atol=1e-12)
        assert np.allclose(out.tau, state.tau, atol=1e-12)

    def test_preserves_phi_and_P(self, rng):
        prob = random_problem(rng, 4, 5)
        eta = 0.4
        tau = project_onto_P(rng.normal(size=(4, 5)), prob.omega)
        state = DualState(rng.normal(size=(4, 5)), tau)
        out = canonicalize_dual(state, prob)
        assert phi(out, prob, eta) == pytest.approx(phi(state, prob, eta),
                                                    rel=1e-10)
        assert out.constraint_gap(prob.omega) <= 1e-12

    def test_near_optimal_state_obeys_radii(self, rng):
        prob = random_problem(rng, 3, 4)
        eta = 0.3
        _, state, _ = ibp_solve(prob, eta=eta, eps_prime=1e-10, check_every=1)
        out = canonicalize_dual(state, prob)
        radii = dual_radii(prob, eta)
        assert np.abs(out.tau).max() <= 1.05 * radii.r_tau
        assert np.abs(out.lam).max() <= 1.05 * radii.r_lambda


class TestSmoothness:
    def test_block_lipschitz_bound(self, rng):
        eta = 0.9
        prob = random_problem(rng, 3, 4)
        for _ in range(100):
            a = mass_capped_state(rng, prob, eta)
            b = mass_capped_state(rng, prob, eta)
            ga = np.concatenate(grad_phi(a, prob, eta), axis=1)
            gb = np.concatenate(grad_phi(b, prob, eta), axis=1)
            diff = np.concatenate([a.lam - b.lam, a.tau - b.tau], axis=1)
            lhs = np.linalg.norm(ga - gb, axis=1)
            rhs = 4.0 * eta * prob.omega * np.linalg.norm(diff, axis=1)
            assert np.all(lhs <= rhs + 1e-9)

    def test_quadratic_upper_bound(self, rng):
        eta = 0.5
        prob = random_problem(rng, 2, 5)
        for _ in range(100):
            x = mass_capped_state(rng, prob, eta)
            y = mass_capped_state(rng, prob, eta)
            gy_lam, gy_tau = grad_phi(y, prob, eta)
            d_lam, d_tau = x.lam - y.lam, x.tau - y.tau
            inner = float((gy_lam * d_lam).sum() + (gy_tau * d_tau).sum())
            quad = float(prob.omega @ ((d_lam ** 2).sum(axis=1)
                                       + (d_tau ** 2).sum(axis=1)))
            assert (phi(x, prob, eta) - phi(y, prob, eta)
                    <= inner + 2.0 * eta * quad + 1e-9)


class TestKktFixedPoint:
    def test_marginals_at_convergence(self, rng):
        prob = random_problem(rng, 3, 5)
        eta = 0.25
        _, state, _ = ibp_solve(prob, eta=eta, eps_prime=1e-12, check_every=1)
        log_b = log_b_stack(state.lam, state.tau, prob.costs, eta)
        B = np.exp(log_b)
        rows = B.sum(axis=2)
        cols = B.sum(axis=1)
        assert np.abs(rows - prob.weight_matrix).max() <= 1e-10
        assert np.abs(cols - cols[0]).max() <= 1e-10
