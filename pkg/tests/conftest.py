import numpy as np
import pytest
from scipy.special import logsumexp

from fswbary.core import BarycenterProblem
from fswbary.dual import DualState, grad_phi, log_b_stack, phi


def random_problem(rng, m, n, dim=2, metric="euclidean", p=2.0, weight_floor=0.05):
    support = rng.normal(size=(n, dim))
    weights = rng.uniform(weight_floor, 1.0, size=(m, n))
    weights /= weights.sum(axis=1, keepdims=True)
    return BarycenterProblem.from_weights(support, weights, p=p, metric=metric)


def random_simplex(rng, n, floor=1e-3):
    v = rng.uniform(floor, 1.0, size=n)
    return v / v.sum()


def mass_capped_state(rng, problem, eta, scale=1.0):
    """A dual state whose per-block B mass is a random fraction of 2 eta scale.

    The per-block smoothness constant is twice the block mass, and mass is
    convex along segments, so pairs drawn this way stay inside the region
    where the 4 eta omega_k Lipschitz bound applies.
    """
    m, n = problem.m, problem.n
    lam = rng.normal(size=(m, n))
    tau = rng.normal(size=(m, n))
    log_mass = logsumexp(log_b_stack(lam, tau, problem.costs, eta), axis=(1, 2))
    frac = rng.uniform(0.1, 0.95, size=m)
    lam = lam + (np.log(2.0 * eta * scale * frac) - log_mass)[:, None]
    return DualState(lam, tau)


def finite_difference_grad(state, problem, eta, h=1e-6):
    """Central-difference gradient of phi, block layout matching grad_phi."""
    m, n = state.lam.shape
    d_lam = np.zeros((m, n))
    d_tau = np.zeros((m, n))
    for k in range(m):
        for i in range(n):
            for arr, out in ((state.lam, d_lam), (state.tau, d_tau)):
                orig = arr[k, i]
                arr[k, i] = orig + h
                up = phi(state, problem, eta)
                arr[k, i] = orig - h
                down = phi(state, problem, eta)
                arr[k, i] = orig
                out[k, i] = (up - down) / (2.0 * h)
    return d_lam, d_tau


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
