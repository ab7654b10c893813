"""Dual of the entropic barycenter problem: B matrices, phi, gradients, bounds.

The dual variables are paired blocks ``(lambda_k, tau_k)`` with the tau blocks
constrained to the subspace ``P = {tau : sum_k omega_k tau_k = 0}``.  The
positive matrices ``B_k`` with entries ``exp(lambda_ki + tau_kj - C_kij / eta)``
parameterize the entropic-optimal plans.  All marginal computations go through
log-sum-exp so that tiny regularization never overflows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import BarycenterProblem, NumericalError

# exp() of anything above this is inf in float64; callers must then stay in
# the log domain
LINEAR_DOMAIN_MAX_EXPONENT = 700.0


@dataclass
class DualState:
    """Stacked dual blocks: lam and tau are (m, n) arrays."""

    lam: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        if self.lam.shape != self.tau.shape or self.lam.ndim != 2:
            raise ValueError("lam and tau must be (m, n) arrays of equal shape")

    @classmethod
    def zeros(cls, m: int, n: int) -> "DualState":
        return cls(np.zeros((m, n)), np.zeros((m, n)))

    def copy(self) -> "DualState":
        return DualState(self.lam.copy(), self.tau.copy())

    def constraint_gap(self, omega: np.ndarray) -> float:
        """l-inf norm of sum_k omega_k tau_k (0 on the feasible set P)."""
        return float(np.max(np.abs(omega @ self.tau)))


@dataclass(frozen=True)
class DualRadii:
    """l-inf and l2 norm bounds satisfied by some dual optimum."""

    r_lambda: float
    r_tau: float
    r_lambda_l2: float
    r_tau_l2: float


def log_b_stack(lam, tau, costs, eta: float) -> np.ndarray:
    """Entrywise exponents of the B stack: lam_ki + tau_kj - C_kij / eta."""
    lam = np.asarray(lam, dtype=float)
    tau = np.asarray(tau, dtype=float)
    return lam[:, :, None] + tau[:, None, :] - costs / eta


def compute_B(lambda_k, tau_k, C_k, eta: float) -> np.ndarray:
    """Materialize one positive matrix B_k in the linear domain.

    Raises :class:`NumericalError` when an exponent exceeds the float64 range;
    marginal computations must then use the log-domain helpers instead.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    lam = np.asarray(lambda_k, dtype=float)
    tau = np.asarray(tau_k, dtype=float)
    C = np.asarray(C_k, dtype=float)
    expo = lam[:, None] + tau[None, :] - C / eta
    if not np.all(np.isfinite(expo)):
        raise NumericalError("non-finite exponent in B matrix")
    if np.max(expo) > LINEAR_DOMAIN_MAX_EXPONENT:
        raise NumericalError(
            "B matrix overflows the linear domain; use log-domain marginals")
    return np.exp(expo)


def log_row_marginals(log_b: np.ndarray) -> np.ndarray:
    """log r(B_k) for every k, shape (m, n)."""
    return logsumexp(log_b, axis=2)


def log_col_marginals(log_b: np.ndarray) -> np.ndarray:
    """log l(B_k) for every k, shape (m, n)."""
    return logsumexp(log_b, axis=1)


def phi(state: DualState, problem: BarycenterProblem, eta: float) -> float:
    """Dual objective sum_k omega_k (1' B_k 1 - lambda_k' u_k); convex."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    log_b = log_b_stack(state.lam, state.tau, problem.costs, eta)
    log_mass = logsumexp(log_b, axis=(1, 2))
    with np.errstate(over="ignore"):
        masses = np.exp(log_mass)
    linear = np.einsum("kj,kj->k", state.lam, problem.weight_matrix)
    return float(problem.omega @ (masses - linear))


def grad_phi(state: DualState, problem: BarycenterProblem, eta: float):
    """Gradient blocks: omega_k (r(B_k) - u_k) and omega_k l(B_k)."""
    log_b = log_b_stack(state.lam, state.tau, problem.costs, eta)
    r = np.exp(log_row_marginals(log_b))
    l = np.exp(log_col_marginals(log_b))
    omega = problem.omega[:, None]
    return omega * (r - problem.weight_matrix), omega * l


def dual_radii(problem: BarycenterProblem, eta: float) -> DualRadii:
    """Norm bounds on a dual optimum in terms of max_k ||C_k||_inf and min u.

    Requires every measure weight to be strictly positive; smooth the
    measures first when they carry zeros.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    u = problem.weight_matrix
    u_min = float(u.min())
    if u_min <= 0:
        raise ValueError("dual radii need strictly positive measure weights")
    max_cost = problem.max_cost
    n = problem.n
    r_lambda = 5.0 * max_cost / eta + np.log(n) - np.log(u_min)
    r_tau = 4.0 * max_cost / eta
    root_n = float(np.sqrt(n))
    return DualRadii(r_lambda, r_tau, root_n * r_lambda, root_n * r_tau)


def project_onto_P(tau, omega) -> np.ndarray:
    """Shift every tau block by -sum_j omega_j tau_j, restoring membership in P."""
    tau = np.asarray(tau, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return tau - omega @ tau


def canonicalize_dual(state: DualState, problem: BarycenterProblem) -> DualState:
    """Shift an (approximately) optimal dual state into the norm-bounded form.

    For each anchor block t the tau blocks with k != t are centered by
    ``(max tau_k + min tau_k) / 2`` with the opposite shift applied to
    lambda_k, and the anchor block absorbs the omega-weighted total; the m
    shifted states are then averaged with weights omega.  Every B_k and the
    value of the dual objective are preserved exactly.
    """
    omega = problem.omega
    m, _ = state.lam.shape
    delta = 0.5 * (state.tau.max(axis=1) + state.tau.min(axis=1))  # (m,)
    lam_sum = np.zeros_like(state.lam)
    tau_sum = np.zeros_like(state.tau)
    for t in range(m):
        if omega[t] == 0.0:  # zero-weight anchors drop out of the average
            continue
        anchor = float(np.dot(omega, delta) - omega[t] * delta[t]) / omega[t]
        shift_t = delta.copy()
        shift_t[t] = -anchor
        lam_sum += omega[t] * (state.lam + shift_t[:, None])
        tau_sum += omega[t] * (state.tau - shift_t[:, None])
    return DualState(lam_sum, tau_sum)
