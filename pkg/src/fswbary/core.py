"""Domain types and shared functionals for fixed-support barycenter solvers.

Conventions used throughout the package:

* a problem has ``m`` measures on one shared ``n``-point support,
* ``r(X) = X @ 1`` are row marginals, ``l(X) = X.T @ 1`` column marginals,
* plan stacks are ``(m, n, n)`` arrays, dual blocks are ``(m, n)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIMPLEX_TOL = 1e-12
FEASIBILITY_TOL = 1e-9

METRICS = ("euclidean", "sqeuclidean", "manhattan")


class SolverError(RuntimeError):
    """Base class for runtime solver failures."""


class ConvergenceError(SolverError):
    """Iteration cap reached before the stopping criterion; carries partials."""

    def __init__(self, message, report=None, state=None):
        super().__init__(message)
        self.report = report
        self.state = state


class SizeLimitError(RuntimeError):
    """An instance exceeds a configured size guard."""


class NumericalError(SolverError):
    """Non-finite intermediate or an overflow that requires the log-domain path."""


def _check_prob_vector(v: np.ndarray, name: str, tol: float = SIMPLEX_TOL) -> None:
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"{name} must be a nonempty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(v < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(float(v.sum()) - 1.0) > tol:
        raise ValueError(f"{name} must sum to 1 within {tol:g} (got {v.sum()!r})")


@dataclass(frozen=True)
class DiscreteMeasure:
    """A probability measure on n support points in R^d."""

    support: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.support, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)
        if not np.all(np.isfinite(support)):
            raise ValueError("support has non-finite coordinates")
        _check_prob_vector(weights, "weights")
        if support.shape[0] != weights.shape[0]:
            raise ValueError("support size and weight length differ")

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class BarycenterProblem:
    """m measures on a shared support, simplex weights omega and costs C_k >= 0."""

    measures: tuple[DiscreteMeasure, ...]
    omega: np.ndarray  # (m,)
    costs: np.ndarray  # (m, n, n)
    p: float = 2.0

    def __post_init__(self):
        measures = tuple(self.measures)
        omega = np.asarray(self.omega, dtype=float)
        costs = np.asarray(self.costs, dtype=float)
        object.__setattr__(self, "measures", measures)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "costs", costs)
        if len(measures) < 1:
            raise ValueError("need at least one measure")
        base = measures[0].support
        for mu in measures[1:]:
            # fixed-support setting: supports must match bitwise
            if mu.support.shape != base.shape or not np.array_equal(mu.support, base):
                raise ValueError("all measures must share one support (bitwise equal)")
        _check_prob_vector(omega, "omega")
        if omega.shape[0] != len(measures):
            raise ValueError("omega length must equal the number of measures")
        n = measures[0].n
        if costs.shape != (len(measures), n, n):
            raise ValueError(f"costs must have shape {(len(measures), n, n)}")
        if not np.all(np.isfinite(costs)):
            raise ValueError("costs have non-finite entries")
        if np.any(costs < 0):
            raise ValueError("costs must be entrywise nonnegative")
        if self.p < 1:
            raise ValueError("order exponent p must be >= 1")

    @classmethod
    def from_weights(cls, support, weights, omega=None, p=2.0, metric="euclidean",
                     costs=None) -> "BarycenterProblem":
        """Build a problem from a weight matrix ``(m, n)`` on one support.

        ``costs`` overrides the metric-derived cost matrices when given.
        """
        support = np.atleast_2d(np.asarray(support, dtype=float))
        weights = np.atleast_2d(np.asarray(weights, dtype=float))
        m = weights.shape[0]
        measures = tuple(DiscreteMeasure(support, w) for w in weights)
        if omega is None:
            omega = np.full(m, 1.0 / m)
        if costs is None:
            cost = build_cost_matrix(support, p, metric)
            costs = np.repeat(cost[None, :, :], m, axis=0)
        return cls(measures, omega, np.asarray(costs, dtype=float), p)

    @property
    def m(self) -> int:
        return len(self.measures)

    @property
    def n(self) -> int:
        return self.measures[0].n

    @property
    def support(self) -> np.ndarray:
        return self.measures[0].support

    @property
    def weight_matrix(self) -> np.ndarray:
        """Stacked measure weights, shape ``(m, n)``."""
        return np.stack([mu.weights for mu in self.measures])

    @property
    def max_cost(self) -> float:
        """max_k ||C_k||_inf."""
        return float(np.max(np.abs(self.costs)))


@dataclass
class PlanStack:
    """m nonnegative transport plans, optionally with the induced barycenter."""

    plans: np.ndarray  # (m, n, n)
    barycenter: np.ndarray | None = None

    def __post_init__(self):
        self.plans = np.asarray(self.plans, dtype=float)
        if self.plans.ndim != 3 or self.plans.shape[1] != self.plans.shape[2]:
            raise ValueError("plans must have shape (m, n, n)")
        if np.any(self.plans < 0):
            raise ValueError("plans must be entrywise nonnegative")
        if self.barycenter is not None:
            self.barycenter = np.asarray(self.barycenter, dtype=float)

    def row_marginals(self) -> np.ndarray:
        return self.plans.sum(axis=2)

    def col_marginals(self) -> np.ndarray:
        return self.plans.sum(axis=1)

    def feasibility_error(self, problem: BarycenterProblem) -> float:
        """Largest l1 violation of r(X_k) = u_k and l(X_k) = common barycenter."""
        u = problem.weight_matrix
        row_err = np.abs(self.row_marginals() - u).sum(axis=1).max()
        cols = self.col_marginals()
        bary = cols[0] if self.barycenter is None else self.barycenter
        col_err = np.abs(cols - bary).sum(axis=1).max()
        return float(max(row_err, col_err))

    def is_feasible(self, problem: BarycenterProblem, tol: float = FEASIBILITY_TOL) -> bool:
        return self.feasibility_error(problem) <= tol


@dataclass
class SolveReport:
    """Per-run record: histories are lists of ``(iteration, value)`` pairs."""

    algorithm: str
    eta: float
    eps_prime: float
    seed: int
    iterations: int = 0
    wall_time_ms: float = 0.0
    residue_history: list = field(default_factory=list)
    objective_history: list = field(default_factory=list)
    primal_history: list | None = None

    @property
    def final_residue(self) -> float:
        if not self.residue_history:
            raise ValueError("empty residue history")
        return self.residue_history[-1][1]


def build_cost_matrix(support, p: float, metric: str = "euclidean") -> np.ndarray:
    """Pairwise cost matrix C_ij = d(x_i, x_j)^p for the chosen ground metric."""
    pts = np.atleast_2d(np.asarray(support, dtype=float))
    if pts.size == 0:
        raise ValueError("support must be nonempty")
    if not np.all(np.isfinite(pts)):
        raise ValueError("support has non-finite coordinates")
    if p < 1:
        raise ValueError("order exponent p must be >= 1")
    diff = pts[:, None, :] - pts[None, :, :]
    if metric == "euclidean":
        d = np.sqrt((diff ** 2).sum(axis=2))
    elif metric == "sqeuclidean":
        d = (diff ** 2).sum(axis=2)
    elif metric == "manhattan":
        d = np.abs(diff).sum(axis=2)
    else:
        raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")
    cost = d ** p
    cost = 0.5 * (cost + cost.T)  # kill rounding asymmetry
    np.fill_diagonal(cost, 0.0)
    return cost


def rho(a, b) -> float:
    """Mass difference plus KL divergence: 1'(b - a) + sum_i a_i log(a_i / b_i).

    Zero entries of ``a`` contribute nothing to the log term (0 log 0 := 0).
    For probability vectors this is KL(a || b) and is nonnegative.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("rho arguments must have equal length")
    if np.any(a < 0):
        raise ValueError("first argument of rho must be nonnegative")
    if np.any(b <= 0):
        raise ValueError("second argument of rho must be strictly positive")
    pos = a > 0
    kl = float(np.sum(a[pos] * np.log(a[pos] / b[pos])))
    return float(np.sum(b - a)) + kl


def entropy(plan) -> float:
    """Entropic regularizer H(X) = -<X, log X - 1 1'> with 0 log 0 := 0."""
    X = np.asarray(plan, dtype=float)
    if np.any(X < 0):
        raise ValueError("entropy requires a nonnegative matrix")
    pos = X > 0
    return float(X.sum() - np.sum(X[pos] * np.log(X[pos])))


def _stack(plans) -> np.ndarray:
    if isinstance(plans, PlanStack):
        return plans.plans
    return np.asarray(plans, dtype=float)


def primal_objective(problem: BarycenterProblem, plans) -> float:
    """Transport cost sum_k omega_k <C_k, X_k>."""
    X = _stack(plans)
    if X.shape != problem.costs.shape:
        raise ValueError("plan dimensions do not match the problem")
    return float(np.einsum("k,kij,kij->", problem.omega, problem.costs, X))


def regularized_primal_objective(problem: BarycenterProblem, plans, eta: float) -> float:
    """Transport cost minus eta times the omega-weighted plan entropies."""
    X = _stack(plans)
    if X.shape != problem.costs.shape:
        raise ValueError("plan dimensions do not match the problem")
    ent = sum(w * entropy(Xk) for w, Xk in zip(problem.omega, X))
    return primal_objective(problem, X) - eta * float(ent)


def residue(problem: BarycenterProblem, plans) -> float:
    """Omega-weighted l1 deviation of row marginals from the target weights.

    This is the realized value of the solvers' stopping quantity for the
    current iterate; determinism comes from the seeded Bernoulli stream.
    """
    X = _stack(plans)
    if X.shape != problem.costs.shape:
        raise ValueError("plan dimensions do not match the problem")
    gaps = np.abs(X.sum(axis=2) - problem.weight_matrix).sum(axis=1)
    return float(problem.omega @ gaps)
