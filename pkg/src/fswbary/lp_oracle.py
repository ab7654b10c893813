"""Exact LP oracle for the barycenter problem and the two-measure flow export.

The barycenter LP is assembled in the signed block form with row-marginal
blocks ``(-1)^k E`` and column-difference blocks ``+-G`` where
``E = I_n (x) 1'`` and ``G = 1' (x) I_n`` act on row-major plan vectors.  A
dense two-phase simplex with an anti-cycling pivot rule solves small
instances exactly; a size guard keeps it at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .core import BarycenterProblem, SizeLimitError, SolverError

MAX_LP_VARIABLES = 5000
PIVOT_TOL = 1e-9
# pivots without strict objective progress before switching to Bland's rule
STALL_LIMIT = 100


@dataclass
class StandardFormLP:
    """Equality-form LP min c'x, Ax = b, x >= 0 for a barycenter instance.

    ``row_meta`` tags each row as ``("row", k, i)`` for the k-th measure's
    i-th row-marginal constraint or ``("coupling", j, i)`` for the i-th
    column-difference constraint between plans j and j+1.  Variable
    ``k * n**2 + i * n + j`` is entry (i, j) of plan k.
    """

    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    m: int
    n: int
    row_meta: list

    @property
    def num_variables(self) -> int:
        return self.m * self.n * self.n

    def var_index(self, k: int, i: int, j: int) -> int:
        return k * self.n * self.n + i * self.n + j


class LpSolution(NamedTuple):
    value: float
    plans: np.ndarray
    barycenter: np.ndarray


def assemble_lp(problem: BarycenterProblem) -> StandardFormLP:
    """Build the signed-block constraint matrix, right-hand side and costs."""
    m, n = problem.m, problem.n
    if m < 2:
        raise ValueError("the LP form needs at least two measures")
    u = problem.weight_matrix
    rows, cols, vals = [], [], []
    b = np.zeros(2 * m * n - n)
    row_meta = []

    for k in range(m):
        sign = -1.0 if k % 2 == 0 else 1.0  # (-1)^k for 1-based k
        for i in range(n):
            r = k * n + i
            row_meta.append(("row", k, i))
            b[r] = sign * u[k, i]
            for j in range(n):
                rows.append(r)
                cols.append(k * n * n + i * n + j)
                vals.append(sign)

    for jblk in range(m - 1):
        sign = 1.0 if jblk % 2 == 0 else -1.0
        for i in range(n):
            r = m * n + jblk * n + i
            row_meta.append(("coupling", jblk, i))
            for a in range(n):
                rows.append(r)
                cols.append(jblk * n * n + a * n + i)
                vals.append(sign)
                rows.append(r)
                cols.append((jblk + 1) * n * n + a * n + i)
                vals.append(-sign)

    A = sp.csr_matrix((vals, (rows, cols)), shape=(2 * m * n - n, m * n * n))
    c = (problem.omega[:, None, None] * problem.costs).reshape(-1)
    return StandardFormLP(A, b, c, m, n, row_meta)


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])
    basis[row] = col


def _ratio_row(T: np.ndarray, basis: np.ndarray, col: int, tol: float) -> int:
    positive = T[:-1, col] > tol
    if not positive.any():
        raise SolverError("no admissible pivot (unbounded or degenerate column)")
    idx = np.flatnonzero(positive)
    ratios = T[idx, -1] / T[idx, col]
    best = ratios.min()
    ties = idx[ratios <= best + tol * (1.0 + abs(best))]
    return int(ties[np.argmin(basis[ties])])  # Bland-style leaving rule


def _run_phase(T: np.ndarray, basis: np.ndarray, allowed: np.ndarray,
               tol: float, max_pivots: int) -> int:
    """Pivot until no allowed column improves; returns the pivot count.

    Starts with most-negative-reduced-cost pivoting and falls back to
    Bland's rule permanently once the objective stalls, which rules out
    cycling.
    """
    pivots = 0
    stall = 0
    bland = False
    best_obj = T[-1, -1]
    while True:
        red = T[-1, :-1]
        candidates = np.flatnonzero(allowed & (red < -tol))
        if candidates.size == 0:
            return pivots
        col = int(candidates[0]) if bland else int(candidates[np.argmin(red[candidates])])
        row = _ratio_row(T, basis, col, tol)
        _pivot(T, basis, row, col)
        pivots += 1
        if pivots > max_pivots:
            raise SolverError("pivot cap exceeded (degenerate instance)")
        if T[-1, -1] > best_obj + tol:
            best_obj = T[-1, -1]
            stall = 0
        else:
            stall += 1
            if stall > STALL_LIMIT:
                bland = True


def dense_simplex(A, b, c, tol: float = PIVOT_TOL, max_pivots: int = 200_000,
                  ) -> tuple[np.ndarray, float]:
    """Two-phase dense simplex for min c'x s.t. Ax = b, x >= 0.

    Returns a vertex-optimal solution and its objective value.  Redundant
    rows are dropped after phase 1; infeasibility, unboundedness and pivot
    caps raise :class:`SolverError`.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.asarray(c, dtype=float)
    n_rows, n_vars = A.shape
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0

    total = n_vars + n_rows
    T = np.zeros((n_rows + 1, total + 1))
    T[:-1, :n_vars] = A
    T[:-1, n_vars:total] = np.eye(n_rows)
    T[:-1, -1] = b
    basis = np.arange(n_vars, total)

    # phase 1: minimize the artificial mass; objective row holds -(cost row)
    T[-1, :] = -T[:-1, :].sum(axis=0)
    T[-1, n_vars:total] = 0.0
    allowed = np.zeros(total, dtype=bool)
    allowed[:n_vars] = True
    _run_phase(T, basis, allowed, tol, max_pivots)
    if -T[-1, -1] > 1e-7 * (1.0 + abs(b).sum()):
        raise SolverError("LP infeasible in phase 1")

    # pivot artificials out of the basis; rows that cannot be cleared are
    # redundant and get dropped
    keep = np.ones(n_rows, dtype=bool)
    for i in range(n_rows):
        if basis[i] < n_vars:
            continue
        structural = np.flatnonzero(np.abs(T[i, :n_vars]) > tol)
        if structural.size:
            _pivot(T, basis, i, int(structural[0]))
        else:
            keep[i] = False
    if not keep.all():
        T = np.vstack([T[:-1][keep], T[-1]])
        basis = basis[keep]

    # phase 2 on the original costs
    T[-1, :] = 0.0
    T[-1, :n_vars] = c
    T[-1, :] -= c[basis] @ T[:-1, :]
    _run_phase(T, basis, allowed, tol, max_pivots)

    x = np.zeros(n_vars)
    in_vars = basis < n_vars
    x[basis[in_vars]] = T[:-1, -1][in_vars]
    x = np.maximum(x, 0.0)
    return x, float(c @ x)


def solve_lp_exact(lp: StandardFormLP) -> LpSolution:
    """Solve the barycenter LP to a vertex optimum with the dense simplex."""
    if lp.num_variables > MAX_LP_VARIABLES:
        raise SizeLimitError(
            f"LP has {lp.num_variables} variables, above the guard "
            f"{MAX_LP_VARIABLES}")
    x, value = dense_simplex(lp.A.toarray(), lp.b, lp.c)
    plans = x.reshape(lp.m, lp.n, lp.n)
    cols = plans.sum(axis=1)
    if np.max(np.abs(cols - cols[0])) > 1e-9:
        raise SolverError("LP vertex violates the common-marginal constraints")
    return LpSolution(value, plans, cols[0].copy())


@dataclass(frozen=True)
class FlowArc:
    tail: int
    head: int
    capacity: float
    cost: float


@dataclass
class FlowNetwork:
    """Three-tier transportation network for the two-measure barycenter.

    Node ids: warehouses 0..n-1, transshipment centers n..2n-1, retail
    outlets 2n..3n-1.  ``supplies`` is positive at warehouses, negative at
    retail outlets, and sums to zero.
    """

    supplies: np.ndarray
    arcs: list[FlowArc]

    @property
    def num_nodes(self) -> int:
        return self.supplies.shape[0]

    @property
    def num_arcs(self) -> int:
        return len(self.arcs)

    def incidence_matrix(self) -> np.ndarray:
        """Node-arc incidence: -1 where an arc starts, +1 where it ends."""
        N = np.zeros((self.num_nodes, self.num_arcs), dtype=int)
        for j, arc in enumerate(self.arcs):
            N[arc.tail, j] = -1
            N[arc.head, j] = 1
        return N

    def to_dimacs(self) -> str:
        """DIMACS-style text: problem line, supply lines, arc lines (1-based)."""
        lines = [
            "c min-cost flow export of a two-measure barycenter instance",
            f"p min {self.num_nodes} {self.num_arcs}",
        ]
        for i, s in enumerate(self.supplies):
            if s != 0.0:
                lines.append(f"n {i + 1} {s!r}")
        for arc in self.arcs:
            lines.append(f"a {arc.tail + 1} {arc.head + 1} {arc.capacity!r} {arc.cost!r}")
        return "\n".join(lines) + "\n"


def export_min_cost_flow(problem: BarycenterProblem) -> FlowNetwork:
    """Express a two-measure instance as a three-tier min-cost flow problem.

    Arc costs carry the barycenter weights omega so that the flow optimum
    matches the weighted LP objective.  Only m = 2 admits this formulation.
    """
    if problem.m != 2:
        raise ValueError("the flow formulation exists only for m = 2")
    n = problem.n
    u = problem.weight_matrix
    supplies = np.concatenate([u[0], np.zeros(n), -u[1]])
    arcs = []
    for i in range(n):
        for j in range(n):
            arcs.append(FlowArc(i, n + j, 1.0, float(problem.omega[0] * problem.costs[0, i, j])))
    for i in range(n):
        for j in range(n):
            arcs.append(FlowArc(n + i, 2 * n + j, 1.0, float(problem.omega[1] * problem.costs[1, i, j])))
    return FlowNetwork(supplies, arcs)


def min_cost_flow_optimum(network: FlowNetwork) -> float:
    """Optimal cost of the flow LP (conservation N f = -supplies, f >= 0)."""
    N = network.incidence_matrix().astype(float)
    costs = np.array([arc.cost for arc in network.arcs])
    _, value = dense_simplex(N, -network.supplies, costs)
    return value
