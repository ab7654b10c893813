"""Repair a near-feasible plan stack to exact marginals.

The scheme scales rows down to the row targets, fixes a shared column target
from the omega-average of the scaled stacks, scales columns down to it, and
closes the remaining mass gap with a rank-one update.  The l1 perturbation is
at most twice the sum of the row and column marginal violations, which is the
property the approximation analysis needs.
"""

from __future__ import annotations

import numpy as np

from .core import PlanStack

COLUMN_MATCH_TOL = 1e-8


def round_plans(b_stack, u_targets, omega, col_tol: float = COLUMN_MATCH_TOL,
                ) -> tuple[PlanStack, np.ndarray]:
    """Round a positive stack with a common column marginal to exact feasibility.

    Returns the feasible stack and the shared barycenter vector.  Inputs:
    ``b_stack`` is (m, n, n) nonnegative, ``u_targets`` are m probability
    vectors, and the column marginals of the stack must agree within
    ``col_tol`` in the l-inf norm.
    """
    B = np.asarray(b_stack, dtype=float)
    u = np.asarray(u_targets, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if B.ndim != 3 or B.shape[1] != B.shape[2]:
        raise ValueError("b_stack must have shape (m, n, n)")
    if np.any(B < 0) or not np.all(np.isfinite(B)):
        raise ValueError("b_stack entries must be finite and nonnegative")
    m, n, _ = B.shape
    if u.shape != (m, n):
        raise ValueError("u_targets must have shape (m, n)")
    if np.any(u < 0) or np.any(np.abs(u.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("u_targets must be probability vectors")
    cols = B.sum(axis=1)
    if np.max(np.abs(cols - cols[0])) > col_tol:
        raise ValueError("column marginals of the stack do not match")

    rows = B.sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        row_scale = np.where(rows > 0, np.minimum(1.0, u / np.where(rows > 0, rows, 1.0)), 0.0)
    F = B * row_scale[:, :, None]

    q = omega @ F.sum(axis=1)
    bary = q + (1.0 - q.sum()) / n  # restore unit mass

    cols_f = F.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        col_scale = np.where(cols_f > 0,
                             np.minimum(1.0, bary / np.where(cols_f > 0, cols_f, 1.0)), 0.0)
    G = F * col_scale[:, None, :]

    # scaling keeps r(G) <= u and l(G) <= bary up to rounding noise
    err_rows = np.maximum(u - G.sum(axis=2), 0.0)
    err_cols = np.maximum(bary[None, :] - G.sum(axis=1), 0.0)
    plans = G.copy()
    for k in range(m):
        gap = float(err_rows[k].sum())
        if gap <= 0.0:
            if np.abs(err_cols[k]).sum() > 1e-9:
                raise RuntimeError("inconsistent marginal masses in rounding repair")
            continue
        plans[k] += np.outer(err_rows[k], err_cols[k]) / gap
    return PlanStack(plans, barycenter=bary), bary
