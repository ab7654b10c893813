"""Fixed-support Wasserstein barycenters.

Solvers (baseline and accelerated Bregman projections), an exact LP oracle
with a min-cost-flow export for the two-measure case, feasibility rounding,
and a total-unimodularity toolkit for the barycenter constraint matrix.
"""

from .aibp import (AibpState, aibp_solve, aibp_step, barycenter_aibp,
                   smooth_weights, tau_prox_closed_form, theta_next)
from .core import (BarycenterProblem, ConvergenceError, DiscreteMeasure,
                   NumericalError, PlanStack, SizeLimitError, SolveReport,
                   SolverError, build_cost_matrix, entropy, primal_objective,
                   regularized_primal_objective, residue, rho)
from .dual import (DualRadii, DualState, canonicalize_dual, compute_B,
                   dual_radii, grad_phi, phi, project_onto_P)
from .ibp import ibp_col_update, ibp_row_update, ibp_solve
from .lp_oracle import (FlowNetwork, StandardFormLP, assemble_lp,
                        export_min_cost_flow, min_cost_flow_optimum,
                        solve_lp_exact)
from .rounding import round_plans
from .tu import (ghouila_houri_subset_check, is_tu_bruteforce, is_tu_ghc_full,
                 reduce_rows_n2, verify_non_tu_witness)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
