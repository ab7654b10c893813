"""Command-line surface: instance generation, solver dispatch, benchmarks,
and hardness checks.

Problem instances and run reports travel as JSON documents (schemas published
below); convergence traces are written as ``iter,gap,residue`` CSV files.
Exit codes: 1 bad input, 2 non-convergence, 3 size guard.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .aibp import aibp_solve, barycenter_aibp
from .core import (BarycenterProblem, ConvergenceError, PlanStack,
                   SizeLimitError, SolveReport, primal_objective)
from .dual import phi
from .ibp import ibp_solve
from .lp_oracle import (assemble_lp, export_min_cost_flow,
                        min_cost_flow_optimum, solve_lp_exact)
from .rounding import round_plans
from .tu import (barycenter_constraint_matrix, is_tu_bruteforce,
                 is_tu_ghc_full, reduce_rows_n2, verify_non_tu_witness)

EXIT_BAD_INPUT = 1
EXIT_NO_CONVERGENCE = 2
EXIT_SIZE_GUARD = 3

TABLE_ETA_GRID = (1e-1, 5e-2, 1e-2, 5e-3)
LP_REFERENCE_LIMIT = 5000  # above this many LP variables use the dual reference

PROBLEM_SCHEMA = {
    "type": "object",
    "required": ["support", "measures", "omega", "p", "metric"],
    "properties": {
        "support": {"type": "array",
                    "items": {"type": "array", "items": {"type": "number"}}},
        "measures": {"type": "array",
                     "items": {"type": "object", "required": ["weights"],
                               "properties": {"weights": {
                                   "type": "array",
                                   "items": {"type": "number"}}}}},
        "omega": {"type": "array", "items": {"type": "number"}},
        "p": {"type": "number"},
        "metric": {"enum": ["euclidean", "sqeuclidean", "manhattan"]},
        "cost_matrices": {"type": "array"},
    },
}

REPORT_SCHEMA = {
    "type": "object",
    "required": ["algorithm", "eta", "eps_prime", "seed", "iterations",
                 "wall_time_ms", "residue_history", "objective_history",
                 "barycenter", "primal_value", "instance_hash"],
    "properties": {
        "algorithm": {"enum": ["aibp", "ibp", "lp"]},
        "eta": {"type": "number"},
        "eps_prime": {"type": "number"},
        "seed": {"type": "integer"},
        "iterations": {"type": "integer"},
        "wall_time_ms": {"type": "number"},
        "residue_history": {"type": "array",
                            "items": {"type": "array", "minItems": 2,
                                      "maxItems": 2,
                                      "items": {"type": "number"}}},
        "objective_history": {"type": "array",
                              "items": {"type": "array", "minItems": 2,
                                        "maxItems": 2,
                                        "items": {"type": "number"}}},
        "barycenter": {"type": "array", "items": {"type": "number"}},
        "primal_value": {"type": "number"},
        "lp_optimum": {"type": "number"},
        "gap_reference": {"enum": ["lp", "ibp_dual"]},
        "instance_hash": {"type": "string"},
    },
}


def problem_to_dict(problem: BarycenterProblem, metric: str = "euclidean",
                    include_costs: bool = False) -> dict:
    doc = {
        "support": problem.support.tolist(),
        "measures": [{"weights": mu.weights.tolist()} for mu in problem.measures],
        "omega": problem.omega.tolist(),
        "p": problem.p,
        "metric": metric,
    }
    if include_costs:
        doc["cost_matrices"] = problem.costs.tolist()
    return doc


def problem_from_dict(doc: dict) -> BarycenterProblem:
    try:
        support = np.asarray(doc["support"], dtype=float)
        weights = np.asarray([mu["weights"] for mu in doc["measures"]], dtype=float)
        omega = np.asarray(doc["omega"], dtype=float)
        p = float(doc["p"])
        metric = doc["metric"]
        costs = doc.get("cost_matrices")
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed problem document: {exc}") from exc
    if costs is not None:
        costs = np.asarray(costs, dtype=float)
    return BarycenterProblem.from_weights(support, weights, omega=omega, p=p,
                                          metric=metric, costs=costs)


def load_problem(path: str) -> BarycenterProblem:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read problem file {path}: {exc}") from exc
    return problem_from_dict(doc)


def instance_hash(problem: BarycenterProblem) -> str:
    """Digest of the semantic instance: support, weights, omega, p, costs."""
    payload = {
        "support": problem.support.tolist(),
        "weights": problem.weight_matrix.tolist(),
        "omega": problem.omega.tolist(),
        "p": problem.p,
        "costs": problem.costs.tolist(),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def generate_problem(m: int, n: int, dim: int, seed: int = 0,
                     metric: str = "sqeuclidean", p: float = 1.0,
                     components: int = 3, spread: float = 1.0,
                     cov_scale: float = 0.25) -> BarycenterProblem:
    """Synthetic instance: a shared support drawn from a Gaussian mixture and
    per-measure weights drawn uniform on (0, 1), then normalized.

    ``spread`` scales the mixture means, ``cov_scale`` the within-component
    standard deviation; costs default to squared Euclidean distances.
    """
    if m < 1 or n < 1 or dim < 1 or components < 1:
        raise ValueError("m, n, dim and components must all be >= 1")
    rng = np.random.default_rng(seed)
    means = spread * rng.normal(size=(components, dim))
    labels = rng.integers(0, components, size=n)
    support = means[labels] + cov_scale * rng.normal(size=(n, dim))
    weights = rng.uniform(0.0, 1.0, size=(m, n))
    weights /= weights.sum(axis=1, keepdims=True)
    return BarycenterProblem.from_weights(support, weights, p=p, metric=metric)


def report_to_dict(report: SolveReport, barycenter, primal_value: float,
                   digest: str, lp_optimum: float | None = None,
                   gap_reference: str | None = None) -> dict:
    doc = {
        "algorithm": report.algorithm,
        "eta": report.eta,
        "eps_prime": report.eps_prime,
        "seed": report.seed,
        "iterations": report.iterations,
        "wall_time_ms": report.wall_time_ms,
        "residue_history": [[int(t), float(v)] for t, v in report.residue_history],
        "objective_history": [[int(t), float(v)] for t, v in report.objective_history],
        "barycenter": np.asarray(barycenter, dtype=float).tolist(),
        "primal_value": float(primal_value),
        "instance_hash": digest,
    }
    if lp_optimum is not None:
        doc["lp_optimum"] = float(lp_optimum)
    if gap_reference is not None:
        doc["gap_reference"] = gap_reference
    return doc


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def dual_reference(problem: BarycenterProblem, eta: float,
                   max_iter: int = 1_000_000) -> float:
    """Dual value of a long baseline run, used as phi* for gap curves."""
    try:
        _, state, _ = ibp_solve(problem, eta, eps_prime=1e-14, max_iter=max_iter)
    except ConvergenceError as exc:
        state = exc.state
    return phi(state, problem, eta)


def gap_reference_for(problem: BarycenterProblem, eta: float):
    """LP optimum at desk scale, otherwise a long-run dual value."""
    if problem.m * problem.n ** 2 <= LP_REFERENCE_LIMIT and problem.m >= 2:
        return "lp", solve_lp_exact(assemble_lp(problem)).value
    return "ibp_dual", dual_reference(problem, eta)


def write_trace_csv(path: str, report: SolveReport, reference: float,
                    kind: str) -> None:
    """CSV trace ``iter,gap,residue`` with one row per residue evaluation."""
    if kind == "lp":
        if not report.primal_history:
            raise ValueError("LP-referenced traces need a primal history")
        gaps = {t: v - reference for t, v in report.primal_history}
    else:
        objective = report.objective_history
        if objective and objective[0][0] == 0 and report.algorithm == "aibp":
            objective = objective[1:]  # skip the initial incumbent entry
        gaps = {}
        for (t, _), (_, val) in zip(report.residue_history, objective):
            gaps[t] = val - reference
    lines = ["iter,gap,residue"]
    for t, resid in report.residue_history:
        lines.append(f"{t},{gaps[t]!r},{resid!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _solve_one(problem: BarycenterProblem, alg: str, args) -> dict:
    """Dispatch one solver run and build its report document."""
    digest = instance_hash(problem)
    if alg == "lp":
        solution = solve_lp_exact(assemble_lp(problem))
        report = SolveReport("lp", eta=0.0, eps_prime=0.0, seed=0, iterations=0)
        report.residue_history.append((0, 0.0))
        report.objective_history.append((0, solution.value))
        return report_to_dict(report, solution.barycenter, solution.value,
                              digest, lp_optimum=solution.value)

    record_primal = bool(args.trace_csv)
    if alg == "ibp":
        if args.eta is None or args.eps_prime is None:
            raise ValueError("--alg ibp needs --eta and --eps-prime")
        plans, _, report = ibp_solve(problem, args.eta, args.eps_prime,
                                     check_every=args.check_every,
                                     max_iter=args.max_iter,
                                     record_primal=record_primal)
        rounded, bary = round_plans(plans.plans, problem.weight_matrix,
                                    problem.omega)
    elif args.epsilon is not None:
        bary, rounded, report = barycenter_aibp(problem, args.epsilon,
                                                seed=args.seed,
                                                check_every=args.check_every,
                                                max_iter=args.max_iter,
                                                record_primal=record_primal)
    elif args.eta is not None and args.eps_prime is not None:
        plans, _, report = aibp_solve(problem, args.eta, args.eps_prime,
                                      seed=args.seed,
                                      check_every=args.check_every,
                                      max_iter=args.max_iter,
                                      record_primal=record_primal)
        rounded, bary = round_plans(plans.plans, problem.weight_matrix,
                                    problem.omega)
    else:
        raise ValueError("--alg aibp needs --epsilon, or --eta with --eps-prime")

    primal = primal_objective(problem, rounded)
    lp_optimum = None
    gap_kind = None
    if args.trace_csv:
        gap_kind, reference = gap_reference_for(problem, report.eta or args.eta or 1.0)
        if gap_kind == "lp":
            lp_optimum = reference
        write_trace_csv(args.trace_csv, report, reference, gap_kind)
    return report_to_dict(report, bary, primal, digest,
                          lp_optimum=lp_optimum, gap_reference=gap_kind)


def cmd_solve(args) -> int:
    problem = load_problem(args.input)
    doc = _solve_one(problem, args.alg, args)
    if args.output:
        _write_json(args.output, doc)
    else:
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return 0


def cmd_gen(args) -> int:
    problem = generate_problem(args.m, args.n, args.dim, seed=args.seed,
                               metric=args.metric, p=args.p,
                               components=args.components, spread=args.spread,
                               cov_scale=args.cov_scale)
    _write_json(args.output, problem_to_dict(problem, metric=args.metric))
    return 0


def _max_workers(trials: int) -> int:
    cap = os.environ.get("WBP_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(trials, limit))


def _bench_problem(args, trial: int) -> BarycenterProblem:
    if args.input:
        return load_problem(args.input)
    return generate_problem(args.m, args.n, args.dim, seed=args.seed + trial,
                            metric=args.metric, p=args.p)


def _bench_trial(args, eta: float, trial: int, record_primal: bool):
    """One (eta, trial) cell: run both algorithms on the trial instance."""
    problem = _bench_problem(args, trial)
    out = {}
    runs = {
        "ibp": lambda: ibp_solve(problem, eta, args.eps_prime,
                                 check_every=args.check_every,
                                 max_iter=args.max_iter,
                                 record_primal=record_primal),
        "aibp": lambda: aibp_solve(problem, eta, args.eps_prime,
                                   seed=args.seed + trial,
                                   check_every=args.check_every,
                                   max_iter=args.max_iter,
                                   record_primal=record_primal),
    }
    for alg, run in runs.items():
        plans, _, report = run()
        rounded, _ = round_plans(plans.plans, problem.weight_matrix,
                                 problem.omega)
        out[alg] = {
            "iterations": report.iterations,
            "time_s": report.wall_time_ms / 1000.0,
            "primal": primal_objective(problem, rounded),
            "report": report,
            "problem": problem,
        }
    return out


def run_benchmark(args) -> dict:
    """Grid of (eta, trial) runs for both algorithms; returns the summary."""
    etas = [float(v) for v in args.etas.split(",")]
    record_primal = bool(args.csv_dir)
    if args.csv_dir:
        os.makedirs(args.csv_dir, exist_ok=True)
    results = {}
    with ThreadPoolExecutor(max_workers=_max_workers(args.trials)) as pool:
        for eta in etas:
            futures = [pool.submit(_bench_trial, args, eta, t, record_primal)
                       for t in range(args.trials)]
            results[eta] = [f.result() for f in futures]

    summary = {"etas": etas, "trials": args.trials, "rows": []}
    for eta in etas:
        for alg in ("ibp", "aibp"):
            iters = [cell[alg]["iterations"] for cell in results[eta]]
            times = [cell[alg]["time_s"] for cell in results[eta]]
            primals = [cell[alg]["primal"] for cell in results[eta]]
            summary["rows"].append({
                "eta": eta,
                "alg": alg,
                "iterations_mean": statistics.mean(iters),
                "iterations_std": statistics.pstdev(iters),
                "time_mean_s": statistics.mean(times),
                "time_std_s": statistics.pstdev(times),
                "primal_mean": statistics.mean(primals),
            })
    if args.csv_dir:
        for eta in etas:
            for trial, cell in enumerate(results[eta]):
                problem = cell["ibp"]["problem"]
                kind, reference = gap_reference_for(problem, eta)
                for alg in ("ibp", "aibp"):
                    name = f"trace_eta{eta:g}_trial{trial}_{alg}.csv"
                    write_trace_csv(os.path.join(args.csv_dir, name),
                                    cell[alg]["report"], reference, kind)
    return summary


def _format_bench_table(summary: dict) -> str:
    lines = [f"{'eta':>8}  {'alg':<5} {'iterations':>18} {'time (s)':>16} {'primal':>12}"]
    for row in summary["rows"]:
        lines.append(
            f"{row['eta']:>8g}  {row['alg']:<5}"
            f" {row['iterations_mean']:>9.1f} ± {row['iterations_std']:<6.1f}"
            f" {row['time_mean_s']:>8.3f} ± {row['time_std_s']:<6.3f}"
            f" {row['primal_mean']:>12.6f}")
    return "\n".join(lines)


def cmd_bench(args) -> int:
    summary = run_benchmark(args)
    print(_format_bench_table(summary))
    if args.output:
        _write_json(args.output, summary)
    return 0


def cmd_hardness(args) -> int:
    if args.m < 2 or args.n < 2:
        raise ValueError("hardness checks need m >= 2 and n >= 2")
    if args.m == 2:
        if args.input:
            problem = load_problem(args.input)
            if problem.m != 2 or problem.n != args.n:
                raise ValueError("--input instance does not match --m/--n")
        else:
            support = np.arange(args.n, dtype=float)[:, None]
            weights = np.full((2, args.n), 1.0 / args.n)
            problem = BarycenterProblem.from_weights(support, weights,
                                                     metric="sqeuclidean", p=1.0)
        network = export_min_cost_flow(problem)
        print(f"m = 2: the instance is a min-cost flow problem "
              f"({network.num_nodes} nodes, {network.num_arcs} arcs)")
        flow_value = min_cost_flow_optimum(network)
        lp_value = solve_lp_exact(assemble_lp(problem)).value
        print(f"flow optimum {flow_value:.12g}, LP optimum {lp_value:.12g}")
        if args.export_flow:
            with open(args.export_flow, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(network.to_dimacs())
            print(f"DIMACS export written to {args.export_flow}")
        return 0
    if args.n == 2:
        A = barycenter_constraint_matrix(args.m, 2)
        reduced = reduce_rows_n2(A, args.m)
        det_check = is_tu_bruteforce(reduced)
        ghc_check = is_tu_ghc_full(reduced)
        ok = det_check.is_tu and ghc_check.is_tu
        print(f"n = 2: reduced matrix is {reduced.shape[0]} x {reduced.shape[1]}; "
              f"TU after row reduction: {ok} "
              f"(determinants up to order {det_check.order_checked}, "
              f"Ghouila-Houri over all row subsets)")
        return 0
    report = verify_non_tu_witness(args.m, args.n)
    print(report.to_text(), end="")
    if args.output:
        _write_json(args.output, report.to_dict())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fswbary",
        description="Fixed-support Wasserstein barycenter toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic instance")
    p_gen.add_argument("--m", type=int, default=15)
    p_gen.add_argument("--n", type=int, default=10)
    p_gen.add_argument("--dim", type=int, default=3)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--metric", default="sqeuclidean",
                       choices=["euclidean", "sqeuclidean", "manhattan"])
    p_gen.add_argument("--p", type=float, default=1.0)
    p_gen.add_argument("--components", type=int, default=3,
                       help="Gaussian mixture components for the support")
    p_gen.add_argument("--spread", type=float, default=1.0,
                       help="scale of the mixture means")
    p_gen.add_argument("--cov-scale", type=float, default=0.25,
                       help="within-component standard deviation")
    p_gen.add_argument("--output", "-o", default="problem.json")
    p_gen.set_defaults(func=cmd_gen)

    p_solve = sub.add_parser("solve", help="run a solver on an instance")
    p_solve.add_argument("--alg", required=True, choices=["aibp", "ibp", "lp"])
    p_solve.add_argument("--input", required=True)
    p_solve.add_argument("--output", "-o", default=None)
    p_solve.add_argument("--epsilon", type=float, default=None,
                         help="target accuracy for the aibp wrapper")
    p_solve.add_argument("--eta", type=float, default=None)
    p_solve.add_argument("--eps-prime", type=float, default=None)
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--check-every", type=int, default=10)
    p_solve.add_argument("--max-iter", type=int, default=1_000_000)
    p_solve.add_argument("--trace-csv", default=None,
                         help="write an iter,gap,residue trace here")
    p_solve.set_defaults(func=cmd_solve)

    p_bench = sub.add_parser("bench", help="IBP vs AIBP benchmark grid")
    p_bench.add_argument("--input", default=None,
                         help="fixed instance; otherwise one is generated per trial")
    p_bench.add_argument("--m", type=int, default=15)
    p_bench.add_argument("--n", type=int, default=10)
    p_bench.add_argument("--dim", type=int, default=3)
    p_bench.add_argument("--metric", default="sqeuclidean",
                         choices=["euclidean", "sqeuclidean", "manhattan"])
    p_bench.add_argument("--p", type=float, default=1.0)
    p_bench.add_argument("--etas", default=",".join(str(v) for v in TABLE_ETA_GRID))
    p_bench.add_argument("--trials", type=int, default=10)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--eps-prime", type=float, default=1e-3)
    p_bench.add_argument("--check-every", type=int, default=10)
    p_bench.add_argument("--max-iter", type=int, default=1_000_000)
    p_bench.add_argument("--csv-dir", default=None,
                         help="directory for per-run gap traces")
    p_bench.add_argument("--output", "-o", default=None,
                         help="summary JSON path")
    p_bench.set_defaults(func=cmd_bench)

    p_hard = sub.add_parser("hardness", help="constraint-matrix structure checks")
    p_hard.add_argument("--m", type=int, required=True)
    p_hard.add_argument("--n", type=int, required=True)
    p_hard.add_argument("--input", default=None,
                        help="instance for the m = 2 flow export")
    p_hard.add_argument("--export-flow", default=None,
                        help="write the DIMACS flow file here (m = 2)")
    p_hard.add_argument("--output", "-o", default=None,
                        help="witness report JSON path")
    p_hard.set_defaults(func=cmd_hardness)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except SizeLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIZE_GUARD
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
