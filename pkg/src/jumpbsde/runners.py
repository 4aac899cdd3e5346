"""Experiment runners: one validated config in, JSON-able artifacts out.

Each runner is deterministic under a fixed config (all randomness flows
through explicit seeds), and every number it emits is produced by a module
operation; runners only select, arrange and format.
"""

from __future__ import annotations

import io
import math

import numpy as np

from .bsde import BsdeSolution, solve
from .cascade import CascadeConfig, solve_quadratic
from .config import RunConfig, build_lattice, build_market, terminal_values
from .errors import ConfigError
from .generator import GeneratorSpec
from .utility import optimal_strategy, random_strategies, verify_optimality


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def solution_to_csv(solution: BsdeSolution, lattice) -> str:
    """Flat per-node export: time_index, node_id, Y, Z, U_1..U_J.

    The terminal slice carries Y only (empty Z / U cells).  Full round-trip
    precision so downstream diffs are meaningful.
    """
    J = lattice.n_atoms
    buf = io.StringIO()
    head = ["time_index", "node_id", "Y", "Z"] + [f"U_{j + 1}" for j in range(J)]
    buf.write(",".join(head) + "\n")
    for i in range(lattice.n_steps + 1):
        y = solution.Y[i]
        interior = i < lattice.n_steps
        for k in range(y.size):
            row = [str(i), str(k), _fmt(y[k])]
            if interior:
                row.append(_fmt(solution.Z[i][k]))
                row.extend(_fmt(solution.U[i][k, j]) for j in range(J))
            else:
                row.append("")
                row.extend("" for _ in range(J))
            buf.write(",".join(row) + "\n")
    return buf.getvalue()


def strategy_to_csv(tables: list, lattice) -> str:
    buf = io.StringIO()
    buf.write("time_index,node_id,pi\n")
    for i, tab in enumerate(tables):
        for k in range(len(tab)):
            buf.write(f"{i},{k},{_fmt(tab[k])}\n")
    return buf.getvalue()


def _summary(solution: BsdeSolution, trace) -> dict:
    return {
        "Y_0": solution.y0,
        "sup_abs_Y": solution.sup_norm(),
        "residual": solution.residual,
        "iterations": solution.iterations,
        "N": trace.N,
        "heuristic": trace.heuristic,
        "telescoping_residual": trace.telescoping_residual,
        "transported_residual": trace.transported_residual,
    }


def _pipeline(cfg: RunConfig):
    market = build_market(cfg)
    lat = build_lattice(cfg, market)
    b_bar = terminal_values(cfg, market, lat)
    cascade_cfg = CascadeConfig(
        B=b_bar,  # replaced inside solve_quadratic by the lifted terminal
        m_schedule=cfg.cascade.m_schedule,
        N_override=cfg.cascade.N_override,
        picard_tol=cfg.solver.picard_tol,
        max_iter=cfg.solver.max_iter,
    )
    solution, trace = solve_quadratic(lat, market, b_bar, cascade_cfg)
    solution.residual = trace.transported_residual
    return market, lat, b_bar, solution, trace


def run_solve(cfg: RunConfig) -> dict:
    market, lat, _, solution, trace = _pipeline(cfg)
    return {
        "summary": _summary(solution, trace),
        "trace": trace.to_json(),
        "csv": {"solution.csv": solution_to_csv(solution, lat)},
    }


def run_cascade_trace(cfg: RunConfig) -> dict:
    market, lat, _, solution, trace = _pipeline(cfg)
    return {
        "summary": _summary(solution, trace),
        "trace": trace.to_json(),
        "csv": {},
    }


def run_validate(cfg: RunConfig) -> dict:
    """Execute the bound/convergence check suites on the configured problem.

    Checks: per-stage sup bounds, stage-1 monotonicity in the truncation
    level, Cauchy decay of the Z/U approximations, telescoping identity,
    assembled and transported residuals, the a-priori estimate reports, and
    the comparison property on seeded ordered terminal pairs.  Nonzero exit
    (via the CLI) iff any check fails.
    """
    market, lat, b_bar, solution, trace = _pipeline(cfg)
    checks: list[dict] = []

    def add(name: str, passed: bool, value: float, bound: float):
        checks.append({"name": name, "passed": bool(passed),
                       "value": float(value), "bound": float(bound)})

    margin = min(s.bound_margin for s in trace.stages)
    add("stage_sup_bound", margin >= -1e-9, margin, -1e-9)
    monos = [s.monotone_margin for s in trace.stages if s.monotone_margin is not None]
    if monos:
        add("stage1_monotone_in_m", min(monos) >= -1e-12, min(monos), -1e-12)
    for s in trace.stages[:1]:
        for seq, name in ((s.cauchy_z, "cauchy_z_decay"), (s.cauchy_u, "cauchy_u_decay")):
            if len(seq) >= 2:
                ok = seq[-1] <= seq[0] * (1.0 + 1e-9) + 1e-12
                add(name, ok, seq[-1], seq[0])
    add("telescoping_identity", trace.telescoping_residual <= 1e-10,
        trace.telescoping_residual, 1e-10)
    res_bound = trace.N * cfg.solver.picard_tol + 1e-7
    add("assembled_residual", trace.assembled_residual <= res_bound,
        trace.assembled_residual, res_bound)
    add("transported_residual", trace.transported_residual <= res_bound,
        trace.transported_residual, res_bound)
    for label, report in (("tilde", trace.apriori_tilde), ("bar", trace.apriori_bar)):
        for chk in report["checks"]:
            add(f"apriori_{label}.{chk['name']}", chk["passed"],
                chk["margin"], 0.0)

    # comparison on seeded ordered terminal pairs, recentered driver
    rng = np.random.default_rng(cfg.validation.seed)
    gen = GeneratorSpec(market=market, kind="f_tilde")
    size = lat.slice_size(lat.n_steps)
    worst = math.inf
    for _ in range(cfg.validation.comparison_pairs):
        lo_vals = rng.uniform(-0.02, 0.02, size=size)
        hi_vals = lo_vals + rng.uniform(0.0, 0.02, size=size)
        sol_lo = solve(lat, gen, lo_vals, picard_tol=cfg.solver.picard_tol)
        sol_hi = solve(lat, gen, hi_vals, picard_tol=cfg.solver.picard_tol)
        for i in range(lat.n_steps + 1):
            worst = min(worst, float(np.min(sol_hi.Y[i] - sol_lo.Y[i])))
    if cfg.validation.comparison_pairs:
        add("comparison_ordered_terminals", worst >= -1e-12, worst, -1e-12)

    passed = all(c["passed"] for c in checks)
    return {
        "summary": {"passed": passed, "n_checks": len(checks), "Y_0": solution.y0},
        "report": {"passed": passed, "checks": checks},
        "csv": {},
    }


def run_optimize(cfg: RunConfig, x: float | None = None) -> dict:
    """Value process, optimal strategy, and the optimality report."""
    if cfg.mc is None:
        raise ConfigError("optimize requires an mc block (paths, seed)", "mc")
    market, lat, b_bar, solution, trace = _pipeline(cfg)
    wealth = cfg.optimize.x if x is None else float(x)
    pi_star = optimal_strategy(solution, market, lat)
    strategies = {"optimal": pi_star}
    for idx, tables in enumerate(
            random_strategies(lat, market, cfg.mc.strategies, cfg.mc.seed + 1)):
        strategies[f"random_{idx:02d}"] = tables
    report = verify_optimality(market, lat, solution, wealth, strategies,
                               paths=cfg.mc.paths, seed=cfg.mc.seed)
    return {
        "summary": {
            "Y_0": solution.y0,
            "V": report.V_formula,
            "V_mc_estimate": report.V_mc_estimate,
            "V_mc_se": report.V_mc_se,
            "x": wealth,
            "N": trace.N,
        },
        "report": report.to_json(),
        "trace": trace.to_json(),
        "csv": {
            "strategy.csv": strategy_to_csv(pi_star, lat),
            "solution.csv": solution_to_csv(solution, lat),
        },
    }
