"""Command-line entry point: ``occtrack run|compare|scale|surface``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ._kernels import warmup
from .ccp import CcpConfig, ccp_solve, max_violation
from .reform import assemble_A
from .sim import (ScenarioError, load_scenario, offline_problem, resolved_configs, run, scaling_scenario,
                  write_timing, write_trace)
from .solver import SolverConfig, SplitBregmanSolver, write_trace_csv
from .metrics import baseline_cost_surface, occlusion_cost_surface, write_surface_csv
from .world import LosGrid

log = logging.getLogger("occtrack")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname, "logger": record.name, "msg": record.getMessage()})


def _setup_logging(json_logs: bool):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO)


def _overrides(args):
    mpc, solver = {}, {}
    if args.iters_per_cycle is not None:
        mpc["iters_per_cycle"] = args.iters_per_cycle
    if args.horizon is not None:
        mpc["horizon"] = args.horizon
    if args.degree is not None:
        mpc["degree"] = args.degree
    if args.m is not None:
        mpc["m"] = args.m
    if args.q is not None:
        mpc["q"] = args.q
    if args.rho is not None:
        solver["rho"] = args.rho
    return mpc, solver


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    mpc_o, solver_o = _overrides(args)
    mpc_cfg, solver_cfg = resolved_configs(scenario, mpc_o, solver_o)
    log.info("running %s for %.2f s", scenario.name, scenario.duration)
    result = run(scenario, mpc_cfg, solver_cfg, disturbance=args.disturbance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trace(out / "trace.csv", result)
    write_timing(out / "timing.csv", result)
    result.report.to_json(out / "metrics.json")
    log.info("min visibility %.4g, wrote %s", result.report.visibility_min, out)
    return 0


def _offline(args):
    scenario = load_scenario(args.scenario)
    mpc_o, solver_o = _overrides(args)
    mpc_cfg, solver_cfg = resolved_configs(scenario, mpc_o, solver_o)
    problem = offline_problem(scenario, mpc_cfg.horizon, mpc_cfg.degree, mpc_cfg.q)
    return scenario, mpc_cfg, solver_cfg, problem


def _run_bregman(scenario, mpc_cfg, solver_cfg, problem, init):
    system = assemble_A(problem.basis, LosGrid.uniform(mpc_cfg.m), scenario.n, tracking=scenario.tracking,
                        s_min=scenario.s_min, s_max=scenario.s_max, tracking_weight=mpc_cfg.tracking_weight)
    solver = SplitBregmanSolver(system, solver_cfg, problem.boundary)
    return solver.solve(problem.predictions, init)


def _run_ccp(problem, init):
    return ccp_solve(CcpConfig(), problem.boundary, problem.basis, problem.predictions, init)


def _write_ccp_trace(path, rep, config):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# config " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["method", "iteration", "tracking_residual", "occlusion_residual", "acceleration_cost"])
        for k in range(rep.iterations):
            w.writerow(["ccp", k + 1, "0", f"{rep.violations[k]:.9g}", f"{rep.acceleration_costs[k]:.9g}"])


def _initial_guess(problem, args):
    if not problem.initializations:
        raise ScenarioError(args.scenario, "initializations", "offline commands need at least one entry")
    name = args.init or next(iter(problem.initializations))
    if name not in problem.initializations:
        raise ScenarioError(args.scenario, "initializations", f"no initialization named {name!r}")
    return name, problem.initializations[name]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def cmd_compare(args) -> int:
    scenario, mpc_cfg, solver_cfg, problem = _offline(args)
    name, init = _initial_guess(problem, args)
    warmup()
    ours = _run_bregman(scenario, mpc_cfg, solver_cfg, problem, init)
    base = _run_ccp(problem, init)
    fine = LosGrid.uniform(mpc_cfg.m)
    rows = [
        {"method": "bregman", "iterations": ours.iterations, "converged": ours.converged,
         "wall_time": ours.wall_time, "acceleration_cost": float(ours.acceleration_costs[-1]),
         "occlusion_residual": float(ours.occlusion_residuals[-1]),
         "max_violation": max_violation(ours.state.coeffs, problem.basis, problem.predictions, fine)},
        {"method": "ccp", "iterations": base.iterations, "converged": base.converged,
         "wall_time": base.wall_time, "time_to_feasible": base.time_to_feasible,
         "acceleration_cost": float(base.acceleration_costs[-1]),
         "max_violation": max_violation(base.coeffs, problem.basis, problem.predictions, fine)},
    ]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {"scenario": scenario.to_dict(), "solver": asdict(solver_cfg), "mpc": asdict(mpc_cfg),
              "ccp": asdict(CcpConfig()), "initialization": name}
    _write_json(out / "compare.json", {"initialization": name, "results": rows, "config": config})
    columns = ["method", "iterations", "converged", "wall_time", "time_to_feasible", "acceleration_cost",
               "occlusion_residual", "max_violation"]
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("# config " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    write_trace_csv(out / "trace_bregman.csv", ours, "bregman", config)
    _write_ccp_trace(out / "trace_ccp.csv", base, config)
    for r in rows:
        log.info("%s: %d iterations, %.4f s, cost %.4g", r["method"], r["iterations"], r["wall_time"],
                 r["acceleration_cost"])
    return 0


def cmd_solve(args) -> int:
    """Offline solve of a scenario with one optimizer; writes the convergence trace."""
    scenario, mpc_cfg, solver_cfg, problem = _offline(args)
    name, init = _initial_guess(problem, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {"scenario": scenario.to_dict(), "solver": asdict(solver_cfg), "mpc": asdict(mpc_cfg),
              "method": args.method, "initialization": name}
    if args.method == "ccp":
        config["ccp"] = asdict(CcpConfig())
        rep = _run_ccp(problem, init)
        _write_ccp_trace(out / "trace.csv", rep, config)
        coeffs, summary = rep.coeffs, {"iterations": rep.iterations, "converged": rep.converged}
    else:
        rep = _run_bregman(scenario, mpc_cfg, solver_cfg, problem, init)
        write_trace_csv(out / "trace.csv", rep, "bregman", config)
        coeffs, summary = rep.state.coeffs, {"iterations": rep.iterations, "converged": rep.converged}
    _write_json(out / "solution.json", {"method": args.method, "initialization": name, **summary,
                                        "coeffs": np.asarray(coeffs).tolist(),
                                        "config": config})
    return 0


def cmd_scale(args) -> int:
    ns = [int(x) for x in args.n_list.split(",")]
    mpc_o, solver_o = _overrides(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    warmup()
    for n in ns:
        scenario = scaling_scenario(n, seed=args.seed or 0, duration=args.duration)
        mpc_cfg, solver_cfg = resolved_configs(scenario, mpc_o, solver_o)
        result = run(scenario, mpc_cfg, solver_cfg)
        times = np.array([r.solve_time for r in result.trace])
        rows.append((n, float(np.median(times)), float(np.max(times)), len(times)))
        log.info("n=%d median cycle %.3f ms", n, rows[-1][1] * 1e3)
    with open(out / "scale.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("# config " + json.dumps({"mpc": mpc_o, "solver": solver_o, "seed": args.seed or 0,
                                           "duration": args.duration}, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["n", "median_cycle_time", "max_cycle_time", "cycles"])
        for n, med, mx, c in rows:
            w.writerow([n, f"{med:.9g}", f"{mx:.9g}", c])
    return 0


def cmd_surface(args) -> int:
    scenario = load_scenario(args.scenario)
    world = scenario.world_at(0.0)
    target = world.target.position
    obstacles = list(world.obstacles)
    xs = np.linspace(args.xlim[0], args.xlim[1], args.nx)
    ys = np.linspace(args.ylim[0], args.ylim[1], args.ny)
    z = target[2] if args.z is None else args.z
    m = args.m or 100
    ours = occlusion_cost_surface(xs, ys, z, target, obstacles, LosGrid.uniform(m))
    base = baseline_cost_surface(xs, ys, z, target, obstacles)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = {"scenario": scenario.to_dict(), "xlim": list(args.xlim), "ylim": list(args.ylim),
           "nx": args.nx, "ny": args.ny, "z": float(z), "m": m}
    write_surface_csv(out / "surface_ours.csv", xs, ys, ours, cfg)
    write_surface_csv(out / "surface_baseline.csv", xs, ys, base, cfg)
    log.info("surface zero fraction %.3f (ours), %.3f (baseline)", np.mean(ours <= 1e-9), np.mean(base <= 0))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="occtrack", description="Occlusion-free target tracking MPC toolkit")
    p.add_argument("--json-logs", action="store_true", help="machine-readable progress on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=True):
        if scenario:
            sp.add_argument("--scenario", required=True, help="scenario JSON path or bundled name")
        sp.add_argument("--out", default="out")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--rho", type=float, default=None)
        sp.add_argument("--iters-per-cycle", type=int, default=None)
        sp.add_argument("--horizon", type=float, default=None)
        sp.add_argument("--degree", type=int, default=None)
        sp.add_argument("--m", type=int, default=None)
        sp.add_argument("--q", type=int, default=None)
        sp.add_argument("--method", choices=("bregman", "ccp"), default="bregman")

    sp = sub.add_parser("run", help="closed-loop MPC run")
    common(sp)
    sp.add_argument("--disturbance", type=float, default=0.0, help="uniform velocity noise bound (m/s)")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("solve", help="offline trajectory optimization")
    common(sp)
    sp.add_argument("--init", default=None, help="initialization name from the scenario")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("compare", help="split-Bregman vs CCP on an offline problem")
    common(sp)
    sp.add_argument("--init", default=None)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("scale", help="per-cycle time vs obstacle count")
    common(sp, scenario=False)
    sp.add_argument("--n-list", default="2,4,8,16,32,64")
    sp.add_argument("--duration", type=float, default=0.5)
    sp.set_defaults(func=cmd_scale)

    sp = sub.add_parser("surface", help="occlusion cost surfaces on a planar grid")
    common(sp)
    sp.add_argument("--xlim", type=float, nargs=2, default=(-5.0, 5.0))
    sp.add_argument("--ylim", type=float, nargs=2, default=(-5.0, 5.0))
    sp.add_argument("--nx", type=int, default=200)
    sp.add_argument("--ny", type=int, default=200)
    sp.add_argument("--z", type=float, default=None)
    sp.set_defaults(func=cmd_surface)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.json_logs)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 2
    except (ScenarioError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
