"""Kinematic closed-loop simulator and scenario loading.

Scenario JSON schema (all lengths in meters, times in seconds)::

    {
      "name": "...",
      "duration": 20.0,
      "seed": 0,
      "robot_start": [x, y, z],
      "robot_yaw": 0.0,                         # optional
      "target_script": [[t, x, y, z], ...],     # linearly interpolated, held after the last stamp
      "obstacles": [
        {"center": [x, y, z], "radii": [a, b, c],
         "velocity": [vx, vy, vz],              # optional, constant velocity
         "script": [[t, x, y, z], ...]}         # optional, overrides center/velocity
      ],
      "bounds": {"vel_max": 2.0, "acc_max": null},
      "s_min": 1.0, "s_max": 3.0,               # null disables tracking
      "goal": [x, y, z],                        # optional terminal position
      "solver": {...}, "mpc": {...},            # optional config overrides
      "initializations": {                      # optional, offline problems only
        "name": {"kind": "line", "from": "start", "to": "goal",
                 "offset": [[dx...], [dy...], [dz...]]}
      }
    }

``kind`` is ``line`` (segment between two named points: start, goal, target, or an
explicit 3-vector) or ``target`` (fit of the scripted target trajectory).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisSet, build_basis
from .metrics import CycleRecord, MetricsReport, range_violation, summarize, visibility_score
from .mpc import MpcConfig, MpcController, yaw_to
from .solver import Boundary, Predictions, SolverConfig, fit_coeffs, straight_line_coeffs
from .world import Ellipsoid, LosGrid, TargetState, WorldState

log = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    """Schema violation; names the file and the offending field."""

    def __init__(self, path, field_name: str, message: str):
        self.path = str(path)
        self.field = field_name
        super().__init__(f"{path}: field '{field_name}': {message}")


class SimulationError(RuntimeError):
    pass


def _script_array(raw, path, name) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 4 or len(arr) == 0:
        raise ScenarioError(path, name, "expected a nonempty list of [t, x, y, z] rows")
    if np.any(np.diff(arr[:, 0]) <= 0):
        raise ScenarioError(path, name, "time stamps must be strictly increasing")
    return arr


def _interp(script: np.ndarray, t: float):
    """Position and segment velocity of a piecewise-linear script at time ``t``."""
    ts = script[:, 0]
    pos = np.array([np.interp(t, ts, script[:, a]) for a in (1, 2, 3)])
    if len(ts) == 1 or t < ts[0] or t >= ts[-1]:
        return pos, np.zeros(3)
    k = int(np.searchsorted(ts, t, side="right")) - 1
    vel = (script[k + 1, 1:] - script[k, 1:]) / (ts[k + 1] - ts[k])
    return pos, vel


@dataclass
class ObstacleSpec:
    center: np.ndarray
    radii: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    script: np.ndarray | None = None

    def at(self, t: float) -> Ellipsoid:
        if self.script is not None:
            pos, vel = _interp(self.script, t)
            return Ellipsoid(pos, self.radii, vel)
        return Ellipsoid(self.center + t * self.velocity, self.radii, self.velocity)


@dataclass
class Scenario:
    name: str
    duration: float
    robot_start: np.ndarray
    target_script: np.ndarray
    obstacles: list
    robot_yaw: float = 0.0
    vel_max: float | None = None
    acc_max: float | None = None
    s_min: float | None = None
    s_max: float | None = None
    seed: int = 0
    goal: np.ndarray | None = None
    solver: dict = field(default_factory=dict)
    mpc: dict = field(default_factory=dict)
    initializations: dict = field(default_factory=dict)
    source: str = ""

    def __post_init__(self):
        if not self.duration > 0:
            raise ScenarioError(self.source, "duration", "must be positive")

    @property
    def n(self) -> int:
        return len(self.obstacles)

    @property
    def tracking(self) -> bool:
        return self.s_min is not None and self.s_max is not None

    def target_at(self, t: float) -> TargetState:
        pos, vel = _interp(self.target_script, t)
        return TargetState(pos, vel)

    def world_at(self, t: float) -> WorldState:
        return WorldState(self.target_at(t), tuple(o.at(t) for o in self.obstacles), t)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "duration": self.duration,
            "seed": self.seed,
            "robot_start": self.robot_start.tolist(),
            "robot_yaw": self.robot_yaw,
            "target_script": self.target_script.tolist(),
            "obstacles": [
                {"center": o.center.tolist(), "radii": o.radii.tolist(), "velocity": o.velocity.tolist(),
                 **({"script": o.script.tolist()} if o.script is not None else {})}
                for o in self.obstacles
            ],
            "bounds": {"vel_max": self.vel_max, "acc_max": self.acc_max},
            "s_min": self.s_min,
            "s_max": self.s_max,
            "goal": None if self.goal is None else self.goal.tolist(),
            "solver": dict(self.solver),
            "mpc": dict(self.mpc),
        }
        if self.initializations:
            d["initializations"] = self.initializations
        return d


def _vec(raw, path, name):
    try:
        arr = np.asarray(raw, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ScenarioError(path, name, "expected 3 numbers") from None
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise ScenarioError(path, name, "expected 3 finite numbers")
    return arr


def scenario_from_dict(d: dict, source: str = "<dict>") -> Scenario:
    for key in ("name", "duration", "robot_start", "target_script"):
        if key not in d:
            raise ScenarioError(source, key, "missing")
    obstacles = []
    for i, o in enumerate(d.get("obstacles", [])):
        base = f"obstacles[{i}]"
        if "radii" not in o:
            raise ScenarioError(source, base + ".radii", "missing")
        radii = _vec(o["radii"], source, base + ".radii")
        if np.any(radii <= 0):
            raise ScenarioError(source, base + ".radii", "must be positive")
        script = _script_array(o["script"], source, base + ".script") if "script" in o else None
        if script is None and "center" not in o:
            raise ScenarioError(source, base + ".center", "missing")
        center = _vec(o["center"], source, base + ".center") if "center" in o else script[0, 1:]
        vel = _vec(o.get("velocity", [0, 0, 0]), source, base + ".velocity")
        obstacles.append(ObstacleSpec(center, radii, vel, script))
    bounds = d.get("bounds", {}) or {}
    s_min, s_max = d.get("s_min"), d.get("s_max")
    if (s_min is None) != (s_max is None):
        raise ScenarioError(source, "s_min", "s_min and s_max must both be set or both be null")
    if s_min is not None and not 0 < s_min <= s_max:
        raise ScenarioError(source, "s_min", "need 0 < s_min <= s_max")
    try:
        duration = float(d["duration"])
    except (TypeError, ValueError):
        raise ScenarioError(source, "duration", "expected a number") from None
    return Scenario(
        name=str(d["name"]),
        duration=duration,
        robot_start=_vec(d["robot_start"], source, "robot_start"),
        target_script=_script_array(d["target_script"], source, "target_script"),
        obstacles=obstacles,
        robot_yaw=float(d.get("robot_yaw", 0.0)),
        vel_max=bounds.get("vel_max"),
        acc_max=bounds.get("acc_max"),
        s_min=s_min,
        s_max=s_max,
        seed=int(d.get("seed", 0)),
        goal=None if d.get("goal") is None else _vec(d["goal"], source, "goal"),
        solver=dict(d.get("solver", {})),
        mpc=dict(d.get("mpc", {})),
        initializations=dict(d.get("initializations", {})),
        source=source,
    )


def load_scenario(path) -> Scenario:
    """Load a scenario file; bare names resolve to the bundled library."""
    p = Path(path)
    if not p.exists() and (SCENARIO_DIR / p.with_suffix(".json").name).exists() and p.parent == Path("."):
        p = SCENARIO_DIR / p.with_suffix(".json").name
    try:
        with open(p, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"scenario file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(p, "<root>", f"invalid JSON: {exc}") from None
    return scenario_from_dict(raw, str(p))


def bundled_scenarios() -> list[str]:
    return sorted(f.stem for f in SCENARIO_DIR.glob("*.json"))


# -- offline problems ---------------------------------------------------------


@dataclass
class OfflineProblem:
    basis: BasisSet
    boundary: Boundary
    predictions: Predictions
    initializations: dict  # name -> (3, nvar) coefficients


def offline_problem(scenario: Scenario, horizon: float = 10.0, degree: int = 10, q: int = 100) -> OfflineProblem:
    """Single trajectory optimization over ``horizon`` from the scenario's start state."""
    basis = build_basis(degree, q, horizon)
    t = basis.times
    target = np.array([scenario.target_at(s).position for s in t])
    obs = np.array([[o.at(s).center for s in t] for o in scenario.obstacles]).reshape(scenario.n, q, 3)
    radii = np.array([o.radii for o in scenario.obstacles]).reshape(scenario.n, 3)
    pred = Predictions(target, obs, radii)
    boundary = Boundary(scenario.robot_start, pT=scenario.goal)
    named = {"start": scenario.robot_start, "goal": scenario.goal, "target": target[0]}
    inits = {}
    for name, spec in scenario.initializations.items():
        kind = spec.get("kind", "line")
        where = f"initializations.{name}"
        if kind == "line":
            ends = []
            for key in ("from", "to"):
                ref = spec.get(key)
                pt = named.get(ref) if isinstance(ref, str) else ref
                if pt is None:
                    raise ScenarioError(scenario.source, f"{where}.{key}", f"unknown point {ref!r}")
                ends.append(_vec(pt, scenario.source, f"{where}.{key}"))
            c = straight_line_coeffs(basis, *ends)
        elif kind == "target":
            c = fit_coeffs(basis, target)
        else:
            raise ScenarioError(scenario.source, f"{where}.kind", f"unknown kind {kind!r}")
        if "offset" in spec:
            off = np.asarray(spec["offset"], dtype=float)
            if off.shape != c.shape:
                raise ScenarioError(scenario.source, f"{where}.offset", f"expected shape {c.shape}")
            c = c + off
        inits[name] = c
    return OfflineProblem(basis, boundary, pred, inits)


# -- closed loop --------------------------------------------------------------


@dataclass
class RunResult:
    scenario: Scenario
    trace: list
    report: MetricsReport
    config: dict


def resolved_configs(scenario: Scenario, mpc_overrides: dict | None = None,
                     solver_overrides: dict | None = None) -> tuple[MpcConfig, SolverConfig]:
    mpc_kw = {"vel_max": scenario.vel_max, **scenario.mpc, **(mpc_overrides or {})}
    solver_kw = {"acc_max": scenario.acc_max, **scenario.solver, **(solver_overrides or {})}
    return MpcConfig(**mpc_kw), SolverConfig(**solver_kw)


def _config_echo(scenario, mpc_cfg, solver_cfg, policy, disturbance):
    return {"scenario": scenario.to_dict(), "mpc": asdict(mpc_cfg), "solver": asdict(solver_cfg),
            "policy": policy, "disturbance": disturbance}


def run(scenario: Scenario, mpc_config: MpcConfig | None = None, solver_config: SolverConfig | None = None,
        policy: str = "mpc", disturbance: float = 0.0, seed: int | None = None) -> RunResult:
    """Closed-loop run.  ``policy`` is ``mpc`` or ``hover`` (zero command)."""
    if mpc_config is None or solver_config is None:
        m_cfg, s_cfg = resolved_configs(scenario)
        mpc_config = mpc_config or m_cfg
        solver_config = solver_config or s_cfg
    if policy not in ("mpc", "hover"):
        raise ValueError(f"unknown policy {policy!r}")
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    dt = mpc_config.control_period
    steps = int(round(scenario.duration / dt))
    grid = LosGrid.uniform(mpc_config.m)
    ctrl = None
    if policy == "mpc":
        ctrl = MpcController(mpc_config, solver_config, scenario.n, scenario.s_min, scenario.s_max, scenario.goal)
    x = scenario.robot_start.copy()
    v = np.zeros(3)
    trace = []
    for k in range(steps):
        t = k * dt
        world = scenario.world_at(t)
        if ctrl is not None:
            cmd, diag = ctrl.step(x, v, world)
            cmd_v, yaw = cmd.velocity, cmd.yaw
            track, occ, vis, solve, degraded = (diag.tracking_residual, diag.occlusion_residual,
                                                diag.visibility, diag.solve_time, diag.degraded)
        else:
            cmd_v, yaw = np.zeros(3), yaw_to(x, world.target.position)
            track = occ = solve = 0.0
            degraded = False
            vis = visibility_score(x, world.target.position, world.obstacles, grid)
        v_exec = cmd_v.copy()
        if disturbance > 0:
            v_exec = v_exec + rng.uniform(-disturbance, disturbance, 3)
        if mpc_config.vel_max is not None:
            speed = float(np.linalg.norm(v_exec))
            if speed > mpc_config.vel_max:
                v_exec *= mpc_config.vel_max / speed
        dist = float(np.linalg.norm(x - world.target.position))
        trace.append(CycleRecord(t, x.copy(), v_exec.copy(), yaw, world.target.position.copy(), cmd_v.copy(),
                                 track, occ, vis, dist, range_violation(dist, scenario.s_min, scenario.s_max),
                                 solve, degraded))
        x = x + v_exec * dt
        v = v_exec
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"non-finite robot state at t={t:.3f}: x={x}, command={cmd_v}")
    config = _config_echo(scenario, mpc_config, solver_config, policy, disturbance)
    return RunResult(scenario, trace, summarize(trace, config), config)


TRACE_COLUMNS = ["t", "robot_x", "robot_y", "robot_z", "vel_x", "vel_y", "vel_z", "yaw",
                 "target_x", "target_y", "target_z", "cmd_x", "cmd_y", "cmd_z",
                 "tracking_residual", "occlusion_residual", "visibility", "distance",
                 "range_violation", "degraded"]


def write_trace(path, result: RunResult):
    """Per-cycle CSV; wall-clock timing is excluded so identical runs give identical bytes."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# config " + json.dumps(result.config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in result.trace:
            vals = [r.t, *r.robot, *r.velocity, r.yaw, *r.target, *r.command, r.tracking_residual,
                    r.occlusion_residual, r.visibility, r.distance, r.range_violation]
            w.writerow([f"{float(x):.9g}" for x in vals] + [int(r.degraded)])


def write_timing(path, result: RunResult):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# config " + json.dumps(result.config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["t", "solve_time"])
        for r in result.trace:
            w.writerow([f"{r.t:.9g}", f"{r.solve_time:.9g}"])


# -- generated scenario families ------------------------------------------------


def scaling_scenario(n: int, seed: int = 0, duration: float = 1.0) -> Scenario:
    """Static target orbited by ``n`` slowly drifting obstacles; used for timing sweeps."""
    rng = np.random.default_rng(seed)
    target = np.array([0.0, 0.0, 1.0])
    obstacles = []
    for _ in range(n):
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(3.0, 12.0)
        center = np.array([rad * np.cos(ang), rad * np.sin(ang), 1.0])
        vel = rng.uniform(-0.3, 0.3, 3) * np.array([1, 1, 0])
        obstacles.append(ObstacleSpec(center, np.array([0.4, 0.4, 1.5]), vel))
    return Scenario(
        name=f"scaling_n{n}", duration=duration, robot_start=np.array([-2.0, -1.0, 1.0]),
        target_script=np.array([[0.0, *target]]), obstacles=obstacles, vel_max=2.0,
        s_min=1.5, s_max=3.0, seed=seed,
    )
