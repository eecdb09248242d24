"""Receding-horizon controller built on the split-Bregman solver.

Each control cycle re-fits the previous plan shifted by the elapsed time, pins
the initial conditions to the measured state, runs a fixed number of solver
iterations (real-time iteration) and averages the start of the planned
velocity into a command.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._kernels import warmup
from .basis import BasisSet, build_basis, eval_at
from .metrics import visibility_score
from .reform import assemble_A
from .solver import Boundary, Predictions, SolverConfig, SolverError, SplitBregmanSolver, fit_coeffs
from .world import LosGrid, WorldState, predict_obstacles, predict_target

log = logging.getLogger(__name__)


@dataclass
class MpcConfig:
    horizon: float = 10.0
    control_period: float = 0.01
    iters_per_cycle: int = 1
    command_window: int | None = None  # samples at the control rate; None covers the first 0.1 s
    keep_lambda: bool = True
    degree: int = 10
    q: int = 100
    m: int = 100
    vel_max: float | None = None
    tracking_weight: float = 1.0

    def __post_init__(self):
        if not self.horizon > self.control_period > 0:
            raise ValueError("need horizon > control_period > 0")
        if self.iters_per_cycle < 1:
            raise ValueError(f"iters_per_cycle must be >= 1, got {self.iters_per_cycle}")
        if self.command_window is None:
            self.command_window = max(1, int(round(0.1 / self.control_period)))
        if self.command_window < 1:
            raise ValueError("command_window must be >= 1")


@dataclass
class Command:
    velocity: np.ndarray
    yaw: float


@dataclass
class CycleDiagnostics:
    timestamp: float
    command: Command
    tracking_residual: float
    occlusion_residual: float
    visibility: float
    solve_time: float
    degraded: bool = False
    plan: np.ndarray | None = field(default=None, repr=False)  # (3, nvar)


def warm_start_shift(basis: BasisSet, coeffs, elapsed: float) -> np.ndarray:
    """Coefficients of the previous plan advanced by ``elapsed``, held constant past the horizon."""
    if elapsed >= basis.horizon:
        raise ValueError(f"elapsed {elapsed} must be below the horizon {basis.horizon}")
    C = np.asarray(coeffs, dtype=float).reshape(3, basis.nvar)
    if elapsed == 0:
        return C.copy()
    pos, _, _ = eval_at(basis, C, basis.times + elapsed)
    return fit_coeffs(basis, pos)


def yaw_to(robot_pos, target_pos) -> float:
    d = np.asarray(target_pos, dtype=float) - np.asarray(robot_pos, dtype=float)
    return math.atan2(d[1], d[0])


class MpcController:
    """Holds the plan and multipliers across cycles.  ``step`` is not re-entrant."""

    def __init__(self, config: MpcConfig, solver_config: SolverConfig, n_obstacles: int,
                 s_min=None, s_max=None, goal=None):
        self.config = config
        self.basis = build_basis(config.degree, config.q, config.horizon)
        self.grid = LosGrid.uniform(config.m)
        tracking = s_min is not None and s_max is not None
        system = assemble_A(self.basis, self.grid, n_obstacles, tracking=tracking, s_min=s_min, s_max=s_max,
                            tracking_weight=config.tracking_weight)
        self.goal = None if goal is None else np.asarray(goal, dtype=float)
        self.solver = SplitBregmanSolver(system, solver_config, Boundary(np.zeros(3), pT=self.goal))
        self.coeffs = None
        self.lam = None
        self.last_command = Command(np.zeros(3), 0.0)
        self._last_time = None
        warmup()

    def reset(self, robot_pos):
        """Start from the constant trajectory at ``robot_pos`` with zero multipliers."""
        self.coeffs = np.tile(np.asarray(robot_pos, dtype=float)[:, None], (1, self.basis.nvar))
        self.lam = np.zeros_like(self.coeffs)
        self._last_time = None

    def predictions(self, world: WorldState) -> Predictions:
        t = self.basis.times
        return Predictions(predict_target(world, t), predict_obstacles(world, t), world.radii)

    def _command_from_plan(self, coeffs) -> np.ndarray:
        cfg = self.config
        ts = cfg.control_period * np.arange(1, cfg.command_window + 1)
        _, vel, _ = eval_at(self.basis, coeffs, ts)
        v = vel.mean(axis=0)
        if cfg.vel_max is not None:
            speed = float(np.linalg.norm(v))
            if speed > cfg.vel_max:
                v = v * (cfg.vel_max / speed)
        return v

    def step(self, robot_pos, robot_vel, world: WorldState) -> tuple[Command, CycleDiagnostics]:
        t0 = time.perf_counter()
        robot_pos = np.asarray(robot_pos, dtype=float)
        if self.coeffs is None:
            self.reset(robot_pos)
        elapsed = 0.0 if self._last_time is None else world.timestamp - self._last_time
        elapsed = min(max(elapsed, 0.0), 0.5 * self.basis.horizon)
        _, _, acc = eval_at(self.basis, self.coeffs, elapsed)
        boundary = Boundary(p0=robot_pos, v0=np.asarray(robot_vel, dtype=float), a0=acc[0], pT=self.goal)
        yaw = yaw_to(robot_pos, world.target.position)
        degraded = False
        track = occ = float("nan")
        try:
            warm = warm_start_shift(self.basis, self.coeffs, elapsed)
            self.solver.set_boundary(boundary)
            pred = self.predictions(world)
            cache = self.solver.prepare(pred)
            lam = self.lam if self.config.keep_lambda else None
            state = self.solver.initial_state(warm, pred, lam=lam, cache=cache)
            for _ in range(self.config.iters_per_cycle):
                state = self.solver.iterate_once(state, cache)
            track, occ = state.residuals[-1]
            self.coeffs, self.lam = state.coeffs, state.lam
            command = Command(self._command_from_plan(state.coeffs), yaw)
        except (SolverError, np.linalg.LinAlgError) as exc:
            log.warning("solver failure at t=%.3f, holding previous command: %s", world.timestamp, exc)
            degraded = True
            command = Command(self.last_command.velocity.copy(), yaw)
        self._last_time = world.timestamp
        self.last_command = command
        solve_time = time.perf_counter() - t0
        vis = visibility_score(robot_pos, world.target.position, world.obstacles, self.grid)
        diag = CycleDiagnostics(world.timestamp, command, float(track), float(occ), vis, solve_time,
                                degraded, self.coeffs.copy())
        return command, diag
