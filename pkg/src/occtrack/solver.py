"""Split-Bregman alternating minimization for occlusion-free trajectory optimization.

One iteration performs, in order:

1. the coefficient QP (acceleration cost + multiplier term + quadratic
   penalty of the stacked equalities, subject to boundary equalities and
   sampled kinematic boxes),
2. the closed-form angle updates for tracking and occlusion samples,
3. the clamped distance updates,
4. the multiplier step ``lam <- lam - rho * A^T (A c - b)``.

Axes are independent because obstacles are axis-aligned, so the QP is solved
as three problems sharing one factorization.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ._kernels import normalized_shifts, occlusion_pass
from .basis import BasisSet
from .qp import EqualityQP, QpProblem, solve_box_qp, stack_boxes
from .reform import PolarBlock, StackedSystem, build_b_occ, build_b_tar

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    rho: float = 1.0
    max_iters: int = 100
    residual_tol: float = 1e-3
    multiplier_step: float = 1.0
    rho_ramp: float = 1.0  # multiplicative growth per iteration; 1.0 keeps rho constant
    rho_max: float = 1e3
    smoothness_weight: float = 1.0
    regularization: float = 1e-9
    max_inner: int = 100
    # kinematic limits (per axis); None disables the bound
    pos_min: tuple | None = None
    pos_max: tuple | None = None
    vel_max: float | None = None
    acc_max: float | None = None

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.residual_tol > 0:
            raise ValueError(f"residual_tol must be positive, got {self.residual_tol}")


@dataclass
class Boundary:
    """Initial state and optional terminal conditions of the planned trajectory."""

    p0: np.ndarray
    v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    a0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pT: np.ndarray | None = None
    vT: np.ndarray | None = field(default_factory=lambda: np.zeros(3))
    aT: np.ndarray | None = field(default_factory=lambda: np.zeros(3))

    def rows(self, basis: BasisSet):
        """Equality rows (shared by all axes) and per-axis right-hand sides (3, k)."""
        rows = [basis.P[0], basis.Pdot[0], basis.Pddot[0]]
        rhs = [self.p0, self.v0, self.a0]
        for row, val in ((basis.P[-1], self.pT), (basis.Pdot[-1], self.vT), (basis.Pddot[-1], self.aT)):
            if val is not None:
                rows.append(row)
                rhs.append(val)
        return np.array(rows), np.array(rhs, dtype=float).T

    def layout(self) -> tuple:
        return (self.pT is not None, self.vT is not None, self.aT is not None)


@dataclass
class Predictions:
    """Horizon predictions sampled on the basis time grid."""

    target: np.ndarray  # (q, 3)
    obstacles: np.ndarray  # (n, q, 3)
    radii: np.ndarray  # (n, 3)

    @property
    def n(self) -> int:
        return self.obstacles.shape[0]


@dataclass
class SolverState:
    coeffs: np.ndarray  # (3, nvar)
    polar: PolarBlock | None
    lam: np.ndarray  # (3, nvar)
    rho: float
    iteration: int = 0
    residuals: list = field(default_factory=list)  # (tracking, occlusion) per iteration
    Atb: np.ndarray | None = None  # A^T b for the current polar block, (3, nvar)
    qp_converged: bool = True
    _polar_src: tuple | None = field(default=None, repr=False)

    def __getattribute__(self, name):
        # the polar block is reconstructed on first access; the iteration itself never needs it
        if name == "polar":
            src = object.__getattribute__(self, "_polar_src")
            if src is not None:
                object.__setattr__(self, "polar", _full_polar(*src))
                object.__setattr__(self, "_polar_src", None)
        return object.__getattribute__(self, name)

    @property
    def lambda_flat(self) -> np.ndarray:
        return self.lam.reshape(-1)


@dataclass
class SolveReport:
    state: SolverState
    converged: bool
    iterations: int
    tracking_residuals: np.ndarray
    occlusion_residuals: np.ndarray
    acceleration_costs: np.ndarray
    wall_time: float

    def write_csv(self, path, method: str = "bregman", config: dict | None = None):
        write_trace_csv(path, self, method, config)


class SolverError(RuntimeError):
    pass


class _PredictionCache:
    """Per-prediction constants of the stacked system (axis-first layout)."""

    def __init__(self, system: StackedSystem, pred: Predictions):
        grid = system.grid
        u = grid.u_values
        w = 1.0 - u
        self.pred = pred
        self.tracking = system.tracking
        self.s_min, self.s_max = system.s_min, system.s_max
        self.tracking_weight = system.tracking_weight
        self.target = np.ascontiguousarray(pred.target.T)  # (3, q)
        n = pred.n
        self.n = n
        radii_t = np.transpose(pred.radii)
        self.radii = radii_t[:, :, None, None]  # (3, n, 1, 1)
        self.w = w
        # radius-normalized forms: D^-1 delta = w_over_r * X - shifted_over_r, with
        # shifted_over_r = (x_oi - u_j x_r) / r_i of shape (3, n, m, q)
        self.w_over_r = np.ascontiguousarray(w[None, None, :, None] / self.radii)
        self.shifted_over_r = normalized_shifts(np.ascontiguousarray(pred.obstacles, dtype=float),
                                                np.ascontiguousarray(pred.target, dtype=float),
                                                np.ascontiguousarray(pred.radii, dtype=float),
                                                np.ascontiguousarray(u, dtype=float))
        self.wsq = n * float(np.sum(w * w))
        self.radii_an = np.ascontiguousarray(radii_t)  # (3, n)


class SplitBregmanSolver:
    """Alternating minimization over (coefficients, angles, distances) with a multiplier."""

    def __init__(self, system: StackedSystem, config: SolverConfig, boundary: Boundary):
        self.system = system
        self.config = config
        self.basis = system.basis
        if system.tracking and (system.s_min is None or system.s_max is None):
            raise ValueError("tracking requires s_min and s_max")
        if system.tracking and not 0 < system.s_min <= system.s_max:
            raise ValueError(f"need 0 < s_min <= s_max, got {system.s_min}, {system.s_max}")
        P, Pddot = self.basis.P, self.basis.Pddot
        self.Q = config.smoothness_weight * (Pddot.T @ Pddot)
        self.PtP = P.T @ P
        self.gram = system.gram_scale * self.PtP
        self.set_boundary(boundary)
        self._rho = None
        self._factor = None
        self._C, self._h = self._kinematic_boxes()

    def set_boundary(self, boundary: Boundary):
        rows, rhs = boundary.rows(self.basis)
        if getattr(self, "_eq_layout", None) != boundary.layout():
            self._factor = None
        self.boundary = boundary
        self.Aeq = rows
        self.beq = rhs
        self._eq_layout = boundary.layout()

    def _kinematic_boxes(self):
        cfg, b = self.config, self.basis
        per_axis = []
        for a in range(3):
            boxes = []
            if cfg.pos_min is not None or cfg.pos_max is not None:
                lo = -np.inf if cfg.pos_min is None else cfg.pos_min[a]
                hi = np.inf if cfg.pos_max is None else cfg.pos_max[a]
                boxes.append((b.P[1:], lo, hi))
            if cfg.vel_max is not None:
                boxes.append((b.Pdot[1:], -cfg.vel_max, cfg.vel_max))
            if cfg.acc_max is not None:
                boxes.append((b.Pddot[1:], -cfg.acc_max, cfg.acc_max))
            per_axis.append(stack_boxes(boxes))
        return [c for c, _ in per_axis], [h for _, h in per_axis]

    def factor(self, rho: float) -> EqualityQP:
        """KKT factorization for penalty ``rho``; reused while rho and the equality layout are unchanged."""
        if self._factor is None or self._rho != rho:
            H = self.Q + rho * self.gram
            self._factor = EqualityQP(H, self.Aeq, self.config.regularization)
            self._rho = rho
        return self._factor

    # -- state construction -------------------------------------------------

    def prepare(self, pred: Predictions) -> _PredictionCache:
        if pred.n != self.system.n:
            raise ValueError(f"system built for {self.system.n} obstacles, predictions have {pred.n}")
        return _PredictionCache(self.system, pred)

    def initial_state(self, coeffs, pred, lam=None, cache=None) -> SolverState:
        cache = cache or self.prepare(pred)
        coeffs = np.array(coeffs, dtype=float).reshape(3, self.basis.nvar)
        lam = np.zeros_like(coeffs) if lam is None else np.array(lam, dtype=float).reshape(coeffs.shape)
        state = SolverState(coeffs=coeffs, polar=None, lam=lam, rho=self.config.rho)
        self._polar_and_distance(state, cache)
        return state

    # -- blocks ---------------------------------------------------------------

    def solve_coefficients(self, state: SolverState) -> tuple[np.ndarray, bool]:
        rho = state.rho
        fac = self.factor(rho)
        F = -state.lam - rho * state.Atb  # (3, nvar)
        if all(C is None for C in self._C):
            return fac.solve_many(F.T, self.beq.T).T, True
        out = np.empty_like(state.coeffs)
        ok = True
        for a in range(3):
            C = self._C[a]
            if C is None:
                out[a] = fac.solve(F[a], self.beq[a])
            else:
                res = fac.solve_ineq(F[a], self.beq[a], C, self._h[a], max_inner=self.config.max_inner)
                out[a] = res.x
                ok &= res.converged
        return out, ok

    def _polar_and_distance(self, state: SolverState, cache: _PredictionCache):
        """Closed-form angle and distance updates; stores A^T b and residuals.

        Samples outside every ellipsoid reconstruct themselves exactly, so only
        the inside samples contribute a correction to ``A^T b``.
        """
        P = self.basis.P
        X = state.coeffs @ P.T  # (3, q)
        rhs = np.zeros_like(X)
        track_res = 0.0
        if cache.tracking:
            b_tar = _tracking_rhs(X, cache)
            track_res = float(np.sum((X - b_tar) ** 2))
            rhs += cache.tracking_weight * b_tar
        occ_res = 0.0
        if cache.n:
            occ_res, corr = occlusion_pass(X, cache.w_over_r, cache.shifted_over_r, cache.radii_an, cache.w)
            rhs += cache.wsq * X + corr
        state._polar_src = (X, cache)
        state.Atb = rhs @ P
        return track_res, occ_res

    def iterate_once(self, state: SolverState, cache: _PredictionCache) -> SolverState:
        """One split-Bregman iteration; returns a new state."""
        coeffs, ok = self.solve_coefficients(state)
        new = SolverState(coeffs=coeffs, polar=None, lam=state.lam, rho=state.rho,
                          iteration=state.iteration, residuals=list(state.residuals), qp_converged=ok)
        track_res, occ_res = self._polar_and_distance(new, cache)
        new.lam = state.lam - self.config.multiplier_step * state.rho * (coeffs @ self.gram - new.Atb)
        new.residuals.append((track_res, occ_res))
        new.iteration = state.iteration + 1
        new.rho = min(state.rho * self.config.rho_ramp, self.config.rho_max)
        if not (np.all(np.isfinite(new.coeffs)) and np.all(np.isfinite(new.lam)) and np.isfinite(new.Atb).all()):
            raise SolverError(f"non-finite iterate at iteration {new.iteration}")
        return new

    def acceleration_cost(self, coeffs) -> float:
        acc = coeffs @ self.basis.Pddot.T
        return float(np.sum(acc * acc))

    def solve(self, pred: Predictions, initial_coeffs, lam=None, max_iters=None) -> SolveReport:
        t0 = time.perf_counter()
        cache = self.prepare(pred)
        state = self.initial_state(initial_coeffs, pred, lam, cache)
        cfg = self.config
        max_iters = cfg.max_iters if max_iters is None else max_iters
        converged = False
        acc = []
        for _ in range(max_iters):
            state = self.iterate_once(state, cache)
            acc.append(self.acceleration_cost(state.coeffs))
            if max(state.residuals[-1]) <= cfg.residual_tol:
                converged = True
                break
        wall = time.perf_counter() - t0
        if not converged:
            log.info("split-Bregman stopped after %d iterations, residuals %s", state.iteration,
                     state.residuals[-1] if state.residuals else None)
        res = np.array(state.residuals).reshape(-1, 2)
        return SolveReport(state, converged, state.iteration, res[:, 0], res[:, 1], np.array(acc), wall)


def _tracking_rhs(X, cache: _PredictionCache):
    delta = X - cache.target
    r = np.sqrt(np.einsum("aq,aq->q", delta, delta))
    safe = r > 0
    direction = np.where(safe, delta / np.where(safe, r, 1.0), np.array([[0.0], [0.0], [1.0]]))
    return cache.target + np.clip(r, cache.s_min, cache.s_max) * direction


def _full_polar(X, cache: _PredictionCache) -> PolarBlock:
    """Materialize the polar/distance block for trajectory samples ``X`` (3, q)."""
    q = X.shape[1]
    if cache.tracking:
        delta = X - cache.target
        r = np.sqrt(np.einsum("aq,aq->q", delta, delta))
        safe = r > 0
        direction = np.where(safe, delta / np.where(safe, r, 1.0), np.array([[0.0], [0.0], [1.0]]))
        d_r = np.clip(r, cache.s_min, cache.s_max)
        dir_r = np.ascontiguousarray(direction.T)
    else:
        d_r, dir_r = np.zeros(q), np.zeros((q, 3))
    if cache.n:
        nrm = cache.w_over_r * X[:, None, None, :] - cache.shifted_over_r
        r = np.sqrt(np.einsum("anjq,anjq->njq", nrm, nrm))
        zero = r == 0
        dir_o = nrm / np.where(zero, 1.0, r)
        dir_o[2][zero] = 1.0
        d_o = np.maximum(r, 1.0).reshape(-1)
        dir_o = dir_o.reshape(3, -1).T
    else:
        d_o, dir_o = np.zeros(0), np.zeros((0, 3))
    return PolarBlock(d_r=d_r, dir_r=dir_r, d_o=d_o, dir_o=dir_o)


# -- stand-alone operations on explicit matrices ------------------------------


def update_multiplier(lam, A, xi, b, rho: float):
    """``lam - rho * A^T (A xi - b)``: gradient of ``0.5 ||A xi - b||^2`` in ``xi`` only."""
    return np.asarray(lam) - rho * (A.T @ (A @ xi - b))


def occlusion_residual(coeffs, polar: PolarBlock, system: StackedSystem, pred: Predictions) -> float:
    """Sum over axes of ``||A_occ c - b_occ||^2`` built from the explicit stacked matrices."""
    if system.n == 0:
        return 0.0
    A = system.A_occ
    b = build_b_occ(pred.target, pred.obstacles, pred.radii, system.grid, polar)
    C = np.asarray(coeffs).reshape(3, -1)
    return float(sum(np.sum((A @ C[a] - b[:, a]) ** 2) for a in range(3)))


def tracking_residual(coeffs, polar: PolarBlock, system: StackedSystem, pred: Predictions) -> float:
    if not system.tracking:
        return 0.0
    b = build_b_tar(pred.target, polar)
    X = system.basis.P @ np.asarray(coeffs).reshape(3, -1).T
    return float(np.sum((X - b) ** 2))


def augmented_cost(coeffs, polar: PolarBlock, lam, rho, system: StackedSystem, pred: Predictions,
                   smoothness_weight: float = 1.0) -> float:
    """Value of the split-Bregman objective for explicit blocks."""
    C = np.asarray(coeffs).reshape(3, -1)
    Pdd = system.basis.Pddot
    cost = 0.5 * smoothness_weight * float(np.sum((C @ Pdd.T) ** 2))
    cost -= float(np.sum(np.asarray(lam).reshape(3, -1) * C))
    penalty = (system.tracking_weight * tracking_residual(C, polar, system, pred)
               + occlusion_residual(C, polar, system, pred))
    return cost + 0.5 * rho * penalty


def straight_line_coeffs(basis: BasisSet, start, goal) -> np.ndarray:
    """Coefficients of the constant-speed segment from ``start`` to ``goal``."""
    s = np.linspace(0.0, 1.0, basis.nvar)[:, None]
    return ((1 - s) * np.asarray(start, dtype=float) + s * np.asarray(goal, dtype=float)).T


def fit_coeffs(basis: BasisSet, positions) -> np.ndarray:
    """Least-squares coefficients reproducing ``positions`` (q x 3) on the basis grid."""
    return (basis.pinv @ np.asarray(positions, dtype=float)).T


def write_trace_csv(path, report: SolveReport, method: str = "bregman", config: dict | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config is not None:
            fh.write("# config " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["method", "iteration", "tracking_residual", "occlusion_residual", "acceleration_cost"])
        for k in range(report.iterations):
            w.writerow([method, k + 1, f"{report.tracking_residuals[k]:.9g}",
                        f"{report.occlusion_residuals[k]:.9g}", f"{report.acceleration_costs[k]:.9g}"])
