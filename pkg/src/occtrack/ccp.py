"""Convex-concave procedure baseline for occlusion-free trajectory optimization.

Each outer iteration linearizes the ellipsoid constraints of every LOS sample
around the current trajectory and solves the resulting convex QP in all three
axes jointly.  Because the quadratic form is convex, the linearization
under-estimates it, so a point satisfying the linear row also satisfies the
original constraint.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .basis import BasisSet
from .qp import EqualityQP, solve_penalty_qp
from .solver import Boundary, Predictions
from .world import LosGrid

log = logging.getLogger(__name__)


@dataclass
class CcpConfig:
    max_outer: int = 10
    m: int = 20
    slack_weight: float = 1e4
    trust_region: float | None = None  # bound on per-coefficient change
    violation_tol: float = 1e-4
    cost_rtol: float = 1e-4
    smoothness_weight: float = 1.0
    max_inner: int = 50

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError(f"max_outer must be >= 1, got {self.max_outer}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")


@dataclass
class CcpReport:
    coeffs: np.ndarray  # (3, nvar)
    converged: bool
    iterations: int
    violations: np.ndarray  # max constraint violation after each outer iteration
    acceleration_costs: np.ndarray
    active_rows: list
    wall_time: float
    feasible_at: int | None  # first outer iteration with violation below tolerance
    elapsed: np.ndarray  # wall time at the end of each outer iteration

    @property
    def time_to_feasible(self) -> float | None:
        return None if self.feasible_at is None else float(self.elapsed[self.feasible_at - 1])


def _los_samples(positions, target, grid: LosGrid):
    """LOS points for all (u, time) pairs, shape (m, q, 3)."""
    u = grid.u_values[:, None, None]
    return (1.0 - u) * positions[None] + u * target[None]


def constraint_values(coeffs, basis: BasisSet, pred: Predictions, grid: LosGrid) -> np.ndarray:
    """Ellipsoid quadratic form minus one at every LOS sample, shape (n, m, q)."""
    X = basis.P @ np.asarray(coeffs, dtype=float).reshape(3, -1).T
    L = _los_samples(X, pred.target, grid)
    d = (L[None] - pred.obstacles[:, None]) / pred.radii[:, None, None, :]
    return np.sum(d * d, axis=-1) - 1.0


def max_violation(coeffs, basis: BasisSet, pred: Predictions, grid: LosGrid) -> float:
    if pred.n == 0:
        return 0.0
    return float(max(0.0, -constraint_values(coeffs, basis, pred, grid).min()))


def linearize_constraints(coeffs, basis: BasisSet, pred: Predictions, grid: LosGrid):
    """First-order expansion of ``h(L) >= 1`` at the current LOS samples as ``F xi <= g``.

    ``xi`` stacks the x, y and z coefficients.  Rows are ordered obstacle-major,
    then u, then time, giving ``n * m * q`` rows.
    """
    C = np.asarray(coeffs, dtype=float).reshape(3, -1)
    P = basis.P
    nv = basis.nvar
    X = P @ C.T
    u = grid.u_values
    L0 = _los_samples(X, pred.target, grid)  # (m, q, 3)
    R2 = pred.radii[:, None, None, :] ** 2
    diff = L0[None] - pred.obstacles[:, None]  # (n, m, q, 3)
    h0 = np.sum(diff * diff / R2, axis=-1)
    grad = 2.0 * diff / R2
    # h0 + grad . (L - L0) >= 1 with L = (1-u) P c + u x_r
    w = (1.0 - u)[None, :, None, None]
    coef = -w * grad  # (n, m, q, 3)
    F = (coef[..., :, None] * P[None, None, :, None, :]).reshape(-1, 3 * nv)
    g = (h0 - 1.0 - np.sum(grad * L0[None], axis=-1)
         + u[None, :, None] * np.sum(grad * pred.target[None, None], axis=-1))
    return F, g.reshape(-1)


def _joint_equalities(boundary: Boundary, basis: BasisSet):
    rows, rhs = boundary.rows(basis)
    return linalg.block_diag(rows, rows, rows), rhs.reshape(-1)


def ccp_solve(config: CcpConfig, boundary: Boundary, basis: BasisSet, pred: Predictions,
              initial_coeffs, grid: LosGrid | None = None) -> CcpReport:
    """Sequence of linearized convex QPs, all three axes solved jointly."""
    t0 = time.perf_counter()
    grid = grid or LosGrid.uniform(config.m)
    nv = basis.nvar
    Q = config.smoothness_weight * (basis.Pddot.T @ basis.Pddot)
    H = linalg.block_diag(Q, Q, Q)
    f = np.zeros(3 * nv)
    Aeq, beq = _joint_equalities(boundary, basis)
    xi = np.asarray(initial_coeffs, dtype=float).reshape(-1).copy()
    viols, costs, stamps = [], [], []
    active: list = []
    converged = False
    feasible_at = None
    prev_cost = None
    it = 0
    for it in range(1, config.max_outer + 1):
        if pred.n:
            F, g = linearize_constraints(xi, basis, pred, grid)
            keep = np.any(F != 0.0, axis=1)  # u = 1 rows carry no decision variable
            F, g = F[keep], g[keep]
        else:
            F, g = np.zeros((0, 3 * nv)), np.zeros(0)
        if config.trust_region is not None:
            eye = np.eye(3 * nv)
            F = np.vstack([F, eye, -eye])
            g = np.concatenate([g, xi + config.trust_region, config.trust_region - xi])
        if len(g):
            res = solve_penalty_qp(H, f, Aeq, beq, F, g, weight=config.slack_weight,
                                   max_inner=config.max_inner)
            xi, active = res.x, res.active
        else:
            xi, active = EqualityQP(H, Aeq).solve(f, beq), []
        C = xi.reshape(3, nv)
        v = max_violation(C, basis, pred, grid)
        cost = float(np.sum((C @ basis.Pddot.T) ** 2))
        viols.append(v)
        costs.append(cost)
        stamps.append(time.perf_counter() - t0)
        if v < config.violation_tol and feasible_at is None:
            feasible_at = it
        if v < config.violation_tol and (
            prev_cost is None and pred.n == 0
            or prev_cost is not None and abs(prev_cost - cost) <= config.cost_rtol * max(prev_cost, 1e-12)
        ):
            converged = True
            break
        prev_cost = cost
    wall = time.perf_counter() - t0
    if not converged:
        log.info("CCP stopped after %d outer iterations, violation %.3g", it, viols[-1])
    return CcpReport(xi.reshape(3, nv), converged, it, np.array(viols), np.array(costs),
                     list(active), wall, feasible_at, np.array(stamps))
