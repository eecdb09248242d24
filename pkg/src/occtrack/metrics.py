"""Evaluation metrics: visibility score, occlusion cost surfaces and run summaries."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .reform import project_occlusion
from .world import Ellipsoid, LosGrid, los_points

NO_OBSTACLE_SCORE = 1e6
VIOLATION_BIN = 0.1


def visibility_score(robot_pos, target_pos, obstacles, grid: LosGrid | None = None) -> float:
    """Smallest ellipsoid quadratic form minus one over obstacles and LOS samples.

    Negative iff some LOS sample lies inside an obstacle.
    """
    if not obstacles:
        return NO_OBSTACLE_SCORE
    grid = grid or LosGrid.uniform(100)
    pts = los_points(robot_pos, target_pos, grid)
    return float(min(o.quadratic_form(pts).min() for o in obstacles) - 1.0)


def _inside_interval(p, target, center, radii):
    """Parameter interval ``(u_lo, u_hi)`` where ``(1-u) p + u target`` is inside the ellipsoid.

    ``p`` is (k, 3).  Rows without intersection get an empty interval (1, 0).
    """
    a = (p - center) / radii
    e = (np.asarray(target) - p) / radii
    A = np.einsum("ij,ij->i", e, e)
    B = np.einsum("ij,ij->i", a, e)
    C = np.einsum("ij,ij->i", a, a) - 1.0
    disc = B * B - A * C
    lo = np.ones(len(p))
    hi = np.zeros(len(p))
    ok = (disc > 0) & (A > 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    lo[ok] = (-B[ok] - sq[ok]) / A[ok]
    hi[ok] = (-B[ok] + sq[ok]) / A[ok]
    # robot coinciding with the target: the segment is a single point
    point = (A == 0) & (C < 0)
    lo[point], hi[point] = 0.0, 1.0
    return lo, hi


def occlusion_residual_at(robot_pos, target_pos, obstacles, grid: LosGrid) -> np.ndarray:
    """Occlusion residual for a batch of robot positions (k, 3) with a static target.

    Equals ``sum_ij ||(1-u_j) p - (x_oi - u_j x_r) - D_i d s||^2`` at the optimal
    angles and distances; samples outside an ellipsoid contribute exactly zero,
    so only samples inside the exact LOS/ellipsoid intersection are evaluated.
    """
    p = np.atleast_2d(np.asarray(robot_pos, dtype=float))
    target = np.asarray(target_pos, dtype=float)
    u = grid.u_values
    out = np.zeros(len(p))
    for o in obstacles:
        lo, hi = _inside_interval(p, target, o.center, o.radii)
        # widen by one sample so rounding at the interval ends cannot drop a sample
        j0 = np.maximum(np.searchsorted(u, lo, side="left") - 1, 0)
        j1 = np.minimum(np.searchsorted(u, hi, side="right") + 1, len(u))
        for k in np.flatnonzero(j1 > j0):
            uu = u[j0[k]:j1[k], None]
            delta = (1.0 - uu) * p[k] - (o.center - uu * target)
            _, _, offset = project_occlusion(delta[None, None], o.radii[None])
            inside = np.sum((delta / o.radii) ** 2, axis=1) < 1.0
            out[k] += float(np.sum((delta - offset[0, 0])[inside] ** 2))
    return out


def occlusion_cost_surface(xs, ys, z: float, target_pos, obstacles, grid: LosGrid | None = None) -> np.ndarray:
    """Occlusion residual on the planar grid ``z = const``; shape (len(ys), len(xs))."""
    grid = grid or LosGrid.uniform(100)
    X, Y = np.meshgrid(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
    pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, float(z))], axis=1)
    return occlusion_residual_at(pts, target_pos, obstacles, grid).reshape(X.shape)


def baseline_occlusion_cost(robot_pos, target_pos, obstacle: Ellipsoid):
    """Ray-casting occlusion cost of the comparison model, evaluated per obstacle.

    Vectors are expressed in the obstacle's radius-normalized frame so the
    unit-sphere condition of the model applies to ellipsoids.  Accepts a single
    position or a batch (k, 3).
    """
    p = np.asarray(robot_pos, dtype=float)
    r_ch = (np.asarray(target_pos, dtype=float) - p) / obstacle.radii
    r_cti = (obstacle.center - p) / obstacle.radii
    p_proj = np.sum(r_ch * r_cti, axis=-1)
    nch = np.sum(r_ch * r_ch, axis=-1)
    d_v = np.divide(p_proj, nch, out=np.zeros_like(p_proj), where=nch > 0)
    active = (d_v > 0) & (p_proj > np.sum(r_cti * r_cti, axis=-1) - 1.0)
    cost = np.where(active, np.abs(d_v), 0.0)
    return float(cost) if cost.ndim == 0 else cost


def baseline_cost_surface(xs, ys, z: float, target_pos, obstacles) -> np.ndarray:
    X, Y = np.meshgrid(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
    pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, float(z))], axis=1)
    total = np.zeros(len(pts))
    for o in obstacles:
        total += baseline_occlusion_cost(pts, target_pos, o)
    return total.reshape(X.shape)


def write_surface_csv(path, xs, ys, values, config: dict | None = None):
    """Long-format grid ``x, y, value``; the resolved config is embedded as a comment line."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config is not None:
            fh.write("# config " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["x", "y", "value"])
        for iy, y in enumerate(ys):
            for ix, x in enumerate(xs):
                w.writerow([f"{x:.9g}", f"{y:.9g}", f"{values[iy, ix]:.9g}"])


# -- run summaries ------------------------------------------------------------


@dataclass
class CycleRecord:
    t: float
    robot: np.ndarray
    velocity: np.ndarray  # executed
    yaw: float
    target: np.ndarray
    command: np.ndarray
    tracking_residual: float
    occlusion_residual: float
    visibility: float
    distance: float
    range_violation: float
    solve_time: float
    degraded: bool = False


def range_violation(distance: float, s_min: float | None, s_max: float | None) -> float:
    if s_min is None or s_max is None:
        return 0.0
    return max(0.0, s_min - distance, distance - s_max)


def violation_histogram(violations, bin_width: float = VIOLATION_BIN):
    """Counts per bin ``[k w, (k+1) w)``; returns (edges, counts)."""
    v = np.asarray(violations, dtype=float)
    if v.size == 0:
        return np.array([0.0, bin_width]), np.zeros(1, dtype=int)
    idx = np.floor(np.round(v / bin_width, 9)).astype(int)
    counts = np.bincount(idx, minlength=1)
    edges = bin_width * np.arange(len(counts) + 1)
    return edges, counts


@dataclass
class MetricsReport:
    cycles: int
    visibility_min: float
    visibility_series: list
    linear_acc_median: float
    linear_acc_max: float
    angular_acc_median: float
    angular_acc_max: float
    solve_time_median: float
    solve_time_max: float
    range_violation_edges: list
    range_violation_counts: list
    fraction_violation_below_bin: float
    degraded_cycles: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None, include_timing: bool = True) -> str:
        d = self.to_dict()
        if not include_timing:
            d.pop("solve_time_median")
            d.pop("solve_time_max")
        text = json.dumps(d, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def summarize(trace, config: dict | None = None) -> MetricsReport:
    """Aggregate per-cycle records into the evaluation metrics."""
    if not trace:
        raise ValueError("trace is empty")
    t = np.array([r.t for r in trace])
    vel = np.array([r.velocity for r in trace])
    yaw = np.unwrap(np.array([r.yaw for r in trace]))
    vis = [float(r.visibility) for r in trace]
    if len(t) > 1:
        dt = np.diff(t)
        lin = np.linalg.norm(np.diff(vel, axis=0), axis=1) / dt
    else:
        lin = np.zeros(1)
    if len(t) > 2:
        h = np.diff(t).mean()
        ang = np.abs(yaw[2:] - 2 * yaw[1:-1] + yaw[:-2]) / h**2
    else:
        ang = np.zeros(1)
    solve = np.array([r.solve_time for r in trace])
    viol = np.array([r.range_violation for r in trace])
    edges, counts = violation_histogram(viol)
    return MetricsReport(
        cycles=len(trace),
        visibility_min=float(min(vis)),
        visibility_series=vis,
        linear_acc_median=float(np.median(lin)),
        linear_acc_max=float(np.max(lin)),
        angular_acc_median=float(np.median(ang)),
        angular_acc_max=float(np.max(ang)),
        solve_time_median=float(np.median(solve)),
        solve_time_max=float(np.max(solve)),
        range_violation_edges=[float(e) for e in edges],
        range_violation_counts=[int(c) for c in counts],
        fraction_violation_below_bin=float(np.mean(viol < VIOLATION_BIN)),
        degraded_cycles=int(sum(r.degraded for r in trace)),
        config=dict(config or {}),
    )
