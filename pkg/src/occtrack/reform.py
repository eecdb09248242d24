"""Stacked constraint assembly and closed-form updates of the polar/distance blocks.

Tracking constraints are written as ``P c = target + d_r * s_r`` and occlusion
constraints as ``(1 - u_j) P c = x_oi - u_j x_r + D_i d_o * s_o`` where ``s`` is
a unit direction given by spherical angles ``(alpha, beta)`` and ``D_i`` holds
the ellipsoid radii.  Occlusion rows are ordered obstacle-major, then u, then
time: row ``(i * m + j) * q + k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSet
from .world import LosGrid

DEGENERATE_DENOM = 1e-12


def unit_from_angles(alpha, beta) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    sb = np.sin(beta)
    return np.stack([np.cos(alpha) * sb, np.sin(alpha) * sb, np.cos(beta)], axis=-1)


def angles_from_vector(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spherical angles of ``v`` (..., 3); the zero vector maps to (0, 0)."""
    v = np.asarray(v, dtype=float)
    alpha = np.arctan2(v[..., 1], v[..., 0])
    beta = np.arctan2(np.hypot(v[..., 0], v[..., 1]), v[..., 2])
    return alpha, beta


@dataclass
class PolarBlock:
    """Auxiliary variables of the tracking and occlusion reformulation.

    Directions are stored as unit vectors; the angles are derived on access so
    the solver's inner loop never needs trigonometric calls.
    """

    d_r: np.ndarray
    dir_r: np.ndarray
    d_o: np.ndarray
    dir_o: np.ndarray

    @classmethod
    def from_angles(cls, alpha_r, beta_r, d_r, alpha_o=(), beta_o=(), d_o=()):
        return cls(
            d_r=np.asarray(d_r, dtype=float).reshape(-1),
            dir_r=unit_from_angles(alpha_r, beta_r).reshape(-1, 3),
            d_o=np.asarray(d_o, dtype=float).reshape(-1),
            dir_o=unit_from_angles(alpha_o, beta_o).reshape(-1, 3),
        )

    @property
    def alpha_r(self):
        return angles_from_vector(self.dir_r)[0]

    @property
    def beta_r(self):
        return angles_from_vector(self.dir_r)[1]

    @property
    def alpha_o(self):
        return angles_from_vector(self.dir_o)[0]

    @property
    def beta_o(self):
        return angles_from_vector(self.dir_o)[1]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.d_r, self.dir_r, self.d_o, self.dir_o))


@dataclass(frozen=True)
class StackedSystem:
    """Structure of the stacked equality system ``A xi_1 = b`` for one axis.

    ``A_tar`` is the position basis and ``A_occ`` repeats ``(1 - u_j) P`` for
    every obstacle and LOS sample.  ``A_occ`` is only materialized on request;
    the solver works with the closed form ``A^T A = gram_scale * P^T P``.
    """

    basis: BasisSet
    grid: LosGrid
    n: int
    tracking: bool = True
    s_min: float | None = None
    s_max: float | None = None
    tracking_weight: float = 1.0  # scales the tracking rows' share of the penalty

    @property
    def q(self) -> int:
        return self.basis.q

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def weights(self) -> np.ndarray:
        return 1.0 - self.grid.u_values

    @property
    def A_tar(self) -> np.ndarray:
        return np.sqrt(self.tracking_weight) * self.basis.P

    @property
    def A_occ(self) -> np.ndarray:
        A_u = (self.weights[:, None, None] * self.basis.P[None, :, :]).reshape(-1, self.basis.nvar)
        return np.tile(A_u, (self.n, 1))

    @property
    def A(self) -> np.ndarray:
        """Single-axis stacked matrix ``[A_tar; A_occ]`` (tracking rows only if enabled)."""
        parts = ([self.A_tar] if self.tracking else []) + [self.A_occ]
        return np.vstack(parts)

    @property
    def gram_scale(self) -> float:
        return (self.tracking_weight if self.tracking else 0.0) + self.n * float(np.sum(self.weights**2))

    @property
    def gram(self) -> np.ndarray:
        P = self.basis.P
        return self.gram_scale * (P.T @ P)


def assemble_A(basis: BasisSet, grid: LosGrid, n: int, tracking: bool = True,
               s_min=None, s_max=None, tracking_weight: float = 1.0) -> StackedSystem:
    if n < 0:
        raise ValueError(f"obstacle count must be >= 0, got {n}")
    if not tracking_weight > 0:
        raise ValueError(f"tracking_weight must be positive, got {tracking_weight}")
    return StackedSystem(basis, grid, int(n), tracking, s_min, s_max, float(tracking_weight))


def shifted_centers(predicted_target: np.ndarray, predicted_obstacles: np.ndarray,
                    grid: LosGrid) -> np.ndarray:
    """Per-row constant ``x_oi - u_j x_r`` of the occlusion system, shape (n, m, q, 3)."""
    u = grid.u_values[None, :, None, None]
    return predicted_obstacles[:, None, :, :] - u * predicted_target[None, None, :, :]


def occlusion_samples(positions: np.ndarray, grid: LosGrid, n: int) -> np.ndarray:
    """``A_occ c`` for all three axes, shape (n, m, q, 3)."""
    w = (1.0 - grid.u_values)[:, None, None]
    rows = w * positions[None, :, :]
    return np.broadcast_to(rows, (n,) + rows.shape)


def build_b_tar(predicted_target: np.ndarray, polar: PolarBlock) -> np.ndarray:
    """Tracking right-hand side, one column per axis (q x 3)."""
    return predicted_target + polar.d_r[:, None] * polar.dir_r


def build_b_occ(predicted_target, predicted_obstacles, radii, grid: LosGrid,
                polar: PolarBlock) -> np.ndarray:
    """Occlusion right-hand side, one column per axis (n*m*q x 3)."""
    base = shifted_centers(predicted_target, predicted_obstacles, grid)
    n, m, q = base.shape[:3]
    D = np.repeat(np.asarray(radii, dtype=float), m * q, axis=0)
    return base.reshape(-1, 3) + D * polar.d_o[:, None] * polar.dir_o


def update_polar_tracking(sampled_positions, predicted_target):
    """Closed-form minimizing angles of the tracking residual for each sample."""
    return angles_from_vector(np.asarray(sampled_positions) - np.asarray(predicted_target))


def update_polar_occlusion(los_samples, shifted, radii):
    """Closed-form angles of the occlusion residual, projected in radius-normalized coordinates.

    ``los_samples`` are rows of ``A_occ c`` and ``shifted`` the matching
    ``x_oi - u_j x_r``; ``radii`` broadcasts against both.
    """
    delta = (np.asarray(los_samples) - np.asarray(shifted)) / np.asarray(radii)
    return angles_from_vector(delta)


def update_d_tracking(sampled_positions, predicted_target, alpha_r, beta_r, s_min, s_max):
    if not 0 < s_min <= s_max:
        raise ValueError(f"need 0 < s_min <= s_max, got {s_min}, {s_max}")
    delta = np.asarray(sampled_positions) - np.asarray(predicted_target)
    d = np.sum(delta * unit_from_angles(alpha_r, beta_r), axis=-1)
    return np.clip(d, s_min, s_max)


def update_d_occlusion(los_samples, shifted, radii, alpha_o, beta_o, return_degenerate=False):
    """Exact minimizer over ``d >= 1`` of ``||delta - D d s||^2`` for fixed angles."""
    delta = np.asarray(los_samples) - np.asarray(shifted)
    Ds = np.asarray(radii) * unit_from_angles(alpha_o, beta_o)
    num = np.sum(Ds * delta, axis=-1)
    den = np.sum(Ds * Ds, axis=-1)
    degenerate = den < DEGENERATE_DENOM
    d = np.where(degenerate, 1.0, num / np.where(degenerate, 1.0, den))
    d = np.maximum(d, 1.0)
    if return_degenerate:
        return d, degenerate
    return d


def project_tracking(delta: np.ndarray, s_min: float, s_max: float):
    """Direction and clamped distance of robot-minus-target offsets (q x 3)."""
    r = np.sqrt(np.einsum("ij,ij->i", delta, delta))
    safe = r > 0
    direction = np.empty_like(delta)
    direction[safe] = delta[safe] / r[safe, None]
    direction[~safe] = (0.0, 0.0, 1.0)
    return np.clip(r, s_min, s_max), direction


def project_occlusion(delta: np.ndarray, radii: np.ndarray):
    """Joint polar/distance update for LOS offsets ``delta`` (n, m, q, 3).

    Returns ``(d_o, dir_o, offset)`` where ``offset = D d_o s`` is the
    reconstructed point relative to the shifted center.  Equivalent to
    :func:`update_polar_occlusion` followed by :func:`update_d_occlusion`.
    """
    R = radii[:, None, None, :]
    nrm = delta / R
    r = np.sqrt(np.einsum("...k,...k->...", nrm, nrm))
    safe = r > 0
    rs = np.where(safe, r, 1.0)
    direction = nrm / rs[..., None]
    if not np.all(safe):
        direction[~safe] = (0.0, 0.0, 1.0)
    d = np.maximum(r, 1.0)
    offset = R * (d[..., None] * direction)
    return d, direction, offset
