"""Target/obstacle state, constant-velocity prediction and line-of-sight sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _vec3(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid; radii already include the robot inflation."""

    center: np.ndarray
    radii: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        object.__setattr__(self, "radii", _vec3(self.radii, "radii"))
        object.__setattr__(self, "velocity", _vec3(self.velocity, "velocity"))
        if np.any(self.radii <= 0):
            raise ValueError(f"radii must be strictly positive, got {self.radii}")

    def quadratic_form(self, points: np.ndarray) -> np.ndarray:
        """Ellipsoid-normalized squared distance; < 1 inside, 1 on the surface."""
        d = (np.asarray(points, dtype=float) - self.center) / self.radii
        return np.sum(d * d, axis=-1)


@dataclass(frozen=True)
class TargetState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position, "position"))
        object.__setattr__(self, "velocity", _vec3(self.velocity, "velocity"))


@dataclass(frozen=True)
class LosGrid:
    """Sample parameters ``u`` along the segment robot -> target."""

    u_values: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_values, dtype=float).reshape(-1)
        if u.size == 0:
            raise ValueError("LOS grid must be nonempty")
        if np.any(np.diff(u) < 0) or u[0] < 0 or u[-1] > 1:
            raise ValueError("u_values must be sorted within [0, 1]")
        u.setflags(write=False)
        object.__setattr__(self, "u_values", u)

    @property
    def m(self) -> int:
        return self.u_values.size

    @classmethod
    def uniform(cls, m: int = 100) -> "LosGrid":
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        return cls(np.linspace(0.0, 1.0, m) if m > 1 else np.zeros(1))


@dataclass(frozen=True)
class WorldState:
    target: TargetState
    obstacles: tuple = ()
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def n(self) -> int:
        return len(self.obstacles)

    @property
    def radii(self) -> np.ndarray:
        if not self.obstacles:
            return np.zeros((0, 3))
        return np.stack([o.radii for o in self.obstacles])


def predict_target(world: WorldState, times) -> np.ndarray:
    """Constant-velocity target prediction at ``times`` (relative to ``world.timestamp``)."""
    t = np.asarray(times, dtype=float).reshape(-1, 1)
    return world.target.position + t * world.target.velocity


def predict_obstacles(world: WorldState, times) -> np.ndarray:
    """Predicted obstacle centers, shape (n, len(times), 3)."""
    t = np.asarray(times, dtype=float).reshape(1, -1, 1)
    if not world.obstacles:
        return np.zeros((0, t.shape[1], 3))
    c = np.stack([o.center for o in world.obstacles])[:, None, :]
    v = np.stack([o.velocity for o in world.obstacles])[:, None, :]
    return c + t * v


def los_points(robot_pos, target_pos, grid: LosGrid) -> np.ndarray:
    """Points ``(1 - u) * robot + u * target`` for each u in the grid, shape (m, 3)."""
    u = grid.u_values[:, None]
    return (1.0 - u) * np.asarray(robot_pos, dtype=float) + u * np.asarray(target_pos, dtype=float)
