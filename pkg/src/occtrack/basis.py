"""Bernstein polynomial basis matrices for trajectory parametrization.

A trajectory axis is ``x(t) = P @ c`` where ``c`` holds ``degree + 1`` control
points; ``Pdot`` and ``Pddot`` give the sampled first and second time
derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np


@dataclass(frozen=True)
class BasisSet:
    degree: int
    q: int
    horizon: float
    P: np.ndarray
    Pdot: np.ndarray
    Pddot: np.ndarray
    times: np.ndarray
    _pinv: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def nvar(self) -> int:
        return self.degree + 1

    @property
    def dt(self) -> float:
        return self.horizon / (self.q - 1)

    @property
    def pinv(self) -> np.ndarray:
        """Least-squares fit operator mapping q position samples to coefficients."""
        return self._pinv


def bernstein_matrix(degree: int, tau: np.ndarray) -> np.ndarray:
    """Rows of Bernstein polynomials of ``degree`` evaluated at ``tau`` in [0, 1]."""
    tau = np.asarray(tau, dtype=float)[:, None]
    if degree < 0:
        return np.zeros((tau.shape[0], 0))
    j = np.arange(degree + 1)[None, :]
    binom = np.array([comb(degree, k) for k in range(degree + 1)], dtype=float)
    return binom * tau**j * (1.0 - tau) ** (degree - j)


def bernstein_derivatives(degree: int, tau: np.ndarray, horizon: float):
    """Return (B, dB/dt, d2B/dt2) for a Bernstein basis on [0, horizon]."""
    n = degree
    B = bernstein_matrix(n, tau)
    k = len(np.atleast_1d(tau))
    # derivative of B_{j,n} is n (B_{j-1,n-1} - B_{j,n-1})
    B1 = bernstein_matrix(n - 1, tau)
    D1 = np.zeros((k, n + 1))
    D1[:, 1:] += B1
    D1[:, :-1] -= B1
    D1 *= n / horizon
    B2 = bernstein_matrix(n - 2, tau)
    D2 = np.zeros((k, n + 1))
    D2[:, 2:] += B2
    D2[:, 1:-1] -= 2.0 * B2
    D2[:, :-2] += B2
    D2 *= n * (n - 1) / horizon**2
    return B, D1, D2


@lru_cache(maxsize=32)
def build_basis(degree: int = 10, q: int = 100, horizon: float = 10.0) -> BasisSet:
    """Sample a Bernstein basis of ``degree`` on ``q`` uniform instants in [0, horizon].

    Results are cached; the returned matrices are read-only.
    """
    if degree < 3:
        raise ValueError(f"degree must be >= 3, got {degree}")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if q < degree + 1:
        raise ValueError(f"q must be >= degree + 1 = {degree + 1}, got {q}")
    times = np.linspace(0.0, horizon, q)
    P, Pdot, Pddot = bernstein_derivatives(degree, times / horizon, horizon)
    pinv = np.linalg.pinv(P)
    for arr in (times, P, Pdot, Pddot, pinv):
        arr.setflags(write=False)
    return BasisSet(degree, q, float(horizon), P, Pdot, Pddot, times, pinv)


def eval_trajectory(basis: BasisSet, coeffs_xyz):
    """Sample position, velocity and acceleration (each q x 3) from per-axis coefficients."""
    C = np.asarray(coeffs_xyz, dtype=float)
    if C.shape == (basis.nvar, 3):
        C = C.T
    if C.shape != (3, basis.nvar):
        raise ValueError(
            f"expected three coefficient vectors of length {basis.nvar}, got shape {C.shape}"
        )
    return basis.P @ C.T, basis.Pdot @ C.T, basis.Pddot @ C.T


def eval_at(basis: BasisSet, coeffs_xyz, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evaluate the trajectory at arbitrary instants ``t`` (clipped to the horizon)."""
    t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, basis.horizon)
    B, D1, D2 = bernstein_derivatives(basis.degree, t / basis.horizon, basis.horizon)
    C = np.asarray(coeffs_xyz, dtype=float).reshape(3, basis.nvar)
    return B @ C.T, D1 @ C.T, D2 @ C.T
