"""Fused per-sample occlusion projection and its per-prediction setup.

``occlusion_pass`` returns the residual of the occlusion block and the
per-time correction ``sum_ij w_j (offset - delta)`` that the inside samples add
to the stacked right-hand side.  A numba kernel is used when available; the
numpy version is the reference implementation.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def occlusion_pass_numpy(X, w_over_r, shifted_over_r, radii, w):
    """Reference implementation.  ``X`` (3, q); ``w_over_r`` (3, n, m, 1);
    ``shifted_over_r`` (3, n, m, q); ``radii`` (3, n); ``w`` (m,)."""
    q = X.shape[1]
    corr_t = np.zeros((3, q))
    nrm = w_over_r * X[:, None, None, :]
    nrm -= shifted_over_r
    r2 = np.einsum("anjq,anjq->njq", nrm, nrm)
    flat = np.flatnonzero(r2.reshape(-1) < 1.0)
    if flat.size == 0:
        return 0.0, corr_t
    i_idx, j_idx, k_idx = np.unravel_index(flat, r2.shape)
    r = np.sqrt(r2.reshape(-1)[flat])
    R = radii[:, i_idx]
    delta = nrm[:, i_idx, j_idx, k_idx] * R
    zero = r == 0
    corr = delta * np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, r) - 1.0)
    if zero.any():
        # degenerate direction: +z
        corr[2, zero] = R[2, zero]
    wc = corr * w[j_idx]
    for a in range(3):
        corr_t[a] = np.bincount(k_idx, weights=wc[a], minlength=q)
    return float(np.sum(corr * corr)), corr_t


def _occlusion_pass_loops(X, w_over_r, shifted_over_r, radii, w):
    n = shifted_over_r.shape[1]
    m = shifted_over_r.shape[2]
    q = X.shape[1]
    corr_t = np.zeros((3, q))
    res = 0.0
    for i in range(n):
        for j in range(m):
            a0 = w_over_r[0, i, j, 0]
            a1 = w_over_r[1, i, j, 0]
            a2 = w_over_r[2, i, j, 0]
            for k in range(q):
                d0 = a0 * X[0, k] - shifted_over_r[0, i, j, k]
                d1 = a1 * X[1, k] - shifted_over_r[1, i, j, k]
                d2 = a2 * X[2, k] - shifted_over_r[2, i, j, k]
                r2 = d0 * d0 + d1 * d1 + d2 * d2
                if r2 < 1.0:
                    if r2 == 0.0:
                        c0 = 0.0
                        c1 = 0.0
                        c2 = radii[2, i]
                    else:
                        s = 1.0 / np.sqrt(r2) - 1.0
                        c0 = d0 * radii[0, i] * s
                        c1 = d1 * radii[1, i] * s
                        c2 = d2 * radii[2, i] * s
                    res += c0 * c0 + c1 * c1 + c2 * c2
                    corr_t[0, k] += w[j] * c0
                    corr_t[1, k] += w[j] * c1
                    corr_t[2, k] += w[j] * c2
    return res, corr_t


def normalized_shifts_numpy(obstacles, target, radii, u):
    """``(x_oi - u_j x_r) / r_i`` in axis-first layout (3, n, m, q).  ``obstacles`` (n, q, 3),
    ``target`` (q, 3), ``radii`` (n, 3), ``u`` (m,)."""
    obs = np.transpose(obstacles, (2, 0, 1))[:, :, None, :]
    tgt = target.T[:, None, None, :]
    return (obs - u[None, None, :, None] * tgt) / radii.T[:, :, None, None]


def _normalized_shifts_loops(obstacles, target, radii, u):
    n, q = obstacles.shape[0], obstacles.shape[1]
    m = u.shape[0]
    out = np.empty((3, n, m, q))
    for a in range(3):
        for i in range(n):
            inv = 1.0 / radii[i, a]
            for j in range(m):
                uj = u[j]
                for k in range(q):
                    out[a, i, j, k] = (obstacles[i, k, a] - uj * target[k, a]) * inv
    return out


if njit is not None:
    occlusion_pass = njit(cache=True, fastmath=False)(_occlusion_pass_loops)
    normalized_shifts = njit(cache=True, fastmath=False)(_normalized_shifts_loops)
else:  # pragma: no cover
    occlusion_pass = occlusion_pass_numpy
    normalized_shifts = normalized_shifts_numpy


def warmup():
    """Trigger compilation (or cache load) so later calls measure steady-state time."""
    occlusion_pass(np.zeros((3, 2)), np.ones((3, 1, 1, 1)), np.zeros((3, 1, 1, 2)), np.ones((3, 1)), np.ones(1))
    normalized_shifts(np.zeros((1, 2, 3)), np.zeros((2, 3)), np.ones((1, 3)), np.zeros(1))
