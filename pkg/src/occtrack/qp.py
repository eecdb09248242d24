"""Small dense convex QPs: equality-constrained KKT solves and inequality handling.

All problems have the form::

    minimize   0.5 x^T H x + f^T x
    subject to Aeq x = beq,   G x <= h

Equalities are eliminated through a null-space basis computed once per
``(H, Aeq)`` pair, so repeated solves with new ``f`` / ``beq`` only cost a few
triangular solves.  Inequalities are handled by a dual active-set method
(Goldfarb-Idnani) started from the equality-only minimizer; when no
inequality is violated that minimizer is returned directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

DEFAULT_REG = 1e-9


class SingularKKTError(np.linalg.LinAlgError):
    """The KKT system is singular; ``block`` names the deficient part."""

    def __init__(self, block: str, detail: str = ""):
        self.block = block
        super().__init__(f"singular KKT system in {block}" + (f": {detail}" if detail else ""))


class InfeasibleQPError(ValueError):
    pass


@dataclass
class QpResult:
    x: np.ndarray
    converged: bool = True
    iterations: int = 0
    active: list = field(default_factory=list)


class EqualityQP:
    """Pre-factorized ``min 0.5 x^T H x + f^T x  s.t.  Aeq x = beq``."""

    def __init__(self, H, Aeq=None, reg: float = DEFAULT_REG):
        H = np.asarray(H, dtype=float)
        nx = H.shape[0]
        self.nx = nx
        self.H = 0.5 * (H + H.T) + reg * np.eye(nx)
        if Aeq is None or np.size(Aeq) == 0:
            Aeq = np.zeros((0, nx))
        Aeq = np.atleast_2d(np.asarray(Aeq, dtype=float))
        self.Aeq = Aeq
        neq = Aeq.shape[0]
        if neq:
            Q, R = linalg.qr(Aeq.T)
            diag = np.abs(np.diag(R[:neq, :neq]))
            scale = max(1.0, np.max(np.abs(Aeq)))
            if neq > nx or np.any(diag < 1e-10 * scale):
                raise SingularKKTError("equality constraints", f"rank < {neq} rows")
            self._Q1 = Q[:, :neq]
            self._R1 = R[:neq, :neq]
            self.Z = Q[:, neq:]
        else:
            self._Q1 = np.zeros((nx, 0))
            self._R1 = np.zeros((0, 0))
            self.Z = np.eye(nx)
        self.G = self.Z.T @ self.H @ self.Z
        try:
            self._chol = linalg.cho_factor(self.G, lower=True)
        except linalg.LinAlgError as exc:
            raise SingularKKTError("hessian on equality null space", str(exc)) from None
        self._Ginv = None
        self._affine = None

    @property
    def Ginv(self) -> np.ndarray:
        if self._Ginv is None:
            self._Ginv = linalg.cho_solve(self._chol, np.eye(self.G.shape[0]))
        return self._Ginv

    @property
    def affine(self) -> tuple[np.ndarray, np.ndarray]:
        """``(M, N)`` with minimizer ``x = M f + N beq`` (no inequalities)."""
        if self._affine is None:
            ZG = self.Z @ self.Ginv
            M = -ZG @ self.Z.T
            if self._R1.size:
                E = linalg.solve_triangular(self._R1, np.eye(self._R1.shape[0]), trans="T")
                N = (np.eye(self.nx) + M @ self.H) @ (self._Q1 @ E)
            else:
                N = np.zeros((self.nx, 0))
            self._affine = (M, N)
        return self._affine

    def solve_many(self, F, Beq=None) -> np.ndarray:
        """Column-wise minimizers for several right-hand sides ``F`` (nx, k), ``Beq`` (neq, k)."""
        M, N = self.affine
        X = M @ F
        if Beq is not None and N.shape[1]:
            X += N @ Beq
        return X

    def particular(self, beq) -> np.ndarray:
        if self._R1.size == 0:
            return np.zeros(self.nx)
        w = linalg.solve_triangular(self._R1, np.asarray(beq, dtype=float), trans="T")
        return self._Q1 @ w

    def reduced(self, f, beq):
        """Return ``(x_p, g)`` so that ``x = x_p + Z y`` and the reduced gradient is ``G y + g``."""
        xp = self.particular(beq)
        g = self.Z.T @ (self.H @ xp + np.asarray(f, dtype=float))
        return xp, g

    def solve(self, f, beq=None) -> np.ndarray:
        xp, g = self.reduced(f, beq if beq is not None else np.zeros(self.Aeq.shape[0]))
        y = -linalg.cho_solve(self._chol, g)
        return xp + self.Z @ y

    def solve_ineq(self, f, beq, C, h, max_inner: int = 100, tol: float = 1e-9) -> QpResult:
        """Add ``C x <= h`` to the problem (dual active-set method)."""
        beq = beq if beq is not None else np.zeros(self.Aeq.shape[0])
        xp, g = self.reduced(f, beq)
        y = -linalg.cho_solve(self._chol, g)
        if C is None or len(C) == 0:
            return QpResult(xp + self.Z @ y)
        C = np.asarray(C, dtype=float)
        h = np.asarray(h, dtype=float)
        # constraints N y >= bb
        N = -(C @ self.Z)
        bb = -(h - C @ xp)
        y, converged, it, active = _goldfarb_idnani(self.Ginv, y, N, bb, max_inner, tol)
        return QpResult(xp + self.Z @ y, converged, it, active)


def _goldfarb_idnani(Ginv, y, N, bb, max_iter, tol):
    row_scale = np.maximum(np.linalg.norm(N, axis=1), 1e-300)
    active: list[int] = []
    u = np.zeros(0)
    it = 0
    while True:
        s = (N @ y - bb) / row_scale
        if active:
            s[active] = np.inf
        p = int(np.argmin(s))
        if s[p] >= -tol:
            return y, True, it, active
        if it >= max_iter:
            return y, False, it, active
        it += 1
        u_plus = np.append(u, 0.0)
        npv = N[p]
        while True:
            Gn = Ginv @ npv
            if active:
                NA = N[active].T
                M = NA.T @ Ginv @ NA
                r = np.linalg.lstsq(M, NA.T @ Gn, rcond=None)[0]
                z = Gn - Ginv @ NA @ r
            else:
                r = np.zeros(0)
                z = Gn
            t1, k = np.inf, -1
            for j, rj in enumerate(r):
                if rj > 1e-14:
                    ratio = u_plus[j] / rj
                    if ratio < t1:
                        t1, k = ratio, j
            zn = float(z @ npv)
            slack = float(npv @ y - bb[p])
            t2 = np.inf if abs(zn) <= 1e-14 * max(1.0, float(npv @ npv)) else -slack / zn
            t = min(t1, t2)
            if not np.isfinite(t):
                raise InfeasibleQPError("inequality constraints are infeasible")
            if np.isfinite(t2):
                y = y + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                u = u_plus
                break
            del active[k]
            u_plus = np.delete(u_plus, k)


def solve_eq_qp(H, f, Aeq=None, beq=None, reg: float = DEFAULT_REG) -> np.ndarray:
    """Minimizer of ``0.5 x^T H x + f^T x`` subject to ``Aeq x = beq``."""
    return EqualityQP(H, Aeq, reg).solve(f, beq)


def stack_boxes(boxes):
    """Turn ``(rows, lower, upper)`` triples into one-sided ``C x <= h`` form."""
    Cs, hs = [], []
    for rows, lo, hi in boxes:
        rows = np.atleast_2d(rows)
        lo = np.broadcast_to(np.asarray(lo, dtype=float), rows.shape[:1])
        hi = np.broadcast_to(np.asarray(hi, dtype=float), rows.shape[:1])
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        up = np.isfinite(hi)
        dn = np.isfinite(lo)
        Cs += [rows[up], -rows[dn]]
        hs += [hi[up], -lo[dn]]
    if not Cs:
        return None, None
    return np.vstack(Cs), np.concatenate(hs)


@dataclass
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    boxes: list = field(default_factory=list)

    def objective(self, x) -> float:
        return float(0.5 * x @ self.H @ x + self.f @ x)


def solve_box_qp(problem: QpProblem, max_inner: int = 100, tol: float = 1e-9,
                 factor: EqualityQP | None = None) -> QpResult:
    """Solve a QP with equalities and sampled box constraints.

    ``factor`` may carry a pre-factorized :class:`EqualityQP` for the same
    ``H`` and ``Aeq``.
    """
    factor = factor or EqualityQP(problem.H, problem.Aeq)
    C, h = stack_boxes(problem.boxes)
    return factor.solve_ineq(problem.f, problem.beq, C, h, max_inner=max_inner, tol=tol)


def _exact_penalty_step(H, f, C, h, weight, x, d) -> float:
    """Minimizer over ``t in [0, 1]`` of the penalized objective along ``x + t d``.

    The directional derivative is monotone and piecewise linear in ``t`` with
    breakpoints where a row changes sign, so the root is found by bisection
    over the breakpoints and then solved exactly on the final segment.
    """
    Hd = H @ d
    a = float(d @ Hd)
    b0 = float(d @ (H @ x) + f @ d)
    c = C @ x - h
    e = C @ d

    def dphi(t):
        return b0 + a * t + weight * float(np.maximum(c + t * e, 0.0) @ e)

    if dphi(1.0) <= 0.0:
        return 1.0
    if dphi(0.0) >= 0.0:
        return 0.0
    nz = e != 0
    bp = -c[nz] / e[nz]
    bp = np.unique(bp[(bp > 0.0) & (bp < 1.0)])
    pts = np.concatenate([[0.0], bp, [1.0]])
    lo, hi = 0, len(pts) - 1  # dphi(pts[lo]) < 0 <= dphi(pts[hi])
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if dphi(pts[mid]) < 0.0:
            lo = mid
        else:
            hi = mid
    t0, t1 = pts[lo], pts[hi]
    g0, g1 = dphi(t0), dphi(t1)
    return float(t0 + (t1 - t0) * (-g0) / (g1 - g0)) if g1 > g0 else float(t1)


def solve_penalty_qp(H, f, Aeq, beq, C, h, weight: float = 1e4, max_inner: int = 30,
                     reg: float = DEFAULT_REG) -> QpResult:
    """Soft inequalities: add ``weight/2 * max(0, C x - h)^2`` and re-detect violations.

    Always feasible.  Each pass solves the equality QP with the currently
    violated rows penalized and takes the exact minimizing step along the
    resulting direction.  It stops once a full step leaves the violated set
    unchanged (the iterate is then the exact penalized minimizer), the
    reduced gradient vanishes, or the step no longer moves ``x``.
    """
    H = 0.5 * (np.asarray(H, dtype=float) + np.asarray(H, dtype=float).T)
    f = np.asarray(f, dtype=float)
    C = np.asarray(C, dtype=float)
    h = np.asarray(h, dtype=float)
    base = EqualityQP(H, Aeq, reg)
    x = base.solve(f, beq)
    kink = 1e-12 * (1.0 + np.abs(h))  # rows the line search stopped on count as active
    active = C @ x - h > kink
    gscale = None
    for it in range(1, max_inner + 1):
        Cv = C[active]
        Hp = H + weight * (Cv.T @ Cv)
        fp = f - weight * (Cv.T @ h[active])
        step = EqualityQP(Hp, Aeq, reg).solve(fp, beq) - x
        t = _exact_penalty_step(H, f, C, h, weight, x, step)
        moved = t * float(np.linalg.norm(step))
        x = x + t * step
        r = C @ x - h
        viol = r > -kink
        grad = H @ x + f + weight * (C.T @ np.maximum(r, 0.0))
        gnorm = float(np.linalg.norm(base.Z.T @ grad))
        if gscale is None:
            gscale = max(gnorm, 1e-300)
        stationary = gnorm <= 1e-10 * gscale
        settled = t >= 1.0 - 1e-8 and np.array_equal(viol, active)
        stalled = moved <= 1e-14 * (1.0 + float(np.linalg.norm(x)))
        if stationary or settled or stalled:
            return QpResult(x, True, it, list(np.flatnonzero(r > 0)))
        active = viol
    return QpResult(x, False, max_inner, list(np.flatnonzero(C @ x - h > 0)))
