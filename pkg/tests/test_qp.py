import numpy as np
import pytest
from _oracles import enumerate_box_qp, random_box_qp

from occtrack.qp import (EqualityQP, InfeasibleQPError, QpProblem, SingularKKTError, solve_box_qp,
                         solve_eq_qp, solve_penalty_qp, stack_boxes)


def test_identity_with_pinned_coordinate():
    x = solve_eq_qp(np.eye(3), np.zeros(3), np.array([[1.0, 0, 0]]), np.array([1.0]))
    np.testing.assert_allclose(x, [1, 0, 0], atol=1e-9)


def test_unconstrained_matches_linear_solve(rng):
    L = rng.normal(size=(6, 6))
    H = L @ L.T + np.eye(6)
    f = rng.normal(size=6)
    np.testing.assert_allclose(solve_eq_qp(H, f, reg=0.0), -np.linalg.solve(H, f), rtol=1e-10)


def test_kkt_residual_random(rng):
    for _ in range(20):
        H, f, Aeq, beq, *_ = random_box_qp(rng)
        x = solve_eq_qp(H, f, Aeq, beq, reg=0.0)
        assert np.linalg.norm(Aeq @ x - beq) <= 1e-8
        # stationarity: H x + f lies in the row space of Aeq
        g = H @ x + f
        if len(Aeq):
            mu = np.linalg.lstsq(Aeq.T, -g, rcond=None)[0]
            g = g + Aeq.T @ mu
        assert np.linalg.norm(g) < 1e-8 * max(1, np.linalg.norm(f))


def test_singular_equalities_raise():
    with pytest.raises(SingularKKTError) as exc:
        EqualityQP(np.eye(3), np.array([[1.0, 0, 0], [2.0, 0, 0]]))
    assert exc.value.block == "equality constraints"


def test_singular_hessian_on_null_space():
    H = np.diag([1.0, 0.0, 0.0])
    with pytest.raises(SingularKKTError):
        EqualityQP(H, np.array([[0.0, 1.0, 0.0]]), reg=0.0)


def test_inactive_boxes_equal_eq_solution(rng):
    H, f, Aeq, beq, *_ = random_box_qp(rng, nx=8)
    x0 = solve_eq_qp(H, f, Aeq, beq)
    G = np.eye(8)
    res = solve_box_qp(QpProblem(H, f, Aeq, beq, [(G, x0 - 10, x0 + 10)]))
    np.testing.assert_allclose(res.x, x0, atol=1e-8)
    assert res.converged and res.active == []


def test_one_dimensional_active_bound():
    # min (x-3)^2 s.t. x <= 2
    res = solve_box_qp(QpProblem(np.array([[2.0]]), np.array([-6.0]), boxes=[(np.eye(1), -np.inf, 2.0)]),
                       factor=EqualityQP(np.array([[2.0]]), reg=0.0))
    assert res.x[0] == pytest.approx(2.0, abs=1e-12)


def test_matches_enumeration(rng):
    for _ in range(40):
        H, f, Aeq, beq, G, lo, hi = random_box_qp(rng)
        res = solve_box_qp(QpProblem(H, f, Aeq, beq, [(G, lo, hi)]), factor=EqualityQP(H, Aeq, reg=0.0))
        _, ref = enumerate_box_qp(H, f, Aeq, beq, G, lo, hi)
        val = 0.5 * res.x @ H @ res.x + f @ res.x
        assert abs(val - ref) <= 1e-6 * max(1, abs(ref))
        assert np.linalg.norm(Aeq @ res.x - beq) <= 1e-8
        gx = G @ res.x
        assert np.all(gx >= lo - 1e-6) and np.all(gx <= hi + 1e-6)


def test_factor_reused_for_new_rhs(rng):
    H, f, Aeq, beq, *_ = random_box_qp(rng, nx=7)
    fac = EqualityQP(H, Aeq)
    F = rng.normal(size=(7, 3))
    B = np.tile(beq[:, None], (1, 3))
    X = fac.solve_many(F, B)
    for k in range(3):
        np.testing.assert_allclose(X[:, k], fac.solve(F[:, k], beq), atol=1e-9)


def test_stack_boxes_validation():
    with pytest.raises(ValueError):
        stack_boxes([(np.eye(2), 1.0, 0.0)])
    C, h = stack_boxes([(np.eye(2), -np.inf, [1.0, 2.0])])
    assert C.shape == (2, 2)
    np.testing.assert_array_equal(h, [1.0, 2.0])
    assert stack_boxes([]) == (None, None)


def test_infeasible_inequalities():
    fac = EqualityQP(np.eye(1), reg=0.0)
    with pytest.raises(InfeasibleQPError):
        fac.solve_ineq(np.zeros(1), None, np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))


def test_penalty_qp_approaches_hard_solution(rng):
    for _ in range(10):
        H, f, Aeq, beq, G, lo, hi = random_box_qp(rng)
        C = np.vstack([G, -G])
        h = np.concatenate([hi, -lo])
        hard, _ = enumerate_box_qp(H, f, Aeq, beq, G, lo, hi)
        soft = solve_penalty_qp(H, f, Aeq, beq, C, h, weight=1e7, max_inner=100)
        assert soft.converged
        np.testing.assert_allclose(soft.x, hard, atol=1e-4)
        assert np.linalg.norm(Aeq @ soft.x - beq) <= 1e-8


def test_penalty_qp_monotone_under_line_search(rng):
    H, f, Aeq, beq, G, lo, hi = random_box_qp(rng, nx=10)
    C = np.vstack([G, -G])
    h = np.concatenate([hi, -lo])
    phi = lambda x, w: 0.5 * x @ H @ x + f @ x + 0.5 * w * np.sum(np.maximum(C @ x - h, 0) ** 2)
    x0 = solve_eq_qp(H, f, Aeq, beq)
    res = solve_penalty_qp(H, f, Aeq, beq, C, h, weight=1e4)
    assert phi(res.x, 1e4) <= phi(x0, 1e4) + 1e-9
