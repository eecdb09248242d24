from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from occtrack.basis import build_basis, eval_at, eval_trajectory


def test_shapes_and_partition_of_unity():
    b = build_basis(10, 100, 10.0)
    assert b.P.shape == b.Pdot.shape == b.Pddot.shape == (100, 11)
    np.testing.assert_allclose(b.P.sum(axis=1), 1.0, atol=1e-12)
    assert b.times[0] == 0.0 and b.times[-1] == 10.0
    assert np.all(np.diff(b.times) > 0)


def test_constant_coefficients_have_zero_derivatives():
    b = build_basis(10, 100, 10.0)
    c = np.ones(11)
    np.testing.assert_allclose(b.Pdot @ c, 0.0, atol=1e-12)
    np.testing.assert_allclose(b.Pddot @ c, 0.0, atol=1e-10)


def test_velocity_matches_central_difference(rng):
    b = build_basis(5, 50, 2.0)
    c = rng.normal(size=6)
    x = b.P @ c
    v = b.Pdot @ c
    err = np.abs((x[2:] - x[:-2]) / (2 * b.dt) - v[1:-1])
    # central-difference remainder is bounded by dt^2/6 * max|x'''|
    tau = np.linspace(0, 1, 2001)
    d3 = np.diff(c, 3)
    third = 5 * 4 * 3 / 2.0**3 * sum(d3[k] * comb(2, k) * tau**k * (1 - tau) ** (2 - k) for k in range(3))
    assert np.max(err) <= b.dt**2 / 6 * np.max(np.abs(third)) * (1 + 1e-9)
    assert np.max(err) / np.max(np.abs(v)) < 1e-2


def test_derivative_error_is_second_order(rng):
    c = rng.normal(size=8)

    def err(q):
        b = build_basis(7, q, 1.0)
        x = b.P @ c
        return np.max(np.abs((x[2:] - x[:-2]) / (2 * b.dt) - (b.Pdot @ c)[1:-1]))

    # doubling the sample count halves dt
    assert err(201) / err(401) >= 3.5


def test_acceleration_matches_central_difference(rng):
    b = build_basis(6, 400, 3.0)
    c = rng.normal(size=7)
    v = b.Pdot @ c
    fd = (v[2:] - v[:-2]) / (2 * b.dt)
    assert np.max(np.abs(fd - (b.Pddot @ c)[1:-1])) < 1e-3


def test_endpoint_interpolation():
    b = build_basis(10, 100, 10.0)
    np.testing.assert_allclose(b.P[0], np.eye(11)[0], atol=1e-15)
    np.testing.assert_allclose(b.P[-1], np.eye(11)[-1], atol=1e-15)


@pytest.mark.parametrize("args", [(10, 100, 0.0), (10, 10, 1.0), (2, 10, 1.0), (5, 50, -1.0)])
def test_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        build_basis(*args)


def test_eval_zero_coefficients():
    b = build_basis(10, 100, 10.0)
    for arr in eval_trajectory(b, np.zeros((3, 11))):
        assert arr.shape == (100, 3)
        assert np.all(arr == 0)


def test_linear_control_points_give_constant_velocity():
    b = build_basis(10, 100, 10.0)
    start, goal = np.array([0.0, 1.0, 2.0]), np.array([5.0, -1.0, 2.0])
    s = np.linspace(0, 1, 11)[:, None]
    C = ((1 - s) * start + s * goal).T
    pos, vel, acc = eval_trajectory(b, C)
    np.testing.assert_allclose(vel, np.tile((goal - start) / 10.0, (100, 1)), atol=1e-12)
    np.testing.assert_allclose(acc, 0.0, atol=1e-10)
    np.testing.assert_allclose(pos[-1], goal, atol=1e-12)


def test_eval_matches_power_basis_horner(rng):
    # oracle: expand each Bernstein polynomial in the power basis and evaluate with Horner's rule
    deg, T = 6, 4.0
    b = build_basis(deg, 30, T)
    C = rng.normal(size=(3, deg + 1))
    power = np.zeros((3, deg + 1))  # coefficients of tau^k
    for j in range(deg + 1):
        for k in range(j, deg + 1):
            power[:, k] += C[:, j] * comb(deg, j) * comb(deg - j, k - j) * (-1) ** (k - j)
    tau = b.times / T
    expected = np.zeros((30, 3))
    for k in range(deg, -1, -1):
        expected = expected * tau[:, None] + power[:, k]
    pos, _, _ = eval_trajectory(b, C)
    np.testing.assert_allclose(pos, expected, atol=1e-10)


def test_eval_dimension_mismatch():
    b = build_basis(10, 100, 10.0)
    with pytest.raises(ValueError):
        eval_trajectory(b, np.zeros((3, 7)))


def test_eval_at_matches_grid_samples(rng):
    b = build_basis(10, 100, 10.0)
    C = rng.normal(size=(3, 11))
    grid = eval_trajectory(b, C)
    at = eval_at(b, C, b.times)
    for g, a in zip(grid, at):
        np.testing.assert_allclose(a, g, atol=1e-9)


def test_basis_matrices_are_read_only():
    b = build_basis(10, 100, 10.0)
    with pytest.raises(ValueError):
        b.P[0, 0] = 2.0


@given(st.lists(st.floats(-10, 10), min_size=11, max_size=11), st.floats(-5, 5))
def test_affine_invariance(c, shift):
    # Bernstein rows sum to one, so shifting all control points shifts the curve
    b = build_basis(10, 100, 10.0)
    c = np.asarray(c)
    np.testing.assert_allclose(b.P @ (c + shift), b.P @ c + shift, atol=1e-9)
