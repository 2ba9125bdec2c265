"""Fixed-step RK4 integrator: anchors, accuracy, order, failure modes."""

import numpy as np
import pytest

from bslq.errors import IntegrationError
from bslq.grid import TimeGrid
from bslq.ode import (OdeProblem, integrate, integrate_backward, integrate_forward,
                      interior_derivative)


def test_zero_rhs_constant():
    grid = TimeGrid(1.0, 10)
    path = integrate_forward(grid, lambda t, y: 0.0 * y, np.array([5.0]))
    np.testing.assert_array_equal(path, np.full((11, 1), 5.0))


def test_exponential_growth():
    # x' = x, x(0) = 1: x(1) = e within 1e-8 for >= 64 total steps.
    grid = TimeGrid(1.0, 16)
    path = integrate_forward(grid, lambda t, y: y, np.array([1.0]), substeps=4)
    assert abs(path[-1, 0] - np.e) < 1e-8


def test_backward_linear_exact():
    # y' = -1 with y(T) = 0 gives y(t) = 1 - t exactly: RK4 is exact on
    # polynomials of degree <= 3.
    grid = TimeGrid(1.0, 8)
    path = integrate_backward(grid, lambda t, y: np.array([-1.0]), np.array([0.0]))
    np.testing.assert_allclose(path[:, 0], 1.0 - grid.nodes, atol=1e-15)


def test_anchor_node_bitwise():
    grid = TimeGrid(1.0, 5)
    y0 = np.array([0.123456789])
    fwd = integrate_forward(grid, lambda t, y: y, y0)
    assert fwd[0, 0] == y0[0]
    back = integrate_backward(grid, lambda t, y: y, y0)
    assert back[-1, 0] == y0[0]


def test_order_four_convergence():
    # Halving the substep size cuts the terminal error of x' = x by a
    # factor of ~16; the contract is the window [14, 18].
    grid = TimeGrid(1.0, 16)
    errs = {}
    for sub in (4, 8):
        path = integrate_forward(grid, lambda t, y: y, np.array([1.0]), substeps=sub)
        errs[sub] = abs(path[-1, 0] - np.e)
    ratio = errs[4] / errs[8]
    assert 14.0 <= ratio <= 18.0


def test_time_reversal_consistency():
    grid = TimeGrid(1.0, 32)

    def rhs(t, y):
        return np.sin(3.0 * t) * y + 0.1

    fwd = integrate_forward(grid, rhs, np.array([1.0]))
    back = integrate_backward(grid, rhs, fwd[-1])
    assert abs(back[0, 0] - 1.0) < 1e-9


def test_matrix_state_shape():
    grid = TimeGrid(1.0, 4)
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    path = integrate_forward(grid, lambda t, Y: A @ Y, np.eye(2))
    assert path.shape == (5, 2, 2)
    # rotation matrices stay orthogonal
    last = path[-1]
    np.testing.assert_allclose(last @ last.T, np.eye(2), atol=1e-10)


def test_non_finite_failure_names_node():
    grid = TimeGrid(1.0, 10)

    def rhs(t, y):
        return y ** 3  # finite-time explosion well inside the horizon

    with pytest.raises(IntegrationError, match="node"):
        with np.errstate(over="ignore", invalid="ignore"):
            integrate_forward(grid, rhs, np.array([30.0]))


def test_ode_problem_validation():
    grid = TimeGrid(1.0, 4)
    with pytest.raises(ValueError):
        OdeProblem(grid, lambda t, y: y, direction="sideways")
    with pytest.raises(ValueError):
        OdeProblem(grid, lambda t, y: y, substeps=0)
    path = integrate(OdeProblem(grid, lambda t, y: 0 * y), np.array([1.0]))
    assert path.shape == (5, 1)


def test_interior_derivative_exact_on_cubics():
    grid = TimeGrid(1.0, 20)
    t = grid.nodes
    vals = (t ** 3 - 2 * t ** 2 + 0.5)[:, None]
    sl, d = interior_derivative(vals, grid.dt)
    expected = (3 * t ** 2 - 4 * t)[sl, None]
    np.testing.assert_allclose(d, expected, atol=1e-12)
