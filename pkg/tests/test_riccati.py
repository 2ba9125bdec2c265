"""Riccati solves: closed forms, residuals, structure checks, failures."""

import numpy as np
import pytest

import bslq
from bslq.errors import PositivityError, SingularityError
from bslq.grid import MatrixPath
from bslq.riccati import _derive_sigma_paths


def reduced(name, steps=200, **kw):
    return bslq.reduce_problem(bslq.builtin_scenario(name, steps=steps, **kw))


# -- shift equation ---------------------------------------------------------


def test_h_zero_when_g_and_q_vanish():
    h = bslq.solve_h(bslq.builtin_scenario("S1"))
    assert not np.any(h.H)          # exactly zero at every node
    assert h.is_zero()


def test_h_closed_form_sh():
    spec = bslq.builtin_scenario("SH")
    h = bslq.solve_h(spec)
    t = spec.grid.nodes
    assert np.max(np.abs(h.H[:, 0, 0] + t)) < 1e-10
    assert h.residual(spec) < 1e-10


def test_h_with_nonzero_g():
    spec = bslq.builtin_scenario("SH")
    spec = spec.replace(G=np.array([[2.0]]))
    h = bslq.solve_h(spec)
    assert h.H[0, 0, 0] == -2.0     # anchor exact
    t = spec.grid.nodes
    assert np.max(np.abs(h.H[:, 0, 0] - (-2.0 - t))) < 1e-10


# -- backward Riccati equation ----------------------------------------------


@pytest.mark.parametrize("name", ["S1", "S4", "S5"])
def test_sigma_closed_form_linear(name):
    red = reduced(name)
    sol = bslq.solve_sigma(red)
    t = red.base.grid.nodes
    assert np.max(np.abs(sol.Sigma[:, 0, 0] - (1.0 - t))) < 1e-8
    assert sol.Sigma[-1, 0, 0] == 0.0


def test_r_of_sigma_closed_forms():
    t = bslq.builtin_scenario("S4").grid.nodes
    s4 = bslq.solve_sigma(reduced("S4"))
    np.testing.assert_allclose(s4.RofSigma[:, 0, 0], 2.0 - t, atol=1e-8)
    s5 = bslq.solve_sigma(reduced("S5"))
    np.testing.assert_allclose(s5.RofSigma[:, 0, 0], (1.0 + t) / 2.0, atol=1e-8)
    assert s5.conditioning > 1e-12  # invertible throughout


@pytest.mark.parametrize("name", ["S1", "S2", "S4", "S5", "SX", "SH"])
def test_sigma_residual_and_structure(name):
    red = reduced(name)
    sol = bslq.solve_sigma(red)
    assert sol.equation_residual(red.base) < 1e-6
    assert sol.psd_margin() >= -1e-10
    assert sol.symmetry_error() <= 1e-10
    assert sol.inverse_identity_error() <= 1e-10


def test_sigma_residual_order(spec_2d):
    # The finite-difference residual estimator drops by at least 4x per
    # grid doubling (it is higher order on smooth problems).
    res = {}
    for steps in (100, 200):
        red = bslq.reduce_problem(bslq.builtin_scenario("SH", steps=steps))
        res[steps] = bslq.solve_sigma(red).equation_residual(red.base)
    assert res[100] / res[200] >= 4.0


def test_sigma_grid_refinement_order():
    # Solve error itself decays at order >= 2 under grid refinement
    # (measured with one substep so truncation dominates rounding).
    sols = {}
    for steps in (8, 16, 32):
        red = bslq.reduce_problem(bslq.builtin_scenario("SH", steps=steps),
                                  substeps=1)
        sols[steps] = bslq.solve_sigma(red, substeps=1).Sigma[:, 0, 0]
    d1 = np.max(np.abs(sols[8] - sols[16][::2]))
    d2 = np.max(np.abs(sols[16] - sols[32][::2]))
    assert d1 / d2 >= 4.0


def test_sigma_requires_canonical_form():
    with pytest.raises(ValueError, match="canonical"):
        bslq.solve_sigma(bslq.builtin_scenario("SH"))


def test_r_of_sigma_singularity_detected():
    # R11 = -1 makes R(Sigma) = 1 - Sigma(t) hit zero at t = 0.
    spec = bslq.builtin_scenario("S4")
    spec = spec.replace(R11=MatrixPath.constant([[-1.0]], spec.grid))
    red = bslq.reduce_problem(spec)
    with pytest.raises(SingularityError, match="t="):
        bslq.solve_sigma(red)


def test_sigma_psd_violation_detected():
    spec = reduced("S1").base
    fake = np.zeros((spec.grid.steps + 1, 1, 1))
    fake[0, 0, 0] = -1e-6
    with pytest.raises(PositivityError, match="node"):
        _derive_sigma_paths(spec, fake)


def test_sigma_2d_structure(spec_2d):
    red = bslq.reduce_problem(spec_2d)
    sol = bslq.solve_sigma(red)
    assert sol.equation_residual(red.base) < 1e-6
    assert sol.psd_margin() >= -1e-10
    assert sol.inverse_identity_error() <= 1e-10


# -- forward Riccati equation ------------------------------------------------


def test_forward_riccati_closed_form():
    sf = bslq.builtin_scenario("SF")
    sol = bslq.solve_forward_riccati(sf)
    t = sf.grid.nodes
    assert np.max(np.abs(sol.P[:, 0, 0] - 1.0 / (2.0 - t))) < 1e-8
    np.testing.assert_array_equal(sol.P[-1], sf.cG)   # anchor exact
    assert sol.P[0, 0, 0] == pytest.approx(0.5, abs=1e-8)


def test_forward_riccati_zero_case():
    sf = bslq.builtin_scenario("SF")
    sf = sf.replace(cG=np.zeros((1, 1)))
    sol = bslq.solve_forward_riccati(sf)
    assert not np.any(sol.P)


def test_forward_weight_positivity_path():
    sf = bslq.builtin_scenario("SF")
    sf = sf.replace(cD=MatrixPath.constant([[1.0]], sf.grid))
    sol = bslq.solve_forward_riccati(sf)
    # weight = R + D^T P D = 1 + P > 1 along the whole path
    assert np.all(sol.min_eig_weight > 1.0)


def test_forward_weight_positivity_failure():
    sf = bslq.builtin_scenario("SF")
    sf = sf.replace(cR=MatrixPath.constant([[-1.0]], sf.grid))
    with pytest.raises(PositivityError):
        bslq.solve_forward_riccati(sf)


def test_uniform_convexity_conditions():
    sf = bslq.builtin_scenario("SF")
    # SF itself has Q = 0, so the Schur complement is only semidefinite.
    assert not bslq.uniform_convexity_conditions(sf)
    strict = sf.replace(cQ=MatrixPath.constant([[1.0]], sf.grid))
    assert bslq.uniform_convexity_conditions(strict)
    sol = bslq.solve_forward_riccati(strict)
    assert sol.psd_margin() >= -1e-10
