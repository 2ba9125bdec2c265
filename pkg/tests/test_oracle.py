"""Binomial-tree brute force: exactness, convergence, convexity certification."""

import numpy as np
import pytest

import bslq
from bslq.grid import MatrixPath
from bslq.oracle import BinomialTree


def test_tree_moments_exact():
    tree = BinomialTree(6, 1.0)
    mean, second = tree.increment_moments()
    assert mean == 0.0
    assert second == tree.dt
    total, terminal_second = tree.terminal_moments()
    assert total == 1.0
    assert terminal_second == tree.T


def test_single_step_hand_solution():
    # One control at the root: cost 2(c - u) + u^2, minimised at u = 1
    # with value 2c - 1.
    for c in (1.0, 2.0):
        spec = bslq.builtin_scenario("S2", c=c)
        sol = bslq.solve_discrete(spec, 1)
        assert sol.control[0] == pytest.approx(1.0, abs=1e-12)
        assert sol.value == pytest.approx(2.0 * c - 1.0, abs=1e-12)


def test_zero_problem_any_depth():
    spec = bslq.builtin_scenario("S1")
    for N in (1, 4, 7):
        sol = bslq.solve_discrete(spec, N)
        assert sol.value == 0.0
        assert not np.any(sol.control)


def test_s2_exact_at_every_depth():
    # Drift-only dynamics with a constant optimal control: the tree value
    # equals the continuous one at every resolution.
    spec = bslq.builtin_scenario("S2")
    for N in (2, 5, 9):
        sol = bslq.solve_discrete(spec, N)
        assert sol.value == pytest.approx(1.0, abs=1e-12)


def test_s4_convergence_measured():
    # Frozen measured gaps of the tree value against ln 2 (first order in
    # dt): 0.0434 at N=6 and 0.0256 at N=10.
    spec = bslq.builtin_scenario("S4")
    target = np.log(2.0)
    gap6 = abs(bslq.solve_discrete(spec, 6).value - target)
    gap10 = abs(bslq.solve_discrete(spec, 10).value - target)
    assert gap6 == pytest.approx(0.04340, abs=5e-4)
    assert gap6 <= 0.05
    assert gap10 == pytest.approx(0.02562, abs=5e-4)
    assert gap10 < gap6


@pytest.mark.parametrize("name", ["S2", "S4", "S5", "SX", "SH"])
def test_compare_converges_to_formula(name):
    spec = bslq.builtin_scenario(name)
    formula = bslq.solve_value(spec)[0]
    comp = bslq.compare(formula, spec)
    assert comp.monotone
    assert comp.extrapolated_gap <= 0.01


@pytest.mark.parametrize("name", ["S1", "S2", "S4", "S5", "SX", "SH"])
def test_hessian_psd_on_benchmarks(name):
    sol = bslq.solve_discrete(bslq.builtin_scenario(name), 6)
    assert sol.convex
    assert sol.hessian_min_eig >= -1e-9


def test_nonconvex_certificate():
    spec = bslq.builtin_scenario("S1")
    spec = spec.replace(R22=MatrixPath.constant([[-1.0]], spec.grid))
    sol = bslq.solve_discrete(spec, 5)
    assert not sol.convex
    assert sol.hessian_min_eig < 0.0
    assert sol.value is None and sol.control is None


def test_oracle_self_consistency():
    # Replaying the reported control through an independent numeric
    # recursion reproduces the quadratic-form value.
    for name in ("S4", "SX", "SH"):
        spec = bslq.builtin_scenario(name)
        sol = bslq.solve_discrete(spec, 7)
        replay = bslq.replay_cost(spec, 7, sol.control)
        assert abs(replay - sol.value) <= 1e-12 * max(1.0, abs(sol.value))


def test_discrete_stationarity():
    for name in ("S2", "S4", "SX"):
        sol = bslq.solve_discrete(bslq.builtin_scenario(name), 8)
        assert sol.gradient_norm <= 1e-10


def test_oracle_2d(spec_2d):
    # Full-featured 2x2 problem: convex tree, gradient at zero, and the
    # Richardson limit of the tree values confirms the closed-form value.
    formula = bslq.solve_value(spec_2d)[0]
    comp = bslq.compare(formula, spec_2d, steps=(4, 6, 8))
    assert comp.monotone
    assert comp.extrapolated_gap <= 0.01
    sol = bslq.solve_discrete(spec_2d, 6)
    assert sol.convex and sol.gradient_norm <= 1e-10


def test_preconditions_enforced():
    spec = bslq.builtin_scenario("S1")
    with pytest.raises(ValueError, match="capped"):
        bslq.solve_discrete(spec, 13)
    stiff = spec.replace(A=MatrixPath.constant([[10.0]], spec.grid))
    with pytest.raises(ValueError, match="coarse"):
        bslq.solve_discrete(stiff, 8)


def test_node_metadata():
    spec = bslq.builtin_scenario("S2")
    sol = bslq.solve_discrete(spec, 3)
    assert len(sol.nodes) == 2 ** 3 - 1
    root = min(sol.nodes, key=lambda nd: nd.index)
    assert root.level == 0 and root.w == 0.0
    # control indices are a permutation of the slot range
    assert sorted(nd.index for nd in sol.nodes) == list(range(7))
