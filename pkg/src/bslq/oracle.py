"""Brute-force ground truth on a binomial noise tree.

The Brownian motion is replaced by the weak-order-one binomial walk with
increments +-sqrt(dt), each with probability 1/2, on a non-recombining tree
of N <= 12 levels.  On the tree the controlled backward equation becomes an
exact per-node recursion,

    Z_k = E[Y_{k+1} dW | node] / dt = (Y_up - Y_down) / (2 sqrt(dt)),
    (I + dt A_k) Y_k = (Y_up + Y_down)/2 - dt (B_k u_k + C_k Z_k + f_k),

so (Y, Z) at every node is an affine function of the stacked vector of
per-node controls.  The cost is then an explicit quadratic

    J(u) = u^T Lam u + 2 lam^T u + c,

assembled in one backward sweep; the optimum solves the normal equations
Lam u = -lam and the Hessian 2 Lam certifies (non)convexity of the
discretised problem.  Controls are indexed depth-first, so every subtree
owns a contiguous index block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import TimeGrid
from .problem import ProblemSpec

MAX_STEPS = 12
NONCONVEX_TOL = -1e-9
SINGULAR_COND = 1e12


@dataclass(frozen=True)
class BinomialTree:
    """Shape of the +-sqrt(dt) walk used by the oracle."""

    steps: int
    T: float

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def sqrt_dt(self) -> float:
        return math.sqrt(self.dt)

    def node_count(self) -> int:
        return 2 ** (self.steps + 1) - 1

    def control_count(self) -> int:
        return 2 ** self.steps - 1

    def increment_moments(self) -> tuple[float, float]:
        """Exact (mean, second moment) of one increment."""
        s = self.sqrt_dt
        return 0.5 * s + 0.5 * (-s), 0.5 * s * s + 0.5 * s * s

    def terminal_moments(self) -> tuple[float, float]:
        """(total probability, E[W(T)^2]) over the leaves, exactly."""
        N = self.steps
        total = sum(math.comb(N, k) for k in range(N + 1)) / 2 ** N
        # sum_k C(N,k) (N - 2k)^2 = N 2^N, so the normalised ratio is exact.
        num = sum(math.comb(N, k) * (N - 2 * k) ** 2 for k in range(N + 1))
        second = self.T * (num / (N * 2 ** N))
        return total, second


@dataclass(frozen=True)
class ControlNode:
    index: int      # first control slot of this node
    level: int
    t: float
    w: float        # tree value of W at the node


@dataclass(frozen=True, eq=False)
class DiscreteSolution:
    """Exact solution of the tree-discretised problem."""

    steps: int
    control: np.ndarray | None   # stacked optimal controls, DFS order
    value: float | None
    gradient_norm: float | None
    hessian: np.ndarray          # 2 Lam
    hessian_min_eig: float
    convex: bool
    singular: bool
    y0: np.ndarray | None
    nodes: list[ControlNode] = field(repr=False)


def _blocked_weight(spec: ProblemSpec, t: float) -> np.ndarray:
    n, m = spec.n, spec.m
    M = np.zeros((2 * n + m, 2 * n + m))
    M[:n, :n] = spec.Q(t)
    M[:n, n:2 * n] = spec.S1(t).T
    M[:n, 2 * n:] = spec.S2(t).T
    M[n:2 * n, :n] = spec.S1(t)
    M[n:2 * n, n:2 * n] = spec.R11(t)
    M[n:2 * n, 2 * n:] = spec.R12(t)
    M[2 * n:, :n] = spec.S2(t)
    M[2 * n:, n:2 * n] = spec.R21(t)
    M[2 * n:, 2 * n:] = spec.R22(t)
    return M


def _affine_at(proc, t: float, w: float) -> np.ndarray:
    return proc.a(t) + proc.b(t) * w


def solve_discrete(spec: ProblemSpec, steps: int) -> DiscreteSolution:
    """Assemble and solve the tree-discretised quadratic program exactly.

    Requires steps <= 12 and state/control dimensions <= 3 (the stacked
    control vector and its dense Hessian grow like m 2^N).  The step count
    must also keep I + dt A safely invertible:
    steps >= T (2 max|A| + max|C| + 1).
    """
    if steps > MAX_STEPS:
        raise ValueError(f"binomial oracle capped at {MAX_STEPS} steps, got {steps}")
    if spec.n > 3 or spec.m > 3:
        raise ValueError("binomial oracle supports dimensions n, m <= 3")
    min_steps = spec.grid.T * (2.0 * spec.A.max_abs() + spec.C.max_abs() + 1.0)
    if steps < min_steps:
        raise ValueError(
            f"steps={steps} too coarse for these coefficients "
            f"(need >= {min_steps:g})"
        )
    tree = BinomialTree(steps, spec.grid.T)
    n, m = spec.n, spec.m
    N = steps
    dt, s = tree.dt, tree.sqrt_dt
    D = m * tree.control_count()
    nodes_t = np.linspace(0.0, spec.grid.T, N + 1)

    Lam = np.zeros((D, D))
    lam = np.zeros(D)
    const = 0.0
    eye = np.eye(n)
    meta: list[ControlNode] = []

    weights = [_blocked_weight(spec, nodes_t[k]) for k in range(N)]
    A_k = [spec.A(nodes_t[k]) for k in range(N)]
    B_k = [spec.B(nodes_t[k]) for k in range(N)]
    C_k = [spec.C(nodes_t[k]) for k in range(N)]

    def width(level: int) -> int:
        return m * (2 ** (N - level) - 1)

    def visit(level: int, w: float, offset: int) -> np.ndarray:
        """Return Y at this node as an affine row block (n, width+1).

        Columns are the node's own control slots, the left subtree block,
        the right subtree block, and a trailing constant column.
        """
        nonlocal const
        t = nodes_t[level]
        if level == N:
            out = np.empty((n, 1))
            out[:, 0] = _affine_at(spec.xi, t, w)
            return out
        wk = width(level)
        wc = width(level + 1)
        meta.append(ControlNode(offset, level, t, w))
        y_up = visit(level + 1, w + s, offset + m)
        y_dn = visit(level + 1, w - s, offset + m + wc)

        Y_up = np.zeros((n, wk + 1))
        Y_up[:, m:m + wc] = y_up[:, :wc]
        Y_up[:, -1] = y_up[:, -1]
        Y_dn = np.zeros((n, wk + 1))
        Y_dn[:, m + wc:m + 2 * wc] = y_dn[:, :wc]
        Y_dn[:, -1] = y_dn[:, -1]

        Z = (Y_up - Y_dn) / (2.0 * s)
        U = np.zeros((m, wk + 1))
        U[:, :m] = np.eye(m)
        rhs = 0.5 * (Y_up + Y_dn) - dt * (B_k[level] @ U + C_k[level] @ Z)
        rhs[:, -1] -= dt * _affine_at(spec.f, t, w)
        Y = np.linalg.solve(eye + dt * A_k[level], rhs)

        prob = 0.5 ** level
        V = np.concatenate([Y, Z, U], axis=0)          # (2n + m, wk + 1)
        quad = V.T @ weights[level] @ V
        lin = np.concatenate([
            _affine_at(spec.q, t, w),
            _affine_at(spec.rho1, t, w),
            _affine_at(spec.rho2, t, w),
        ])
        Lvec = V.T @ lin
        scale = prob * dt
        block = slice(offset, offset + wk)
        Lam[block, block] += scale * quad[:wk, :wk]
        lam[block] += scale * quad[:wk, wk] + scale * Lvec[:wk]
        const_add = scale * quad[wk, wk] + 2.0 * scale * Lvec[wk]
        const += const_add
        return Y

    Y0 = visit(0, 0.0, 0)
    quad0 = Y0.T @ spec.G @ Y0
    L0 = Y0.T @ spec.g
    Lam[:, :] += quad0[:D, :D]
    lam[:] += quad0[:D, D] + L0[:D]
    const += quad0[D, D] + 2.0 * L0[D]

    Lam = 0.5 * (Lam + Lam.T)
    hessian = 2.0 * Lam
    min_eig = float(np.min(np.linalg.eigvalsh(hessian))) if D else 0.0
    if min_eig < NONCONVEX_TOL:
        return DiscreteSolution(steps, None, None, None, hessian, min_eig,
                                convex=False, singular=False, y0=None, nodes=meta)
    singular = bool(D and np.linalg.cond(Lam) > SINGULAR_COND)
    if singular:
        u_opt = np.linalg.lstsq(Lam, -lam, rcond=None)[0]
    else:
        u_opt = np.linalg.solve(Lam, -lam) if D else np.zeros(0)
    value = float(u_opt @ Lam @ u_opt + 2.0 * lam @ u_opt + const)
    grad = 2.0 * (Lam @ u_opt + lam)
    y0_val = Y0[:, :D] @ u_opt + Y0[:, D]
    return DiscreteSolution(steps, u_opt, value, float(np.linalg.norm(grad)),
                            hessian, min_eig, convex=True, singular=singular,
                            y0=y0_val, nodes=meta)


def replay_cost(spec: ProblemSpec, steps: int, control: np.ndarray) -> float:
    """Re-run the tree recursion numerically with fixed controls.

    Independent of the affine assembly: used to confirm that the quadratic
    form reproduces the recursion's cost at the reported optimum.
    """
    tree = BinomialTree(steps, spec.grid.T)
    n, m = spec.n, spec.m
    N = steps
    dt, s = tree.dt, tree.sqrt_dt
    nodes_t = np.linspace(0.0, spec.grid.T, N + 1)
    eye = np.eye(n)
    weights = [_blocked_weight(spec, nodes_t[k]) for k in range(N)]

    def width(level: int) -> int:
        return m * (2 ** (N - level) - 1)

    total = 0.0

    def visit(level: int, w: float, offset: int) -> np.ndarray:
        nonlocal total
        t = nodes_t[level]
        if level == N:
            return _affine_at(spec.xi, t, w)
        wc = width(level + 1)
        y_up = visit(level + 1, w + s, offset + m)
        y_dn = visit(level + 1, w - s, offset + m + wc)
        Z = (y_up - y_dn) / (2.0 * s)
        u = control[offset:offset + m]
        rhs = 0.5 * (y_up + y_dn) - dt * (spec.B(t) @ u + spec.C(t) @ Z
                                          + _affine_at(spec.f, t, w))
        Y = np.linalg.solve(eye + dt * spec.A(t), rhs)
        vec = np.concatenate([Y, Z, u])
        lin = np.concatenate([
            _affine_at(spec.q, t, w),
            _affine_at(spec.rho1, t, w),
            _affine_at(spec.rho2, t, w),
        ])
        total += (0.5 ** level) * dt * (vec @ weights[level] @ vec + 2.0 * lin @ vec)
        return Y

    Y0 = visit(0, 0.0, 0)
    total += float(Y0 @ spec.G @ Y0 + 2.0 * spec.g @ Y0)
    return float(total)


@dataclass(frozen=True)
class OracleComparison:
    """Tree values against the closed-form optimal value."""

    steps: tuple[int, ...]
    values: tuple[float, ...]
    gaps: tuple[float, ...]
    monotone: bool
    extrapolated: float
    extrapolated_gap: float


def compare(formula_value: float, spec: ProblemSpec,
            steps=(4, 6, 8, 10)) -> OracleComparison:
    """Gap table over tree resolutions with a Richardson limit in dt.

    The tree error is first order in dt, so the extrapolation
    (N2 v2 - N1 v1) / (N2 - N1) from the two finest resolutions removes the
    leading term.
    """
    values = []
    for N in steps:
        sol = solve_discrete(spec, N)
        if sol.value is None:
            raise ValueError(f"discrete problem at {N} steps is not convex")
        values.append(sol.value)
    gaps = [abs(v - formula_value) for v in values]
    monotone = all(gaps[i + 1] <= gaps[i] + 1e-12 for i in range(len(gaps) - 1))
    n1, n2 = steps[-2], steps[-1]
    v1, v2 = values[-2], values[-1]
    extrapolated = (n2 * v2 - n1 * v1) / (n2 - n1)
    return OracleComparison(
        steps=tuple(steps),
        values=tuple(values),
        gaps=tuple(gaps),
        monotone=monotone,
        extrapolated=float(extrapolated),
        extrapolated_gap=float(abs(extrapolated - formula_value)),
    )
