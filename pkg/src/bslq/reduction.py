"""Two-stage transformation to the canonical cross-term-free problem.

Stage 1 (cross-term elimination).  With R22 positive definite, substituting
the control v = u + R22^{-1} R21 Z turns the problem into an equivalent one
without the (Z, u) cross weights:

    scriptC   = C  - B  R22^{-1} R21        (new Z coefficient in the dynamics)
    scriptS1  = S1 - R12 R22^{-1} S2
    scriptR11 = R11 - R12 R22^{-1} R21
    rho1      -> rho1 - R12 R22^{-1} rho2   (linear weight paired with Z)

Stage 2 (quadratic-weight shift).  With H solving the linear shift equation
(see :mod:`bslq.riccati`), integration by parts moves the initial weight G
and the running weight Q into a constant:

    S1H = scriptS1 + scriptC^T H,   S2H = S2 + B^T H,
    R11H = scriptR11 + H,           qH  = q + H f,

and the costs are related by

    J_original(xi; u) = J_reduced(xi; v) - E<H(T) xi, xi>.

The reduced problem has G = 0, Q = 0 and no cross weights, which is exactly
the form the Riccati synthesis consumes.  When the source problem is already
in that form the transformation is the identity, bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ReductionError, SpecValidationError
from .grid import AffineProcess, MatrixPath
from .ode import DEFAULT_SUBSTEPS
from .problem import ProblemSpec, validate
from .riccati import HSolution, solve_h

R22_MIN_EIG = 1e-10


@dataclass(frozen=True, eq=False)
class ReducedProblem:
    """Canonical-form problem plus everything needed to map back."""

    base: ProblemSpec
    source: ProblemSpec
    h: HSolution
    script_c: np.ndarray    # (N+1, n, n)
    script_s1: np.ndarray   # (N+1, n, n)
    script_r11: np.ndarray  # (N+1, n, n)
    s1h: np.ndarray         # (N+1, n, n)   = base.S1 samples
    s2h: np.ndarray         # (N+1, m, n)   = base.S2 samples
    r11h: np.ndarray        # (N+1, n, n)   = base.R11 samples
    qh: AffineProcess       # = base.q
    constant_shift: float   # E<H(T) xi, xi>
    cross_gain: np.ndarray  # (N+1, m, n)   R22^{-1} R21 of the source

    def shift_derivative(self, t: float, H: np.ndarray) -> np.ndarray:
        """Right-hand side of the shift equation at time t."""
        A = self.source.A(t)
        return -(H @ A + A.T @ H + self.source.Q(t))

    def stage_coefficients(self, t: float, H: np.ndarray):
        """Canonical-form coefficients at time t for a given shift value H.

        Evaluating these from the source paths (rather than interpolating
        the sampled reduced paths) keeps them smooth between nodes, which
        the coupled Riccati/BSDE integrators rely on; at the nodes they
        reproduce the sampled reduced paths exactly.
        """
        src = self.source
        A, B, C = src.A(t), src.B(t), src.C(t)
        S1, S2 = src.S1(t), src.S2(t)
        R11, R12, R21, R22 = src.R11(t), src.R12(t), src.R21(t), src.R22(t)
        cross = np.linalg.solve(R22, R21)
        script_c = C - B @ cross
        s1h = S1 - R12 @ np.linalg.solve(R22, S2) + script_c.T @ H
        s2h = S2 + B.T @ H
        r11h = R11 - R12 @ cross + H
        return A, B, script_c, s1h, s2h, r11h, R22

    def stage_affine(self, t: float, H: np.ndarray):
        """Affine parts (qh, rho1, rho2, f) at time t for a shift value H."""
        src = self.source
        qh = (src.q.a(t) + H @ src.f.a(t), src.q.b(t) + H @ src.f.b(t))
        r12_r22inv = np.linalg.solve(src.R22(t), src.R21(t)).T
        rho1 = (src.rho1.a(t) - r12_r22inv @ src.rho2.a(t),
                src.rho1.b(t) - r12_r22inv @ src.rho2.b(t))
        rho2 = (src.rho2.a(t), src.rho2.b(t))
        f = (src.f.a(t), src.f.b(t))
        return qh, rho1, rho2, f


def reduce_problem(spec: ProblemSpec, substeps: int = DEFAULT_SUBSTEPS) -> ReducedProblem:
    """Produce the equivalent canonical-form problem.

    Requires R22(t) positive definite at every node (minimum eigenvalue at
    least 1e-10); uniform convexity of the homogeneous cost implies this,
    and nothing downstream is meaningful without it.
    """
    report = validate(spec)
    if not report.ok:
        raise SpecValidationError(report)
    grid, n, m = spec.grid, spec.n, spec.m
    nodes = grid.nodes

    R22 = spec.R22.node_values()
    eig = np.min(np.linalg.eigvalsh(0.5 * (R22 + np.swapaxes(R22, -1, -2))), axis=-1)
    worst = int(np.argmin(eig))
    if eig[worst] < R22_MIN_EIG:
        raise ReductionError(
            f"R22 not positive definite at node {worst} "
            f"(t={nodes[worst]:g}, min eigenvalue {eig[worst]:.3e})"
        )

    A = spec.A.node_values()
    B = spec.B.node_values()
    C = spec.C.node_values()
    S1 = spec.S1.node_values()
    S2 = spec.S2.node_values()
    R11 = spec.R11.node_values()
    R12 = spec.R12.node_values()
    R21 = spec.R21.node_values()

    cross = np.linalg.solve(R22, R21)            # R22^{-1} R21, (N+1, m, n)
    r22_inv_s2 = np.linalg.solve(R22, S2)
    script_c = C - B @ cross
    script_s1 = S1 - R12 @ r22_inv_s2
    script_r11 = R11 - R12 @ cross

    h = solve_h(spec, substeps)
    H = h.H
    s1h = script_s1 + np.swapaxes(script_c, -1, -2) @ H
    s2h = S2 + np.swapaxes(B, -1, -2) @ H
    r11h = script_r11 + H

    fa, fb = spec.f.node_parts()
    qa, qb = spec.q.node_parts()
    qh = AffineProcess(
        MatrixPath.sampled(qa + np.einsum("kij,kj->ki", H, fa), grid),
        MatrixPath.sampled(qb + np.einsum("kij,kj->ki", H, fb), grid),
    )
    r1a, r1b = spec.rho1.node_parts()
    r2a, r2b = spec.rho2.node_parts()
    r12_r22inv = np.swapaxes(cross, -1, -2)      # R12 R22^{-1} (symmetric R22)
    rho1_red = AffineProcess(
        MatrixPath.sampled(r1a - np.einsum("kij,kj->ki", r12_r22inv, r2a), grid),
        MatrixPath.sampled(r1b - np.einsum("kij,kj->ki", r12_r22inv, r2b), grid),
    )

    xa, xb = spec.xi.at_terminal()
    HT = H[-1]
    constant_shift = float(xa @ HT @ xa + grid.T * (xb @ HT @ xb))

    base = spec.replace(
        C=MatrixPath.sampled(script_c, grid),
        G=np.zeros((n, n)),
        Q=MatrixPath.zeros((n, n), grid),
        S1=MatrixPath.sampled(s1h, grid),
        S2=MatrixPath.sampled(s2h, grid),
        R11=MatrixPath.sampled(r11h, grid),
        R12=MatrixPath.zeros((n, m), grid),
        R21=MatrixPath.zeros((m, n), grid),
        q=qh,
        rho1=rho1_red,
    )
    base_report = validate(base)
    if not base_report.ok:
        raise SpecValidationError(base_report)
    return ReducedProblem(
        base=base,
        source=spec,
        h=h,
        script_c=script_c,
        script_s1=script_s1,
        script_r11=script_r11,
        s1h=s1h,
        s2h=s2h,
        r11h=r11h,
        qh=qh,
        constant_shift=constant_shift,
        cross_gain=cross,
    )


def map_control(reduced: ReducedProblem, v: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Map a reduced-problem control back: u = v - R22^{-1} R21 Z.

    ``v`` has shape (..., N+1, m) and ``Z`` shape (..., N+1, n) with the
    node axis second-to-last.
    """
    return v - np.einsum("kij,...kj->...ki", reduced.cross_gain, Z)


def apply_cross_substitution(reduced: ReducedProblem, u: np.ndarray,
                             Z: np.ndarray) -> np.ndarray:
    """Forward map v = u + R22^{-1} R21 Z (inverse of :func:`map_control`)."""
    return u + np.einsum("kij,...kj->...ki", reduced.cross_gain, Z)


@dataclass(frozen=True)
class ShiftIdentityReport:
    """Monte-Carlo check of J_original(u) = J_reduced(v) - shift."""

    residual: float
    stderr: float
    shift: float
    original: float
    reduced: float


def cost_shift_identity_check(spec: ProblemSpec, reduced: ReducedProblem,
                              traj) -> ShiftIdentityReport:
    """Evaluate both sides of the cost identity on common random numbers.

    ``traj`` carries (Y, Z, u) trajectories simulated under ``spec`` together
    with their Brownian ensemble.  The residual is |J_orig - (J_red - shift)|
    with a Monte-Carlo standard error from the per-path differences; it is
    zero in continuous time, so what remains is quadrature bias O(dt) plus
    noise.
    """
    from .evaluate import path_costs  # deferred: evaluate builds on this module

    cost_orig = path_costs(spec, traj.Y, traj.Z, traj.u, traj.brownian.W)
    v = apply_cross_substitution(reduced, traj.u, traj.Z)
    cost_red = path_costs(reduced.base, traj.Y, traj.Z, v, traj.brownian.W)
    diff = cost_orig - (cost_red - reduced.constant_shift)
    P = diff.shape[0]
    stderr = float(diff.std(ddof=1) / np.sqrt(P)) if P > 1 else 0.0
    return ShiftIdentityReport(
        residual=float(abs(diff.mean())),
        stderr=stderr,
        shift=reduced.constant_shift,
        original=float(cost_orig.mean()),
        reduced=float(cost_red.mean()),
    )
