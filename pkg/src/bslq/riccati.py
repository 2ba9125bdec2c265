"""The three deterministic matrix ODEs behind the solver.

* The shift equation for H (linear, integrated forward from H(0) = -G):

      H' + H A + A^T H + Q = 0.

  Its solution absorbs the initial weight G and the running weight Q into
  the terminal cost during problem reduction.

* The backward Riccati equation for Sigma (terminal condition Sigma(T) = 0)
  of the cross-term-free problem:

      Sigma' - A Sigma - Sigma A^T + B(Sigma) R22^{-1} B(Sigma)^T
             + C(Sigma) R(Sigma)^{-1} Sigma C(Sigma)^T = 0,

  with  B(Sigma) = B + Sigma S2^T,  C(Sigma) = C + Sigma S1^T  and
  R(Sigma) = I + Sigma R11.  Under uniform convexity of the homogeneous
  cost, Sigma is symmetric positive semidefinite and R(Sigma) stays
  invertible; the solver checks both instead of assuming them.

* The forward LQ Riccati equation for P (terminal condition P(T) = G_f):

      P' + P A_f + A_f^T P + C_f^T P C_f + Q_f
         - (P B_f + C_f^T P D_f + S_f^T)(R_f + D_f^T P D_f)^{-1}
           (B_f^T P + D_f^T P C_f + S_f) = 0.

Sigma is symmetrised after every integration substep: the right-hand side
preserves symmetry analytically, so this only suppresses floating-point
drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PositivityError, SingularityError
from .grid import MatrixPath, TimeGrid
from .ode import DEFAULT_SUBSTEPS, integrate_backward, integrate_forward, interior_derivative
from .problem import ForwardProblemSpec, ProblemSpec

COND_LIMIT = 1e12
PSD_TOL = 1e-10
SYM_TOL = 1e-10


def _solve(mat: np.ndarray, rhs: np.ndarray, t: float, name: str) -> np.ndarray:
    try:
        return np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"{name} singular at t={t:g}") from exc


@dataclass(frozen=True, eq=False)
class HSolution:
    """Grid samples of the quadratic-weight shift H."""

    grid: TimeGrid
    H: np.ndarray  # (N+1, n, n)

    def is_zero(self) -> bool:
        return not np.any(self.H)

    def residual(self, spec: ProblemSpec) -> float:
        """Sup-norm defect of the shift equation, H' estimated by central
        differences at interior nodes."""
        sl, dH = interior_derivative(self.H, self.grid.dt)
        A = spec.A.node_values()[sl]
        Q = spec.Q.node_values()[sl]
        Hs = self.H[sl]
        res = dH + Hs @ A + np.swapaxes(A, -1, -2) @ Hs + Q
        return float(np.max(np.abs(res), initial=0.0))


def solve_h(spec: ProblemSpec, substeps: int = DEFAULT_SUBSTEPS) -> HSolution:
    """Integrate the shift equation forward from H(0) = -G.

    With G = 0 and Q identically zero the result is exactly zero at every
    node (all RK4 stages vanish).
    """
    A, Q = spec.A, spec.Q

    def rhs(t, H):
        At = A(t)
        return -(H @ At + At.T @ H + Q(t))

    H = integrate_forward(spec.grid, rhs, -spec.G, substeps,
                          post_step=lambda M: 0.5 * (M + M.T))
    return HSolution(spec.grid, H)


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Sigma plus the derived coefficient paths used everywhere downstream."""

    grid: TimeGrid
    Sigma: np.ndarray        # (N+1, n, n)
    BofSigma: np.ndarray     # (N+1, n, m)   B + Sigma S2^T
    CofSigma: np.ndarray     # (N+1, n, n)   C + Sigma S1^T
    RofSigma: np.ndarray     # (N+1, n, n)   I + Sigma R11
    RofSigmaInv: np.ndarray  # (N+1, n, n)
    conditioning: float      # min over nodes of 1 / cond(R(Sigma))

    def sigma_path(self) -> MatrixPath:
        return MatrixPath.sampled(self.Sigma, self.grid)

    def symmetry_error(self) -> float:
        return float(np.max(np.abs(self.Sigma - np.swapaxes(self.Sigma, -1, -2))))

    def psd_margin(self) -> float:
        """Smallest eigenvalue of Sigma over all nodes."""
        return float(np.min(np.linalg.eigvalsh(0.5 * (self.Sigma + np.swapaxes(self.Sigma, -1, -2)))))

    def inverse_identity_error(self) -> float:
        """Sup-norm of R(Sigma)^{-1} Sigma - Sigma R(Sigma)^{-T}.

        The two products agree analytically; the gap measures how far the
        computed inverse drifts from that identity.
        """
        left = self.RofSigmaInv @ self.Sigma
        right = self.Sigma @ np.swapaxes(self.RofSigmaInv, -1, -2)
        return float(np.max(np.abs(left - right)))

    def equation_residual(self, spec: ProblemSpec) -> float:
        """Sup-norm residual of the Riccati equation on the grid samples,
        Sigma' estimated by central differences at interior nodes."""
        sl, dS = interior_derivative(self.Sigma, self.grid.dt)
        A = spec.A.node_values()[sl]
        R22 = spec.R22.node_values()[sl]
        S = self.Sigma[sl]
        BS = self.BofSigma[sl]
        CS = self.CofSigma[sl]
        RSinv = self.RofSigmaInv[sl]
        At = np.swapaxes(A, -1, -2)
        term_b = BS @ np.linalg.solve(R22, np.swapaxes(BS, -1, -2))
        term_c = CS @ RSinv @ S @ np.swapaxes(CS, -1, -2)
        res = dS - A @ S - S @ At + term_b + term_c
        return float(np.max(np.abs(res), initial=0.0))


def _canonical_base(problem) -> ProblemSpec:
    """Accept a reduced problem or a spec already in canonical form."""
    spec = getattr(problem, "base", problem)
    if (np.any(spec.G) or not spec.Q.is_zero()
            or not spec.R12.is_zero() or not spec.R21.is_zero()):
        raise ValueError(
            "Riccati solve requires the canonical form (G = 0, Q = 0, no "
            "cross weights); apply bslq.reduction.reduce_problem first"
        )
    return spec


def sigma_derivative(t: float, S: np.ndarray, A, B, C, S1, S2, R11, R22) -> np.ndarray:
    """Right-hand side of the backward Riccati equation at one time point."""
    BS = B + S @ S2.T
    CS = C + S @ S1.T
    RS = np.eye(S.shape[0]) + S @ R11
    term_b = BS @ _solve(R22, BS.T, t, "R22")
    term_c = CS @ _solve(RS, S @ CS.T, t, "R(Sigma)")
    return A @ S + S @ A.T - term_b - term_c


def solve_sigma(problem, substeps: int = DEFAULT_SUBSTEPS) -> RiccatiSolution:
    """Solve the backward Riccati equation of a canonical-form problem.

    A reduced problem is integrated jointly with a backward replay of its
    shift H, so the stage coefficients stay smooth between nodes; a bare
    canonical spec is integrated against its own (interpolated) paths.

    Post-conditions checked on the result: Sigma(T) = 0 exactly, symmetry
    and positive semidefiniteness within tolerance, and R(Sigma) invertible
    (condition number below 1e12) at every node.  Violations raise rather
    than return, since downstream formulas divide by R(Sigma) and R22.
    """
    spec = _canonical_base(problem)
    n = spec.n
    if hasattr(problem, "stage_coefficients"):
        reduced = problem

        def rhs(t, state):
            H, S = state[0], state[1]
            A, B, C, S1, S2, R11, R22 = reduced.stage_coefficients(t, H)
            return np.stack([reduced.shift_derivative(t, H),
                             sigma_derivative(t, S, A, B, C, S1, S2, R11, R22)])

        def sym(state):
            return 0.5 * (state + np.swapaxes(state, -1, -2))

        anchor = np.stack([reduced.h.H[-1], np.zeros((n, n))])
        path = integrate_backward(spec.grid, rhs, anchor, substeps, post_step=sym)
        Sigma = path[:, 1]
    else:
        A, B, C = spec.A, spec.B, spec.C
        S1, S2, R11, R22 = spec.S1, spec.S2, spec.R11, spec.R22

        def rhs(t, S):
            return sigma_derivative(t, S, A(t), B(t), C(t), S1(t), S2(t),
                                    R11(t), R22(t))

        Sigma = integrate_backward(spec.grid, rhs, np.zeros((n, n)), substeps,
                                   post_step=lambda M: 0.5 * (M + M.T))
    return _derive_sigma_paths(spec, Sigma)


def _derive_sigma_paths(spec: ProblemSpec, Sigma: np.ndarray) -> RiccatiSolution:
    nodes = spec.grid.nodes
    n = spec.n
    eye = np.eye(n)
    Bv = spec.B.node_values()
    Cv = spec.C.node_values()
    S1v = spec.S1.node_values()
    S2v = spec.S2.node_values()
    R11v = spec.R11.node_values()
    BofS = Bv + Sigma @ np.swapaxes(S2v, -1, -2)
    CofS = Cv + Sigma @ np.swapaxes(S1v, -1, -2)
    RofS = eye[None] + Sigma @ R11v
    # Invertibility is judged against the natural unit scale of I + Sigma R11
    # (a plain condition number would hide an absolutely tiny 1x1 entry).
    svals = np.linalg.svd(RofS, compute_uv=False)
    with np.errstate(divide="ignore"):
        conds = np.maximum(svals[:, 0], 1.0) / svals[:, -1]
    worst = int(np.argmax(conds))
    if not np.all(np.isfinite(conds)) or conds[worst] > COND_LIMIT:
        raise SingularityError(
            f"R(Sigma) numerically singular at node {worst} "
            f"(t={nodes[worst]:g}, cond={conds[worst]:.3e})"
        )
    RofSinv = np.linalg.inv(RofS)
    sym = 0.5 * (Sigma + np.swapaxes(Sigma, -1, -2))
    eigmin = np.min(np.linalg.eigvalsh(sym), axis=-1)
    worst = int(np.argmin(eigmin))
    if eigmin[worst] < -PSD_TOL:
        raise PositivityError(
            f"Sigma not positive semidefinite at node {worst} "
            f"(t={nodes[worst]:g}, min eigenvalue {eigmin[worst]:.3e})"
        )
    return RiccatiSolution(
        grid=spec.grid,
        Sigma=Sigma,
        BofSigma=BofS,
        CofSigma=CofS,
        RofSigma=RofS,
        RofSigmaInv=RofSinv,
        conditioning=float(np.min(1.0 / conds)),
    )


@dataclass(frozen=True, eq=False)
class ForwardRiccatiSolution:
    """P plus the feedback gain and the positivity record of R + D^T P D."""

    grid: TimeGrid
    P: np.ndarray          # (N+1, n, n)
    gain: np.ndarray       # (N+1, m, n)   (R + D^T P D)^{-1} (B^T P + D^T P C + S)
    min_eig_weight: np.ndarray  # (N+1,)   smallest eigenvalue of R + D^T P D

    def psd_margin(self) -> float:
        return float(np.min(np.linalg.eigvalsh(0.5 * (self.P + np.swapaxes(self.P, -1, -2)))))


def uniform_convexity_conditions(spec: ForwardProblemSpec, tol: float = PSD_TOL) -> bool:
    """Check the sufficient data conditions for uniform convexity:
    terminal weight, control weight and Schur complement all uniformly
    positive definite."""
    if np.min(np.linalg.eigvalsh(spec.cG)) < tol:
        return False
    Rv = spec.cR.node_values()
    Qv = spec.cQ.node_values()
    Sv = spec.cS.node_values()
    if np.min(np.linalg.eigvalsh(Rv)) < tol:
        return False
    schur = Qv - np.swapaxes(Sv, -1, -2) @ np.linalg.solve(Rv, Sv)
    return bool(np.min(np.linalg.eigvalsh(0.5 * (schur + np.swapaxes(schur, -1, -2)))) >= tol)


def forward_riccati_derivative(t: float, P: np.ndarray, A, B, C, D, Q, S, R) -> np.ndarray:
    """Right-hand side of the forward LQ Riccati equation at one time point."""
    W = R + D.T @ P @ D
    M = B.T @ P + D.T @ P @ C + S
    quad = M.T @ _solve(W, M, t, "R + D^T P D")
    return -(P @ A + A.T @ P + C.T @ P @ C + Q - quad)


def solve_forward_riccati(spec: ForwardProblemSpec,
                          substeps: int = DEFAULT_SUBSTEPS) -> ForwardRiccatiSolution:
    """Solve the forward LQ Riccati equation backward from P(T) = G_f.

    Raises :class:`PositivityError` if R + D^T P D loses positivity along
    the path.  When the uniform-convexity data conditions hold, P must be
    positive semidefinite and this is asserted.
    """
    A, B, C, D = spec.cA, spec.cB, spec.cC, spec.cD
    Q, S, R = spec.cQ, spec.cS, spec.cR

    def rhs(t, P):
        return forward_riccati_derivative(t, P, A(t), B(t), C(t), D(t),
                                          Q(t), S(t), R(t))

    P = integrate_backward(spec.grid, rhs, spec.cG, substeps,
                           post_step=lambda M: 0.5 * (M + M.T))
    nodes = spec.grid.nodes
    Dv = spec.cD.node_values()
    Wv = spec.cR.node_values() + np.swapaxes(Dv, -1, -2) @ P @ Dv
    min_eig = np.min(np.linalg.eigvalsh(0.5 * (Wv + np.swapaxes(Wv, -1, -2))), axis=-1)
    worst = int(np.argmin(min_eig))
    if min_eig[worst] <= 0.0:
        raise PositivityError(
            f"R + D^T P D loses positivity at node {worst} "
            f"(t={nodes[worst]:g}, min eigenvalue {min_eig[worst]:.3e})"
        )
    Bv = spec.cB.node_values()
    Cv = spec.cC.node_values()
    Sv = spec.cS.node_values()
    gain = np.linalg.solve(Wv, np.swapaxes(Bv, -1, -2) @ P
                           + np.swapaxes(Dv, -1, -2) @ P @ Cv + Sv)
    sol = ForwardRiccatiSolution(spec.grid, P, gain, min_eig)
    if uniform_convexity_conditions(spec) and sol.psd_margin() < -PSD_TOL:
        raise PositivityError(
            f"P not positive semidefinite (margin {sol.psd_margin():.3e}) "
            "although the uniform-convexity data conditions hold"
        )
    return sol
