"""Extended Krylov solver for low-rank UQME correction equations.

For ``X = X0 + dX`` the correction equation of ``A X^2 + B X + C = 0`` is::

    dX^2 + Ah dX + dX X0 + U V' = 0,    Ah = X0 + A^{-1} B,

with ``U V' = A^{-1} (dA X0^2 + dB X0 + dC)``.  Bases for ``dX`` are built
from the poles ``+1, -1`` applied to ``Ah`` (left) and ``X0'`` (right), and
the projected non-symmetric Riccati equation is solved by SDA.
"""

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .dense import sda_nare
from .errors import MaxIterations, SdaNotConverged, SingularPivot, SingularShiftedOperator
from .hodlr import HodlrMatrix, add, matmul
from .lowrank import GenLowRank, compress_gen, orthonormalize
from .operators import Factor, as_matrix, matvec
from .report import IterationRecord, SolveReport


class UqmeOperators:
    """``Ah = X0 + A^{-1} B`` and the shifted solvers with poles ``+1, -1``.

    ``(Ah + s I)^{-1} v = (A X0 + B + s A)^{-1} A v`` and
    ``(X0' + s I)^{-1}`` use transposed solves with ``X0 + s I``.  All four
    factorizations are computed once.
    """

    def __init__(self, A, B, X0, tau_sigma=None):
        A, B, X0 = as_matrix(A), as_matrix(B), as_matrix(X0)
        self.n = A.shape[0]
        self.A, self.B, self.X0 = A, B, X0
        hodlr = isinstance(A, HodlrMatrix)
        if hodlr:
            B = B if isinstance(B, HodlrMatrix) else HodlrMatrix.from_dense(_dense(B), A.n_min, tau_sigma or 1e-14)
            X0 = X0 if isinstance(X0, HodlrMatrix) else HodlrMatrix.from_dense(_dense(X0), A.n_min, tau_sigma or 1e-14)
            AX = add(matmul(A, X0, tau_sigma), B, tau_sigma)
            M = {s: add(AX, A, tau_sigma, alpha=s) for s in (1.0, -1.0)}
            Xs = {s: X0.shifted(-s) for s in (1.0, -1.0)}
        else:
            A, B, X0 = _dense(A), _dense(B), _dense(X0)
            AX = A @ X0 + B
            M = {s: AX + s * A for s in (1.0, -1.0)}
            Xs = {s: X0 + s * np.eye(self.n) for s in (1.0, -1.0)}
        self.X0 = X0
        self.A_lu = Factor(A, tau_sigma, SingularPivot, "quadratic coefficient")
        self.M_lu = {s: Factor(M[s], tau_sigma, SingularShiftedOperator, f"Ah {'+' if s > 0 else '-'} I")
                     for s in M}
        self.X_lu = {s: Factor(Xs[s], tau_sigma, SingularShiftedOperator, f"X0' {'+' if s > 0 else '-'} I")
                     for s in Xs}

    def A_solve(self, X):
        return self.A_lu.solve(X)

    def Ah(self, X):
        return matvec(self.X0, X) + self.A_lu.solve(matvec(self.B, X))

    def X0t(self, X):
        return self.X0.T @ X if not isinstance(self.X0, HodlrMatrix) else self.X0.T.matvec(X)

    def solve_Ah(self, s, X):
        """``(Ah + s I)^{-1} X``."""
        return self.M_lu[s].solve(matvec(self.A, X))

    def solve_X0t(self, s, X):
        """``(X0' + s I)^{-1} X``."""
        return self.X_lu[s].solve(X, trans=True)


def _dense(M):
    if isinstance(M, HodlrMatrix):
        return M.to_dense()
    if hasattr(M, "toarray"):
        return M.toarray()
    return np.asarray(M, dtype=float)


@dataclass
class UqmeCorrectionProblem:
    """Bundle for :func:`ek_uqme_correction`; ``rhs`` holds ``U V' = A^{-1} C_hat``.

    With ``unscaled_check`` the solver also requires ``||A R||_2 <=
    tau_uqme ||C_hat||_2`` for the correction residual ``R``, i.e. the
    residual of the original quadratic equation.  This matters when ``A`` is
    ill-conditioned and ``||A^{-1} C_hat||`` overstates the target.
    """

    A: object
    B: object
    X0: object
    rhs: GenLowRank
    tau_uqme: float = 1e-8
    t_max: int = 60
    tau_sigma: float | None = 1e-12
    relative: bool = True
    unscaled_check: bool = False


class ExtendedKrylovPair:
    """Orthonormal bases ``Ub`` (for ``Ah``) and ``Vb`` (for ``X0'``).

    The newest block of each pole chain is kept so that the next step applies
    ``(Ah + I)^{-1}`` to the ``+`` chain and ``(Ah - I)^{-1}`` to the ``-``
    chain.  ``poles`` records the alternating sequence ``1, -1, 1, -1, ...``.
    """

    def __init__(self, ops, U, V):
        self.ops = ops
        self.poles = []
        Up = ops.solve_Ah(1.0, U)
        Um = ops.solve_Ah(-1.0, U)
        self.Ub = np.zeros((ops.n, 0))
        self.u_chain = {}
        self._append_u(Up, Um)
        V0 = orthonormalize(V)
        self.Vb = V0
        self.v_chain = {}
        self._append_v(ops.solve_X0t(1.0, V), ops.solve_X0t(-1.0, V))
        self.AhU = ops.Ah(self.Ub)
        self.X0tV = ops.X0t(self.Vb)

    def _append_u(self, Up, Um):
        Qp = orthonormalize(np.real(Up), self.Ub)
        Ub = np.hstack([self.Ub, Qp])
        Qm = orthonormalize(np.real(Um), Ub)
        self.Ub = np.hstack([Ub, Qm])
        self.u_chain = {1.0: Qp, -1.0: Qm}
        self.poles += [1.0, -1.0]
        return np.hstack([Qp, Qm])

    def _append_v(self, Vp, Vm):
        Qp = orthonormalize(np.real(Vp), self.Vb)
        Vb = np.hstack([self.Vb, Qp])
        Qm = orthonormalize(np.real(Vm), Vb)
        self.Vb = np.hstack([Vb, Qm])
        self.v_chain = {1.0: Qp, -1.0: Qm}
        return np.hstack([Qp, Qm])

    def extend(self):
        """Append one block per pole to both bases; returns the number of new columns."""
        ops = self.ops
        newU = self._append_u(ops.solve_Ah(1.0, self.u_chain[1.0]), ops.solve_Ah(-1.0, self.u_chain[-1.0]))
        newV = self._append_v(ops.solve_X0t(1.0, self.v_chain[1.0]), ops.solve_X0t(-1.0, self.v_chain[-1.0]))
        if newU.shape[1]:
            self.AhU = np.hstack([self.AhU, ops.Ah(newU)])
        if newV.shape[1]:
            self.X0tV = np.hstack([self.X0tV, ops.X0t(newV)])
        return newU.shape[1] + newV.shape[1]


def extend_basis(pair, steps=1):
    for _ in range(steps):
        pair.extend()
    return pair


def project_nare(pair, rhs):
    """Galerkin projection ``(At, Dt, Ft, Qt)`` of the correction equation.

    ``Y Ft Y + At Y + Y Dt = Qt`` with ``At = Ub' Ah Ub``, ``Dt = Vb' X0 Vb``,
    ``Ft = Vb' Ub`` and ``Qt = -Ub' U V' Vb``.
    """
    Ub, Vb = pair.Ub, pair.Vb
    At = Ub.T @ pair.AhU
    Dt = pair.X0tV.T @ Vb
    Ft = Vb.T @ Ub
    Qt = -(Ub.T @ rhs.U) @ (rhs.V.T @ Vb)
    return At, Dt, Ft, Qt


def _lr_norm(L, M, R):
    """``||L M R'||_2`` via thin QRs of the outer factors."""
    if L.shape[1] == 0 or R.shape[1] == 0:
        return 0.0
    _, RL = la.qr(L, mode="economic", check_finite=False)
    _, RR = la.qr(R, mode="economic", check_finite=False)
    return float(np.linalg.norm(RL @ M @ RR.T, 2))


def _factored_residual(pair, Y, Ft, rhs, left=None):
    """Residual of ``dX = Ub Y Vb'`` as ``L M R'``.

    ``L = [Ub, Ah Ub, U]``, ``R = [Vb, X0' Vb, V]`` and
    ``M = [[Y Ft Y, Y, 0], [Y, 0, 0], [0, 0, I]]``.  ``left`` is applied to
    ``L`` first (e.g. multiplication by ``A``).
    """
    p, q, r = Y.shape[0], Y.shape[1], rhs.rank
    M = np.zeros((2 * p + r, 2 * q + r))
    M[:p, :q] = Y @ Ft @ Y
    M[:p, q:2 * q] = Y
    M[p:2 * p, :q] = Y
    M[2 * p:, 2 * q:] = np.eye(r)
    L = np.hstack([pair.Ub, pair.AhU, rhs.U])
    if left is not None:
        L = left(L)
    R = np.hstack([pair.Vb, pair.X0tV, rhs.V])
    return _lr_norm(L, M, R)


def uqme_correction_residual(dX, ops, rhs):
    """2-norm of ``dX^2 + Ah dX + dX X0 + U V'`` using factored arithmetic."""
    if dX.rank == 0:
        return _lr_norm(rhs.U, np.eye(rhs.rank), rhs.V)
    k, r = dX.rank, rhs.rank
    L = np.hstack([dX.U, ops.Ah(dX.U), rhs.U])
    R = np.hstack([dX.V, ops.X0t(dX.V), rhs.V])
    M = np.zeros((2 * k + r, 2 * k + r))
    M[:k, :k] = dX.V.T @ dX.U
    M[:k, k:2 * k] = np.eye(k)
    M[k:2 * k, :k] = np.eye(k)
    M[2 * k:, 2 * k:] = np.eye(r)
    return _lr_norm(L, M, R)


def ek_uqme_correction(p: UqmeCorrectionProblem, ops: UqmeOperators | None = None):
    """Solve the UQME correction equation by the extended Krylov method.

    Returns ``(dX, report)``.  The residual is measured relative to
    ``||U V'||_2`` unless ``relative=False``.  When SDA does not converge
    on the projected equation the bases are enlarged and the step retried.

    Raises
    ------
    MaxIterations
        No convergence within ``t_max`` extensions.
    SingularShiftedOperator
        A factorization with pole ``+1`` or ``-1`` failed.
    """
    t0 = time.perf_counter()
    report = SolveReport()
    n = p.rhs.U.shape[0]
    rhs = p.rhs
    rhs_norm = _lr_norm(rhs.U, np.eye(rhs.rank), rhs.V) if rhs.rank else 0.0
    if rhs_norm == 0.0:
        report.converged = True
        report.final_residual = 0.0
        report.time_s = time.perf_counter() - t0
        return GenLowRank.zeros(n), report
    if ops is None:
        ops = UqmeOperators(p.A, p.B, p.X0, p.tau_sigma)
    threshold = p.tau_uqme * (rhs_norm if p.relative else 1.0)
    left = None
    if p.unscaled_check:
        left = lambda L: matvec(ops.A, L)  # noqa: E731
        c_norm = _lr_norm(left(rhs.U), np.eye(rhs.rank), rhs.V)
        threshold2 = p.tau_uqme * (c_norm if p.relative else 1.0)
    pair = ExtendedKrylovPair(ops, rhs.U, rhs.V)
    best = None
    for it in range(1, p.t_max + 1):
        At, Dt, Ft, Qt = project_nare(pair, rhs)
        try:
            Y, hist = sda_nare(At, Dt, Ft, Qt, return_history=True)
            sda_it = len(hist)
        except (SdaNotConverged, SingularPivot):
            Y, sda_it = None, None
            report.retries += 1
        ok = False
        if Y is not None:
            res = _factored_residual(pair, Y, Ft, rhs)
            best = (pair.Ub, Y, pair.Vb)
            ok = res <= threshold
            if ok and left is not None:
                ok = _factored_residual(pair, Y, Ft, rhs, left) <= threshold2
        else:
            res = float("inf")
        report.record(IterationRecord(it, pair.Ub.shape[1] + pair.Vb.shape[1], res,
                                      sda_iterations=sda_it))
        report.iterations = it
        if ok:
            report.converged = True
            break
        if it < p.t_max and pair.extend() == 0:
            break
    report.basis_size = pair.Ub.shape[1]
    report.final_residual = report.residuals[-1]
    report.poles = list(pair.poles)
    report.time_s = time.perf_counter() - t0
    if best is None:
        raise MaxIterations("SDA never converged on the projected equation", best=None, report=report)
    Ub, Y, Vb = best
    dX = GenLowRank(Ub @ Y, Vb)
    if p.tau_sigma is not None:
        dX = compress_gen(dX, p.tau_sigma)
    report.rank = dX.rank
    if not report.converged:
        raise MaxIterations(
            f"extended Krylov did not reach {threshold:.3e} in {report.iterations} steps "
            f"(residual {report.final_residual:.3e})", best=dX, report=report)
    return dX, report
