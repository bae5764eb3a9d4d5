"""Rational Krylov (RKSM) solver for low-rank CARE correction equations.

The correction equation for a solution update ``X = X0 + dX`` is::

    Ac' dX + dX Ac - dX B B' dX + U D U' = 0,    Ac = A - B B' X0.

For a mass matrix ``E`` the generalized equation is handled implicitly
through the equivalent standard equation with ``Ac = A E^{-1} - B B' X0``
and constant term ``E^{-T} U D U' E^{-1}``.
"""

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.spatial import ConvexHull, QhullError

from .dense import solve_dense_care
from .errors import (CompressedCareFailure, LyapunovSingular, MaxIterations, NoStabilizingSolution,
                     SingularCapacitance, SingularMassMatrix, SingularPivot, SingularShift)
from .hodlr import norm2_est
from .lowrank import SymLowRank, compress_sym, orthonormalize
from .operators import Factor, as_matrix, combine, matvec, rmatvec
from .report import IterationRecord, SolveReport


class CorrectionOperator:
    """The closed-loop matrix ``Ac`` exposed through products and shifted solves.

    Parameters
    ----------
    A
        Coefficient (dense, scipy sparse or :class:`HodlrMatrix`).
    B
        Dense ``n x m`` input matrix, ``F = B B'``.
    X0
        Reference solution (any matrix-like with ``@``), or ``None``.
    E
        Optional mass matrix.
    tau_sigma
        Recompression threshold used when HODLR shifted matrices are formed.
    """

    def __init__(self, A, B, X0=None, E=None, tau_sigma=None):
        self.A = as_matrix(A)
        self.E = as_matrix(E)
        self.B = np.asarray(B, dtype=float).reshape(self.A.shape[0], -1)
        self.n = self.A.shape[0]
        self.tau_sigma = tau_sigma
        # P = X0 B so that Ac = A E^{-1} - B P'
        self.P = np.zeros_like(self.B) if X0 is None else np.asarray(matvec(X0, self.B))
        self.E_lu = None
        if self.E is not None:
            self.E_lu = Factor(self.E, tau_sigma, SingularMassMatrix, "mass matrix")
        # Eᵀ P enters the shifted solves
        self.PE = self.P if self.E is None else rmatvec(self.E, self.P)

    def apply_E_inv_t(self, X):
        return X if self.E_lu is None else self.E_lu.solve(X, trans=True)

    def apply_E_t(self, X):
        return X if self.E is None else rmatvec(self.E, X)

    def rmatvec(self, X):
        """``Ac' X``."""
        return self.apply_E_inv_t(rmatvec(self.A, X)) - self.P @ (self.B.T @ X)

    def matvec(self, X):
        """``Ac X``."""
        Y = X if self.E_lu is None else self.E_lu.solve(X)
        return matvec(self.A, Y) - self.B @ (self.P.T @ X)

    def shifted_solver(self, xi):
        """Return a function solving ``(Ac - xi I)' y = r``.

        Uses a factorization of ``A - xi E`` and the Sherman-Morrison-Woodbury
        formula for the rank-``m`` term ``E' P B'``.
        """
        K = Factor(combine(self.A, self.E, xi, self.tau_sigma), self.tau_sigma,
                   SingularShift, f"shifted matrix at {xi}")
        KP = K.solve(self.PE, trans=True)
        m = self.B.shape[1]
        cap = np.eye(m) - self.B.T @ KP
        try:
            cap_lu = la.lu_factor(cap, check_finite=False)
        except (la.LinAlgError, ValueError) as exc:
            raise SingularCapacitance(f"capacitance matrix singular at shift {xi}") from exc
        d = np.abs(np.diag(cap_lu[0]))
        if m and (d.min() <= 1e3 * np.finfo(float).eps * max(d.max(), 1.0)):
            raise SingularCapacitance(f"capacitance matrix singular at shift {xi}")

        def solve(R):
            z = K.solve(self.apply_E_t(R), trans=True)
            return z + KP @ la.lu_solve(cap_lu, self.B.T @ z, check_finite=False)

        return solve

    def spectral_interval(self, iters=15, seed=0):
        """Estimates ``(s_min, s_max)`` of ``|eig(Ac)|`` for the shift region.

        ``s_max`` is a norm estimate of ``Ac``; ``s_min`` comes from power
        iteration with ``Ac^{-T}``.
        """
        s_max = norm2_est(((self.n, self.n), self.matvec, self.rmatvec), iters)
        try:
            inv_t = self.shifted_solver(0.0)
            x = np.random.default_rng(seed).standard_normal((self.n, 1))
            x /= np.linalg.norm(x)
            rho = 0.0
            for _ in range(iters):
                y = np.real(inv_t(x))
                rho = np.linalg.norm(y)
                if rho == 0 or not np.isfinite(rho):
                    break
                x = y / rho
            s_min = 1.0 / rho if rho > 0 and np.isfinite(rho) else s_max * 1e-8
        except SingularPivot:
            s_min = s_max * 1e-8
        s_min = min(max(s_min, s_max * 1e-12), s_max)
        return s_min, s_max


def _candidates(ritz, s_min, s_max, per_edge=24):
    """Points on the boundary of the mirrored spectral region."""
    m = np.abs(ritz.real) + 1j * np.abs(ritz.imag)
    pts = np.concatenate([m, np.conj(m), [s_min, s_max]])
    real_span = np.geomspace(max(s_min, 1e-300), max(s_max, s_min), 64)
    if np.max(np.abs(pts.imag)) <= 1e-10 * np.max(np.abs(pts)):
        lo = min(s_min, pts.real.min())
        hi = max(s_max, pts.real.max())
        return np.geomspace(max(lo, 1e-300), hi, 200).astype(complex)
    xy = np.column_stack([pts.real, pts.imag])
    try:
        hull = ConvexHull(xy)
    except (QhullError, ValueError):
        return np.concatenate([real_span, pts])
    verts = xy[hull.vertices]
    cand = [real_span]
    t = np.linspace(0.0, 1.0, per_edge, endpoint=False)
    for a, b in zip(verts, np.roll(verts, -1, axis=0)):
        seg = a[None, :] + t[:, None] * (b - a)[None, :]
        cand.append(seg[:, 0] + 1j * seg[:, 1])
    return np.concatenate(cand)


def next_shift(shifts, ritz, s_min, s_max, weights=None):
    """Adaptive shift: maximize ``1/|r(s)|`` on the mirrored region boundary.

    ``r(s) = prod(s - ritz_j) / prod(s - shift_j)^w_j`` where ``w_j`` is the
    number of basis columns generated with ``shift_j`` (the block size in
    block RKSM; 1 when ``weights`` is None).  The region is the convex
    hull of the mirrored Ritz values (forced into the right half plane)
    together with ``[s_min, s_max]``.  Returns a real number when the best
    point is (numerically) real.
    """
    ritz = np.asarray(ritz, dtype=complex)
    z = _candidates(ritz, s_min, s_max)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        logv = np.zeros(z.shape)
        if weights is None:
            weights = np.ones(len(shifts))
        for s, w in zip(shifts, weights):
            logv += w * np.log(np.abs(z - s))
        for th in ritz:
            logv -= np.log(np.abs(z - th))
    logv[~np.isfinite(logv)] = -np.inf
    best = z[int(np.argmax(logv))]
    if abs(best.imag) <= 1e-8 * abs(best):
        return float(best.real)
    return complex(best)


@dataclass
class CareCorrectionProblem:
    """Bundle for :func:`rksm_care`.

    ``rhs`` is the constant term ``U D U'`` of the correction equation (for a
    mass matrix, the constant term of the generalized equation).
    """

    A: object
    B: np.ndarray
    rhs: SymLowRank
    X0: object = None
    E: object = None
    tau_care: float = 1e-8
    t_max: int = 150
    tau_sigma: float | None = 1e-12
    relative: bool = True
    spectral_interval: tuple | None = None


def _residual_norm(Wp, V, Y, E_t=None):
    """``||Wp Y V' + V Y Wp'||_2`` via a thin QR of ``[Wp, V]``."""
    if E_t is None:
        _, Rw = la.qr(Wp, mode="economic", check_finite=False)
        return float(np.linalg.norm(Rw @ Y, 2)) if Y.size else 0.0
    L = np.hstack([E_t(Wp), E_t(V)])
    _, R = la.qr(L, mode="economic", check_finite=False)
    t = V.shape[1]
    Z = np.zeros((t, t))
    M = np.block([[Z, Y], [Y, Z]])
    return float(np.linalg.norm(R @ M @ R.T, 2))


def _sym_norm(f, E_t=None):
    if f.rank == 0:
        return 0.0
    U = f.U if E_t is None else E_t(f.U)
    _, R = la.qr(U, mode="economic", check_finite=False)
    return float(np.linalg.norm(R @ f.D @ R.T, 2))


def rksm_care(p: CareCorrectionProblem, op: CorrectionOperator | None = None):
    """Solve the CARE correction equation by RKSM with adaptive shifts.

    Returns ``(dX, report)`` with ``dX`` a real :class:`SymLowRank`.

    Stops when the residual 2-norm is below ``tau_care`` times ``||U D U'||``
    (``relative=False`` uses an absolute threshold).  With a mass matrix the
    residual of the generalized equation is monitored.

    Raises
    ------
    MaxIterations
        ``t_max`` iterations without convergence; ``best`` holds the last
        iterate.
    CompressedCareFailure
        The projected CARE repeatedly has no stabilizing solution.
    """
    t0 = time.perf_counter()
    report = SolveReport()
    n = p.rhs.U.shape[0]
    if op is None:
        op = CorrectionOperator(p.A, p.B, p.X0, p.E, p.tau_sigma)
    E_t = None if op.E is None else op.apply_E_t
    rhs_norm = _sym_norm(p.rhs)
    if p.rhs.rank == 0 or rhs_norm == 0.0:
        report.converged = True
        report.final_residual = 0.0
        report.time_s = time.perf_counter() - t0
        return SymLowRank.zeros(n), report
    threshold = p.tau_care * (rhs_norm if p.relative else 1.0)

    Ueff = op.apply_E_inv_t(p.rhs.U)
    D = p.rhs.D
    V = orthonormalize(Ueff)
    W = op.rmatvec(V)
    block = V.shape[1]
    latest = V
    shifts = []
    weights = []
    if p.spectral_interval is None:
        s_min, s_max = op.spectral_interval()
    else:
        s_min, s_max = p.spectral_interval
    best = None
    failures = 0
    for it in range(1, p.t_max + 1):
        H = V.T @ W
        Bt = V.T @ op.B
        Ut = V.T @ Ueff
        Qt = Ut @ D @ Ut.T
        try:
            Y = solve_dense_care(H.T, Bt, 0.5 * (Qt + Qt.T))
            failures = 0
        except (NoStabilizingSolution, LyapunovSingular, SingularPivot):
            failures += 1
            if failures >= 5:
                raise CompressedCareFailure(
                    f"projected CARE without stabilizing solution at basis size {V.shape[1]}")
            res = float("inf")
        else:
            res = _residual_norm(W - V @ H, V, Y, E_t)
            best = (V, Y)
        report.record(IterationRecord(it, V.shape[1], res, shifts[-1] if shifts else None))
        report.iterations = it
        if res <= threshold:
            report.converged = True
            break
        ritz = la.eigvals(H)
        xi = next_shift(shifts, ritz, s_min, s_max, weights)
        xi, solve = _robust_solver(op, xi)
        y = solve(latest)
        if isinstance(xi, complex):
            shifts += [xi, xi.conjugate()]
            weights += [latest.shape[1]] * 2
            new = np.hstack([y.real, y.imag])
        else:
            shifts.append(xi)
            weights.append(latest.shape[1])
            new = np.real(y)
        Vn = orthonormalize(new, V)
        if Vn.shape[1] == 0:
            # invariant subspace reached; the Galerkin solution is exact
            break
        latest = Vn[:, -block:] if Vn.shape[1] > block else Vn
        W = np.hstack([W, op.rmatvec(Vn)])
        V = np.hstack([V, Vn])
    report.basis_size = V.shape[1]
    report.final_residual = report.residuals[-1] if report.residuals else 0.0
    report.time_s = time.perf_counter() - t0
    report.shifts = shifts
    if best is None:
        raise CompressedCareFailure("projected CARE never had a stabilizing solution")
    Vb, Y = best
    dX = SymLowRank(Vb, Y)
    if p.tau_sigma is not None:
        dX = compress_sym(dX, p.tau_sigma)
    report.rank = dX.rank
    if not report.converged and report.final_residual > threshold:
        raise MaxIterations(
            f"RKSM did not reach {threshold:.3e} in {report.iterations} iterations "
            f"(residual {report.final_residual:.3e})", best=dX, report=report)
    return dX, report


def _robust_solver(op, xi, attempts=4, nudge=1e-2):
    """Shifted solver at ``xi``, nudging the shift off an eigenvalue of ``Ac``.

    A closed loop built from a block-diagonal ``X0`` need not be stable, so
    a shift in the mirrored region can land on one of its eigenvalues.
    """
    for k in range(attempts):
        try:
            return xi, op.shifted_solver(xi)
        except (SingularShift, SingularCapacitance):
            if k == attempts - 1:
                raise
            xi = xi * (1 + nudge * 2 ** k)
    raise AssertionError("unreachable")


def projected_care_solve(V, op, B, rhs):
    """Galerkin solution ``Y`` of the correction CARE on ``span(V)``."""
    W = op.rmatvec(V)
    At = (V.T @ W).T
    Ut = V.T @ op.apply_E_inv_t(rhs.U)
    Qt = Ut @ rhs.D @ Ut.T
    try:
        return solve_dense_care(At, V.T @ np.asarray(B).reshape(V.shape[0], -1), 0.5 * (Qt + Qt.T))
    except (NoStabilizingSolution, LyapunovSingular) as exc:
        raise CompressedCareFailure(str(exc)) from exc


def rksm_residual_norm(V, Y, op):
    """Residual 2-norm of ``V Y V'`` from the Arnoldi residual factor."""
    W = op.rmatvec(V)
    Wp = W - V @ (V.T @ W)
    E_t = None if op.E is None else op.apply_E_t
    return _residual_norm(Wp, V, Y, E_t)


def shifted_solve(A, B, X0, xi, rhs, E=None):
    """Solve ``(A - xi E - B B' X0 E)' y = E' rhs``, i.e. ``(Ac - xi I)' y = rhs``."""
    return CorrectionOperator(A, B, X0, E).shifted_solver(xi)(np.asarray(rhs))


def gcare_correction(A, E, B, X0, rhs, tau_care=1e-8, t_max=150, tau_sigma=1e-12):
    """Solve the generalized correction equation.

    ``(A - F X0 E)' dX E + E' dX (A - F X0 E) - E' dX F dX E + rhs = 0`` with
    ``F = B B'``; ``rhs`` is assembled by
    :func:`~qmdac.lowrank.assemble_gcare_rhs`.
    """
    p = CareCorrectionProblem(A=A, B=B, rhs=rhs, X0=X0, E=E, tau_care=tau_care,
                              t_max=t_max, tau_sigma=tau_sigma)
    return rksm_care(p)
