"""Dense kernels: small Riccati/quadratic equation solvers and oracles.

Everything here works on plain ``numpy`` arrays and is used at the leaves
of the divide-and-conquer recursion, for projected subproblems inside the
Krylov solvers, and as brute-force references in the tests.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import (
    CrNotConverged,
    DimensionMismatch,
    LyapunovSingular,
    NoStabilizingSolution,
    SdaNotConverged,
    SingularEigenbasis,
    SingularOperator,
    SingularPivot,
    SplitViolation,
)

_EPS = np.finfo(float).eps

#: leaf and projected dense solvers are never asked to go beyond this size
DENSE_LIMIT = 8192


@dataclass(frozen=True)
class SpectralSplit:
    """Eigenvalue counts of a quadratic pencil relative to the unit circle."""

    inside: int
    on_circle: int
    outside: int

    @property
    def total(self):
        return self.inside + self.on_circle + self.outside

    def has_split(self, n):
        """True when exactly ``n`` eigenvalues lie in the open unit disc."""
        return self.inside == n and self.on_circle == 0


def _square(*mats):
    n = mats[0].shape[0]
    for M in mats:
        if M.ndim != 2 or M.shape != (n, n):
            raise DimensionMismatch(f"expected {n}x{n} matrices, got {M.shape}")
    return n


def _lu(M, exc=SingularPivot, what="matrix"):
    lu, piv = la.lu_factor(M, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.size and (not np.all(np.isfinite(d)) or d.min() <= d.max() * M.shape[0] * _EPS):
        raise exc(f"{what} is numerically singular")
    return lu, piv


# --------------------------------------------------------------------------
# CARE
# --------------------------------------------------------------------------

def care_residual(A, B, Q, X, E=None):
    """Residual matrix of ``A'XE + E'XA - E'XBB'XE + Q`` (``E=None`` means identity)."""
    if E is None:
        XB = X @ B
        R = A.T @ X + X @ A - XB @ XB.T + Q
    else:
        XE = X @ E
        EXB = E.T @ (X @ B)
        R = A.T @ XE + XE.T @ A - EXB @ EXB.T + Q
    return 0.5 * (R + R.T)


def _care_scale(A, B, Q, X):
    # size of the individual terms; used to judge the residual
    nx = np.linalg.norm(X)
    return np.linalg.norm(Q) + 2 * np.linalg.norm(A) * nx + np.linalg.norm(B) ** 2 * nx ** 2


def newton_defect_correction(A, B, Q, X, steps=2, tol=1e-13):
    """Refine an approximate stabilizing CARE solution by Newton steps.

    Each step solves the Lyapunov equation
    ``Ak' D + D Ak = -R(X)`` with ``Ak = A - BB'X`` and updates ``X += D``.
    A step is only kept when it lowers the residual, so the returned
    residual never exceeds the input one.

    Raises
    ------
    LyapunovSingular
        If the closed-loop matrix at the current iterate is not stable.
    """
    A = np.asarray(A)
    X = 0.5 * (X + X.T)
    R = care_residual(A, B, Q, X)
    res = np.linalg.norm(R)
    for _ in range(steps):
        if res <= tol * max(_care_scale(A, B, Q, X), _EPS):
            break
        D = _stable_lyapunov(A - B @ (B.T @ X), -R)
        Xn = X + 0.5 * (D + D.T)
        Rn = care_residual(A, B, Q, Xn)
        rn = np.linalg.norm(Rn)
        if not np.isfinite(rn) or rn >= res:
            break
        X, R, res = Xn, Rn, rn
    return X


def _stable_lyapunov(Ak, C):
    """Solve ``Ak' D + D Ak = C`` by Bartels-Stewart, requiring ``Ak`` stable.

    The Schur form of ``Ak'`` serves both the stability test and the
    triangular Sylvester solve.
    """
    T, Z = la.schur(Ak.T, output="real")
    if np.max(_schur_eigs(T).real) >= 0:
        raise LyapunovSingular("closed-loop matrix is not stable")
    F = Z.T @ C @ Z
    Y, scale, info = la.lapack.dtrsyl(T, T, F, trana="N", tranb="T")
    if info < 0 or not np.all(np.isfinite(Y)):
        raise LyapunovSingular("triangular Sylvester solve failed")
    return Z @ (Y / scale) @ Z.T


def _rcond(lu_piv, norm1):
    rc, info = la.lapack.dgecon(lu_piv[0], norm1, norm="1")
    return rc if info == 0 else 0.0


def solve_dense_care(A, B, Q, refine=True):
    """Stabilizing solution of ``A'X + XA - XBB'X + Q = 0``.

    Uses the ordered real Schur form of the Hamiltonian
    ``[[A, -BB'], [-Q, -A']]``; the stable invariant subspace
    ``[U1; U2]`` gives ``X = U2 U1^{-1}``.  ``Q`` may be indefinite.
    Up to two Newton steps are applied afterwards when ``refine`` is set.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.asarray(Q, dtype=float)
    n = _square(A, Q)
    if n > DENSE_LIMIT:
        raise DimensionMismatch(f"dense CARE of size {n} exceeds DENSE_LIMIT")
    if n == 0:
        return np.zeros((0, 0))
    G = B @ B.T
    H = np.block([[A, -G], [-Q, -A.T]])
    T, Z, sdim = la.schur(H, output="real", sort="lhp")
    ev = la.eigvals(T) if n <= 2 else _schur_eigs(T)
    hnorm = max(np.linalg.norm(H, 1), _EPS)
    if sdim != n or np.min(np.abs(ev.real)) <= 1e2 * _EPS * hnorm:
        raise NoStabilizingSolution(
            "Hamiltonian has eigenvalues on (or too close to) the imaginary axis"
        )
    U1, U2 = Z[:n, :n], Z[n:, :n]
    with warnings.catch_warnings():
        # an ill-conditioned U1 is reported by the rcond test below
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu = la.lu_factor(U1.T, check_finite=False)
    if _rcond(lu, np.linalg.norm(U1, 1)) < 1e2 * _EPS:
        raise NoStabilizingSolution("stable invariant subspace is not a graph")
    X = la.lu_solve(lu, U2.T, check_finite=False).T
    X = 0.5 * (X + X.T)
    if refine:
        try:
            X = newton_defect_correction(A, B, Q, X)
        except LyapunovSingular as exc:
            raise NoStabilizingSolution(str(exc)) from exc
    return X


def _schur_eigs(T):
    # eigenvalues from a real quasi-triangular Schur factor
    n = T.shape[0]
    ev = np.empty(n, dtype=complex)
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            ev[i:i + 2] = la.eigvals(T[i:i + 2, i:i + 2])
            i += 2
        else:
            ev[i] = T[i, i]
            i += 1
    return ev


def solve_dense_gcare(A, E, B, Q, refine=True):
    """Stabilizing solution of ``A'XE + E'XA - E'XBB'XE + Q = 0``.

    Reduced to a standard CARE in ``Z = E'XE`` with coefficients
    ``E^{-1}A`` and ``E^{-1}B``.
    """
    A = np.asarray(A, dtype=float)
    E = np.asarray(E, dtype=float)
    from .errors import SingularMassMatrix

    lu = _lu(E, SingularMassMatrix, "mass matrix E")
    Z = solve_dense_care(la.lu_solve(lu, A), la.lu_solve(lu, np.asarray(B, dtype=float)), Q,
                         refine=refine)
    X = la.lu_solve(lu, la.lu_solve(lu, Z, trans=1).T, trans=1).T
    return 0.5 * (X + X.T)


# --------------------------------------------------------------------------
# NARE / UQME
# --------------------------------------------------------------------------

def sda_nare(At, Dt, Ft, Qt, tol=1e-13, maxiter=30, return_history=False):
    """Structured doubling for the NARE ``Y Ft Y + At Y + Y Dt = Qt``.

    Returns the solution whose closed-loop matrix ``Dt + Ft Y`` carries the
    eigenvalues inside the unit disc.  The iteration stops as soon as
    ``min(|E|_1, |F|_1) < tol``.

    Raises
    ------
    SdaNotConverged
        After ``maxiter`` doubling steps; the last iterate is attached as
        ``exc.best``.
    SingularPivot
        If one of the matrices to invert is numerically singular.
    """
    At, Dt, Ft, Qt = (np.asarray(M) for M in (At, Dt, Ft, Qt))
    nu, nv = At.shape[0], Dt.shape[0]
    if Ft.shape != (nv, nu) or Qt.shape != (nu, nv):
        raise DimensionMismatch("inconsistent NARE coefficient shapes")
    L = np.block([[np.eye(nv), Ft], [np.zeros((nu, nv)), -At]])
    M = np.block([[Dt, np.zeros((nv, nu))], [Qt, np.eye(nu)]])
    S = la.lu_solve(_lu(L, what="SDA initial pencil"), M)
    E, G = S[:nv, :nv], -S[:nv, nv:]
    P, F = -S[nv:, :nv], S[nv:, nv:]
    history = []
    Iv, Iu = np.eye(nv), np.eye(nu)
    for _ in range(maxiter + 1):
        err = min(np.linalg.norm(E, 1), np.linalg.norm(F, 1))
        history.append(err)
        if err < tol:
            return (P, history) if return_history else P
        if len(history) > maxiter:
            break
        E1 = la.lu_solve(_lu((Iv - G @ P).T), E.T).T
        F1 = la.lu_solve(_lu((Iu - P @ G).T), F.T).T
        G = G + E1 @ G @ F
        P = P + F1 @ P @ E
        E = E1 @ E
        F = F1 @ F
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(G))):
            raise SingularPivot("SDA iterates diverged")
    raise SdaNotConverged(f"SDA did not converge in {maxiter} iterations", best=P,
                          history=history)


def cyclic_reduction(A, B, C, tol=1e-13, maxiter=50, return_iterations=False):
    """Minimal solution of ``A X^2 + B X + C = 0`` by cyclic reduction.

    Stops when ``min(|A_t|_1, |C_t|_1) < tol * |B|_1`` and returns
    ``-Bhat_t^{-1} C``.

    Raises
    ------
    CrNotConverged
        If the stopping rule is not met within ``maxiter`` steps.
    SingularPivot
        If an intermediate ``B_t`` is numerically singular.
    """
    A, B, C = (np.array(M, dtype=float) for M in (A, B, C))
    _square(A, B, C)
    C0 = C.copy()
    Bh = B.copy()
    scale = max(np.linalg.norm(B, 1), _EPS)
    for it in range(maxiter + 1):
        if min(np.linalg.norm(A, 1), np.linalg.norm(C, 1)) < tol * scale:
            X = -la.lu_solve(_lu(Bh, what="Bhat"), C0)
            return (X, it) if return_iterations else X
        if it == maxiter:
            break
        lu = _lu(B, what=f"B^({it})")
        BA = la.lu_solve(lu, A)
        BC = la.lu_solve(lu, C)
        CBA = C @ BA
        ABC = A @ BC
        A, B, Bh, C = -A @ BA, B - CBA - ABC, Bh - ABC, -C @ BC
    X = -la.lu_solve(_lu(Bh, what="Bhat"), C0)
    raise CrNotConverged(f"cyclic reduction did not converge in {maxiter} steps", best=X)


def _linearize(A, B, C):
    n = A.shape[0]
    I, Z = np.eye(n), np.zeros((n, n))
    M = np.block([[Z, I], [-C, -B]])
    N = np.block([[I, Z], [Z, A]])
    return M, N


def _pencil_moduli(A, B, C):
    M, N = _linearize(A, B, C)
    ab = la.eigvals(M, N, homogeneous_eigvals=True)
    alpha, beta = np.abs(ab[0]), np.abs(ab[1])
    scale = max(np.linalg.norm(M, 1), np.linalg.norm(N, 1), _EPS)
    degenerate = (alpha <= 1e2 * _EPS * scale) & (beta <= 1e2 * _EPS * scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        mod = np.where(beta > 0, alpha / np.where(beta > 0, beta, 1.0), np.inf)
    mod[degenerate] = np.nan
    return mod


def spectral_split_check(A, B, C, tol=1e-8):
    """Count the eigenvalues of ``l^2 A + l B + C`` inside/on/outside the unit circle.

    Infinite eigenvalues count as outside; undetermined eigenvalues of a
    singular pencil are reported as on the circle.
    """
    A, B, C = (np.asarray(M, dtype=float) for M in (A, B, C))
    _square(A, B, C)
    mod = _pencil_moduli(A, B, C)
    nan = np.isnan(mod)
    inside = int(np.sum(~nan & (mod < 1 - tol)))
    outside = int(np.sum(~nan & (mod > 1 + tol)))
    return SpectralSplit(inside, int(mod.size - inside - outside), outside)


def dense_uqme_oracle(A, B, C, tol=1e-8):
    """Minimal UQME solution from the ``n`` smallest-modulus eigenpairs.

    ``X = V diag(l_1..l_n) V^{-1}`` with ``V`` the top half of the
    eigenvectors of the companion linearization.
    """
    A, B, C = (np.asarray(M, dtype=float) for M in (A, B, C))
    n = _square(A, B, C)
    M, N = _linearize(A, B, C)
    ab, vr = la.eig(M, N, homogeneous_eigvals=True)
    alpha, beta = ab
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(np.abs(beta) > 0, alpha / np.where(np.abs(beta) > 0, beta, 1.0), np.inf)
    mod = np.abs(lam)
    mod = np.where(np.isnan(mod), np.inf, mod)
    order = np.argsort(mod, kind="stable")
    m_in, m_out = mod[order[n - 1]], mod[order[n]]
    if not np.isfinite(m_in) or m_in >= m_out * (1 - tol):
        raise SplitViolation(f"|lambda_n|={m_in:.3e} not separated from |lambda_n+1|={m_out:.3e}")
    sel = order[:n]
    V = vr[:n, sel]
    if np.linalg.cond(V) > 1 / (1e3 * _EPS):
        raise SingularEigenbasis("eigenvector matrix of the minimal eigenvalues is singular")
    X = la.solve(V.T, (V * lam[sel]).T).T
    if np.linalg.norm(X.imag) > 1e-6 * max(np.linalg.norm(X.real), 1.0):
        raise SingularEigenbasis("minimal eigenvalue set is not closed under conjugation")
    return X.real.copy()


def solve_dense_sylvester(A, B, C):
    """Solve ``A X + X B = C`` through its Kronecker linearization."""
    A, B, C = (np.asarray(M, dtype=float) for M in (A, B, C))
    m, n = A.shape[0], B.shape[0]
    if A.shape != (m, m) or B.shape != (n, n) or C.shape != (m, n):
        raise DimensionMismatch("inconsistent Sylvester shapes")
    K = np.kron(np.eye(n), A) + np.kron(B.T, np.eye(m))
    sep = np.min(np.abs(la.eigvals(A)[:, None] + la.eigvals(B)[None, :])) if m and n else 1.0
    if sep <= 1e2 * _EPS * max(np.linalg.norm(A, 1) + np.linalg.norm(B, 1), _EPS):
        raise SingularOperator("spectra of A and -B overlap")
    x = la.solve(K, C.reshape(-1, order="F"))
    return x.reshape((m, n), order="F")
