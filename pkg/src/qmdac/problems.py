"""Benchmark problem generators and residual metrics.

All generators return sparse (CSR) coefficients and are deterministic for a
fixed seed; random numbers come from numpy's PCG64 generator.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch
from .hodlr import HodlrMatrix, norm2_est


@dataclass
class CareProblem:
    """Coefficients of ``A'XE + E'XA - E'XBB'XE + Q = 0`` (``E=None`` is the identity)."""

    A: sp.csr_matrix
    B: np.ndarray
    Q: sp.csr_matrix
    E: sp.csr_matrix | None = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.A.shape[0]


@dataclass
class UqmeProblem:
    """Coefficients of ``A X^2 + B X + C = 0``."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.A.shape[0]


def _tridiag(lower, diag, upper, n):
    return sp.diags([np.broadcast_to(lower, (n - 1,)), np.broadcast_to(diag, (n,)),
                     np.broadcast_to(upper, (n - 1,))], [-1, 0, 1], shape=(n, n), format="csr")


def gen_care_ex1(n, seed=0):
    """Tridiagonal CARE with random inputs.

    ``A = tridiag(1, -2, 1)``, ``B`` is ``n x 2`` standard normal and
    ``Q = Q0 + (0.1 - theta) I`` with ``Q0`` a random symmetric tridiagonal
    matrix and ``theta`` its smallest eigenvalue, so ``lambda_min(Q) = 0.1``.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    rng = np.random.default_rng(seed)
    A = _tridiag(1.0, -2.0, 1.0, n)
    B = rng.standard_normal((n, 2))
    d = rng.standard_normal(n)
    e = rng.standard_normal(n - 1)
    theta = la.eigvalsh_tridiagonal(d, e, select="i", select_range=(0, 0))[0]
    Q = _tridiag(e, d + (0.1 - theta), e, n)
    return CareProblem(A, B, Q, name="care-ex1", meta={"seed": seed, "theta": theta})


def perfect_shuffle(n):
    """Permutation interleaving the two halves: ``i -> 2i``, ``m + i -> 2i + 1``."""
    m = n // 2
    p = np.empty(n, dtype=int)
    p[0::2] = np.arange(m)
    p[1::2] = m + np.arange(m)
    return p


def gen_care_ex2(n):
    """Stabilized second-order system CARE, reordered to banded form.

    With ``m = n / 2``: ``A = [[0, M], [I, -I]]``,
    ``M = tridiag(1, -2, 1) / 4 - (e_1 e_1' + e_m e_m') / 2``,
    ``B = [e_{m+1}, -e_{2m}] / 4`` and ``Q = I``.  The initial stabilizing
    guess ``X0 = Z0 Z0'`` with ``Z0 = 8 [[-e_m, e_1], [-e_m, e_1]]`` yields
    ``At = A - B B' X0`` and ``Qt = Q + A'X0 + X0 A - X0 B B' X0``.  ``At``
    and ``Qt`` are divided by ``||A||_2`` and ``B`` by its square root, then
    everything is permuted by :func:`perfect_shuffle`.  The solution of the
    returned CARE is ``X - X0`` for the solution ``X`` of the original
    equation, in shuffled order.
    """
    if n < 4 or n % 2:
        raise ValueError("n must be even and at least 4")
    m = n // 2
    I = sp.identity(m, format="csr")
    M = _tridiag(1.0, -2.0, 1.0, m) / 4.0
    M = M.tolil()
    M[0, 0] -= 0.5
    M[m - 1, m - 1] -= 0.5
    A = sp.bmat([[None, M.tocsr()], [I, -I]], format="csr")
    B = np.zeros((n, 2))
    B[m, 0] = 0.25
    B[n - 1, 1] = -0.25
    Z0 = np.zeros((n, 2))
    Z0[m - 1, 0] = Z0[n - 1, 0] = -8.0
    Z0[0, 1] = Z0[m, 1] = 8.0
    Z0 = sp.csr_matrix(Z0)
    X0 = Z0 @ Z0.T
    Bs = sp.csr_matrix(B)
    F = Bs @ Bs.T
    At = A - F @ X0
    Qt = sp.identity(n, format="csr") + A.T @ X0 + X0 @ A - X0 @ F @ X0
    scale = float(spla.svds(A, k=1, return_singular_vectors=False, v0=np.ones(n))[0])
    p = perfect_shuffle(n)
    At = (At / scale).tocsr()[p][:, p]
    Qt = (Qt / scale).tocsr()[p][:, p]
    Qt = 0.5 * (Qt + Qt.T)
    Bt = B[p] / np.sqrt(scale)
    return CareProblem(sp.csr_matrix(At), Bt, sp.csr_matrix(Qt), name="care-ex2",
                       meta={"scale": scale, "X0": X0.tocsr()[p][:, p]})


def gen_gcare_ex3(n, kappa=1.0, support=(0.2, 0.5)):
    """Stand-in for a finite-element heat equation GCARE.

    Linear elements on ``(0, 1)`` with mesh width ``h = 1 / (n + 1)``:
    ``E = h / 6 tridiag(1, 4, 1)`` (mass matrix),
    ``A = -kappa / h tridiag(-1, 2, -1)`` (stiffness), ``B`` the single
    column ``h`` on nodes inside ``support`` and zero elsewhere, ``Q = I``.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    h = 1.0 / (n + 1)
    E = _tridiag(h / 6, 4 * h / 6, h / 6, n)
    A = _tridiag(kappa / h, -2 * kappa / h, kappa / h, n)
    x = h * np.arange(1, n + 1)
    B = (h * ((x >= support[0]) & (x <= support[1]))).reshape(n, 1)
    Q = sp.identity(n, format="csr")
    return CareProblem(A, B, Q, E=E, name="gcare-ex3", meta={"h": h, "kappa": kappa})


def gen_dqbd(n, seed=0):
    """Random double quasi-birth-death process.

    The three central diagonals of ``A``, ``B'``, ``C`` are uniform on
    ``[0, 1]``; every row of the three matrices is divided by the row sum of
    ``A + B' + C`` and ``B = B' - I``.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(3):
        mats.append(_tridiag(rng.random(n - 1), rng.random(n), rng.random(n - 1), n))
    s = np.asarray((mats[0] + mats[1] + mats[2]).sum(axis=1)).ravel()
    Dinv = sp.diags(1.0 / s)
    A, Bp, C = (sp.csr_matrix(Dinv @ M) for M in mats)
    B = sp.csr_matrix(Bp - sp.identity(n))
    return UqmeProblem(A, B, C, name="dqbd-random", meta={"seed": seed})


def gen_mass_spring(n):
    """Damped mass-spring system: ``A = I``, ``B = tridiag(-10, 30, -10)`` with
    corner entries 20, ``C = tridiag(-5, 15, -5)``."""
    if n < 3:
        raise ValueError("n must be at least 3")
    A = sp.identity(n, format="csr")
    d = np.full(n, 30.0)
    d[0] = d[-1] = 20.0
    B = _tridiag(-10.0, d, -10.0, n)
    C = _tridiag(-5.0, 15.0, -5.0, n)
    return UqmeProblem(A, B, C, name="mass-spring")


def load_care_mtx(a_path, b_path, q_path=None, e_path=None):
    """CARE coefficients from Matrix Market files (``Q`` defaults to ``I``)."""
    A = sp.csr_matrix(scipy.io.mmread(a_path))
    B = np.asarray(sp.csr_matrix(scipy.io.mmread(b_path)).toarray())
    Q = sp.identity(A.shape[0], format="csr") if q_path is None else sp.csr_matrix(scipy.io.mmread(q_path))
    E = None if e_path is None else sp.csr_matrix(scipy.io.mmread(e_path))
    return CareProblem(A, B, Q, E=E, name="file")


def load_uqme_mtx(a_path, b_path, c_path):
    A, B, C = (sp.csr_matrix(scipy.io.mmread(p)) for p in (a_path, b_path, c_path))
    return UqmeProblem(A, B, C, name="file")


# residuals ---------------------------------------------------------------

def _mv(M, x):
    return M.matvec(x) if isinstance(M, HodlrMatrix) else M @ x


def _rmv(M, x):
    return M.T.matvec(x) if isinstance(M, HodlrMatrix) else M.T @ x


@dataclass(frozen=True)
class Residual:
    value: float
    absolute: bool = False

    def __float__(self):
        return self.value


def care_residual(problem, X, iters=30, return_info=False):
    """Relative residual ``||A'XE + E'XA - E'XBB'XE + Q||_2 / ||X||_2``.

    Norms are estimated with :func:`~qmdac.hodlr.norm2_est`; ``X`` may be
    dense or HODLR and is assumed symmetric (so is the residual).  If ``||X|| = 0`` the absolute residual is returned and
    flagged (``return_info=True`` gives a :class:`Residual`).
    """
    A, B, Q, E = problem.A, np.asarray(problem.B), problem.Q, problem.E
    n = A.shape[0]
    if X.shape != (n, n):
        raise DimensionMismatch(f"solution has shape {X.shape}, expected {(n, n)}")
    Ev = (lambda v: v) if E is None else (lambda v: E @ v)
    Etv = (lambda v: v) if E is None else (lambda v: E.T @ v)

    def mv(v):
        XEv = _mv(X, Ev(v))
        return (A.T @ XEv + Etv(_mv(X, A @ v))
                - Etv(_mv(X, B @ (B.T @ XEv))) + Q @ v)

    r = norm2_est(((n, n), mv, mv), iters)
    x = norm2_est(X, iters)
    if x == 0.0:
        res = Residual(r, absolute=True)
    else:
        res = Residual(r / x)
    return res if return_info else res.value


def uqme_residual(problem, X, iters=30):
    """``||A X^2 + B X + C||_2`` estimated by Golub-Kahan bidiagonalization."""
    A, B, C = problem.A, problem.B, problem.C
    n = A.shape[0]
    if X.shape != (n, n):
        raise DimensionMismatch(f"solution has shape {X.shape}, expected {(n, n)}")

    def mv(v):
        Xv = _mv(X, v)
        return A @ _mv(X, Xv) + B @ Xv + C @ v

    def rmv(v):
        return _rmv(X, _rmv(X, A.T @ v)) + _rmv(X, B.T @ v) + C.T @ v

    return norm2_est(((n, n), mv, rmv), iters)


def dense_care_residual(problem, X):
    """Dense evaluation of :func:`care_residual` (oracle for small ``n``)."""
    A, B, Q = problem.A.toarray(), np.asarray(problem.B), problem.Q.toarray()
    E = np.eye(A.shape[0]) if problem.E is None else problem.E.toarray()
    X = X.to_dense() if isinstance(X, HodlrMatrix) else np.asarray(X)
    R = A.T @ X @ E + E.T @ X @ A - E.T @ X @ B @ B.T @ X @ E + Q
    return np.linalg.norm(R, 2) / np.linalg.norm(X, 2)


def dense_uqme_residual(problem, X):
    A, B, C = problem.A.toarray(), problem.B.toarray(), problem.C.toarray()
    X = X.to_dense() if isinstance(X, HodlrMatrix) else np.asarray(X)
    return np.linalg.norm(A @ X @ X + B @ X + C, 2)
