"""Factored low-rank matrices, rank truncation and correction right-hand sides."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import DimensionMismatch, SingularCoefficient


@dataclass(frozen=True)
class SymLowRank:
    """Symmetric factorization ``U @ D @ U.T`` with a small symmetric core ``D``."""

    U: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U)
        if U.ndim == 1:
            U = U[:, None]
        D = np.atleast_2d(np.asarray(self.D))
        if D.shape != (U.shape[1], U.shape[1]):
            raise DimensionMismatch(f"core {D.shape} does not match factor {U.shape}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "D", 0.5 * (D + D.T))

    @classmethod
    def zeros(cls, n, dtype=float):
        return cls(np.zeros((n, 0), dtype=dtype), np.zeros((0, 0), dtype=dtype))

    @property
    def n(self):
        return self.U.shape[0]

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def rank(self):
        return self.U.shape[1]

    @property
    def T(self):
        return self

    def to_dense(self):
        M = self.U @ self.D @ self.U.T
        return 0.5 * (M + M.T)

    def __matmul__(self, x):
        return self.U @ (self.D @ (self.U.T @ x))

    def __neg__(self):
        return SymLowRank(self.U, -self.D)

    def scaled(self, alpha):
        return SymLowRank(self.U, alpha * self.D)


@dataclass(frozen=True)
class GenLowRank:
    """General factorization ``U @ V.T``."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U, V = np.asarray(self.U), np.asarray(self.V)
        if U.ndim == 1:
            U = U[:, None]
        if V.ndim == 1:
            V = V[:, None]
        if U.shape[1] != V.shape[1]:
            raise DimensionMismatch(f"factor widths differ: {U.shape} vs {V.shape}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @classmethod
    def zeros(cls, m, n=None, dtype=float):
        n = m if n is None else n
        return cls(np.zeros((m, 0), dtype=dtype), np.zeros((n, 0), dtype=dtype))

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    @property
    def rank(self):
        return self.U.shape[1]

    @property
    def T(self):
        return GenLowRank(self.V, self.U)

    def to_dense(self):
        return self.U @ self.V.T

    def __matmul__(self, x):
        return self.U @ (self.V.T @ x)

    def __neg__(self):
        return GenLowRank(-self.U, self.V)

    def __add__(self, other):
        return GenLowRank(np.hstack([self.U, other.U]), np.hstack([self.V, other.V]))


def _keep(values, tau):
    a = np.abs(values)
    if a.size == 0 or a.max() == 0:
        return np.zeros(a.shape, dtype=bool)
    # tau is relative to the largest magnitude
    return a > tau * a.max()


def compress_sym(f, tau_sigma):
    """Truncate ``U D U'`` via a thin QR of ``U`` and an eigendecomposition.

    Eigenvalues with magnitude below ``tau_sigma`` times the largest one are
    dropped; the returned ``U`` has orthonormal columns and ``D`` is
    diagonal.
    """
    if tau_sigma < 0:
        raise ValueError("tau_sigma must be non-negative")
    if f.rank == 0:
        return f
    Qu, Ru = la.qr(f.U, mode="economic", check_finite=False)
    M = Ru @ f.D @ Ru.T
    lam, S = la.eigh(0.5 * (M + M.T))
    keep = _keep(lam, tau_sigma)
    return SymLowRank(Qu @ S[:, keep], np.diag(lam[keep]))


def compress_gen(f, tau_sigma):
    """Two-sided analogue of :func:`compress_sym` using an SVD of the core.

    Works for complex factors too (``U V.T`` with a plain transpose).
    """
    if tau_sigma < 0:
        raise ValueError("tau_sigma must be non-negative")
    if f.rank == 0:
        return f
    Qu, Ru = la.qr(f.U, mode="economic", check_finite=False)
    Qv, Rv = la.qr(f.V, mode="economic", check_finite=False)
    W, s, Zh = la.svd(Ru @ Rv.T, full_matrices=False, check_finite=False)
    keep = _keep(s, tau_sigma)
    return GenLowRank(Qu @ (W[:, keep] * s[keep]), Qv @ Zh[keep].T)


def orthonormalize(W, basis=None, tol=1e-12):
    """Orthonormalize the block ``W`` against ``basis`` and itself.

    Two passes of block Gram-Schmidt are followed by an SVD; directions
    whose singular value falls below ``tol`` times the norm of the incoming
    block are deflated, so the result may have fewer columns than ``W``.
    """
    W = np.array(W, copy=True)
    if W.ndim == 1:
        W = W[:, None]
    ref = np.linalg.norm(W, 2) if W.size else 0.0
    if ref == 0.0:
        return W[:, :0]
    if basis is not None and basis.shape[1]:
        for _ in range(2):
            W -= basis @ (basis.conj().T @ W)
    P, s, _ = la.svd(W, full_matrices=False, check_finite=False)
    P = P[:, s > tol * ref]
    if basis is not None and basis.shape[1] and P.shape[1]:
        P -= basis @ (basis.conj().T @ P)
        P, _ = la.qr(P, mode="economic", check_finite=False)
    return P


def _swap(k):
    Z, I = np.zeros((k, k)), np.eye(k)
    return np.block([[Z, I], [I, Z]])


def _apply(op, M):
    if op is None:
        return np.zeros_like(M)
    return op(M) if callable(op) and not hasattr(op, "__matmul__") else op @ M


def _dims(n, *factors):
    for f in factors:
        if f is not None and f.U.shape[0] != n:
            raise DimensionMismatch(f"factor with {f.U.shape[0]} rows, expected {n}")


def _finish(U, D, tau_sigma):
    f = SymLowRank(U, la.block_diag(*D) if D else np.zeros((0, 0)))
    return f if tau_sigma is None else compress_sym(f, tau_sigma)


def assemble_care_rhs(dA, dQ, dF, X0, tau_sigma=None, n=None):
    """Factored constant term of the CARE correction equation.

    Represents ``dQ + dA' X0 + X0 dA - X0 dF X0`` as ``U D U'`` with
    ``U = [U_Q, V_A, X0 U_A, X0 U_F]`` and
    ``D = diag(D_Q, [[0, I], [I, 0]], -D_F)``.  ``None`` stands for a zero
    modification; ``tau_sigma=None`` skips the final compression.
    """
    n = n or next(f.U.shape[0] for f in (dA, dQ, dF) if f is not None)
    _dims(n, dA, dQ, dF)
    U, D = [], []
    if dQ is not None and dQ.rank:
        U.append(dQ.U)
        D.append(dQ.D)
    if dA is not None and dA.rank:
        U += [dA.V, _apply(X0, dA.U)]
        D.append(_swap(dA.rank))
    if dF is not None and dF.rank:
        U.append(_apply(X0, dF.U))
        D.append(-dF.D)
    if not U:
        return SymLowRank.zeros(n)
    return _finish(np.hstack(U), D, tau_sigma)


def assemble_gcare_rhs(dA, dE, dQ, dF, X0, E, E0, A0=None, F0=None, tau_sigma=None, n=None):
    """Factored constant term of the generalized CARE correction equation.

    The constant term is the difference of the modified and the reference
    GCARE operators evaluated at ``X0``::

        dQ + (A'X0E - A0'X0E0) + (...)' - (E'X0FX0E - E0'X0F0X0E0)

    assembled term by term.  With ``K = X0 F0 X0`` the ``dE`` contribution
    is ``[P - W, V_E] [[0, I], [I, -S]] [P - W, V_E]'`` where
    ``P = A0' X0 U_E``, ``W = E0' K U_E`` and ``S = U_E' K U_E``.  ``A0`` and
    ``F0`` are only needed when ``dE`` is non-zero.
    """
    n = n or next(f.U.shape[0] for f in (dA, dE, dQ, dF) if f is not None)
    _dims(n, dA, dE, dQ, dF)
    U, D = [], []

    def EtX0(M):
        Y = _apply(X0, M)
        return Y if E is None else E.T @ Y

    if dQ is not None and dQ.rank:
        U.append(dQ.U)
        D.append(dQ.D)
    if dA is not None and dA.rank:
        U += [dA.V, EtX0(dA.U)]
        D.append(_swap(dA.rank))
    if dF is not None and dF.rank:
        U.append(EtX0(dF.U))
        D.append(-dF.D)
    if dE is not None and dE.rank:
        if A0 is None or F0 is None:
            raise ValueError("A0 and F0 are required when dE is non-zero")
        X0UE = _apply(X0, dE.U)
        P = A0.T @ X0UE
        KUE = _apply(X0, F0 @ X0UE)
        W = E0.T @ KUE if E0 is not None else KUE
        S = dE.U.T @ KUE
        k = dE.rank
        U += [P - W, dE.V]
        D.append(np.block([[np.zeros((k, k)), np.eye(k)], [np.eye(k), -S]]))
    if not U:
        return SymLowRank.zeros(n)
    return _finish(np.hstack(U), D, tau_sigma)


def assemble_uqme_rhs(dA, dB, dC, X0, A_solve, tau_sigma=None, n=None):
    """Factors ``U V'`` of ``A^{-1} (dA X0^2 + dB X0 + dC)``.

    ``U = [A^{-1}U_A, A^{-1}U_B, A^{-1}U_C]`` and
    ``V = [(X0')^2 V_A, X0' V_B, V_C]``; ``A_solve`` applies ``A^{-1}``.
    """
    n = n or next(f.U.shape[0] for f in (dA, dB, dC) if f is not None)
    _dims(n, dA, dB, dC)
    Us, Vs = [], []
    X0t = X0.T if X0 is not None else None
    for f, power in ((dA, 2), (dB, 1), (dC, 0)):
        if f is None or f.rank == 0:
            continue
        V = f.V
        for _ in range(power):
            V = _apply(X0t, V)
        Us.append(f.U)
        Vs.append(V)
    if not Us:
        return GenLowRank.zeros(n)
    U = np.hstack(Us)
    try:
        U = A_solve(U)
    except np.linalg.LinAlgError as exc:
        raise SingularCoefficient("solve with the quadratic coefficient failed") from exc
    if not np.all(np.isfinite(U)):
        raise SingularCoefficient("solve with the quadratic coefficient failed")
    f = GenLowRank(U, np.hstack(Vs))
    return f if tau_sigma is None else compress_gen(f, tau_sigma)
