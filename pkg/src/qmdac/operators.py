"""Uniform access to coefficient matrices stored dense, sparse or as HODLR."""

import warnings

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, SingularPivot
from .hodlr import HodlrMatrix, HodlrLu, add

_EPS = np.finfo(float).eps


class Factor:
    """A factorized square matrix with ``solve(b, trans=False)``."""

    def __init__(self, M, tau_sigma=None, exc=SingularPivot, what="matrix"):
        self.n = M.shape[0]
        self.kind = None
        try:
            if isinstance(M, HodlrMatrix):
                self.kind, self.f = "hodlr", HodlrLu(M, tau_sigma)
            elif sp.issparse(M):
                self.kind, self.f = "sparse", spla.splu(sp.csc_matrix(M))
                d = np.abs(self.f.U.diagonal())
                if d.size and d.min() <= self.n * _EPS * d.max():
                    raise SingularPivot("singular pivot")
            else:
                M = np.asarray(M)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", la.LinAlgWarning)
                    lu, piv = la.lu_factor(M, check_finite=False)
                d = np.abs(np.diag(lu))
                if d.size and (not np.all(np.isfinite(lu)) or d.min() <= self.n * _EPS * max(d.max(), 1e-300)):
                    raise SingularPivot("singular pivot")
                self.kind, self.f = "dense", (lu, piv)
        except (SingularPivot, RuntimeError, np.linalg.LinAlgError, ValueError) as exc_:
            raise exc(f"{what} is numerically singular") from exc_

    def solve(self, b, trans=False):
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"right-hand side has {b.shape[0]} rows, expected {self.n}")
        if self.kind == "hodlr":
            return self.f.solve(b, trans)
        if self.kind == "sparse":
            dtype = np.result_type(self.f.U.dtype, b.dtype)
            if dtype != self.f.U.dtype:
                # splu of a real matrix cannot take complex right-hand sides
                return (self.f.solve(np.ascontiguousarray(b.real), trans="T" if trans else "N")
                        + 1j * self.f.solve(np.ascontiguousarray(b.imag), trans="T" if trans else "N"))
            return self.f.solve(np.ascontiguousarray(b), trans="T" if trans else "N")
        lu, piv = self.f
        dtype = np.result_type(lu.dtype, b.dtype)
        return la.lu_solve((lu.astype(dtype, copy=False), piv), b.astype(dtype, copy=False),
                           trans=1 if trans else 0, check_finite=False)


def as_matrix(M):
    """Accept HODLR, scipy sparse or array-likes; arrays become ndarrays."""
    if M is None or isinstance(M, HodlrMatrix) or sp.issparse(M):
        return M
    return np.atleast_2d(np.asarray(M))


def matvec(M, x):
    return M.matvec(x) if isinstance(M, HodlrMatrix) else M @ x


def rmatvec(M, x):
    """``M' x`` without forming the transpose of a HODLR matrix twice."""
    if isinstance(M, HodlrMatrix):
        return M.T.matvec(x)
    return M.T @ x


def transpose(M):
    return M.T


def combine(A, E, xi, tau_sigma=None):
    """Return ``A - xi E`` (``E=None`` means the identity)."""
    if isinstance(A, HodlrMatrix):
        if E is None:
            return A.shifted(xi)
        return add(A, E, tau_sigma, alpha=-xi)
    if sp.issparse(A):
        I = sp.identity(A.shape[0], format="csc") if E is None else sp.csc_matrix(E)
        return sp.csc_matrix(A - xi * I)
    I = np.eye(A.shape[0]) if E is None else np.asarray(E if not sp.issparse(E) else E.toarray())
    return A - xi * I
