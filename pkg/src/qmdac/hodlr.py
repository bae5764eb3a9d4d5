"""Hierarchically off-diagonal low-rank (HODLR) matrices.

A :class:`HodlrMatrix` is either a dense leaf or a 2x2 node whose diagonal
blocks are again HODLR matrices and whose off-diagonal blocks are stored as
:class:`~qmdac.lowrank.GenLowRank` factors.  Nodes always split at
``ceil(n / 2)``.  Real and complex scalars are both supported; the dtype of
a matrix is the dtype of its data.
"""

import struct
import warnings

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import DimensionMismatch, LeafNotSplittable, SingularPivot
from .lowrank import GenLowRank, SymLowRank, compress_gen

DEFAULT_NMIN = 256


def _half(n):
    return (n + 1) // 2


def _truncated_factors(M, tau):
    """Low-rank factors of a dense block via a truncated SVD."""
    m, n = M.shape
    if M.size == 0 or not np.any(M):
        return GenLowRank.zeros(m, n, dtype=M.dtype)
    W, s, Zh = la.svd(M, full_matrices=False, check_finite=False)
    keep = s > tau * s[0]
    return GenLowRank(W[:, keep] * s[keep], Zh[keep].T)


def _exact_factors(S):
    """Exact (non-truncated) factors of a sparse block.

    Only the non-zero rows and columns are touched: for a block whose
    non-zeros lie in ``r`` rows and ``c`` columns the factors have
    ``min(r, c)`` columns, one of them being a selection of unit vectors.
    """
    S = sp.coo_matrix(S)
    m, n = S.shape
    rows, cols = np.unique(S.row), np.unique(S.col)
    if rows.size == 0:
        return GenLowRank.zeros(m, n, dtype=S.dtype)
    sub = S.tocsr()[rows][:, cols].toarray()
    if rows.size <= cols.size:
        U = np.zeros((m, rows.size), dtype=S.dtype)
        U[rows, np.arange(rows.size)] = 1
        V = np.zeros((n, rows.size), dtype=S.dtype)
        V[cols] = sub.T
    else:
        U = np.zeros((m, cols.size), dtype=S.dtype)
        U[rows] = sub
        V = np.zeros((n, cols.size), dtype=S.dtype)
        V[cols, np.arange(cols.size)] = 1
    return GenLowRank(U, V)


def _compress(f, tau):
    return f if tau is None else compress_gen(f, tau)


def _promote(*arrays):
    return np.result_type(*[a.dtype for a in arrays])


class HodlrMatrix:
    """Square HODLR matrix.

    Parameters
    ----------
    dense
        Dense data of a leaf; ``None`` for an inner node.
    a11, a22
        Diagonal blocks of an inner node.
    a12, a21
        Off-diagonal blocks of an inner node as :class:`GenLowRank`.

    Use the ``from_*`` constructors rather than calling this directly.
    """

    __slots__ = ("n", "dense", "a11", "a22", "a12", "a21")

    def __init__(self, dense=None, a11=None, a22=None, a12=None, a21=None):
        if dense is not None:
            dense = np.asarray(dense)
            if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
                raise DimensionMismatch(f"leaf must be square, got {dense.shape}")
            self.n = dense.shape[0]
        else:
            n1, n2 = a11.n, a22.n
            if a12.shape != (n1, n2) or a21.shape != (n2, n1):
                raise DimensionMismatch("off-diagonal blocks do not match the diagonal blocks")
            if n1 != _half(n1 + n2):
                raise DimensionMismatch(f"unbalanced partition {n1} + {n2}")
            self.n = n1 + n2
        self.dense, self.a11, self.a22, self.a12, self.a21 = dense, a11, a22, a12, a21

    # construction -------------------------------------------------------

    @classmethod
    def from_dense(cls, M, n_min=DEFAULT_NMIN, tau_sigma=1e-12):
        """Convert a dense matrix, compressing off-diagonal blocks by SVD.

        Singular values below ``tau_sigma`` times the largest singular value
        of the block are dropped.
        """
        M = np.asarray(M)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got {M.shape}")
        n = M.shape[0]
        if n <= n_min:
            return cls(dense=M.copy())
        h = _half(n)
        return cls(
            a11=cls.from_dense(M[:h, :h], n_min, tau_sigma),
            a22=cls.from_dense(M[h:, h:], n_min, tau_sigma),
            a12=_truncated_factors(M[:h, h:], tau_sigma),
            a21=_truncated_factors(M[h:, :h], tau_sigma),
        )

    @classmethod
    def from_sparse(cls, S, n_min=DEFAULT_NMIN, tau_sigma=None):
        """Convert a scipy sparse matrix.

        Off-diagonal blocks are factored exactly from their non-zero pattern
        (for banded matrices the rank is at most the bandwidth).  Pass
        ``tau_sigma`` to additionally recompress them.
        """
        S = sp.csr_matrix(S)
        if S.shape[0] != S.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got {S.shape}")
        return cls._from_csr(S, n_min, tau_sigma)

    @classmethod
    def _from_csr(cls, S, n_min, tau):
        n = S.shape[0]
        if n <= n_min:
            return cls(dense=S.toarray())
        h = _half(n)
        return cls(
            a11=cls._from_csr(S[:h, :h], n_min, tau),
            a22=cls._from_csr(S[h:, h:], n_min, tau),
            a12=_compress(_exact_factors(S[:h, h:]), tau),
            a21=_compress(_exact_factors(S[h:, :h]), tau),
        )

    @classmethod
    def from_banded(cls, diagonals, n, n_min=DEFAULT_NMIN):
        """Build from a mapping ``offset -> scalar or array`` of diagonals.

        Examples
        --------
        >>> T = HodlrMatrix.from_banded({-1: 1.0, 0: -2.0, 1: 1.0}, 8, n_min=2)
        >>> T.hodlr_rank()
        1
        """
        offsets = sorted(diagonals)
        data = [np.broadcast_to(np.asarray(diagonals[k]), (n - abs(k),)) for k in offsets]
        return cls.from_sparse(sp.diags(data, offsets, shape=(n, n)), n_min)

    @classmethod
    def identity(cls, n, n_min=DEFAULT_NMIN, dtype=float):
        return cls.from_sparse(sp.identity(n, dtype=dtype, format="csr"), n_min)

    @classmethod
    def zeros_like_tree(cls, A, dtype=None):
        """Zero matrix with the same partition as ``A``."""
        dtype = dtype or A.dtype
        if A.is_leaf:
            return cls(dense=np.zeros((A.n, A.n), dtype=dtype))
        return cls(
            a11=cls.zeros_like_tree(A.a11, dtype),
            a22=cls.zeros_like_tree(A.a22, dtype),
            a12=GenLowRank.zeros(A.a11.n, A.a22.n, dtype=dtype),
            a21=GenLowRank.zeros(A.a22.n, A.a11.n, dtype=dtype),
        )

    @classmethod
    def block_diag(cls, X11, X22):
        """Embed two diagonal blocks with zero off-diagonal blocks."""
        if X11.n != _half(X11.n + X22.n):
            raise DimensionMismatch(f"unbalanced partition {X11.n} + {X22.n}")
        dtype = _promote(X11, X22)
        return cls(
            a11=X11,
            a22=X22,
            a12=GenLowRank.zeros(X11.n, X22.n, dtype=dtype),
            a21=GenLowRank.zeros(X22.n, X11.n, dtype=dtype),
        )

    # basic properties ---------------------------------------------------

    @property
    def is_leaf(self):
        return self.dense is not None

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def dtype(self):
        if self.is_leaf:
            return self.dense.dtype
        return np.result_type(self.a11.dtype, self.a22.dtype, self.a12.U.dtype, self.a21.U.dtype)

    @property
    def n_min(self):
        """Size of the largest leaf."""
        return self.n if self.is_leaf else max(self.a11.n_min, self.a22.n_min)

    def depth(self):
        return 0 if self.is_leaf else 1 + max(self.a11.depth(), self.a22.depth())

    def hodlr_rank(self):
        """Largest off-diagonal rank over all levels."""
        if self.is_leaf:
            return 0
        return max(self.a12.rank, self.a21.rank, self.a11.hodlr_rank(), self.a22.hodlr_rank())

    def storage(self):
        """Number of stored scalar entries."""
        if self.is_leaf:
            return self.dense.size
        return (self.a11.storage() + self.a22.storage()
                + self.a12.U.size + self.a12.V.size + self.a21.U.size + self.a21.V.size)

    def to_dense(self):
        if self.is_leaf:
            return self.dense.copy()
        h = self.a11.n
        M = np.empty((self.n, self.n), dtype=self.dtype)
        M[:h, :h] = self.a11.to_dense()
        M[h:, h:] = self.a22.to_dense()
        M[:h, h:] = self.a12.to_dense()
        M[h:, :h] = self.a21.to_dense()
        return M

    def diagonal(self):
        if self.is_leaf:
            return np.diag(self.dense).copy()
        return np.concatenate([self.a11.diagonal(), self.a22.diagonal()])

    def __repr__(self):
        return f"HodlrMatrix(n={self.n}, depth={self.depth()}, rank={self.hodlr_rank()}, dtype={self.dtype})"

    # products -----------------------------------------------------------

    def matvec(self, x):
        """Product with a vector or a block of column vectors."""
        x = np.asarray(x)
        if x.shape[0] != self.n:
            raise DimensionMismatch(f"operand has {x.shape[0]} rows, expected {self.n}")
        if self.is_leaf:
            return self.dense @ x
        h = self.a11.n
        x1, x2 = x[:h], x[h:]
        return np.concatenate([self.a11.matvec(x1) + self.a12 @ x2,
                               self.a22.matvec(x2) + self.a21 @ x1])

    def __matmul__(self, other):
        if isinstance(other, HodlrMatrix):
            return matmul(self, other)
        return self.matvec(other)

    @property
    def T(self):
        """Transpose (no conjugation)."""
        if self.is_leaf:
            return HodlrMatrix(dense=self.dense.T)
        return HodlrMatrix(a11=self.a11.T, a22=self.a22.T, a12=self.a21.T, a21=self.a12.T)

    def scaled(self, alpha):
        if self.is_leaf:
            return HodlrMatrix(dense=alpha * self.dense)
        return HodlrMatrix(
            a11=self.a11.scaled(alpha),
            a22=self.a22.scaled(alpha),
            a12=GenLowRank(alpha * self.a12.U, self.a12.V),
            a21=GenLowRank(alpha * self.a21.U, self.a21.V),
        )

    def __neg__(self):
        return self.scaled(-1.0)

    def shifted(self, xi):
        """Return ``A - xi I``; complex ``xi`` yields a complex matrix."""
        if self.is_leaf:
            D = self.dense.astype(np.result_type(self.dense.dtype, type(xi)), copy=True)
            D[np.diag_indices(self.n)] -= xi
            return HodlrMatrix(dense=D)
        return HodlrMatrix(a11=self.a11.shifted(xi), a22=self.a22.shifted(xi),
                           a12=self.a12, a21=self.a21)

    def add_lowrank(self, U, V, tau_sigma=None):
        """Return ``A + U V'`` with touched off-diagonal blocks recompressed."""
        U, V = np.asarray(U), np.asarray(V)
        if U.ndim == 1:
            U, V = U[:, None], V[:, None]
        if U.shape[0] != self.n or V.shape[0] != self.n:
            raise DimensionMismatch("low-rank factors do not match the matrix size")
        if U.shape[1] == 0:
            return self
        if self.is_leaf:
            return HodlrMatrix(dense=self.dense + U @ V.T)
        h = self.a11.n
        U1, U2, V1, V2 = U[:h], U[h:], V[:h], V[h:]
        return HodlrMatrix(
            a11=self.a11.add_lowrank(U1, V1, tau_sigma),
            a22=self.a22.add_lowrank(U2, V2, tau_sigma),
            a12=_compress(self.a12 + GenLowRank(U1, V2), tau_sigma),
            a21=_compress(self.a21 + GenLowRank(U2, V1), tau_sigma),
        )

    def recompress(self, tau_sigma):
        if self.is_leaf:
            return self
        return HodlrMatrix(a11=self.a11.recompress(tau_sigma), a22=self.a22.recompress(tau_sigma),
                           a12=compress_gen(self.a12, tau_sigma), a21=compress_gen(self.a21, tau_sigma))

    def submatrix_dense(self, i0, i1):
        """Dense principal submatrix ``A[i0:i1, i0:i1]``."""
        return self.to_dense()[i0:i1, i0:i1]


def _conformal(A, B):
    if A.n != B.n:
        raise DimensionMismatch(f"sizes differ: {A.n} vs {B.n}")
    if A.is_leaf != B.is_leaf:
        return (HodlrMatrix(dense=A.to_dense()), HodlrMatrix(dense=B.to_dense()))
    return A, B


def add(A, B, tau_sigma=None, alpha=1.0):
    """Return ``A + alpha * B`` on a shared partition."""
    A, B = _conformal(A, B)
    if A.is_leaf:
        return HodlrMatrix(dense=A.dense + alpha * B.dense)
    return HodlrMatrix(
        a11=add(A.a11, B.a11, tau_sigma, alpha),
        a22=add(A.a22, B.a22, tau_sigma, alpha),
        a12=_compress(A.a12 + GenLowRank(alpha * B.a12.U, B.a12.V), tau_sigma),
        a21=_compress(A.a21 + GenLowRank(alpha * B.a21.U, B.a21.V), tau_sigma),
    )


def matmul(A, B, tau_sigma=None):
    """HODLR product ``A @ B`` with recompression of every formed block."""
    A, B = _conformal(A, B)
    if A.is_leaf:
        return HodlrMatrix(dense=A.dense @ B.dense)
    # off-diagonal contributions to the diagonal blocks are low rank
    c11 = matmul(A.a11, B.a11, tau_sigma).add_lowrank(
        A.a12.U, B.a21.V @ (A.a12.V.T @ B.a21.U).T, tau_sigma)
    c22 = matmul(A.a22, B.a22, tau_sigma).add_lowrank(
        A.a21.U, B.a12.V @ (A.a21.V.T @ B.a12.U).T, tau_sigma)
    c12 = GenLowRank(np.hstack([A.a11.matvec(B.a12.U), A.a12.U]),
                     np.hstack([B.a12.V, B.a22.T.matvec(A.a12.V)]))
    c21 = GenLowRank(np.hstack([A.a21.U, A.a22.matvec(B.a21.U)]),
                     np.hstack([B.a11.T.matvec(A.a21.V), B.a21.V]))
    return HodlrMatrix(a11=c11, a22=c22, a12=_compress(c12, tau_sigma), a21=_compress(c21, tau_sigma))


# splitting and merging ---------------------------------------------------

def split(A):
    """Split a node into its diagonal blocks and a low-rank correction.

    Returns ``(a11, a22, f)`` with ``A = blkdiag(a11, a22) + f.U @ f.V.T``,
    ``f.U = blkdiag(U12, U21)`` and ``f.V = [[0, V21], [V12, 0]]``.
    """
    if A.is_leaf:
        raise LeafNotSplittable(f"cannot split a dense leaf of size {A.n}")
    n1 = A.a11.n
    k1, k2 = A.a12.rank, A.a21.rank
    dtype = A.dtype
    U = np.zeros((A.n, k1 + k2), dtype=dtype)
    V = np.zeros((A.n, k1 + k2), dtype=dtype)
    U[:n1, :k1] = A.a12.U
    U[n1:, k1:] = A.a21.U
    V[n1:, :k1] = A.a12.V
    V[:n1, k1:] = A.a21.V
    return A.a11, A.a22, GenLowRank(U, V)


def split_symmetric(A):
    """Split a symmetric node using only its upper off-diagonal block.

    Returns ``(a11, a22, f)`` with ``f = W D W'``, ``W = blkdiag(U12, V12)``
    and the swap core ``D = [[0, I], [I, 0]]``.
    """
    if A.is_leaf:
        raise LeafNotSplittable(f"cannot split a dense leaf of size {A.n}")
    n1 = A.a11.n
    k = A.a12.rank
    W = np.zeros((A.n, 2 * k), dtype=A.dtype)
    W[:n1, :k] = A.a12.U
    W[n1:, k:] = A.a12.V
    Z, I = np.zeros((k, k)), np.eye(k)
    return A.a11, A.a22, SymLowRank(W, np.block([[Z, I], [I, Z]]))


def split_gram(B, n1):
    """Split ``B B'`` at row ``n1`` into ``blkdiag(B1 B1', B2 B2') + W D W'``."""
    B = np.asarray(B)
    m = B.shape[1]
    W = np.zeros((B.shape[0], 2 * m), dtype=B.dtype)
    W[:n1, :m] = B[:n1]
    W[n1:, m:] = B[n1:]
    Z, I = np.zeros((m, m)), np.eye(m)
    return B[:n1], B[n1:], SymLowRank(W, np.block([[Z, I], [I, Z]]))


def embed_and_update(X11, X22, dX, tau_sigma=None):
    """Return ``blkdiag(X11, X22) + dX`` in HODLR format.

    ``dX`` may be a :class:`SymLowRank` or a :class:`GenLowRank`; the
    off-diagonal blocks it touches are recompressed with ``tau_sigma``.
    """
    X = HodlrMatrix.block_diag(X11, X22)
    if dX is None or dX.rank == 0:
        return X
    if dX.U.shape[0] != X.n:
        raise DimensionMismatch(f"update has {dX.U.shape[0]} rows, expected {X.n}")
    if isinstance(dX, SymLowRank):
        return X.add_lowrank(dX.U @ dX.D, dX.U, tau_sigma)
    return X.add_lowrank(dX.U, dX.V, tau_sigma)


# LU factorization --------------------------------------------------------

class HodlrLu:
    """Block LU factorization of a HODLR matrix.

    For a node ``[[A11, U12 V12'], [U21 V21', A22]]`` the factorization keeps
    the LU of ``A11``, the blocks ``W = A11^{-1} U12`` and
    ``Wt = A11^{-T} V21`` and a recursive factorization of the Schur
    complement ``A22 - U21 (V21' W) V12'``, which is a low-rank update of
    ``A22``.
    """

    def __init__(self, A, tau_sigma=None, pivot_tol=None):
        self.n = A.n
        self.leaf = A.is_leaf
        if self.leaf:
            with warnings.catch_warnings():
                # an exactly singular block is reported as SingularPivot below
                warnings.simplefilter("ignore", la.LinAlgWarning)
                lu, piv = la.lu_factor(A.dense, check_finite=False)
            d = np.abs(np.diag(lu))
            tol = pivot_tol if pivot_tol is not None else A.n * np.finfo(float).eps
            if A.n and (not np.all(np.isfinite(lu)) or d.min() <= tol * max(d.max(), 1e-300)):
                raise SingularPivot(f"singular pivot in a dense block of size {A.n}")
            self.lu = (lu, piv)
            return
        self.h = A.a11.n
        self.top = HodlrLu(A.a11, tau_sigma, pivot_tol)
        self.U12, self.V12 = A.a12.U, A.a12.V
        self.U21, self.V21 = A.a21.U, A.a21.V
        self.W = self.top.solve(self.U12)
        self.Wt = self.top.solve(self.V21, trans=True)
        K = self.V21.T @ self.W
        S = A.a22.add_lowrank(-(self.U21 @ K), self.V12, tau_sigma)
        self.bottom = HodlrLu(S, tau_sigma, pivot_tol)

    def solve(self, b, trans=False):
        """Solve ``A x = b`` (or ``A' x = b`` with ``trans=True``)."""
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"right-hand side has {b.shape[0]} rows, expected {self.n}")
        if self.leaf:
            lu, piv = self.lu
            dtype = np.result_type(lu.dtype, b.dtype)
            return la.lu_solve((lu.astype(dtype, copy=False), piv), b.astype(dtype, copy=False),
                               trans=1 if trans else 0, check_finite=False)
        h = self.h
        b1, b2 = b[:h], b[h:]
        y1 = self.top.solve(b1, trans)
        if not trans:
            x2 = self.bottom.solve(b2 - self.U21 @ (self.V21.T @ y1))
            x1 = y1 - self.W @ (self.V12.T @ x2)
        else:
            x2 = self.bottom.solve(b2 - self.V12 @ (self.U12.T @ y1), trans=True)
            x1 = y1 - self.Wt @ (self.U21.T @ x2)
        return np.concatenate([x1, x2])


def lu_factor(A, tau_sigma=None):
    """Factor ``A``; raises :class:`SingularPivot` on a zero pivot."""
    return HodlrLu(A, tau_sigma)


def lu_solve(lu, rhs, trans=False):
    return lu.solve(rhs, trans)


# norm estimation ---------------------------------------------------------

def _operator(A):
    if isinstance(A, HodlrMatrix):
        return A.n, A.shape[1], A.matvec, A.T.matvec
    if isinstance(A, np.ndarray) or sp.issparse(A):
        return A.shape[0], A.shape[1], (lambda x: A @ x), (lambda x: A.T @ x)
    if isinstance(A, tuple):
        # (shape, matvec, rmatvec)
        (m, n), mv, rmv = A
        return m, n, mv, rmv
    return A.shape[0], A.shape[1], A.matvec, A.rmatvec


def norm2_est(A, iters=20, seed=0):
    """Estimate ``||A||_2`` by Golub-Kahan bidiagonalization.

    ``A`` may be a :class:`HodlrMatrix`, a dense or sparse matrix, a scipy
    ``LinearOperator`` or a tuple ``((m, n), matvec, rmatvec)``.  Uses full
    reorthogonalization; the estimate is a lower bound that is usually
    accurate to several digits after 20 steps.
    """
    m, n, mv, rmv = _operator(A)
    if m == 0 or n == 0:
        return 0.0
    k = min(iters, m, n)
    rng = np.random.default_rng(seed)
    P = np.zeros((m, k))
    Q = np.zeros((n, k + 1))
    alpha, beta = np.zeros(k), np.zeros(k)
    q = rng.standard_normal(n)
    Q[:, 0] = q / np.linalg.norm(q)
    for j in range(k):
        p = np.real(mv(Q[:, j]))
        if j:
            p -= beta[j - 1] * P[:, j - 1]
        p -= P[:, :j] @ (P[:, :j].T @ p)
        alpha[j] = np.linalg.norm(p)
        if alpha[j] == 0:
            k = j + 1
            break
        P[:, j] = p / alpha[j]
        q = np.real(rmv(P[:, j])) - alpha[j] * Q[:, j]
        q -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ q)
        beta[j] = np.linalg.norm(q)
        if beta[j] <= 1e-14 * alpha[j]:
            k = j + 1
            break
        Q[:, j + 1] = q / beta[j]
    Bk = np.diag(alpha[:k]) + np.diag(beta[: k - 1], 1)
    return float(la.svdvals(Bk)[0]) if k else 0.0


# serialization -----------------------------------------------------------

MAGIC = b"HODLR\x00v1"
_LEAF, _NODE = 0, 1


def _write_array(buf, a, cplx):
    a = np.ascontiguousarray(a, dtype="<c16" if cplx else "<f8")
    buf.append(a.tobytes())


def _write(buf, A, cplx):
    if A.is_leaf:
        buf.append(struct.pack("<BQ", _LEAF, A.n))
        _write_array(buf, A.dense, cplx)
        return
    buf.append(struct.pack("<BQQQ", _NODE, A.n, A.a12.rank, A.a21.rank))
    for f in (A.a12, A.a21):
        _write_array(buf, f.U, cplx)
        _write_array(buf, f.V, cplx)
    _write(buf, A.a11, cplx)
    _write(buf, A.a22, cplx)


def to_bytes(A):
    """Serialize to the binary container.

    Layout: 8-byte magic, one byte dtype flag (0 real, 1 complex), then the
    tree in preorder.  A leaf is ``<B tag=0><Q n>`` followed by its entries
    row-major; a node is ``<B tag=1><Q n><Q k12><Q k21>`` followed by
    ``U12, V12, U21, V21`` (row-major) and then both children.  All numbers
    are little-endian; complex entries are stored as (real, imag) pairs.
    """
    cplx = np.iscomplexobj(np.empty(0, dtype=A.dtype))
    buf = [MAGIC, struct.pack("<B", int(cplx))]
    _write(buf, A, cplx)
    return b"".join(buf)


def from_bytes(data):
    if data[:8] != MAGIC:
        raise ValueError("not a HODLR container (bad magic)")
    cplx = bool(data[8])
    dt = np.dtype("<c16" if cplx else "<f8")
    pos = 9

    def take(shape):
        nonlocal pos
        count = int(np.prod(shape))
        a = np.frombuffer(data, dtype=dt, count=count, offset=pos).reshape(shape)
        pos += count * dt.itemsize
        return a.astype(complex if cplx else float)

    def read():
        nonlocal pos
        tag = data[pos]
        if tag == _LEAF:
            _, n = struct.unpack_from("<BQ", data, pos)
            pos += struct.calcsize("<BQ")
            return HodlrMatrix(dense=take((n, n)))
        _, n, k12, k21 = struct.unpack_from("<BQQQ", data, pos)
        pos += struct.calcsize("<BQQQ")
        h = _half(n)
        a12 = GenLowRank(take((h, k12)), take((n - h, k12)))
        a21 = GenLowRank(take((n - h, k21)), take((h, k21)))
        a11 = read()
        a22 = read()
        return HodlrMatrix(a11=a11, a22=a22, a12=a12, a21=a21)

    A = read()
    if pos != len(data):
        raise ValueError("trailing bytes in HODLR container")
    return A


def save(path, A):
    with open(path, "wb") as fh:
        fh.write(to_bytes(A))


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
