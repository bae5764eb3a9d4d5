"""Divide-and-conquer solvers over HODLR coefficients and low-rank updates.

Each inner node splits its coefficients into block-diagonal parts plus
low-rank corrections, solves the two diagonal-block equations recursively,
and adds a low-rank correction computed by RKSM (CARE) or the extended
Krylov method (UQME).  Leaves are solved densely.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .care import CareCorrectionProblem, rksm_care
from .dense import cyclic_reduction, solve_dense_care, solve_dense_gcare
from .errors import CrNotConverged, SolverError, SplitViolation
from .hodlr import (HodlrMatrix, embed_and_update, split, split_gram, split_symmetric)
from .lowrank import (SymLowRank, assemble_care_rhs, assemble_gcare_rhs,
                      assemble_uqme_rhs)
from .operators import as_matrix
from .report import NodeRecord, SolveReport
from .uqme import UqmeCorrectionProblem, UqmeOperators, ek_uqme_correction


@dataclass(frozen=True)
class DacConfig:
    """Parameters of the divide-and-conquer solvers.

    Attributes
    ----------
    n_min
        Leaf size of HODLR matrices built by the drivers.
    tau_sigma
        Relative recompression threshold.
    tau_care, tau_uqme
        Relative stopping tolerances of the correction solvers.
    t_max
        Iteration cap of the correction solvers.
    parallel_children
        Solve the two child problems of a node in separate threads.
    dense_fallback
        Solve a failing inner node densely instead of raising.
    """

    n_min: int = 256
    tau_sigma: float = 1e-12
    tau_care: float = 1e-8
    tau_uqme: float = 1e-8
    t_max: int = 150
    parallel_children: bool = False
    dense_fallback: bool = False

    def __post_init__(self):
        if min(self.tau_sigma, self.tau_care, self.tau_uqme) <= 0:
            raise ValueError("tolerances must be positive")
        if self.n_min < 2:
            raise ValueError("n_min must be at least 2")


def _children(cfg, f1, f2):
    if cfg.parallel_children:
        with ThreadPoolExecutor(max_workers=2) as pool:
            r1, r2 = pool.submit(f1), pool.submit(f2)
            return r1.result(), r2.result()
    return f1(), f2()


def _leaf(M):
    return M.dense if isinstance(M, HodlrMatrix) else np.asarray(M)


def _finish(report, X, t0):
    report.time_s = time.perf_counter() - t0
    report.hodlr_rank = X.hodlr_rank()
    report.nodes.sort(key=lambda nd: nd.path)
    return X, report


# CARE --------------------------------------------------------------------

def _care_node(A, B, Q, cfg, path, depth, nodes):
    try:
        if A.is_leaf:
            X = solve_dense_care(_leaf(A), B, _leaf(Q))
            nodes.append(NodeRecord(path, depth, A.n, 0, 0, 0.0))
            return HodlrMatrix(dense=X)
        a11, a22, dA = split(A)
        q11, q22, dQ = split_symmetric(Q)
        B1, B2, dF = split_gram(B, a11.n)
        X11, X22 = _children(
            cfg,
            lambda: _care_node(a11, B1, q11, cfg, path + ".0", depth + 1, nodes),
            lambda: _care_node(a22, B2, q22, cfg, path + ".1", depth + 1, nodes),
        )
        X0 = HodlrMatrix.block_diag(X11, X22)
        rhs = assemble_care_rhs(dA, dQ, dF, X0, cfg.tau_sigma)
        if rhs.rank == 0:
            nodes.append(NodeRecord(path, depth, A.n, 0, 0, 0.0))
            return X0
        p = CareCorrectionProblem(A=A, B=B, rhs=rhs, X0=X0, tau_care=cfg.tau_care,
                                  t_max=cfg.t_max, tau_sigma=cfg.tau_sigma)
        dX, rep = rksm_care(p)
        nodes.append(NodeRecord(path, depth, A.n, rhs.rank, rep.iterations, rep.final_residual))
        return embed_and_update(X11, X22, dX, cfg.tau_sigma)
    except SolverError as exc:
        if cfg.dense_fallback and not A.is_leaf and not exc.path:
            X = solve_dense_care(A.to_dense(), B, Q.to_dense())
            nodes.append(NodeRecord(path, depth, A.n, -1, 0, float("nan")))
            return HodlrMatrix.from_dense(X, cfg.n_min, cfg.tau_sigma)
        raise exc.with_path(path)


def _as_hodlr(M, cfg):
    M = as_matrix(M)
    if isinstance(M, HodlrMatrix):
        return M
    if hasattr(M, "tocsr"):
        return HodlrMatrix.from_sparse(M, cfg.n_min)
    return HodlrMatrix.from_dense(M, cfg.n_min, cfg.tau_sigma)


def dac_care(A, B, Q, cfg=DacConfig()):
    """Solve ``A'X + XA - XBB'X + Q = 0`` by divide and conquer.

    ``A`` and ``Q`` are HODLR matrices (dense or sparse inputs are converted
    with ``cfg.n_min``); ``Q`` must be symmetric and is split using its upper
    off-diagonal blocks.  Returns ``(X, report)``.
    """
    t0 = time.perf_counter()
    A, Q = _as_hodlr(A, cfg), _as_hodlr(Q, cfg)
    B = np.asarray(B, dtype=float).reshape(A.n, -1)
    report = SolveReport()
    X = _care_node(A, B, Q, cfg, "r", 0, report.nodes)
    return _finish(report, X, t0)


def _gcare_node(A, E, B, Q, cfg, path, depth, nodes):
    try:
        if A.is_leaf:
            X = solve_dense_gcare(_leaf(A), _leaf(E), B, _leaf(Q))
            nodes.append(NodeRecord(path, depth, A.n, 0, 0, 0.0))
            return HodlrMatrix(dense=X)
        a11, a22, dA = split(A)
        e11, e22, dE = split(E)
        q11, q22, dQ = split_symmetric(Q)
        B1, B2, dF = split_gram(B, a11.n)
        X11, X22 = _children(
            cfg,
            lambda: _gcare_node(a11, e11, B1, q11, cfg, path + ".0", depth + 1, nodes),
            lambda: _gcare_node(a22, e22, B2, q22, cfg, path + ".1", depth + 1, nodes),
        )
        X0 = HodlrMatrix.block_diag(X11, X22)
        A0 = HodlrMatrix.block_diag(a11, a22)
        E0 = HodlrMatrix.block_diag(e11, e22)
        Ub = np.zeros((A.n, 2 * B.shape[1]))
        Ub[: a11.n, : B.shape[1]] = B1
        Ub[a11.n:, B.shape[1]:] = B2
        F0 = SymLowRank(Ub, np.eye(Ub.shape[1]))
        rhs = assemble_gcare_rhs(dA, dE, dQ, dF, X0, E, E0, A0=A0, F0=F0, tau_sigma=cfg.tau_sigma)
        if rhs.rank == 0:
            nodes.append(NodeRecord(path, depth, A.n, 0, 0, 0.0))
            return X0
        p = CareCorrectionProblem(A=A, B=B, rhs=rhs, X0=X0, E=E, tau_care=cfg.tau_care,
                                  t_max=cfg.t_max, tau_sigma=cfg.tau_sigma)
        dX, rep = rksm_care(p)
        nodes.append(NodeRecord(path, depth, A.n, rhs.rank, rep.iterations, rep.final_residual))
        return embed_and_update(X11, X22, dX, cfg.tau_sigma)
    except SolverError as exc:
        if cfg.dense_fallback and not A.is_leaf and not exc.path:
            X = solve_dense_gcare(A.to_dense(), E.to_dense(), B, Q.to_dense())
            nodes.append(NodeRecord(path, depth, A.n, -1, 0, float("nan")))
            return HodlrMatrix.from_dense(X, cfg.n_min, cfg.tau_sigma)
        raise exc.with_path(path)


def dac_gcare(A, E, B, Q, cfg=DacConfig()):
    """Solve ``A'XE + E'XA - E'XBB'XE + Q = 0`` by divide and conquer."""
    t0 = time.perf_counter()
    A, E, Q = _as_hodlr(A, cfg), _as_hodlr(E, cfg), _as_hodlr(Q, cfg)
    B = np.asarray(B, dtype=float).reshape(A.n, -1)
    report = SolveReport()
    X = _gcare_node(A, E, B, Q, cfg, "r", 0, report.nodes)
    return _finish(report, X, t0)


# UQME --------------------------------------------------------------------

def _uqme_node(A, B, C, cfg, path, depth, nodes):
    try:
        if A.is_leaf:
            try:
                X = cyclic_reduction(_leaf(A), _leaf(B), _leaf(C))
            except CrNotConverged as exc:
                raise SplitViolation(
                    f"cyclic reduction stalled on a diagonal block of size {A.n}; "
                    "the block polynomial lacks the splitting property") from exc
            nodes.append(NodeRecord(path, depth, A.n, 0, 0, 0.0))
            return HodlrMatrix(dense=X)
        a11, a22, dA = split(A)
        b11, b22, dB = split(B)
        c11, c22, dC = split(C)
        X11, X22 = _children(
            cfg,
            lambda: _uqme_node(a11, b11, c11, cfg, path + ".0", depth + 1, nodes),
            lambda: _uqme_node(a22, b22, c22, cfg, path + ".1", depth + 1, nodes),
        )
        X0 = HodlrMatrix.block_diag(X11, X22)
        ops = UqmeOperators(A, B, X0, cfg.tau_sigma)
        rhs = assemble_uqme_rhs(dA, dB, dC, X0, ops.A_solve, cfg.tau_sigma)
        if rhs.rank == 0:
            nodes.append(NodeRecord(path, depth, A.n, 0, 0, 0.0))
            return X0
        p = UqmeCorrectionProblem(A=A, B=B, X0=X0, rhs=rhs, tau_uqme=cfg.tau_uqme,
                                  t_max=cfg.t_max, tau_sigma=cfg.tau_sigma,
                                  unscaled_check=True)
        dX, rep = ek_uqme_correction(p, ops)
        nodes.append(NodeRecord(path, depth, A.n, rhs.rank, rep.iterations, rep.final_residual))
        return embed_and_update(X11, X22, dX, cfg.tau_sigma)
    except SolverError as exc:
        if cfg.dense_fallback and not A.is_leaf and not exc.path:
            X = cyclic_reduction(A.to_dense(), B.to_dense(), C.to_dense())
            nodes.append(NodeRecord(path, depth, A.n, -1, 0, float("nan")))
            return HodlrMatrix.from_dense(X, cfg.n_min, cfg.tau_sigma)
        raise exc.with_path(path)


def dac_uqme(A, B, C, cfg=DacConfig()):
    """Minimal solution of ``A X^2 + B X + C = 0`` by divide and conquer."""
    t0 = time.perf_counter()
    A, B, C = _as_hodlr(A, cfg), _as_hodlr(B, cfg), _as_hodlr(C, cfg)
    report = SolveReport()
    X = _uqme_node(A, B, C, cfg, "r", 0, report.nodes)
    return _finish(report, X, t0)


# standalone updates ------------------------------------------------------

def _add_update(X0, dX, tau_sigma):
    if dX.rank == 0:
        return X0
    U, V = (dX.U @ dX.D, dX.U) if isinstance(dX, SymLowRank) else (dX.U, dX.V)
    if isinstance(X0, HodlrMatrix):
        return X0.add_lowrank(U, V, tau_sigma)
    return np.asarray(X0) + U @ V.T


def _nonzero(f):
    return f is not None and f.rank > 0


def update_care_solution(X0, A, B, dA=None, dQ=None, dF=None, cfg=DacConfig(), E=None):
    """Update the stabilizing solution after low-rank coefficient changes.

    ``X0`` solves the reference CARE.  ``A`` and ``B`` are the *modified*
    coefficients (``F = B B'``) and ``dA``, ``dQ``, ``dF`` the low-rank
    changes relative to the reference; an optional mass matrix ``E`` is
    shared by both equations.  Returns ``(X, report)`` with
    ``X = X0 + dX`` of the same kind (dense or HODLR) as ``X0``.
    """
    n = X0.shape[0]
    if not (_nonzero(dA) or _nonzero(dQ) or _nonzero(dF)):
        rep = SolveReport(converged=True, final_residual=0.0)
        return X0, rep
    if E is None:
        rhs = assemble_care_rhs(dA, dQ, dF, X0, cfg.tau_sigma, n=n)
    else:
        # the mass matrix itself is unchanged, so the dE term is absent
        rhs = assemble_gcare_rhs(dA, None, dQ, dF, X0, E, E, tau_sigma=cfg.tau_sigma, n=n)
    p = CareCorrectionProblem(A=A, B=B, rhs=rhs, X0=X0, E=E, tau_care=cfg.tau_care,
                              t_max=cfg.t_max, tau_sigma=cfg.tau_sigma)
    dX, rep = rksm_care(p)
    return _add_update(X0, dX, cfg.tau_sigma), rep


def update_uqme_solution(X0, A, B, dA=None, dB=None, dC=None, cfg=DacConfig()):
    """Update the minimal UQME solution after low-rank coefficient changes.

    ``A`` and ``B`` are the modified coefficients; ``dA``, ``dB``, ``dC`` the
    changes as :class:`GenLowRank`.  Returns ``(X, report)``.
    """
    n = X0.shape[0]
    if not (_nonzero(dA) or _nonzero(dB) or _nonzero(dC)):
        return X0, SolveReport(converged=True, final_residual=0.0)
    ops = UqmeOperators(A, B, X0, cfg.tau_sigma)
    rhs = assemble_uqme_rhs(dA, dB, dC, X0, ops.A_solve, cfg.tau_sigma, n=n)
    p = UqmeCorrectionProblem(A=A, B=B, X0=X0, rhs=rhs, tau_uqme=cfg.tau_uqme,
                              t_max=cfg.t_max, tau_sigma=cfg.tau_sigma, unscaled_check=True)
    dX, rep = ek_uqme_correction(p, ops)
    return _add_update(X0, dX, cfg.tau_sigma), rep
