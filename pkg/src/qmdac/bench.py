"""Benchmark runner: generate a problem, solve it, time it, score it."""

import csv
import dataclasses
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dac import (DacConfig, dac_care, dac_gcare, dac_uqme, update_care_solution,
                  update_uqme_solution)
from .dense import cyclic_reduction, solve_dense_care, solve_dense_gcare
from .hodlr import HodlrMatrix
from .lowrank import GenLowRank, SymLowRank
from .problems import (UqmeProblem, care_residual, gen_care_ex1, gen_care_ex2,
                       gen_dqbd, gen_gcare_ex3, gen_mass_spring, load_care_mtx, load_uqme_mtx,
                       uqme_residual)

FAMILIES = ("care-ex1", "care-ex2", "gcare-ex3", "dqbd-random", "mass-spring", "file")
METHODS = ("dac", "dense", "update")
CSV_COLUMNS = ("n", "method", "time_s", "res", "hodlr_rank", "iterations")


@dataclass
class ProblemSpec:
    """Which benchmark to build.

    ``overrides`` holds :class:`DacConfig` fields; ``files`` holds Matrix
    Market paths for the ``file`` family (keys ``A``, ``B``, ``C``, ``Q``,
    ``E``; ``C`` present means a UQME).
    """

    family: str
    n: int = 0
    seed: int = 0
    overrides: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown problem family {self.family!r}")
        if self.family != "file" and self.n < 2:
            raise ValueError("n must be at least 2")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def config(self):
        return DacConfig(**self.overrides)

    def build(self):
        if self.family == "care-ex1":
            return gen_care_ex1(self.n, self.seed)
        if self.family == "care-ex2":
            return gen_care_ex2(self.n)
        if self.family == "gcare-ex3":
            return gen_gcare_ex3(self.n)
        if self.family == "dqbd-random":
            return gen_dqbd(self.n, self.seed)
        if self.family == "mass-spring":
            return gen_mass_spring(self.n)
        f = self.files
        if "C" in f:
            return load_uqme_mtx(f["A"], f["B"], f["C"])
        return load_care_mtx(f["A"], f["B"], f.get("Q"), f.get("E"))


@dataclass
class BenchRow:
    n: int
    method: str
    time_s: float
    res: float
    hodlr_rank: int
    iterations: int = 0

    def __post_init__(self):
        if not self.res >= 0:
            raise ValueError("residual must be non-negative")

    def as_dict(self):
        return {k: getattr(self, k) for k in CSV_COLUMNS}


@dataclass
class BenchResult:
    """A :class:`BenchRow` plus the solution and the solver report."""

    row: BenchRow
    X: object
    report: object = None
    problem: object = None


def _dense(M):
    return M.toarray() if hasattr(M, "toarray") else np.asarray(M)


def _rank_of(X, cfg):
    if isinstance(X, HodlrMatrix):
        return X.hodlr_rank()
    return HodlrMatrix.from_dense(X, cfg.n_min, cfg.tau_sigma).hodlr_rank()


def _iterations(report):
    if report is None:
        return 0
    if report.nodes:
        return int(sum(nd.iterations for nd in report.nodes))
    return int(report.iterations)


def _residual(problem, X):
    if isinstance(problem, UqmeProblem):
        return uqme_residual(problem, X)
    return care_residual(problem, X)


def solve_problem(problem, method, cfg, seed=0):
    """Solve ``problem`` with ``method``; returns ``(X, info, scored_problem)``.

    ``info`` is the :class:`SolveReport` of the D&C and update methods, the
    iteration count of dense cyclic reduction, or None for dense CARE.
    ``update`` solves the reference problem densely, perturbs it by a
    seeded rank-1 change and updates the solution (the returned residual is
    that of the perturbed problem, which replaces ``problem``).
    """
    if method == "dac":
        if isinstance(problem, UqmeProblem):
            X, rep = dac_uqme(problem.A, problem.B, problem.C, cfg)
        elif problem.E is not None:
            X, rep = dac_gcare(problem.A, problem.E, problem.B, problem.Q, cfg)
        else:
            X, rep = dac_care(problem.A, problem.B, problem.Q, cfg)
        return X, rep, problem
    if method == "dense":
        if isinstance(problem, UqmeProblem):
            X, it = cyclic_reduction(_dense(problem.A), _dense(problem.B), _dense(problem.C),
                                     return_iterations=True)
            return X, it, problem
        if problem.E is not None:
            X = solve_dense_gcare(_dense(problem.A), _dense(problem.E), problem.B, _dense(problem.Q))
        else:
            X = solve_dense_care(_dense(problem.A), problem.B, _dense(problem.Q))
        return X, None, problem
    if method == "update":
        return _update(problem, cfg, seed)
    raise ValueError(f"unknown method {method!r}")


def rank1_perturbation(problem, seed=0):
    """Seeded rank-1 change used by the ``update`` method.

    CARE: ``dQ = w w'`` with a random unit vector ``w`` (keeps ``Q``
    semidefinite).  UQME: ``dC = -c_ii e_i e_i' / 2`` at a random index,
    which keeps ``A + B + C + I`` substochastic and nonnegative.  Returns
    ``(modified_problem, delta)``.
    """
    rng = np.random.default_rng(seed)
    n = problem.A.shape[0]
    if isinstance(problem, UqmeProblem):
        i = int(rng.integers(n))
        c = float(problem.C[i, i])
        delta = GenLowRank(-0.5 * c * np.eye(n, 1, -i), np.eye(n, 1, -i))
        C = sp.csr_matrix(problem.C + sp.csr_matrix(delta.U @ delta.V.T))
        return UqmeProblem(problem.A, problem.B, C, name=problem.name + "+rank1", meta=problem.meta), delta
    w = rng.standard_normal((n, 1))
    w /= np.linalg.norm(w)
    delta = SymLowRank(w, np.eye(1))
    Q = _dense(problem.Q) + w @ w.T
    return dataclasses.replace(problem, Q=Q, name=problem.name + "+rank1"), delta


def is_critical_uqme(problem, tol=1e-12):
    """True when ``A + B + C`` has zero row sums, i.e. ``1`` is an eigenvalue of
    the matrix polynomial (stochastic QBD processes).

    The eigenvalue then belongs either to the minimal solution ``X0`` or to
    ``-(X0 + A^{-1} B)``, so one of the pole-``+-1`` solves of the UQME
    correction solver is singular for the exact solution of such a problem.
    """
    s = np.asarray((problem.A + problem.B + problem.C).sum(axis=1)).ravel()
    return bool(np.all(np.abs(s) <= tol))


def uqme_update_pair(problem, seed=0):
    """``(reference, modified, dC)`` for the UQME ``update`` method.

    A critical (stochastic) problem is first made strictly substochastic
    by one :func:`rank1_perturbation`, so that reference and modified
    equation both have the strict splitting property; the modified problem
    is a second rank-1 perturbation of the reference.
    """
    ref = rank1_perturbation(problem, seed)[0] if is_critical_uqme(problem) else problem
    mod, delta = rank1_perturbation(ref, seed + 1)
    return ref, mod, delta


def _update(problem, cfg, seed):
    if isinstance(problem, UqmeProblem):
        ref, mod, delta = uqme_update_pair(problem, seed)
        X0 = cyclic_reduction(_dense(ref.A), _dense(ref.B), _dense(ref.C))
        X, rep = update_uqme_solution(X0, mod.A, mod.B, dC=delta, cfg=cfg)
        return X, rep, mod
    if problem.E is not None:
        X0 = solve_dense_gcare(_dense(problem.A), _dense(problem.E), problem.B, _dense(problem.Q))
    else:
        X0 = solve_dense_care(_dense(problem.A), problem.B, _dense(problem.Q))
    mod, delta = rank1_perturbation(problem, seed)
    X, rep = update_care_solution(X0, mod.A, mod.B, dQ=delta, cfg=cfg, E=mod.E)
    return X, rep, mod


def run_bench(spec: ProblemSpec, method: str):
    """Build, solve and score one benchmark; returns a :class:`BenchResult`.

    The timing covers the solve only (for ``update``, only the low-rank
    update, not the reference solve).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    cfg = spec.config()
    problem = spec.build()
    t0 = time.perf_counter()
    X, rep, scored = solve_problem(problem, method, cfg, spec.seed)
    elapsed = time.perf_counter() - t0
    if method == "update" and rep is not None:
        elapsed = rep.time_s
    if isinstance(rep, int):
        iterations, rep = rep, None
    else:
        iterations = _iterations(rep)
    row = BenchRow(n=scored.A.shape[0], method=method, time_s=elapsed,
                   res=float(_residual(scored, X)), hodlr_rank=_rank_of(X, cfg),
                   iterations=iterations)
    return BenchResult(row, X, rep, scored)


def write_csv(path, rows, append=False):
    """Write rows with the fixed column schema (header only for new files)."""
    new = not (append and os.path.exists(path) and os.path.getsize(path) > 0)
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new:
            w.writeheader()
        for r in rows:
            w.writerow(r.as_dict())

