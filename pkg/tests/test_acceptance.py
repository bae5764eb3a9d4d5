"""End-to-end acceptance checks; each prints one ``C<k> PASS|FAIL`` line.

Run ``pytest tests/test_acceptance.py -s`` to see the verdict lines, or
``python tests/test_acceptance.py`` for a plain report.  The dense 4096
CARE timing of C5 takes tens of minutes on one core and only runs when
``QMDAC_FULL_SCALING=1``.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from qmdac.dac import DacConfig, dac_care, dac_gcare, dac_uqme, update_care_solution, update_uqme_solution
from qmdac.dense import cyclic_reduction, solve_dense_care, spectral_split_check
from qmdac.lowrank import GenLowRank, SymLowRank
from qmdac.problems import (care_residual, gen_care_ex1, gen_dqbd, gen_gcare_ex3, gen_mass_spring,
                            uqme_residual)

TESTS = Path(__file__).parent
FULL_SCALING = os.environ.get("QMDAC_FULL_SCALING") == "1"
VERDICTS = []


def verdict(name, ok, detail):
    line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
    VERDICTS.append(line)
    print(line, flush=True)
    assert ok, detail


def norm2(M):
    return np.linalg.norm(M, 2)


def timed(f, *args):
    t = time.perf_counter()
    out = f(*args)
    return out, time.perf_counter() - t


def test_c1_care_oracle():
    ok, parts = True, []
    for n in (256, 512):
        p = gen_care_ex1(n)
        (X, _), t = timed(dac_care, p.A, p.B, p.Q, DacConfig(n_min=64))
        ref = solve_dense_care(p.A.toarray(), p.B, p.Q.toarray())
        err = norm2(X.to_dense() - ref) / norm2(ref)
        res = care_residual(p, X)
        ok &= err <= 1e-6 and res <= 1e-7 and t <= 60
        parts.append(f"n={n} err={err:.1e} res={res:.1e} t={t:.1f}s")
    verdict("C1", ok, "; ".join(parts))


def test_c2_uqme_oracle():
    ok, parts = True, []
    for n in (256, 512):
        p = gen_dqbd(n, 0)
        (X, _), t = timed(dac_uqme, p.A, p.B, p.C, DacConfig(n_min=64))
        Xd = X.to_dense()
        ref = cyclic_reduction(p.A.toarray(), p.B.toarray(), p.C.toarray())
        err = norm2(Xd - ref) / norm2(ref)
        res = uqme_residual(p, X)
        rho = np.max(np.abs(np.linalg.eigvals(Xd)))
        ok &= err <= 1e-6 and res <= 1e-7 and rho < 1 and t <= 60
        parts.append(f"n={n} err={err:.1e} res={res:.1e} rho={rho:.6f} t={t:.1f}s")
    verdict("C2", ok, "; ".join(parts))


def test_c3_mass_spring():
    ok, parts = True, []
    for n in (32, 128, 512):
        p = gen_mass_spring(n)
        _, it = cyclic_reduction(p.A.toarray(), p.B.toarray(), p.C.toarray(), return_iterations=True)
        ok &= it <= 4
        parts.append(f"CR n={n} it={it}")
    p = gen_mass_spring(512)
    X, _ = dac_uqme(p.A, p.B, p.C, DacConfig(n_min=64))
    rank = X.hodlr_rank()
    ok &= rank <= 10
    parts.append(f"D&C n=512 hodlr_rank={rank}")
    verdict("C3", ok, "; ".join(parts))


def test_c4_scalar_updates():
    Xc, _ = update_care_solution(np.array([[np.sqrt(2.0) - 1]]), -np.eye(1), np.eye(1),
                                 dQ=SymLowRank(np.eye(1), 0.5 * np.eye(1)))
    Xu, _ = update_uqme_solution(0.5 * np.eye(1), np.eye(1), -2.5 * np.eye(1),
                                 dC=GenLowRank(0.04 * np.eye(1), np.eye(1)))
    ec = abs(Xc[0, 0] - (np.sqrt(2.5) - 1))
    eu = abs(Xu[0, 0] - (2.5 - np.sqrt(2.09)) / 2)
    verdict("C4", ec <= 1e-10 and eu <= 1e-10, f"care err={ec:.1e}; uqme err={eu:.1e}")


def test_c5_scaling():
    sizes = (1024, 2048, 4096)
    cfg = DacConfig()
    p = gen_care_ex1(sizes[0])
    dac_care(p.A, p.B, p.Q, cfg)  # warm-up
    t_dac, ranks = [], []
    for n in sizes:
        p = gen_care_ex1(n)
        (X, _), t = timed(dac_care, p.A, p.B, p.Q, cfg)
        t_dac.append(t)
        ranks.append(X.hodlr_rank())
    dense_sizes = sizes if FULL_SCALING else sizes[:2]
    t_dense = []
    for n in dense_sizes:
        p = gen_care_ex1(n)
        _, t = timed(solve_dense_care, p.A.toarray(), p.B, p.Q.toarray())
        t_dense.append(t)
    r_dac = [b / a for a, b in zip(t_dac, t_dac[1:])]
    r_dense = [b / a for a, b in zip(t_dense, t_dense[1:])]
    r_rank = [b / a for a, b in zip(ranks, ranks[1:])]
    ok = max(r_dac) <= 3.0 and min(r_dense) >= 6.0 and max(r_rank) <= 1.6
    detail = (f"dac t={[round(t, 1) for t in t_dac]} ratios={[round(r, 2) for r in r_dac]}; "
              f"dense t={[round(t, 1) for t in t_dense]} ratios={[round(r, 2) for r in r_dense]}; "
              f"ranks={ranks}")
    if not FULL_SCALING:
        detail += "; dense n=4096 skipped (set QMDAC_FULL_SCALING=1)"
    verdict("C5", ok, detail)


def test_c6_splitting():
    n, h, bad = 32, 16, []
    for seed in range(50):
        p = gen_dqbd(n, seed)
        A, B, C = p.A.toarray(), p.B.toarray(), p.C.toarray()
        full = spectral_split_check(A, B, C)
        if full.on_circle != 1:
            bad.append((seed, "full", full))
        for sl in (slice(0, h), slice(h, n)):
            s = spectral_split_check(A[sl, sl], B[sl, sl], C[sl, sl])
            if not s.has_split(h):
                bad.append((seed, sl.start, s))
    verdict("C6", not bad, f"50 instances, {len(bad)} violations {bad[:3]}")


def test_c7_invariant_suites():
    files = sorted(str(f) for f in TESTS.glob("test_*.py") if f.name != Path(__file__).name)
    t = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *files],
                          capture_output=True, text=True)
    t = time.perf_counter() - t
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    verdict("C7", proc.returncode == 0 and t <= 900, f"{tail} (wall {t:.0f}s)")


def test_c8_gcare():
    ok, parts = True, []
    for seed in (0, 1, 2):
        p = gen_care_ex1(128, seed)
        cfg = DacConfig(n_min=32)
        X1, _ = dac_care(p.A, p.B, p.Q, cfg)
        X2, _ = dac_gcare(p.A, sp.identity(128, format="csr"), p.B, p.Q, cfg)
        d = norm2(X2.to_dense() - X1.to_dense()) / norm2(X1.to_dense())
        ok &= d <= 1e-10
        parts.append(f"E=I seed={seed} diff={d:.1e}")
    p = gen_gcare_ex3(512)
    X, _ = dac_gcare(p.A, p.E, p.B, p.Q, DacConfig())
    res = care_residual(p, X)
    ok &= res <= 1e-7
    parts.append(f"ex3 n=512 res={res:.1e}")
    verdict("C8", ok, "; ".join(parts))


if __name__ == "__main__":
    failed = 0
    for name, f in sorted(globals().items()):
        if name.startswith("test_c"):
            try:
                f()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
