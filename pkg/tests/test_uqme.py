import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

import qmdac.uqme as uqme
from qmdac.bench import uqme_update_pair
from qmdac.dense import dense_uqme_oracle, sda_nare, spectral_split_check
from qmdac.errors import SdaNotConverged, SingularShiftedOperator
from qmdac.lowrank import GenLowRank, assemble_uqme_rhs
from qmdac.problems import gen_dqbd, gen_mass_spring
from qmdac.uqme import (ExtendedKrylovPair, UqmeCorrectionProblem, UqmeOperators, ek_uqme_correction,
                        extend_basis, project_nare, uqme_correction_residual)


def norm2(M):
    return np.linalg.norm(M, 2)


def dense(M):
    return M.toarray() if hasattr(M, "toarray") else np.asarray(M)


def correction_setup(problem, seed=0):
    """Reference minimal solution and a rank-1 change of C.

    A stochastic QBD has the eigenvalue 1 on the unit circle, which makes a
    pole-+-1 solve singular; the reference is then a leaky variant.
    """
    ref, mod, dC = uqme_update_pair(problem, seed)
    A, B, C = (dense(M) for M in (ref.A, ref.B, ref.C))
    X0 = dense_uqme_oracle(A, B, C)
    C1 = dense(mod.C)
    rhs = assemble_uqme_rhs(None, None, dC, X0, lambda M: np.linalg.solve(A, M))
    return A, B, C1, X0, rhs


def correction_residual(A, B, X0, rhs, dX):
    Ah = X0 + np.linalg.solve(A, B)
    return dX @ dX + Ah @ dX + dX @ X0 + rhs.to_dense()


# --- solver -------------------------------------------------------------------

def test_zero_rhs():
    n = 8
    dX, rep = ek_uqme_correction(UqmeCorrectionProblem(np.eye(n), -3 * np.eye(n), 0.1 * np.eye(n),
                                                       GenLowRank.zeros(n)))
    assert dX.rank == 0 and rep.converged


def test_scalar_update():
    A, B, X0 = np.eye(1), -2.5 * np.eye(1), 0.5 * np.eye(1)
    rhs = assemble_uqme_rhs(None, None, GenLowRank(0.04 * np.eye(1), np.eye(1)), X0,
                            lambda M: np.linalg.solve(A, M))
    dX, rep = ek_uqme_correction(UqmeCorrectionProblem(A, B, X0, rhs, tau_uqme=1e-12))
    assert abs(0.5 + dX.to_dense()[0, 0] - (2.5 - np.sqrt(2.09)) / 2) <= 1e-12


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_dqbd_against_dense_oracle(seed):
    A, B, C1, X0, rhs = correction_setup(gen_dqbd(64, seed), seed)
    dX, rep = ek_uqme_correction(UqmeCorrectionProblem(A, B, X0, rhs))
    X1 = dense_uqme_oracle(A, B, C1)
    assert norm2(X0 + dX.to_dense() - X1) <= 1e-7
    R = correction_residual(A, B, X0, rhs, dX.to_dense())
    assert norm2(R) <= 1e-8 * norm2(rhs.to_dense())


def test_poles_alternate_and_bases_orthonormal():
    A, B, C1, X0, rhs = correction_setup(gen_dqbd(48, 3), 3)
    dX, rep = ek_uqme_correction(UqmeCorrectionProblem(A, B, X0, rhs, tau_uqme=1e-12))
    assert rep.poles == [1.0, -1.0] * (len(rep.poles) // 2)
    pair = extend_basis(ExtendedKrylovPair(UqmeOperators(A, B, X0), rhs.U, rhs.V), 4)
    for Q in (pair.Ub, pair.Vb):
        assert norm2(Q.T @ Q - np.eye(Q.shape[1])) <= 1e-12


@pytest.mark.parametrize("seed", range(6))
def test_minimal_solution_preserved(seed):
    problem = gen_dqbd(32, seed) if seed < 4 else gen_mass_spring(32)
    A, B, C1, X0, rhs = correction_setup(problem, seed)
    split = spectral_split_check(A, B, C1)
    if not split.has_split(32):
        pytest.skip("modified equation lacks the splitting property")
    dX, _ = ek_uqme_correction(UqmeCorrectionProblem(A, B, X0, rhs, tau_uqme=1e-12))
    X = X0 + dX.to_dense()
    ev = la.eigvals(X)
    assert np.max(np.abs(ev)) < 1
    # pencil l^2 A + l B + C1 linearized as a generalized eigenproblem
    n = 32
    L0 = np.block([[np.zeros((n, n)), np.eye(n)], [-C1, -B]])
    L1 = np.block([[np.eye(n), np.zeros((n, n))], [np.zeros((n, n)), A]])
    lam = la.eigvals(L0, L1)
    inside = lam[np.abs(lam) < 1]
    assert all(np.min(np.abs(inside - e)) <= 1e-6 for e in ev)


def test_galerkin_orthogonality_of_returned_iterate():
    A, B, C1, X0, rhs = correction_setup(gen_dqbd(40, 1), 1)
    dX, rep = ek_uqme_correction(UqmeCorrectionProblem(A, B, X0, rhs, tau_sigma=None))
    pair = extend_basis(ExtendedKrylovPair(UqmeOperators(A, B, X0), rhs.U, rhs.V), rep.iterations - 1)
    assert np.allclose(pair.Vb, dX.V)
    R = correction_residual(A, B, X0, rhs, dX.to_dense())
    assert norm2(pair.Ub.T @ R @ pair.Vb) <= 1e-11 * norm2(rhs.to_dense())


def test_sda_failure_enlarges_and_retries(monkeypatch):
    A, B, C1, X0, rhs = correction_setup(gen_dqbd(32, 0), 0)
    calls = {"n": 0}
    real = uqme.sda_nare

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 1:
            raise SdaNotConverged("forced")
        return real(*args, **kw)

    monkeypatch.setattr(uqme, "sda_nare", flaky)
    dX, rep = ek_uqme_correction(UqmeCorrectionProblem(A, B, X0, rhs))
    assert rep.retries == 1
    assert rep.residuals[0] == float("inf")
    assert rep.records[1].basis_size > rep.records[0].basis_size
    assert rep.converged


def test_singular_shifted_operator():
    n = 4
    with pytest.raises(SingularShiftedOperator):
        UqmeOperators(np.eye(n), -2 * np.eye(n), np.eye(n))


# --- basis construction ---------------------------------------------------------

def test_zero_ah_basis_is_span_of_u():
    rng = np.random.default_rng(0)
    n = 12
    X0 = 0.3 * rng.standard_normal((n, n))
    ops = UqmeOperators(np.eye(n), -X0, X0)
    U = rng.standard_normal((n, 2))
    pair = ExtendedKrylovPair(ops, U, rng.standard_normal((n, 2)))
    assert pair.Ub.shape[1] == 2
    assert np.linalg.matrix_rank(np.hstack([pair.Ub, U]), 1e-10) == 2


def test_basis_spans_explicit_rational_krylov_space():
    rng = np.random.default_rng(1)
    n, steps = 32, 2
    A = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    B = -3 * np.eye(n) + 0.1 * rng.standard_normal((n, n))
    X0 = 0.2 * rng.standard_normal((n, n))
    ops = UqmeOperators(A, B, X0)
    U, V = rng.standard_normal((n, 1)), rng.standard_normal((n, 1))
    pair = extend_basis(ExtendedKrylovPair(ops, U, V), steps)
    Ah = X0 + np.linalg.solve(A, B)
    KU, KV = [], [V]
    for s in (1.0, -1.0):
        u, v = U, V
        for _ in range(steps + 1):
            u = np.linalg.solve(Ah + s * np.eye(n), u)
            v = np.linalg.solve(X0.T + s * np.eye(n), v)
            KU.append(u)
            KV.append(v)
    for Q, K in ((pair.Ub, np.hstack(KU)), (pair.Vb, np.hstack(KV))):
        r = np.linalg.matrix_rank(K, 1e-10 * norm2(K))
        assert Q.shape[1] == r
        assert np.linalg.matrix_rank(np.hstack([Q, K / norm2(K)]), 1e-8) == r


# --- projection ------------------------------------------------------------------

def test_full_bases_recover_dense_correction():
    A, B, C1, X0, rhs = correction_setup(gen_dqbd(8, 2), 2)
    pair = ExtendedKrylovPair(UqmeOperators(A, B, X0), rhs.U, rhs.V)
    while pair.Ub.shape[1] < 8 or pair.Vb.shape[1] < 8:
        if pair.extend() == 0:
            break
    assert pair.Ub.shape[1] == pair.Vb.shape[1] == 8
    Y = sda_nare(*project_nare(pair, rhs))
    ref = dense_uqme_oracle(A, B, C1) - X0
    assert norm2(pair.Ub @ Y @ pair.Vb.T - ref) <= 1e-9 * max(norm2(ref), 1.0)


def test_zero_rhs_projection():
    A, B, C1, X0, rhs = correction_setup(gen_dqbd(16, 0), 0)
    pair = ExtendedKrylovPair(UqmeOperators(A, B, X0), rhs.U, rhs.V)
    zero = GenLowRank(np.zeros((16, 1)), np.zeros((16, 1)))
    At, Dt, Ft, Qt = project_nare(pair, zero)
    assert np.all(Qt == 0)
    assert np.all(sda_nare(At, Dt, Ft, Qt) == 0)


def test_scalar_projection_is_direct_substitution():
    A, B, X0 = np.eye(1), -2.5 * np.eye(1), 0.5 * np.eye(1)
    rhs = GenLowRank(0.04 * np.eye(1), np.eye(1))
    pair = ExtendedKrylovPair(UqmeOperators(A, B, X0), rhs.U, rhs.V)
    assert pair.Ub.shape == pair.Vb.shape == (1, 1)
    At, Dt, Ft, Qt = project_nare(pair, rhs)
    u, v = pair.Ub[0, 0], pair.Vb[0, 0]
    assert np.isclose(At[0, 0], -2.0) and np.isclose(Dt[0, 0], 0.5)
    assert np.isclose(Ft[0, 0], u * v) and np.isclose(Qt[0, 0], -0.04 * u * v)


# --- residual -----------------------------------------------------------------------

def test_residual_zero_and_exact():
    A, B, C1, X0, rhs = correction_setup(gen_dqbd(24, 1), 1)
    ops = UqmeOperators(A, B, X0)
    assert np.isclose(uqme_correction_residual(GenLowRank.zeros(24), ops, rhs), norm2(rhs.to_dense()),
                      rtol=1e-12)
    ref = dense_uqme_oracle(A, B, C1) - X0
    W, s, Zh = la.svd(ref)
    exact = GenLowRank(W * s, Zh.T)
    assert uqme_correction_residual(exact, ops, rhs) <= 1e-10 * norm2(rhs.to_dense())


def test_residual_scalar():
    A, B, X0 = np.eye(1), -2.5 * np.eye(1), 0.5 * np.eye(1)
    rhs = GenLowRank(0.04 * np.eye(1), np.eye(1))
    d = -0.01
    expected = abs(d * d + (0.5 - 2.5) * d + d * 0.5 + 0.04)
    got = uqme_correction_residual(GenLowRank(np.array([[d]]), np.eye(1)), UqmeOperators(A, B, X0), rhs)
    assert np.isclose(got, expected, rtol=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.integers(4, 128), st.integers(1, 4), st.integers(0, 10_000))
def test_residual_matches_dense(n, k, seed):
    rng = np.random.default_rng(seed)
    A = np.eye(n) + 0.1 * rng.standard_normal((n, n)) / np.sqrt(n)
    B = -3 * np.eye(n) + rng.standard_normal((n, n)) / np.sqrt(n)
    X0 = 0.3 * rng.standard_normal((n, n)) / np.sqrt(n)
    rhs = GenLowRank(rng.standard_normal((n, 2)), rng.standard_normal((n, 2)))
    dX = GenLowRank(rng.standard_normal((n, k)), rng.standard_normal((n, k)))
    ref = norm2(correction_residual(A, B, X0, rhs, dX.to_dense()))
    assert abs(uqme_correction_residual(dX, UqmeOperators(A, B, X0), rhs) - ref) <= 1e-10 * ref
