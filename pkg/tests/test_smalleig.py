import numpy as np
import pytest
from numpy.testing import assert_allclose

from mleig.exceptions import ClusterSelectionError, PencilDegenerateError
from mleig.smalleig import (ChainBasis, ClusterSelector, EigenTriple,
                            compute_generalized_chain, eigenvalue_order,
                            group_coincident, select_cluster,
                            solve_dense_pencil)


def _random_pencil(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    B += n * np.eye(n)
    return A, B


def test_diagonal_identity_pencil():
    triples = solve_dense_pencil(np.diag([2.0, 3.0]), np.eye(2))
    assert_allclose([t.lam for t in triples], [2.0, 3.0])
    for t, k in zip(triples, (0, 1)):
        assert_allclose(np.abs(t.right_vec), np.eye(2)[:, k], atol=1e-12)
        assert_allclose(np.abs(t.left_vec), np.eye(2)[:, k], atol=1e-12)


def test_diagonal_b_scaling():
    triples = solve_dense_pencil(np.diag([2.0, 2.0]), np.diag([1.0, 2.0]))
    assert_allclose([t.lam for t in triples], [1.0, 2.0])


def test_jordan_block_multiplicities():
    A = np.array([[2.0, 1.0], [0.0, 2.0]])
    triples = solve_dense_pencil(A, np.eye(2))
    lams = np.array([t.lam for t in triples])
    assert_allclose(lams, [2.0, 2.0], atol=1e-7)
    V = np.column_stack([t.right_vec for t in triples])
    s = np.linalg.svd(V, compute_uv=False)
    assert s[1] <= 1e-7 * s[0]            # geometric multiplicity 1
    assert np.abs(np.abs(V[0, :]) - 1).max() < 1e-7   # e1 direction only


def test_triple_invariants_random():
    rng = np.random.default_rng(0)
    for n in (3, 6, 10):
        A, B = _random_pencil(rng, n)
        triples = solve_dense_pencil(A, B)
        assert len(triples) == n
        bound = 1e-9 * (np.linalg.norm(A, 2) + np.linalg.norm(B, 2)
                        * max(abs(t.lam) for t in triples))
        for t in triples:
            r, l = t.residuals(A, B)
            assert r <= bound and l <= bound
            assert_allclose(np.linalg.norm(t.right_vec), 1.0, rtol=1e-12)
            assert_allclose(np.linalg.norm(t.left_vec), 1.0, rtol=1e-12)


def test_left_right_agreement_with_adjoint_pencil():
    rng = np.random.default_rng(1)
    A, B = _random_pencil(rng, 7)
    lams = np.array([t.lam for t in solve_dense_pencil(A, B)])
    adj = np.conj([t.lam for t in solve_dense_pencil(A.conj().T, B.conj().T)])
    assert_allclose(np.sort_complex(lams), np.sort_complex(adj), atol=1e-9)


def test_biorthogonality_simple_eigenvalues():
    rng = np.random.default_rng(2)
    A, B = _random_pencil(rng, 8)
    triples = solve_dense_pencil(A, B)
    for i, ti in enumerate(triples):
        for j, tj in enumerate(triples):
            if i != j and abs(ti.lam - tj.lam) > 1e-6:
                val = ti.left_vec.conj() @ (B @ tj.right_vec)
                assert abs(val) <= 1e-8


def test_determinism_bitwise():
    rng = np.random.default_rng(3)
    A, B = _random_pencil(rng, 9)
    t1 = solve_dense_pencil(A, B)
    t2 = solve_dense_pencil(A, B)
    for a, b in zip(t1, t2):
        assert a.lam == b.lam
        assert (a.right_vec == b.right_vec).all()
        assert (a.left_vec == b.left_vec).all()


def test_singular_b_rejected():
    A = np.eye(3)
    B = np.diag([1.0, 1.0, 0.0])
    with pytest.raises(PencilDegenerateError):
        solve_dense_pencil(A, B)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        solve_dense_pencil(np.eye(3), np.eye(4))


# -- selection -----------------------------------------------------------------

def _fake_triples(lams):
    return [EigenTriple(complex(l), np.array([1.0 + 0j]), np.array([1.0 + 0j]))
            for l in lams]


def test_select_by_position():
    triples = _fake_triples([9.0, 5.0, 1.0, 5.0])
    idx = select_cluster(triples, ClusterSelector(index=2, count=2))
    assert sorted(triples[i].lam for i in idx) == [5.0, 5.0]


def test_select_by_previous_mean():
    triples = _fake_triples([19.9, 20.1, 49.6])
    idx = select_cluster(triples, ClusterSelector(index=1, count=1,
                                                  previous=20.05))
    assert [triples[i].lam for i in idx] == [20.1]


def test_select_complex_lexicographic():
    triples = _fake_triples([4.0, 3.0 + 1.0j, 3.0 - 1.0j])
    idx = select_cluster(triples, ClusterSelector(index=1, count=2))
    assert [triples[i].lam for i in idx] == [3.0 - 1.0j, 3.0 + 1.0j]


def test_select_too_many():
    with pytest.raises(ClusterSelectionError):
        select_cluster(_fake_triples([1.0, 2.0]), ClusterSelector(index=2, count=2))
    with pytest.raises(ClusterSelectionError):
        select_cluster(_fake_triples([1.0, 2.0]), ClusterSelector(index=1, count=3))


def test_group_coincident():
    lams = [1.0, 1.0 + 1e-9, 2.0, 2.0 + 1e-3]
    groups = group_coincident(lams)
    sizes = sorted(len(g) for g in groups)
    assert sizes == [1, 1, 2]


# -- generalized chains -----------------------------------------------------------

def test_chain_nondefective_returns_q():
    rng = np.random.default_rng(4)
    A = np.diag([2.0, 2.0, 5.0]).astype(complex)
    Q = np.eye(3, dtype=complex)[:, :2]
    chain = compute_generalized_chain(A, np.eye(3), 2.0, Q, 2)
    assert chain.ascent == 1
    assert not chain.exhausted
    assert_allclose(chain.vectors, Q)
    assert list(chain.orders) == [1, 1]


def test_chain_jordan2_saddle_solution():
    # hand-solved 3x3 saddle system: rows { u2 + mu = 4, 0 = 0, u1 = 0 },
    # minimum-norm solution u = (0, 2), mu = 2
    A = np.array([[2.0, 1.0], [0.0, 2.0]], dtype=complex)
    B = np.eye(2, dtype=complex)
    Q = np.array([[1.0], [0.0]], dtype=complex)
    S = np.zeros((3, 3), dtype=complex)
    S[:2, :2] = A - 2.0 * B
    S[:2, 2:] = B @ Q
    S[2:, :2] = (B @ Q).conj().T
    rhs = np.concatenate([2.0 * (A @ Q[:, 0]), [0.0]])
    by_hand = np.linalg.lstsq(S, rhs, rcond=None)[0]
    assert_allclose(by_hand, [0.0, 2.0, 2.0], atol=1e-12)

    chain = compute_generalized_chain(A, B, 2.0, Q, 2)
    assert chain.ascent == 2
    assert list(chain.orders) == [1, 2]
    u2 = chain.vectors[:, 1]
    assert_allclose(u2, [0.0, 2.0], atol=1e-10)
    # constrained-system residual and B-orthogonality to order-1 vectors
    assert abs(Q[:, 0].conj() @ (B.conj().T @ u2)) <= 1e-10
    resid = (A - 2.0 * B) @ u2 - 2.0 * (A @ Q[:, 0])
    # residual lies in range(B Q), i.e. the saddle system absorbed it
    coef = np.linalg.lstsq(B @ Q, resid, rcond=None)[0]
    assert np.linalg.norm(resid - (B @ Q) @ coef) <= 1e-10


def _nullspace_dims(A, B, lam, kmax):
    """Brute-force dims of N((A - lam B)^k) through singular values."""
    n = A.shape[0]
    M = np.eye(n, dtype=complex)
    dims = []
    base = A - lam * B
    for _ in range(kmax):
        M = M @ base
        s = np.linalg.svd(M, compute_uv=False)
        dims.append(int((s <= 1e-8 * max(s[0], 1e-300)).sum()))
    return dims


def test_chain_two_jordan_blocks():
    # two 2x2 Jordan blocks at lambda = 1: q = 2, m = 4, ascent = 2
    J = np.array([[1.0, 1.0], [0.0, 1.0]])
    A = np.block([[J, np.zeros((2, 2))], [np.zeros((2, 2)), J]]).astype(complex)
    B = np.eye(4, dtype=complex)
    dims = _nullspace_dims(A, B, 1.0, 3)
    assert dims == [2, 4, 4]          # oracle: q = 2, m = 4, ascent = 2

    Q = np.eye(4, dtype=complex)[:, [0, 2]]
    chain = compute_generalized_chain(A, B, 1.0, Q, 4)
    assert chain.ascent == 2
    assert not chain.exhausted
    assert list(chain.orders) == [1, 1, 2, 2]
    assert np.linalg.matrix_rank(chain.vectors, tol=1e-10) == 4


def test_chain_j4_full_ascent():
    lam = 3.0
    A = np.diag([lam] * 4) + np.diag([1.0, 1.0, 1.0], 1)
    A = A.astype(complex)
    B = np.eye(4, dtype=complex)
    assert _nullspace_dims(A, B, lam, 5) == [1, 2, 3, 4, 4]

    Q = np.eye(4, dtype=complex)[:, :1]
    chain = compute_generalized_chain(A, B, lam, Q, 4)
    assert chain.ascent == 4
    assert list(chain.orders) == [1, 2, 3, 4]
    # nilpotent action annihilates order-k vectors
    N = A - lam * B
    for vec, order in zip(chain.vectors.T, chain.orders):
        power = vec.copy()
        for _ in range(order):
            power = N @ power
        assert np.linalg.norm(power) <= 1e-8 * np.linalg.norm(A, 2) ** order


def test_chain_ascent_exhausted():
    A = np.array([[2.0, 1.0], [0.0, 2.0]], dtype=complex)
    Q = np.array([[1.0], [0.0]], dtype=complex)
    chain = compute_generalized_chain(A, np.eye(2, dtype=complex), 2.0, Q, 3)
    assert chain.exhausted
    assert chain.ascent == 2
    assert chain.vectors.shape[1] == 2
    assert chain.diagnostic


def test_chain_rejects_m_below_q():
    with pytest.raises(ValueError):
        compute_generalized_chain(np.eye(2, dtype=complex),
                                  np.eye(2, dtype=complex), 1.0,
                                  np.eye(2, dtype=complex), 1)


def test_eigenvalue_order_lexicographic():
    lams = np.array([2.0 + 1j, 2.0 - 1j, 1.0, 2.0])
    order = eigenvalue_order(lams)
    assert_allclose(lams[order], [1.0, 2.0 - 1j, 2.0, 2.0 + 1j])
