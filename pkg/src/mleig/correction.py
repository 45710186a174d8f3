"""One correction step on augmented Petrov-Galerkin spaces and the
multilevel driver.

A correction step takes an eigenvalue cluster resolved on a coarser space,
solves one primal and one adjoint source problem per cluster member on the
fine space, and re-solves the eigenvalue problem on the small trial/test pair

    V_trial = V_H + span{source solutions},
    V_test  = V_H + span{adjoint source solutions},

so the only fine-space work is direct source solves. Eigenproblems stay at
coarse-space size plus the cluster dimension.
"""

import logging
import time
from dataclasses import dataclass
from typing import List

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (AugmentationCollapseError, CoarseSpaceTooLargeError)
from .fem import (FeSpace, assemble_pencil, build_space, interior_prolongation,
                  solve_source)
from .smalleig import (EigenTriple, compute_generalized_chain,
                       eigenvalue_order, group_coincident, select_cluster,
                       solve_dense_pencil)

logger = logging.getLogger(__name__)

RANK_CUTOFF = 1e-10
DENSE_LIMIT = 3000
PENCIL_DENSE_LIMIT = 600


@dataclass
class EigenCluster:
    """Approximation of one eigenvalue cluster.

    ``primal`` and ``adjoint`` hold interior coefficient vectors as columns
    of the same space; every column is b-normalized with its largest-modulus
    entry made real positive. ``lambda_hat`` is the plain arithmetic mean of
    ``lambdas``.
    """

    lambdas: np.ndarray
    lambda_hat: complex
    primal: np.ndarray
    adjoint: np.ndarray
    space: FeSpace
    q: int
    ascent: int

    @property
    def m(self):
        return len(self.lambdas)

    def primal_full(self):
        return self.space.extend(self.primal.T).T

    def adjoint_full(self):
        return self.space.extend(self.adjoint.T).T


@dataclass
class AugmentedBasis:
    """Fine-space coefficient bases of the trial and test spaces.

    The first ``n_coarse`` columns of both are the prolonged coarse basis;
    the remaining columns are the (b-normalized) source solutions.
    """

    trial: np.ndarray
    test: np.ndarray
    fine_space: FeSpace
    coarse_space: FeSpace


@dataclass
class LevelRecord:
    """Per-level history entry of a multilevel run."""

    level: int
    space: FeSpace
    dofs_fine: int
    dofs_small: int
    lambdas: np.ndarray
    lambda_hat: complex
    wall_ms: float
    cluster: "EigenCluster" = None


def _normalize_columns(V, B):
    """b-normalize columns and fix the phase of the largest entry."""
    V = np.array(V, dtype=complex)
    for j in range(V.shape[1]):
        v = V[:, j]
        nb = np.sqrt((v.conj() @ (B @ v)).real)
        if nb > 0:
            v = v / nb
        k = int(np.argmax(np.abs(v)))
        pivot = v[k]
        if abs(pivot) > 0:
            v = v * (pivot.conjugate() / abs(pivot))
        V[:, j] = v
    return V


def _geometric_structure(lams, vectors, rank_cutoff=1e-8):
    """Detected geometric multiplicity and coincident eigenvalue groups.

    Returns (q, groups, ranks) where groups partition the cluster positions
    and ranks give the numerical rank of the eigenvector block per group.
    """
    groups = group_coincident(lams)
    ranks = []
    for g in groups:
        block = vectors[:, g]
        s = np.linalg.svd(block, compute_uv=False)
        ranks.append(int((s > rank_cutoff * s[0]).sum()))
    q = int(sum(ranks))
    return q, groups, ranks


def _complete_algebraic(A, B, lams, R, L):
    """Replace eigenvector blocks of defective groups by generalized chains.

    ``R``/``L`` are right/left eigenvector columns matching ``lams``. Returns
    (primal, adjoint, q, ascent) in the same coordinates.
    """
    q, groups, ranks = _geometric_structure(lams, R)
    m = len(lams)
    if q == m:
        return R, L, q, 1

    primal = np.empty_like(R)
    adjoint = np.empty_like(L)
    ascent = 1
    for g, rank in zip(groups, ranks):
        if rank == len(g):
            primal[:, g] = R[:, g]
            adjoint[:, g] = L[:, g]
            continue
        lam_rep = complex(np.mean([lams[i] for i in g]))
        Ur, _, _ = np.linalg.svd(R[:, g], full_matrices=False)
        Ul, _, _ = np.linalg.svd(L[:, g], full_matrices=False)
        chain_r = compute_generalized_chain(A, B, lam_rep, Ur[:, :rank], len(g))
        chain_l = compute_generalized_chain(A.conj().T, B.conj().T,
                                            np.conj(lam_rep), Ul[:, :rank],
                                            len(g))
        for chain, side in ((chain_r, "primal"), (chain_l, "adjoint")):
            if chain.exhausted:
                logger.warning("%s chain incomplete: %s", side, chain.diagnostic)
        kr = min(chain_r.vectors.shape[1], len(g))
        kl = min(chain_l.vectors.shape[1], len(g))
        primal[:, g] = np.pad(chain_r.vectors[:, :kr],
                              ((0, 0), (0, len(g) - kr)))
        adjoint[:, g] = np.pad(chain_l.vectors[:, :kl],
                               ((0, 0), (0, len(g) - kl)))
        ascent = max(ascent, chain_r.ascent)
    return primal, adjoint, q, ascent


def initial_solve(space, coeffs, selector, quad_degree=None,
                  dense_limit=DENSE_LIMIT, pencil=None):
    """Dense Galerkin solve of the eigenvalue cluster on a small space.

    One dense pencil solve yields the primal (right) and adjoint (left)
    eigenvectors together; a defective cluster is completed to the full
    algebraic eigenspace by the chain recursion.
    """
    if space.interior_count > dense_limit:
        raise CoarseSpaceTooLargeError(
            f"{space.interior_count} interior DOFs exceed the dense-solve "
            f"limit {dense_limit}")
    if pencil is None:
        pencil = assemble_pencil(space, coeffs, quad_degree)
    Ad, Bd = pencil.dense()
    triples = solve_dense_pencil(Ad, Bd)
    chosen = select_cluster(triples, selector)

    lams = np.array([triples[i].lam for i in chosen])
    R = np.column_stack([triples[i].right_vec for i in chosen])
    L = np.column_stack([triples[i].left_vec for i in chosen])
    primal, adjoint, q, ascent = _complete_algebraic(Ad, Bd, lams, R, L)

    primal = _normalize_columns(primal, pencil.B_mat)
    adjoint = _normalize_columns(adjoint, pencil.B_mat)
    return EigenCluster(lambdas=lams, lambda_hat=complex(lams.mean()),
                        primal=primal, adjoint=adjoint, space=space,
                        q=q, ascent=ascent)


def _build_augmented(coarse, fine, pencil, cluster):
    """Source solves and augmented trial/test bases (step 1 and 2a).

    Returns the basis together with the prolonged previous primal cluster,
    which the eigenvalue-selection stage uses for mode tracking.
    """
    P_prev = interior_prolongation(cluster.space, fine)
    U = P_prev @ cluster.primal
    Ustar = P_prev @ cluster.adjoint

    B = pencil.B_mat
    X = np.column_stack([solve_source(pencil, B @ U[:, j])
                         for j in range(U.shape[1])])
    Xstar = np.column_stack([solve_source(pencil, B.conj().T @ Ustar[:, j],
                                          adjoint=True)
                             for j in range(Ustar.shape[1])])

    # unit b-norm columns keep the small pencil well conditioned; the shared
    # coarse block is scaled identically in trial and test
    for M in (X, Xstar):
        for j in range(M.shape[1]):
            nb = np.sqrt((M[:, j].conj() @ (B @ M[:, j])).real)
            if nb > 0:
                M[:, j] /= nb

    P_H = interior_prolongation(coarse, fine).toarray()
    bn = np.sqrt(np.einsum("ij,ij->j", P_H.conj(), B @ P_H).real)
    P_H = P_H / np.where(bn > 0, bn, 1.0)
    trial = np.hstack([P_H, X])
    test = np.hstack([P_H, Xstar])
    basis = AugmentedBasis(trial=trial, test=test, fine_space=fine,
                           coarse_space=coarse)
    return basis, P_H, U


def _check_rank(basis, P_H):
    """Verify full column rank; fall back to the bare coarse space when the
    source solutions already lie in it (stagnation of the augmentation)."""
    n_cols = basis.trial.shape[1]
    s_trial = np.linalg.svd(basis.trial, compute_uv=False)
    s_test = np.linalg.svd(basis.test, compute_uv=False)
    ok_trial = s_trial[-1] > RANK_CUTOFF * s_trial[0]
    ok_test = s_test[-1] > RANK_CUTOFF * s_test[0]
    if ok_trial and ok_test:
        return basis

    def contained(M):
        sol, *_ = np.linalg.lstsq(P_H, M, rcond=None)
        res = np.linalg.norm(P_H @ sol - M, axis=0)
        return (res <= 1e-8 * np.maximum(np.linalg.norm(M, axis=0), 1e-30)).all()

    if contained(basis.trial[:, P_H.shape[1]:]) and \
            contained(basis.test[:, P_H.shape[1]:]):
        logger.warning("augmentation degenerate: source solutions already lie "
                       "in the coarse space; using the coarse space alone")
        return AugmentedBasis(trial=P_H, test=P_H,
                              fine_space=basis.fine_space,
                              coarse_space=basis.coarse_space)
    raise AugmentationCollapseError(
        f"augmented basis of {n_cols} columns is rank deficient")


def _shift_invert_triples(A, B, target, k):
    """Eigentriples of a larger augmented pencil near the target value.

    Standard-mode shift-invert Arnoldi on (A - target B)^-1 B; ARPACK's
    generalized mode is unusable here because the Petrov-Galerkin B is not
    Hermitian definite. One LU factorization serves the right run and, via
    conjugate-transpose solves, the left run. Deterministic start vector.
    """
    import scipy.linalg as sla

    n = A.shape[0]
    k = min(k, n - 2)
    v0 = np.cos(np.arange(n) + 1.0) + 0.5j * np.sin(0.7 * np.arange(n))
    lu_piv = sla.lu_factor(A - target * B)
    BH = B.conj().T

    op_r = spla.LinearOperator(
        (n, n), matvec=lambda x: sla.lu_solve(lu_piv, B @ x), dtype=complex)
    op_l = spla.LinearOperator(
        (n, n), matvec=lambda x: sla.lu_solve(lu_piv, BH @ x, trans=2),
        dtype=complex)
    nur, vr = spla.eigs(op_r, k=k, v0=v0)
    nul, vl = spla.eigs(op_l, k=k, v0=v0)
    wr = target + 1.0 / nur
    wl = np.conj(np.conj(target) + 1.0 / nul)

    ir, il = eigenvalue_order(wr), eigenvalue_order(wl)
    if np.abs(wr[ir] - wl[il]).max() > 1e-8 * (1.0 + np.abs(wr).max()):
        logger.warning("left/right shift-invert eigenvalues differ; pairing "
                       "may be inexact")
    return [EigenTriple(complex(wr[i]),
                        vr[:, i] / np.linalg.norm(vr[:, i]),
                        vl[:, j] / np.linalg.norm(vl[:, j]))
            for i, j in zip(ir, il)]


def _pencil_triples(A_small, B_small, cluster):
    if A_small.shape[0] <= PENCIL_DENSE_LIMIT:
        return solve_dense_pencil(A_small, B_small)
    k = max(3 * cluster.m + 6, 12)
    return _shift_invert_triples(A_small, B_small, cluster.lambda_hat, k)


def _select_tracked(triples, G_trial, W_small, gram_prev, cluster):
    """Step-3 cluster choice in the augmented pencil.

    The pencil of an oblique (Petrov-Galerkin) projection can place spurious
    eigenvalues near the target, so nearest-eigenvalue matching alone is not
    reliable when the previous mean is coarse. Candidates are ranked by the
    b-overlap of their eigenfunctions with the span of the prolonged previous
    cluster; ties go to the eigenvalue nearest the previous mean.
    """
    m = cluster.m
    lams = np.array([t.lam for t in triples])
    C = np.column_stack([t.right_vec for t in triples])
    # all quantities in small coordinates: u_i = trial @ c_i
    R = np.linalg.cholesky(gram_prev)              # prev^H B prev = R R^H
    proj = np.linalg.solve(R, W_small @ C)         # (m, n_cand)
    mass = np.einsum("ij,ij->j", C.conj(), G_trial @ C).real
    score = (np.abs(proj) ** 2).sum(axis=0) / np.maximum(mass, 1e-300)
    order = np.lexsort((np.abs(lams - cluster.lambda_hat), -score))
    chosen = np.asarray(order[:m])
    if score[chosen].min() < 0.1:
        logger.warning("weak mode-tracking overlap %.3f; cluster selection "
                       "may have diverged", float(score[chosen].min()))
    return list(chosen[np.lexsort((np.abs(lams[chosen]),
                                   lams[chosen].imag, lams[chosen].real))])


def one_correction_step(coarse, cluster, fine, coeffs, quad_degree=None,
                        pencil=None):
    """Advance the cluster from its current space to the fine space.

    Solves the 2m fine source problems, assembles the small Petrov-Galerkin
    pencil on the augmented trial/test pair, extracts the cluster that
    continues the previous one, and rebuilds defective eigenspaces through
    the chain recursion. The returned cluster lives on ``fine``.
    """
    if pencil is None:
        pencil = assemble_pencil(fine, coeffs, quad_degree)
    basis, P_H, U_prev = _build_augmented(coarse, fine, pencil, cluster)
    basis = _check_rank(basis, P_H)

    A, B = pencil.A_mat, pencil.B_mat
    BT = B @ basis.trial
    A_small = basis.test.conj().T @ (A @ basis.trial)
    B_small = basis.test.conj().T @ BT
    G_trial = basis.trial.conj().T @ BT
    W_small = U_prev.conj().T @ BT                # overlap data for tracking
    gram_prev = U_prev.conj().T @ (B @ U_prev)

    triples = _pencil_triples(A_small, B_small, cluster)
    chosen = _select_tracked(triples, G_trial, W_small, gram_prev, cluster)

    lams = np.array([triples[i].lam for i in chosen])
    C = np.column_stack([triples[i].right_vec for i in chosen])
    D = np.column_stack([triples[i].left_vec for i in chosen])
    C, D, q, ascent = _complete_algebraic(A_small, B_small, lams, C, D)
    if q != cluster.q:
        logger.warning("geometric multiplicity changed across levels: "
                       "%d -> %d", cluster.q, q)

    primal = _normalize_columns(basis.trial @ C, B)
    adjoint = _normalize_columns(basis.test @ D, B)
    return EigenCluster(lambdas=lams, lambda_hat=complex(lams.mean()),
                        primal=primal, adjoint=adjoint, space=fine,
                        q=q, ascent=ascent)


def multilevel_solve(coeffs, level_plan, selector, coarse_index=0,
                     quad_degree=None, dense_limit=DENSE_LIMIT, pencils=None):
    """Initial dense solve on the first level, then one correction step per
    subsequent level.

    ``level_plan`` entries are FeSpace objects or ``(mesh, degree)`` pairs,
    pairwise nested in order. ``coarse_index`` picks the entry used as the
    fixed coarse space of every correction step. Returns the final cluster
    and the per-level history.
    """
    spaces = [entry if isinstance(entry, FeSpace) else build_space(*entry)
              for entry in level_plan]
    if not spaces:
        raise ValueError("level_plan is empty")
    if pencils is None:
        pencils = [None] * len(spaces)
    coarse = spaces[coarse_index]

    history: List[LevelRecord] = []
    t0 = time.perf_counter()
    cluster = initial_solve(spaces[0], coeffs, selector,
                            quad_degree=quad_degree, dense_limit=dense_limit,
                            pencil=pencils[0])
    history.append(LevelRecord(
        level=1, space=spaces[0], dofs_fine=spaces[0].interior_count,
        dofs_small=spaces[0].interior_count, lambdas=cluster.lambdas.copy(),
        lambda_hat=cluster.lambda_hat,
        wall_ms=1e3 * (time.perf_counter() - t0), cluster=cluster))

    for k, space in enumerate(spaces[1:], start=2):
        t0 = time.perf_counter()
        cluster = one_correction_step(coarse, cluster, space, coeffs,
                                      quad_degree=quad_degree,
                                      pencil=pencils[k - 1])
        history.append(LevelRecord(
            level=k, space=space, dofs_fine=space.interior_count,
            dofs_small=coarse.interior_count + cluster.m,
            lambdas=cluster.lambdas.copy(), lambda_hat=cluster.lambda_hat,
            wall_ms=1e3 * (time.perf_counter() - t0), cluster=cluster))
    return cluster, history
