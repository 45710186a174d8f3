"""Dense nonsymmetric generalized eigensolver and algebraic eigenspace
completion for small pencils.

A single LAPACK solve provides right eigenvectors (discrete primal
eigenfunctions) and left eigenvectors (discrete adjoint eigenfunctions,
satisfying ``l^H A = lambda l^H B`` with the same, unconjugated eigenvalue).
Defective eigenvalues are handled by a constrained recursion that extends the
geometric eigenspace to the algebraic one order by order.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .exceptions import ClusterSelectionError, PencilDegenerateError

DEFAULT_TOL = 1e-9
CHAIN_RANK_CUTOFF = 1e-8
CLUSTER_RTOL = 1e-6


@dataclass
class EigenTriple:
    """One eigenvalue with unit-norm right and left eigenvectors."""

    lam: complex
    right_vec: np.ndarray
    left_vec: np.ndarray

    def residuals(self, A, B):
        """Right and left residual norms of the pencil equations."""
        r = np.linalg.norm(A @ self.right_vec - self.lam * (B @ self.right_vec))
        lh = self.left_vec.conj()
        l = np.linalg.norm(lh @ A - self.lam * (lh @ B))
        return r, l


@dataclass
class ChainBasis:
    """Generalized eigenvectors ordered by increasing order.

    ``vectors[:, i]`` has order ``orders[i]``; order-1 vectors are the given
    geometric eigenvectors. ``ascent`` is the largest order present. When the
    recursion runs out of consistent extensions before reaching the requested
    dimension, ``exhausted`` is set and ``diagnostic`` explains why.
    """

    vectors: np.ndarray
    orders: np.ndarray
    ascent: int
    exhausted: bool = False
    diagnostic: Optional[str] = None


def eigenvalue_order(lams):
    """Permutation sorting eigenvalues by (Re, Im, abs)."""
    lams = np.asarray(lams)
    return np.lexsort((np.abs(lams), lams.imag, lams.real))


def solve_dense_pencil(A, B, tol=DEFAULT_TOL):
    """All eigentriples of the pencil ``A x = lambda B x``.

    Returns the triples sorted by (Re, Im, abs) of the eigenvalue. Raises
    PencilDegenerateError when B is numerically singular (the pencil then has
    infinite eigenvalues and the mass-like reduction breaks down).
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A and B must be square matrices of equal size")

    sv = sla.svdvals(B)
    if sv[-1] <= 1e-13 * max(sv[0], 1e-300):
        raise PencilDegenerateError("B is numerically singular")

    w, vl, vr = sla.eig(A, B, left=True, right=True)
    if not np.isfinite(w).all():
        raise PencilDegenerateError("pencil has non-finite eigenvalues")

    vr = vr / np.linalg.norm(vr, axis=0)
    vl = vl / np.linalg.norm(vl, axis=0)
    order = eigenvalue_order(w)
    return [EigenTriple(complex(w[i]), vr[:, i].copy(), vl[:, i].copy())
            for i in order]


@dataclass(frozen=True)
class ClusterSelector:
    """Target description: 1-based position ``index`` in the (Re, Im, abs)
    ordering, cluster size ``count``, and optionally the cluster mean from
    the previous level for nearest matching."""

    index: int
    count: int
    previous: Optional[complex] = None


def select_cluster(triples, selector):
    """Indices into ``triples`` of the selected eigenvalue cluster.

    Without a previous mean the eigenvalues are taken by sorted position;
    with one, the ``count`` eigenvalues closest to it are chosen. The
    returned indices are ordered by (Re, Im, abs).
    """
    n = len(triples)
    m = selector.count
    if m < 1 or m > n:
        raise ClusterSelectionError(
            f"cannot select {m} eigenvalues out of {n}")
    lams = np.array([t.lam for t in triples])
    if selector.previous is None:
        i0 = selector.index - 1
        if i0 < 0 or i0 + m > n:
            raise ClusterSelectionError(
                f"cluster {selector.index}..{selector.index + m - 1} exceeds "
                f"the {n} available eigenvalues")
        order = eigenvalue_order(lams)
        chosen = order[i0:i0 + m]
    else:
        dist = np.abs(lams - selector.previous)
        chosen = np.argsort(dist, kind="stable")[:m]
    chosen = np.asarray(chosen)
    return list(chosen[eigenvalue_order(lams[chosen])])


def group_coincident(lams, rtol=CLUSTER_RTOL):
    """Partition positions of ``lams`` into groups of numerically equal
    eigenvalues (within ``rtol * (1 + |lambda|)``)."""
    lams = np.asarray(lams)
    order = eigenvalue_order(lams)
    groups = []
    current = [int(order[0])]
    for prev, nxt in zip(order[:-1], order[1:]):
        if abs(lams[nxt] - lams[prev]) <= rtol * (1.0 + abs(lams[prev])):
            current.append(int(nxt))
        else:
            groups.append(current)
            current = [int(nxt)]
    groups.append(current)
    return groups


def compute_generalized_chain(A, B, lam, Q, m_target, tol=DEFAULT_TOL):
    """Extend geometric eigenvectors ``Q`` to ``m_target`` generalized ones.

    Each order-l vector solves the saddle system

        [[A - lam B,  B Q ],   [u^l ]     [lam A u^(l-1)]
         [Q^H B^H,    0   ]] *  [mu ]  =   [0           ]

    by minimum-norm least squares, which realizes the recursion
    ``(A - lam B) u^l = lam A u^(l-1)`` modulo ``range(B Q)`` under the
    constraint ``Q^H B^H u^l = 0``. Extension of a chain stops when the
    system becomes inconsistent beyond the numerical-rank tolerance; if that
    happens before ``m_target`` vectors exist, the partial chain is returned
    with ``exhausted`` set.
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    Q = np.asarray(Q, dtype=complex)
    if Q.ndim == 1:
        Q = Q[:, None]
    n, q = Q.shape
    if m_target < q:
        raise ValueError(f"m_target ({m_target}) must be >= rank of Q ({q})")

    vectors = [Q[:, j].copy() for j in range(q)]
    orders = [1] * q
    if m_target == q:
        return ChainBasis(np.column_stack(vectors), np.array(orders), 1)

    BQ = B @ Q
    S = np.zeros((n + q, n + q), dtype=complex)
    S[:n, :n] = A - lam * B
    S[:n, n:] = BQ
    S[n:, :n] = BQ.conj().T
    scale = np.linalg.norm(A, 2) + abs(lam) * np.linalg.norm(B, 2)

    prev = [Q[:, j].copy() for j in range(q)]
    alive = [True] * q
    level = 1
    while len(vectors) < m_target and any(alive):
        level += 1
        for j in range(q):
            if not alive[j] or len(vectors) >= m_target:
                continue
            rhs = np.zeros(n + q, dtype=complex)
            rhs[:n] = lam * (A @ prev[j])
            sol = np.linalg.lstsq(S, rhs, rcond=CHAIN_RANK_CUTOFF)[0]
            res = np.linalg.norm(S @ sol - rhs)
            if res > tol * max(np.linalg.norm(rhs), scale):
                alive[j] = False
                continue
            u = sol[:n]
            vectors.append(u)
            orders.append(level)
            prev[j] = u

    ascent = max(orders)
    if len(vectors) < m_target:
        diag = (f"chains exhausted at ascent {ascent}: only {len(vectors)} of "
                f"{m_target} generalized eigenvectors exist at numerical rank")
        return ChainBasis(np.column_stack(vectors), np.array(orders), ascent,
                          exhausted=True, diagnostic=diag)
    return ChainBasis(np.column_stack(vectors), np.array(orders), ascent)
