"""Eigenvalue/eigenfunction error measures, subspace gaps, and convergence
order estimation."""

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateSubspaceError

GAP_RANK_CUTOFF = 1e-10


def mean_eigenvalue(cluster):
    """Arithmetic mean of a cluster's eigenvalues.

    Accepts an EigenCluster or any iterable of eigenvalues.
    """
    lams = getattr(cluster, "lambdas", cluster)
    lams = np.asarray(list(lams), dtype=complex)
    if lams.size == 0:
        raise ValueError("cluster is empty")
    return complex(lams.mean())


def _orthonormalize(M, G):
    """G-orthonormal basis of the column span of M; raises on rank loss."""
    M = np.asarray(M, dtype=complex)
    if M.ndim == 1:
        M = M[:, None]
    K = M.conj().T @ (G @ M)
    K = 0.5 * (K + K.conj().T)
    vals, vecs = np.linalg.eigh(K)
    smax = np.sqrt(max(vals.max(), 0.0))
    keep = vals > (GAP_RANK_CUTOFF * smax) ** 2
    if keep.sum() < M.shape[1]:
        raise DegenerateSubspaceError(
            f"basis of {M.shape[1]} columns has numerical rank {int(keep.sum())}")
    return M @ (vecs[:, keep] / np.sqrt(vals[keep]))


def _directed_distance_from_svals(s, dim_from):
    """sup-inf distance from a subspace of dimension ``dim_from``, given the
    principal-angle cosines against the target subspace."""
    cosines = np.zeros(dim_from)
    k = min(s.size, dim_from)
    cosines[:k] = np.clip(s[:k], 0.0, 1.0)
    return np.sqrt(max(0.0, 1.0 - cosines.min() ** 2))


def subspace_gap(U, W, G):
    """Symmetric gap between the spans of U and W in the G-inner product.

    Equals ``max`` over both directions of ``sup inf || w - v ||_G`` over
    unit vectors of one span against the other, computed from principal
    angles. Zero iff the spans coincide numerically. Exactly symmetric in
    its subspace arguments.
    """
    U = np.asarray(U, dtype=complex)
    W = np.asarray(W, dtype=complex)
    if U.ndim == 1:
        U = U[:, None]
    if W.ndim == 1:
        W = W[:, None]
    # canonical argument order makes gap(U, W) == gap(W, U) bitwise
    if (W.shape[1], W.tobytes()) < (U.shape[1], U.tobytes()):
        U, W = W, U
    Qu = _orthonormalize(U, G)
    Qw = _orthonormalize(W, G)
    cross = Qu.conj().T @ (G @ Qw)
    s = np.linalg.svd(cross, compute_uv=False)
    d_uw = _directed_distance_from_svals(s, Qu.shape[1])
    d_wu = _directed_distance_from_svals(s, Qw.shape[1])
    return float(max(d_uw, d_wu))


@dataclass(frozen=True)
class GapReport:
    """Gap of the same pair of subspaces in the H1 norm (theta) and in the
    b-weighted L2 norm (phi)."""

    theta: float
    phi: float


def gap_report(U, W, G_h1, G_b):
    return GapReport(theta=subspace_gap(U, W, G_h1), phi=subspace_gap(U, W, G_b))


def align_to_exact(space, computed, exact_fns, norm="b", quad_degree=None,
                   varphi=None):
    """Per-function errors of computed vectors against the analytic span.

    Each computed column (full DOF coefficients) is compared against its best
    approximation from span{exact_fns} in the requested norm, which removes
    scale, phase and intra-cluster mixing. For a single exact function and
    the b-norm this reduces to the scalar alignment
    ``alpha = b(u_h, u) / b(u, u)``.

    Parameters
    ----------
    norm : {"b", "h1"}
        Inner product used for the projection and reported error.

    Returns
    -------
    (k,) float array of aligned errors, one per computed column.
    """
    norm = norm.lower()
    if norm not in ("b", "h1"):
        raise ValueError(f"norm must be 'b' or 'h1', got {norm!r}")
    computed = np.asarray(computed, dtype=complex)
    if computed.ndim == 1:
        computed = computed[:, None]
    if quad_degree is None:
        quad_degree = 2 * space.degree + 6

    points, weights, N, grads = space._geometry(quad_degree)
    ne, nq = weights.shape
    flat = points.reshape(-1, 2)

    u_elem = computed[space.element_dofs]               # (ne, nld, k)
    uh = np.einsum("ql,elk->eqk", N, u_elem)
    ev = np.stack([np.asarray(f.value(flat), dtype=complex).reshape(ne, nq)
                   for f in exact_fns], axis=2)         # (ne, nq, r)

    if norm == "h1":
        guh = np.einsum("eqld,elk->eqkd", grads, u_elem)
        eg = np.stack([np.asarray(f.gradient(flat), dtype=complex)
                       .reshape(ne, nq, 2) for f in exact_fns], axis=2)
        w = weights
    else:
        from .fem import coerce_weight
        w = weights * coerce_weight(varphi, flat).reshape(ne, nq)

    # Normal equations of the projection: with inner(f, g) = sum w f conj(g)
    # (plus gradient terms for h1), solve M alpha = c where
    # M[i, j] = inner(e_j, e_i) and c_i = inner(u, e_i).
    gram = np.einsum("eq,eqi,eqj->ij", w, ev, ev.conj())
    cross = np.einsum("eq,eqk,eqi->ki", w, uh, ev.conj())
    if norm == "h1":
        gram = gram + np.einsum("eq,eqid,eqjd->ij", w, eg, eg.conj())
        cross = cross + np.einsum("eq,eqkd,eqid->ki", w, guh, eg.conj())

    M = gram.conj()
    try:
        alpha = np.linalg.solve(M, cross.T)                    # (r, k)
    except np.linalg.LinAlgError:
        alpha = np.linalg.lstsq(M, cross.T, rcond=None)[0]

    resid = uh - np.einsum("rk,eqr->eqk", alpha, ev)
    err2 = np.einsum("eq,eqk->k", w, np.abs(resid) ** 2)
    if norm == "h1":
        g_resid = guh - np.einsum("rk,eqrd->eqkd", alpha, eg)
        err2 = err2 + np.einsum("eq,eqkd->k", weights, np.abs(g_resid) ** 2)
    return np.sqrt(np.maximum(err2.real, 0.0))


def fit_order(hs, errs):
    """Least-squares slope of log(err) against log(h)."""
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray(errs, dtype=float)
    if hs.size < 2 or hs.size != errs.size:
        raise ValueError("need at least two matching (h, err) pairs")
    if (hs <= 0).any() or (errs <= 0).any():
        raise ValueError("fit_order requires positive h and err values")
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return float(slope)
