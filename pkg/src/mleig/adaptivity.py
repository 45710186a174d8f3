"""ZZ gradient-recovery error estimation, Doerfler marking, and the adaptive
multilevel loop."""

import time
from dataclasses import dataclass
from typing import List

import numpy as np

from .correction import initial_solve, one_correction_step
from .exceptions import UnsupportedDegreeError
from .fem import build_space
from .mesh import refine_bisection

DEFAULT_THETA = 0.4


@dataclass
class EstimateField:
    """Per-triangle indicators and their l2 aggregate."""

    eta: np.ndarray
    total: float

    @classmethod
    def from_indicators(cls, eta):
        eta = np.asarray(eta, dtype=float)
        if (eta < 0).any():
            raise ValueError("indicators must be nonnegative")
        return cls(eta=eta, total=float(np.sqrt((eta ** 2).sum())))


def zz_recover(space, u_vec):
    """Gradient-recovery indicators for a P1 function (full coefficients).

    The recovered gradient averages adjacent element gradients at each vertex
    with area weights; the indicator is the element L2 norm of the difference
    between the discrete gradient and its recovery. Exact for globally linear
    functions.
    """
    if space.degree != 1:
        raise UnsupportedDegreeError("ZZ recovery implemented for P1 only")
    mesh = space.mesh
    u = np.asarray(u_vec, dtype=complex)
    tris = mesh.triangles
    tri_coords = mesh.vertices[tris]
    areas = mesh.triangle_areas()

    J = np.stack([tri_coords[:, 0] - tri_coords[:, 2],
                  tri_coords[:, 1] - tri_coords[:, 2]], axis=2)
    invJ = np.linalg.inv(J)
    gradlam = np.empty((tris.shape[0], 3, 2))
    gradlam[:, 0] = invJ[:, 0, :]
    gradlam[:, 1] = invJ[:, 1, :]
    gradlam[:, 2] = -gradlam[:, 0] - gradlam[:, 1]

    g = np.einsum("eld,el->ed", gradlam, u[tris])      # constant per element

    num = np.zeros((mesh.num_vertices, 2), dtype=complex)
    den = np.zeros(mesh.num_vertices)
    for l in range(3):
        np.add.at(num, tris[:, l], areas[:, None] * g)
        np.add.at(den, tris[:, l], areas)
    recovered = num / den[:, None]

    # int_K |g - G_h|^2 for linear G_h: exact mass-matrix formula
    d = g[:, None, :] - recovered[tris]                # (ne, 3, 2)
    pair = np.einsum("eid,ejd->eij", d, d.conj()).real
    eta2 = areas / 12.0 * (pair.sum(axis=(1, 2)) + np.trace(pair, axis1=1, axis2=2))
    return np.sqrt(np.maximum(eta2, 0.0))


def combine_estimators(primal, adjoint):
    """Root-sum-square combination of primal and adjoint indicators."""
    primal = np.asarray(primal, dtype=float)
    adjoint = np.asarray(adjoint, dtype=float)
    if primal.shape != adjoint.shape:
        raise ValueError("indicator arrays must have equal length")
    return EstimateField.from_indicators(np.sqrt(primal ** 2 + adjoint ** 2))


def mark_dorfler(field, theta):
    """Smallest element set carrying a theta fraction of the squared total.

    Elements are taken greedily by descending indicator, ties broken by lower
    triangle index.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    eta = field.eta
    order = np.lexsort((np.arange(eta.size), -eta))
    eta2 = eta[order] ** 2
    target = theta ** 2 * field.total ** 2
    cum = np.cumsum(eta2)
    count = int(np.searchsorted(cum, target * (1.0 - 1e-12)) + 1)
    count = min(count, int((eta > 0).sum()))
    return set(int(i) for i in order[:count])


def cluster_indicators(space, cluster):
    """Primal and adjoint indicators aggregated over the cluster members."""
    primal_full = cluster.primal_full()
    adjoint_full = cluster.adjoint_full()
    eta_p2 = np.zeros(space.mesh.num_triangles)
    eta_a2 = np.zeros(space.mesh.num_triangles)
    for j in range(cluster.m):
        eta_p2 += zz_recover(space, primal_full[:, j]) ** 2
        eta_a2 += zz_recover(space, adjoint_full[:, j]) ** 2
    return np.sqrt(eta_p2), np.sqrt(eta_a2)


@dataclass
class AdaptiveRecord:
    """Per-iteration history entry of the adaptive loop."""

    iteration: int
    space: object
    dofs_fine: int
    dofs_small: int
    lambdas: np.ndarray
    lambda_hat: complex
    estimator_primal: float
    estimator_adjoint: float
    estimator_total: float
    wall_ms: float


def adaptive_multilevel(coeffs, initial_mesh, selector, theta=DEFAULT_THETA,
                        max_iters=10, quad_degree=None, dense_limit=3000):
    """Adaptive loop: correction step, ZZ estimate, Doerfler mark, bisect.

    The coarse space of every correction step stays the P1 space on the
    initial mesh. Returns the final cluster and one record per iterate
    (including the initial solve as iteration 0).
    """
    space = build_space(initial_mesh, 1)
    coarse = space
    t0 = time.perf_counter()
    cluster = initial_solve(space, coeffs, selector, quad_degree=quad_degree,
                            dense_limit=dense_limit)
    history: List[AdaptiveRecord] = []

    def record(it, cl, sp, t_start):
        eta_p, eta_a = cluster_indicators(sp, cl)
        fld = combine_estimators(eta_p, eta_a)
        history.append(AdaptiveRecord(
            iteration=it, space=sp, dofs_fine=sp.interior_count,
            dofs_small=(coarse.interior_count + cl.m if it else sp.interior_count),
            lambdas=cl.lambdas.copy(), lambda_hat=cl.lambda_hat,
            estimator_primal=float(np.sqrt((eta_p ** 2).sum())),
            estimator_adjoint=float(np.sqrt((eta_a ** 2).sum())),
            estimator_total=fld.total,
            wall_ms=1e3 * (time.perf_counter() - t_start)))
        return fld

    field = record(0, cluster, space, t0)

    mesh = initial_mesh
    for it in range(1, max_iters + 1):
        t0 = time.perf_counter()
        marked = mark_dorfler(field, theta)
        mesh = refine_bisection(mesh, marked)
        space = build_space(mesh, 1)
        cluster = one_correction_step(coarse, cluster, space, coeffs,
                                      quad_degree=quad_degree)
        field = record(it, cluster, space, t0)
    return cluster, history
