"""Lagrange finite element spaces P1-P4 and complex form assembly.

Conventions
-----------
* Matrices follow ``A[i, j] = a(phi_j, phi_i)``: the second (test) argument
  of the sesquilinear form indexes rows, so ``b(u, v) = v^H B u`` for
  coefficient vectors ``u``, ``v``.
* Assembled matrices are complex throughout, even for real problems.
* Coefficient vectors at the space level cover all DOFs ("full" vectors).
  The interior-only pencil used by solvers is obtained by eliminating
  Dirichlet rows and columns; ``FeSpace.extend`` / ``FeSpace.restrict``
  convert between the two shapes.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (CoefficientError, NestingError, SolverFailure,
                         UnsupportedDegreeError)
from .mesh import ancestor_triangle_map
from .quadrature import triangle_rule

MAX_DEGREE = 4


# -- Lagrange basis on the reference triangle --------------------------------

def _local_node_lattice(p):
    """Barycentric integer lattice (i, j, k), i+j+k = p, in slot order:
    3 vertices, then p-1 nodes per edge (edge m runs from local vertex
    (m+1)%3 to (m+2)%3), then interior nodes lexicographically."""
    nodes = [(p, 0, 0), (0, p, 0), (0, 0, p)]
    for s in range(1, p):
        nodes.append((0, p - s, s))          # edge 0: v1 -> v2
    for s in range(1, p):
        nodes.append((s, 0, p - s))          # edge 1: v2 -> v0
    for s in range(1, p):
        nodes.append((p - s, s, 0))          # edge 2: v0 -> v1
    for i in range(1, p):
        for j in range(1, p - i):
            nodes.append((i, j, p - i - j))
    return np.array(nodes, dtype=np.int64)


def _silvester(i, p, lam):
    """P_i(lam) = prod_{r<i} (p*lam - r)/(r + 1); equals 1 at lam = i/p."""
    out = np.ones_like(lam)
    for r in range(i):
        out = out * (p * lam - r) / (r + 1)
    return out


def _silvester_deriv(i, p, lam):
    out = np.zeros_like(lam)
    for s in range(i):
        term = np.full_like(lam, p / (s + 1))
        for r in range(i):
            if r != s:
                term = term * (p * lam - r) / (r + 1)
        out = out + term
    return out


def shape_values(p, bary):
    """Values of the degree-p Lagrange basis at barycentric points.

    Returns an (npts, nld) array in the local slot order of
    :func:`_local_node_lattice`.
    """
    bary = np.atleast_2d(bary)
    lattice = _local_node_lattice(p)
    vals = np.empty((bary.shape[0], lattice.shape[0]))
    for l, (i, j, k) in enumerate(lattice):
        vals[:, l] = (_silvester(i, p, bary[:, 0]) *
                      _silvester(j, p, bary[:, 1]) *
                      _silvester(k, p, bary[:, 2]))
    return vals


def shape_bary_gradients(p, bary):
    """Derivatives of the basis with respect to the three barycentric
    coordinates; shape (npts, nld, 3)."""
    bary = np.atleast_2d(bary)
    lattice = _local_node_lattice(p)
    grads = np.empty((bary.shape[0], lattice.shape[0], 3))
    P = [[_silvester(c, p, bary[:, axis]) for axis in range(3)]
         for c in range(p + 1)]
    dP = [[_silvester_deriv(c, p, bary[:, axis]) for axis in range(3)]
          for c in range(p + 1)]
    for l, (i, j, k) in enumerate(lattice):
        grads[:, l, 0] = dP[i][0] * P[j][1] * P[k][2]
        grads[:, l, 1] = P[i][0] * dP[j][1] * P[k][2]
        grads[:, l, 2] = P[i][0] * P[j][1] * dP[k][2]
    return grads


# -- finite element space -----------------------------------------------------

class FeSpace:
    """Continuous Lagrange space of degree 1..4 on a triangle mesh.

    Attributes
    ----------
    mesh : Mesh
    degree : int
    dof_count : int
    element_dofs : (nt, nld) int array
        Global DOF of every local basis slot.
    dof_coordinates : (dof_count, 2) float array
    boundary_dof_mask : (dof_count,) bool array
    interior_dofs : int array
        Indices of the non-Dirichlet DOFs.
    """

    def __init__(self, mesh, degree):
        if not 1 <= degree <= MAX_DEGREE:
            raise UnsupportedDegreeError(
                f"degree must be in 1..{MAX_DEGREE}, got {degree}")
        self.mesh = mesh
        self.degree = int(degree)
        self._geom_cache = {}
        self._build_dofs()

    def _build_dofs(self):
        p = self.degree
        mesh = self.mesh
        nv, nt = mesh.num_vertices, mesh.num_triangles
        edges = mesh.edges()
        ne = edges.shape[0]
        tri_edges = mesh.triangle_edges()
        n_edge = p - 1
        n_int = (p - 1) * (p - 2) // 2

        self.dof_count = nv + ne * n_edge + nt * n_int
        edge_base = nv
        int_base = nv + ne * n_edge

        tris = mesh.triangles
        nld = 3 + 3 * n_edge + n_int
        element_dofs = np.empty((nt, nld), dtype=np.int64)
        element_dofs[:, :3] = tris

        slot = 3
        for local_edge in range(3):
            g1 = tris[:, (local_edge + 1) % 3]
            g2 = tris[:, (local_edge + 2) % 3]
            eid = tri_edges[:, local_edge]
            forward = g1 < g2
            for s in range(1, p):
                s_glob = np.where(forward, s, p - s)
                element_dofs[:, slot] = edge_base + eid * n_edge + (s_glob - 1)
                slot += 1
        for k in range(n_int):
            element_dofs[:, slot] = int_base + np.arange(nt) * n_int + k
            slot += 1
        self.element_dofs = element_dofs

        coords = np.empty((self.dof_count, 2))
        coords[:nv] = mesh.vertices
        va, vb = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
        for s in range(1, p):
            coords[edge_base + np.arange(ne) * n_edge + (s - 1)] = (
                va + (s / p) * (vb - va))
        if n_int:
            lattice = _local_node_lattice(p)[3 + 3 * n_edge:]
            tri_coords = mesh.vertices[tris]
            for k, (i, j, kk) in enumerate(lattice):
                pt = (i * tri_coords[:, 0] + j * tri_coords[:, 1]
                      + kk * tri_coords[:, 2]) / p
                coords[int_base + np.arange(nt) * n_int + k] = pt
        self.dof_coordinates = coords

        boundary = np.zeros(self.dof_count, dtype=bool)
        boundary[:nv] = mesh.boundary_vertex_flags
        bedges = np.flatnonzero(mesh.boundary_edge_mask())
        for s in range(1, p):
            boundary[edge_base + bedges * n_edge + (s - 1)] = True
        self.boundary_dof_mask = boundary
        self.interior_dofs = np.flatnonzero(~boundary)

        # one owning triangle per DOF, for interpolation onto finer spaces
        rep = np.empty(self.dof_count, dtype=np.int64)
        order = np.repeat(np.arange(nt), nld)
        rep[element_dofs.ravel()[::-1]] = order[::-1]
        self._dof_triangle = rep

    # -- vector shape helpers ------------------------------------------------

    @property
    def interior_count(self):
        return self.interior_dofs.size

    def extend(self, u_interior):
        """Pad interior coefficients with zeros on the Dirichlet DOFs."""
        u_interior = np.asarray(u_interior)
        out = np.zeros(u_interior.shape[:-1] + (self.dof_count,), dtype=complex)
        out[..., self.interior_dofs] = u_interior
        return out

    def restrict(self, u_full):
        """Drop Dirichlet DOFs from a full coefficient vector."""
        return np.asarray(u_full)[..., self.interior_dofs]

    def interpolate(self, fn):
        """Nodal interpolation: evaluate ``fn`` at the DOF coordinates."""
        vals = fn(self.dof_coordinates)
        return np.asarray(vals, dtype=complex).reshape(self.dof_count)

    # -- geometry tables -------------------------------------------------------

    def _geometry(self, quad_degree):
        """Cached per-element quadrature tables for the requested degree."""
        tab = self._geom_cache.get(quad_degree)
        if tab is None:
            bary, wref = triangle_rule(quad_degree)
            tri_coords = self.mesh.vertices[self.mesh.triangles]
            points = np.einsum("qc,ecd->eqd", bary, tri_coords)
            areas = self.mesh.triangle_areas()
            weights = 2.0 * areas[:, None] * wref[None, :]

            J = np.stack([tri_coords[:, 0] - tri_coords[:, 2],
                          tri_coords[:, 1] - tri_coords[:, 2]], axis=2)
            invJ = np.linalg.inv(J)
            gradlam = np.empty((tri_coords.shape[0], 3, 2))
            gradlam[:, 0] = invJ[:, 0, :]
            gradlam[:, 1] = invJ[:, 1, :]
            gradlam[:, 2] = -gradlam[:, 0] - gradlam[:, 1]

            N = shape_values(self.degree, bary)
            dNb = shape_bary_gradients(self.degree, bary)
            grads = np.einsum("qlc,ecd->eqld", dNb, gradlam)
            tab = (points, weights, N, grads)
            self._geom_cache[quad_degree] = tab
        return tab

    def evaluate(self, u_full, points):
        """Evaluate the FE function at arbitrary points (brute-force location)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        u_full = np.asarray(u_full, dtype=complex)
        tri_coords = self.mesh.vertices[self.mesh.triangles]
        J = np.stack([tri_coords[:, 0] - tri_coords[:, 2],
                      tri_coords[:, 1] - tri_coords[:, 2]], axis=2)
        invJ = np.linalg.inv(J)
        elem = self._locate(points, tri_coords, invJ)
        rel = points - tri_coords[elem, 2]
        lam12 = np.einsum("ncd,nd->nc", invJ[elem], rel)
        bary = np.column_stack([lam12, 1.0 - lam12.sum(axis=1)])
        vals = shape_values(self.degree, bary)
        out = np.einsum("nl,nl->n", vals, u_full[self.element_dofs[elem]])
        return out

    def _locate(self, points, tri_coords, invJ, tol=1e-10):
        npts = points.shape[0]
        elem = np.full(npts, -1, dtype=np.int64)
        chunk = max(1, int(2e6 // max(1, tri_coords.shape[0])))
        for start in range(0, npts, chunk):
            pts = points[start:start + chunk]
            rel = pts[:, None, :] - tri_coords[None, :, 2, :]
            lam12 = np.einsum("ecd,ned->nec", invJ, rel)
            lam3 = 1.0 - lam12.sum(axis=2)
            ok = (lam12 >= -tol).all(axis=2) & (lam3 >= -tol)
            found = ok.argmax(axis=1)
            missing = ~ok[np.arange(pts.shape[0]), found]
            if missing.any():
                raise ValueError("point outside the mesh")
            elem[start:start + chunk] = found
        return elem


def build_space(mesh, degree):
    """Construct the Lagrange space of the given degree on the mesh."""
    return FeSpace(mesh, degree)


# -- PDE coefficients ---------------------------------------------------------

@dataclass(frozen=True)
class Coefficients:
    """Coefficient functions of the operator
    ``-div(A grad u) + b_vec . grad u + phi u  =  lambda varphi u``.

    Each callable receives an ``(n, 2)`` array of points and must return an
    array broadcastable to ``(n, 2, 2)`` / ``(n, 2)`` / ``(n,)``.
    ``varphi`` must be real and uniformly positive; this is checked at the
    quadrature points during assembly.
    """

    A: Callable
    b_vec: Callable
    phi: Callable
    varphi: Callable

    @classmethod
    def constant(cls, A=((1.0, 0.0), (0.0, 1.0)), b=(0.0, 0.0), phi=0.0,
                 varphi=1.0):
        A = np.asarray(A, dtype=complex)
        b = np.asarray(b, dtype=complex)
        phi = complex(phi)
        varphi = float(varphi)
        return cls(
            A=lambda x: np.broadcast_to(A, (x.shape[0], 2, 2)),
            b_vec=lambda x: np.broadcast_to(b, (x.shape[0], 2)),
            phi=lambda x: np.full(x.shape[0], phi),
            varphi=lambda x: np.full(x.shape[0], varphi),
        )


def convection_model(b=(1.0, 0.5)):
    """Coefficients of ``-laplace(u) + b . grad u = lambda u`` for constant b."""
    return Coefficients.constant(b=b)


def rotational_model():
    """Coefficients with the divergence-free field
    ``b = (cos(pi x) sin(pi y), -sin(pi x) cos(pi y))``."""
    def b_vec(x):
        out = np.empty((x.shape[0], 2), dtype=complex)
        out[:, 0] = np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
        out[:, 1] = -np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])
        return out

    eye = np.eye(2, dtype=complex)
    return Coefficients(
        A=lambda x: np.broadcast_to(eye, (x.shape[0], 2, 2)),
        b_vec=b_vec,
        phi=lambda x: np.zeros(x.shape[0], dtype=complex),
        varphi=lambda x: np.ones(x.shape[0]),
    )


# -- pencil assembly -----------------------------------------------------------

class FormPencil:
    """Interior-DOF matrices of the forms a(.,.) and b(.,.).

    ``A_mat`` and ``B_mat`` act on interior coefficient vectors. The
    pre-elimination matrices remain available as ``A_full`` / ``B_full``.
    A sparse LU factorization of ``A_mat`` is created on first use and shared
    by primal (``A x = f``) and adjoint (``A^H x = f``) solves.
    """

    def __init__(self, A_full, B_full, space, quad_degree):
        self.space = space
        self.quad_degree = quad_degree
        self.A_full = A_full.tocsr()
        self.B_full = B_full.tocsr()
        idx = space.interior_dofs
        self.A_mat = self.A_full[idx][:, idx].tocsc()
        self.B_mat = self.B_full[idx][:, idx].tocsc()
        self._lu = None

    @property
    def size(self):
        return self.A_mat.shape[0]

    def factorization(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.A_mat, permc_spec="COLAMD")
            except RuntimeError as exc:   # singular factorization
                raise SolverFailure(f"sparse LU factorization failed: {exc}") from exc
        return self._lu

    def solve(self, rhs, adjoint=False):
        lu = self.factorization()
        return lu.solve(np.asarray(rhs, dtype=complex), trans="H" if adjoint else "N")

    def dense(self):
        return self.A_mat.toarray(), self.B_mat.toarray()


def assemble_pencil(space, coeffs, quad_degree=None):
    """Assemble the complex pencil (A, B) of the forms a(.,.) and b(.,.).

    ``quad_degree`` defaults to ``2 * degree + 2`` and must be at least
    ``2 * degree`` so the constant-coefficient stiffness term is exact.
    """
    p = space.degree
    if quad_degree is None:
        quad_degree = 2 * p + 2
    if quad_degree < 2 * p:
        raise ValueError(f"quad_degree must be >= {2 * p}, got {quad_degree}")

    points, weights, N, grads = space._geometry(quad_degree)
    ne, nq, nld = grads.shape[0], grads.shape[1], grads.shape[2]
    flat = points.reshape(-1, 2)

    Aval = np.broadcast_to(np.asarray(coeffs.A(flat), dtype=complex),
                           (ne * nq, 2, 2)).reshape(ne, nq, 2, 2)
    bval = np.broadcast_to(np.asarray(coeffs.b_vec(flat), dtype=complex),
                           (ne * nq, 2)).reshape(ne, nq, 2)
    phival = np.broadcast_to(np.asarray(coeffs.phi(flat), dtype=complex),
                             (ne * nq,)).reshape(ne, nq)
    varphival = np.asarray(coeffs.varphi(flat))
    if np.iscomplexobj(varphival):
        if np.abs(varphival.imag).max(initial=0.0) > 1e-14:
            raise CoefficientError("varphi must be real valued")
        varphival = varphival.real
    varphival = np.broadcast_to(varphival, (ne * nq,)).reshape(ne, nq)
    if varphival.min() <= 0.0:
        raise CoefficientError("varphi must be positive at all quadrature points")

    stiff = np.einsum("eq,eqid,eqdc,eqjc->eij", weights, grads, Aval, grads,
                      optimize=True)
    conv = np.einsum("eq,qi,eqd,eqjd->eij", weights, N, bval, grads,
                     optimize=True)
    react = np.einsum("eq,eq,qi,qj->eij", weights, phival, N, N, optimize=True)
    mass = np.einsum("eq,eq,qi,qj->eij", weights, varphival, N, N, optimize=True)

    rows = np.repeat(space.element_dofs, nld, axis=1).ravel()
    cols = np.tile(space.element_dofs, (1, nld)).ravel()
    n = space.dof_count
    A_full = sp.coo_matrix(((stiff + conv + react).ravel(), (rows, cols)),
                           shape=(n, n)).tocsr()
    B_full = sp.coo_matrix((mass.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return FormPencil(A_full, B_full, space, quad_degree)


def h1_gram(space, quad_degree=None):
    """Full-DOF Gram matrix of the H1 inner product (grad-grad + L2)."""
    unit = Coefficients.constant(phi=1.0)
    return assemble_pencil(space, unit, quad_degree).A_full


def solve_source(pencil, rhs, adjoint=False, rtol=1e-10):
    """Direct solve of ``A x = rhs`` (or ``A^H x = rhs`` for the adjoint).

    The residual is verified against ``rtol * ||rhs||``; a violation signals
    a (near-)singular operator, i.e. loss of the discrete stability bound.
    """
    rhs = np.asarray(rhs, dtype=complex)
    if rhs.shape[-1] != pencil.size:
        raise ValueError("rhs length does not match interior DOF count")
    norm = np.linalg.norm(rhs)
    if norm == 0.0:
        return np.zeros_like(rhs)
    x = pencil.solve(rhs, adjoint=adjoint)
    op = pencil.A_mat.conj().T if adjoint else pencil.A_mat
    res = np.linalg.norm(op @ x - rhs)
    if not np.isfinite(res) or res > rtol * norm:
        raise SolverFailure(
            f"direct solve residual {res:.3e} exceeds {rtol:.1e} * ||rhs||")
    return x


# -- prolongation ---------------------------------------------------------------

def build_prolongation(coarse, fine):
    """Sparse matrix P mapping coarse full coefficients to fine full
    coefficients with pointwise function agreement.

    The spaces must be nested: same mesh with ``fine.degree >= coarse.degree``,
    or the fine mesh a refinement descendant of the coarse one.
    """
    if coarse is fine:
        return sp.identity(fine.dof_count, format="csr")
    if fine.degree < coarse.degree:
        raise NestingError("fine degree is lower than coarse degree")
    tri_map = ancestor_triangle_map(fine.mesh, coarse.mesh)

    pts = fine.dof_coordinates
    coarse_tri = tri_map[fine._dof_triangle]
    tri_coords = coarse.mesh.vertices[coarse.mesh.triangles]
    J = np.stack([tri_coords[:, 0] - tri_coords[:, 2],
                  tri_coords[:, 1] - tri_coords[:, 2]], axis=2)
    invJ = np.linalg.inv(J)

    rel = pts - tri_coords[coarse_tri, 2]
    lam12 = np.einsum("ncd,nd->nc", invJ[coarse_tri], rel)
    bary = np.column_stack([lam12, 1.0 - lam12.sum(axis=1)])
    vals = shape_values(coarse.degree, bary)

    cols = coarse.element_dofs[coarse_tri]
    rows = np.repeat(np.arange(fine.dof_count), cols.shape[1])
    keep = np.abs(vals.ravel()) > 1e-13
    P = sp.coo_matrix((vals.ravel()[keep], (rows[keep], cols.ravel()[keep])),
                      shape=(fine.dof_count, coarse.dof_count))
    return P.tocsr()


def interior_prolongation(coarse, fine):
    """Prolongation acting between interior coefficient vectors."""
    P = build_prolongation(coarse, fine)
    return P[fine.interior_dofs][:, coarse.interior_dofs].tocsr()


# -- error measurement ------------------------------------------------------------

@dataclass(frozen=True)
class ExactFunction:
    """Analytic function with gradient, both vectorized over (n, 2) points."""

    value: Callable
    gradient: Callable


def error_norms(space, u_full, exact, quad_degree, varphi=None):
    """Quadrature approximations of ``(||u_h - u||_b, ||u_h - u||_1)``.

    ``exact`` provides values and gradients; pass ``exact=None`` for the
    zero function. The b-norm weight defaults to 1.
    """
    points, weights, N, grads = space._geometry(quad_degree)
    flat = points.reshape(-1, 2)
    u_elem = np.asarray(u_full, dtype=complex)[space.element_dofs]
    uh = np.einsum("ql,el->eq", N, u_elem)
    guh = np.einsum("eqld,el->eqd", grads, u_elem)

    if exact is not None:
        ev = np.asarray(exact.value(flat), dtype=complex).reshape(uh.shape)
        eg = np.asarray(exact.gradient(flat), dtype=complex).reshape(guh.shape)
        uh = uh - ev
        guh = guh - eg

    w = np.asarray(coerce_weight(varphi, flat)).reshape(uh.shape)
    val2 = np.abs(uh) ** 2
    grad2 = (np.abs(guh) ** 2).sum(axis=2)
    l2b = np.sqrt(np.sum(weights * w * val2))
    h1 = np.sqrt(np.sum(weights * (val2 + grad2)))
    return float(l2b), float(h1)


def coerce_weight(varphi, flat_points):
    if varphi is None:
        return np.ones(flat_points.shape[0])
    return np.broadcast_to(np.asarray(varphi(flat_points), dtype=float),
                           (flat_points.shape[0],))
