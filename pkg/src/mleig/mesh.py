"""Conforming 2D triangulations with red and newest-vertex-bisection refinement.

Meshes are immutable after construction. Refinement returns a new mesh that
keeps a reference to its parent together with a child-to-parent triangle map,
which lets nested finite element spaces locate coarse ancestors of fine
triangles without geometric searches.
"""

import numpy as np

from .exceptions import NestingError

_AREA_RTOL = 1e-12


class Mesh:
    """Triangulation of a polygonal domain.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array
        Vertex indices, counterclockwise.
    boundary_vertex_flags : (nv,) bool array
        True for vertices lying on the domain boundary.
    refinement_edge : (nt,) int array
        Local edge index (edge i is opposite vertex i) used by bisection.
    level : int
        Number of refinements since the generating mesh.
    parent : Mesh or None
    parent_triangle : (nt,) int array or None
        For each triangle, the index of the parent triangle it came from.
    domain_area : float or None
        Exact area of the meshed domain when known.
    """

    def __init__(self, vertices, triangles, boundary_vertex_flags=None,
                 refinement_edge=None, level=0, parent=None,
                 parent_triangle=None, domain_area=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise ValueError("vertices must be an (nv, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError("triangles must be an (nt, 3) array")

        self._edge_table = self._build_edge_table()
        if boundary_vertex_flags is None:
            boundary_vertex_flags = self._boundary_flags_from_topology()
        self.boundary_vertex_flags = np.asarray(boundary_vertex_flags, dtype=bool)
        if refinement_edge is None:
            refinement_edge = self._longest_edge_assignment()
        self.refinement_edge = np.asarray(refinement_edge, dtype=np.int64)

        self.level = int(level)
        self.parent = parent
        self.parent_triangle = (None if parent_triangle is None
                                else np.asarray(parent_triangle, dtype=np.int64))
        self.domain_area = domain_area

        for a in (self.vertices, self.triangles, self.boundary_vertex_flags,
                  self.refinement_edge):
            a.setflags(write=False)

    # -- basic queries -----------------------------------------------------

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    def triangle_areas(self):
        """Signed areas; positive for correctly oriented triangles."""
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def mesh_size(self):
        """Largest triangle diameter."""
        p = self.vertices[self.triangles]
        lengths = np.stack([np.linalg.norm(p[:, (i + 1) % 3] - p[:, (i + 2) % 3], axis=1)
                            for i in range(3)], axis=1)
        return float(lengths.max())

    def edges(self):
        """Unique edges as an (ne, 2) array of sorted vertex pairs."""
        return self._edge_table[0]

    def triangle_edges(self):
        """(nt, 3) array of edge indices; column i is the edge opposite vertex i."""
        return self._edge_table[1]

    def boundary_edge_mask(self):
        """(ne,) bool array, True for edges that belong to exactly one triangle."""
        return self._edge_table[2]

    def _build_edge_table(self):
        t = self.triangles
        raw = np.concatenate([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=0)
        raw_sorted = np.sort(raw, axis=1)
        uniq, inverse, counts = np.unique(raw_sorted, axis=0,
                                          return_inverse=True, return_counts=True)
        tri_edges = inverse.reshape(3, -1).T
        return uniq, tri_edges, counts == 1

    def _boundary_flags_from_topology(self):
        uniq, _, bmask = self._edge_table
        flags = np.zeros(self.num_vertices, dtype=bool)
        flags[uniq[bmask].ravel()] = True
        return flags

    def _longest_edge_assignment(self):
        # Refinement edge of every triangle is its longest edge; ties go to
        # the smallest opposite-vertex index.
        p = self.vertices[self.triangles]
        lengths = np.stack([np.linalg.norm(p[:, (i + 1) % 3] - p[:, (i + 2) % 3], axis=1)
                            for i in range(3)], axis=1)
        lmax = lengths.max(axis=1, keepdims=True)
        near = lengths >= lmax * (1.0 - 1e-12)
        return near.argmax(axis=1)

    # -- validation --------------------------------------------------------

    def validate(self):
        """Check the structural mesh invariants; raise ValueError on failure."""
        areas = self.triangle_areas()
        if not (areas > 0).all():
            raise ValueError("mesh contains non-positively oriented triangles")

        uniq, _, bmask = self._edge_table
        _, _, counts = np.unique(
            np.sort(np.concatenate([self.triangles[:, [1, 2]],
                                    self.triangles[:, [2, 0]],
                                    self.triangles[:, [0, 1]]], axis=0), axis=1),
            axis=0, return_inverse=True, return_counts=True)
        if counts.max() > 2:
            raise ValueError("an edge is shared by more than two triangles")

        # No hanging nodes: a vertex may not sit strictly inside another
        # triangle's edge.
        va = self.vertices[uniq[:, 0]]
        vb = self.vertices[uniq[:, 1]]
        for e in range(uniq.shape[0]):
            a, b = va[e], vb[e]
            d = b - a
            L2 = d @ d
            rel = self.vertices - a
            t = (rel @ d) / L2
            off = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / np.sqrt(L2)
            on_segment = (off < 1e-12) & (t > 1e-10) & (t < 1 - 1e-10)
            on_segment[uniq[e]] = False
            if on_segment.any():
                raise ValueError("hanging node detected on an edge")

        if not self.boundary_vertex_flags[uniq[bmask].ravel()].all():
            raise ValueError("boundary edge endpoint not flagged as boundary")

        if self.domain_area is not None:
            total = areas.sum()
            if abs(total - self.domain_area) > _AREA_RTOL * self.domain_area:
                raise ValueError(
                    f"total area {total!r} deviates from domain area {self.domain_area!r}")
        return True


# -- generators -------------------------------------------------------------

def generate_unit_square(n):
    """Friedrichs-Keller mesh of (0,1)^2 with n*n cells split along the
    lower-left to upper-right diagonal."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return Mesh(vertices, np.array(tris), domain_area=1.0)


def generate_l_shape(n):
    """Mesh of (-1,1)^2 minus the quadrant [0,1)x(-1,0], n cells per unit."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    m = 2 * n
    xs = np.linspace(-1.0, 1.0, m + 1)

    index = -np.ones((m + 1, m + 1), dtype=np.int64)
    verts = []
    for j in range(m + 1):
        for i in range(m + 1):
            # drop grid points strictly inside the removed quadrant
            if xs[i] > 0 and xs[j] < 0:
                continue
            index[i, j] = len(verts)
            verts.append((xs[i], xs[j]))
    vertices = np.array(verts)

    tris = []
    for j in range(m):
        for i in range(m):
            if xs[i] >= 0 and xs[j + 1] <= 0:   # cell inside removed quadrant
                continue
            a, b = index[i, j], index[i + 1, j]
            c, d = index[i + 1, j + 1], index[i, j + 1]
            tris.append((a, b, c))
            tris.append((a, c, d))
    return Mesh(vertices, np.array(tris), domain_area=3.0)


# -- refinement -------------------------------------------------------------

def refine_red(mesh):
    """Split every triangle into four congruent children."""
    uniq_edges = mesh.edges()
    tri_edges = mesh.triangle_edges()
    nv = mesh.num_vertices

    midpoints = 0.5 * (mesh.vertices[uniq_edges[:, 0]] + mesh.vertices[uniq_edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])
    mid_id = nv + np.arange(uniq_edges.shape[0])

    t = mesh.triangles
    m0 = mid_id[tri_edges[:, 0]]   # midpoint of edge opposite vertex 0, i.e. (v1,v2)
    m1 = mid_id[tri_edges[:, 1]]
    m2 = mid_id[tri_edges[:, 2]]

    children = np.empty((4 * mesh.num_triangles, 3), dtype=np.int64)
    children[0::4] = np.column_stack([t[:, 0], m2, m1])
    children[1::4] = np.column_stack([m2, t[:, 1], m0])
    children[2::4] = np.column_stack([m1, m0, t[:, 2]])
    children[3::4] = np.column_stack([m0, m1, m2])

    parent_triangle = np.repeat(np.arange(mesh.num_triangles), 4)
    return Mesh(vertices, children, level=mesh.level + 1, parent=mesh,
                parent_triangle=parent_triangle, domain_area=mesh.domain_area)


def refine_bisection(mesh, marked):
    """Bisect the marked triangles by newest-vertex bisection.

    Conformity is restored by marking further edges until every triangle
    whose edges are cut has its refinement edge cut as well, so each affected
    triangle splits into 2, 3 or 4 children.
    """
    marked = np.asarray(sorted(set(int(i) for i in marked)), dtype=np.int64)
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.num_triangles:
        raise ValueError("marked triangle index out of range")

    tri_edges = mesh.triangle_edges()
    uniq_edges = mesh.edges()
    ref_edge_id = tri_edges[np.arange(mesh.num_triangles), mesh.refinement_edge]

    cut = np.zeros(uniq_edges.shape[0], dtype=bool)
    cut[ref_edge_id[marked]] = True
    while True:
        needs = cut[tri_edges].any(axis=1) & ~cut[ref_edge_id]
        if not needs.any():
            break
        cut[ref_edge_id[needs]] = True

    nv = mesh.num_vertices
    cut_ids = np.flatnonzero(cut)
    mid_of_edge = -np.ones(uniq_edges.shape[0], dtype=np.int64)
    mid_of_edge[cut_ids] = nv + np.arange(cut_ids.size)
    midpoints = 0.5 * (mesh.vertices[uniq_edges[cut_ids, 0]] +
                       mesh.vertices[uniq_edges[cut_ids, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    new_tris = []
    new_redge = []
    new_parent = []

    def emit(tri, redge, parent):
        new_tris.append(tri)
        new_redge.append(redge)
        new_parent.append(parent)

    def bisect(tri, redge, parent, edge_cut_lookup):
        # Split across the refinement edge; children inherit the halved old
        # edges as their refinement edges and recurse if those are also cut.
        e = redge
        p, x, y = tri[e], tri[(e + 1) % 3], tri[(e + 2) % 3]
        m = edge_cut_lookup[frozenset((x, y))]
        c1 = (p, x, m)       # refinement edge 2 = (p, x)
        c2 = (p, m, y)       # refinement edge 1 = (y, p)
        for child, cre, old_edge in ((c1, 2, (p, x)), (c2, 1, (y, p))):
            key = frozenset(old_edge)
            if key in edge_cut_lookup:
                bisect(child, cre, parent, edge_cut_lookup)
            else:
                emit(child, cre, parent)

    # lookup from cut-edge vertex pair to midpoint vertex id
    cut_lookup = {frozenset(uniq_edges[e]): int(mid_of_edge[e]) for e in cut_ids}

    for ti in range(mesh.num_triangles):
        tri = tuple(int(v) for v in mesh.triangles[ti])
        if cut[tri_edges[ti]].any():
            bisect(tri, int(mesh.refinement_edge[ti]), ti, cut_lookup)
        else:
            emit(tri, int(mesh.refinement_edge[ti]), ti)

    return Mesh(vertices, np.array(new_tris), refinement_edge=np.array(new_redge),
                level=mesh.level + 1, parent=mesh,
                parent_triangle=np.array(new_parent), domain_area=mesh.domain_area)


def ancestor_triangle_map(fine, coarse):
    """Map each fine triangle to the containing triangle of an ancestor mesh.

    Raises NestingError if ``coarse`` is not ``fine`` or one of its ancestors.
    """
    if fine is coarse:
        return np.arange(fine.num_triangles)
    chain = []
    node = fine
    while node is not None and node is not coarse:
        if node.parent_triangle is None:
            node = None
            break
        chain.append(node.parent_triangle)
        node = node.parent
    if node is not coarse:
        raise NestingError("coarse mesh is not an ancestor of the fine mesh")
    mapping = chain[0]
    for link in chain[1:]:
        mapping = link[mapping]
    return mapping


def write_mesh_text(mesh, path):
    """Dump a mesh in the plain text format: ``NV NT`` header, then one
    ``x y flag`` line per vertex and one ``i j k`` line per triangle."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.num_vertices} {mesh.num_triangles}\n")
        for (x, y), flag in zip(mesh.vertices, mesh.boundary_vertex_flags):
            fh.write(f"{x:.17g} {y:.17g} {int(flag)}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
