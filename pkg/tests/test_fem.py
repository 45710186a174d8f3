import numpy as np
import pytest
from numpy.testing import assert_allclose

from mleig import (Coefficients, ExactFunction, assemble_pencil, build_space,
                   build_prolongation, convection_model, error_norms,
                   generate_unit_square, h1_gram, rotational_model,
                   solve_source)
from mleig.exceptions import (CoefficientError, NestingError, SolverFailure,
                              UnsupportedDegreeError)
from mleig.fem import interior_prolongation
from mleig.mesh import refine_red
from mleig.quadrature import triangle_rule


# -- spaces -------------------------------------------------------------------

def test_dof_counts_p1():
    s = build_space(generate_unit_square(2), 1)
    assert s.dof_count == 9
    assert s.interior_count == 1


def test_dof_counts_p2():
    s = build_space(generate_unit_square(2), 2)
    assert s.dof_count == 25
    assert s.interior_count == 9


def test_dof_count_matches_independent_enumeration():
    # lattice of nodal points, deduplicated, independently of the dof layout
    for n, p in [(1, 4), (2, 3), (3, 2)]:
        mesh = generate_unit_square(n)
        s = build_space(mesh, p)
        formula = (mesh.num_vertices + (p - 1) * mesh.edges().shape[0]
                   + (p - 1) * (p - 2) // 2 * mesh.num_triangles)
        pts = set()
        for tri in mesh.vertices[mesh.triangles]:
            for i in range(p + 1):
                for j in range(p + 1 - i):
                    k = p - i - j
                    x = (i * tri[0] + j * tri[1] + k * tri[2]) / p
                    pts.add((round(x[0], 12), round(x[1], 12)))
        assert s.dof_count == formula == len(pts)


def test_unsupported_degree():
    mesh = generate_unit_square(1)
    for bad in (0, 5, -1):
        with pytest.raises(UnsupportedDegreeError):
            build_space(mesh, bad)


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_nodal_basis_property(degree):
    s = build_space(generate_unit_square(2), degree)
    coords = s.dof_coordinates
    for j in range(s.dof_count):
        e = np.zeros(s.dof_count, dtype=complex)
        e[j] = 1.0
        vals = s.evaluate(e, coords)
        expect = np.zeros(s.dof_count)
        expect[j] = 1.0
        assert_allclose(vals.real, expect, atol=1e-12)
        assert_allclose(vals.imag, 0.0, atol=1e-12)


def test_boundary_dofs_lie_on_boundary():
    s = build_space(generate_unit_square(3), 3)
    pts = s.dof_coordinates[s.boundary_dof_mask]
    on_edge = ((np.abs(pts) < 1e-14) | (np.abs(pts - 1) < 1e-14)).any(axis=1)
    assert on_edge.all()
    inner = s.dof_coordinates[s.interior_dofs]
    assert (inner > 1e-14).all() and (inner < 1 - 1e-14).all()


# -- assembly -----------------------------------------------------------------

def test_mass_matrix_sums_to_area(unit_coeffs):
    s = build_space(generate_unit_square(4), 1)
    p = assemble_pencil(s, unit_coeffs)
    assert_allclose(p.B_full.sum(), 1.0, rtol=1e-12)


def test_stiffness_row_sums_vanish(unit_coeffs):
    s = build_space(generate_unit_square(4), 1)
    p = assemble_pencil(s, unit_coeffs)
    assert np.abs(np.asarray(p.A_full.sum(axis=1))).max() < 1e-13


def test_pure_laplace_pencil_hermitian(unit_coeffs):
    s = build_space(generate_unit_square(4), 2)
    p = assemble_pencil(s, unit_coeffs)
    A, B = p.A_mat.toarray(), p.B_mat.toarray()
    assert np.abs(A - A.conj().T).max() <= 1e-12 * np.abs(A).max()
    assert np.abs(B - B.conj().T).max() <= 1e-12 * np.abs(B).max()
    evals = np.linalg.eigvalsh(B)
    assert evals.min() > 0


def test_skew_part_is_convection(model_coeffs, unit_coeffs):
    s = build_space(generate_unit_square(4), 1)
    A1 = assemble_pencil(s, model_coeffs).A_mat.toarray()
    A0 = assemble_pencil(s, unit_coeffs).A_mat.toarray()
    conv = A1 - A0
    assert np.abs(A1 - A1.conj().T).max() > 1e-3     # genuinely nonsymmetric
    skew = (A1 - A1.conj().T) / 2
    assert_allclose(skew, conv, atol=1e-12)


def test_assembly_matches_direct_quadrature(model_coeffs):
    # matrix form v^H A u against element-by-element quadrature of a(u_h, v_h)
    s = build_space(generate_unit_square(3), 2)
    pencil = assemble_pencil(s, model_coeffs)
    points, weights, N, grads = s._geometry(pencil.quad_degree)
    flat = points.reshape(-1, 2)
    Aval = np.asarray(model_coeffs.A(flat), dtype=complex).reshape(
        weights.shape + (2, 2))
    bval = np.asarray(model_coeffs.b_vec(flat), dtype=complex).reshape(
        weights.shape + (2,))

    rng = np.random.default_rng(3)
    for _ in range(50):
        u = rng.standard_normal(s.dof_count) + 1j * rng.standard_normal(s.dof_count)
        v = rng.standard_normal(s.dof_count) + 1j * rng.standard_normal(s.dof_count)
        ue, ve = u[s.element_dofs], v[s.element_dofs]
        uq = np.einsum("ql,el->eq", N, ue)
        vq = np.einsum("ql,el->eq", N, ve)
        gu = np.einsum("eqld,el->eqd", grads, ue)
        gv = np.einsum("eqld,el->eqd", grads, ve)
        integrand = (np.einsum("eqd,eqdc,eqc->eq", gv.conj(), Aval, gu)
                     + vq.conj() * np.einsum("eqd,eqd->eq", bval, gu))
        direct = np.sum(weights * integrand)
        matrix = v.conj() @ (pencil.A_full @ u)
        assert abs(matrix - direct) <= 1e-10 * abs(direct)


def test_variable_coefficients_match_direct_quadrature():
    coeffs = rotational_model()
    s = build_space(generate_unit_square(3), 1)
    pencil = assemble_pencil(s, coeffs, quad_degree=8)
    points, weights, N, grads = s._geometry(8)
    flat = points.reshape(-1, 2)
    bval = np.asarray(coeffs.b_vec(flat), dtype=complex).reshape(
        weights.shape + (2,))
    rng = np.random.default_rng(11)
    u = rng.standard_normal(s.dof_count)
    v = rng.standard_normal(s.dof_count)
    ue, ve = u[s.element_dofs], v[s.element_dofs]
    vq = np.einsum("ql,el->eq", N, ve)
    gu = np.einsum("eqld,el->eqd", grads, ue)
    gv = np.einsum("eqld,el->eqd", grads, ve)
    direct = np.sum(weights * (np.einsum("eqd,eqd->eq", gv, gu)
                               + vq * np.einsum("eqd,eqd->eq", bval, gu)))
    matrix = v @ (pencil.A_full @ u)
    assert abs(matrix - direct) <= 1e-10 * abs(direct)


def test_quad_degree_too_low():
    s = build_space(generate_unit_square(2), 2)
    with pytest.raises(ValueError):
        assemble_pencil(s, Coefficients.constant(), quad_degree=3)


def test_nonpositive_varphi_rejected():
    s = build_space(generate_unit_square(2), 1)
    bad = Coefficients(
        A=Coefficients.constant().A,
        b_vec=Coefficients.constant().b_vec,
        phi=Coefficients.constant().phi,
        varphi=lambda x: x[:, 0] - 0.5,
    )
    with pytest.raises(CoefficientError):
        assemble_pencil(s, bad)


def test_ellipticity_witness(model_coeffs):
    # Re(u^H A u) > 0 on the coarsest space, for the real and complex models
    complex_coeffs = convection_model((1.0 + 2.0j, 0.5 - 1.0j))
    rng = np.random.default_rng(5)
    for coeffs in (model_coeffs, complex_coeffs):
        s = build_space(generate_unit_square(4), 1)
        A = assemble_pencil(s, coeffs).A_mat
        for _ in range(100):
            u = rng.standard_normal(s.interior_count) \
                + 1j * rng.standard_normal(s.interior_count)
            assert (u.conj() @ (A @ u)).real > 0


# -- prolongation ---------------------------------------------------------------

def test_prolongation_identity():
    s = build_space(generate_unit_square(2), 2)
    P = build_prolongation(s, s)
    assert (P != np.array(0)).nnz == s.dof_count
    assert_allclose(P.diagonal(), 1.0)


def test_prolongation_p1_to_p2_is_interpolation():
    mesh = generate_unit_square(2)
    s1, s2 = build_space(mesh, 1), build_space(mesh, 2)
    P = build_prolongation(s1, s2)
    rng = np.random.default_rng(0)
    c = rng.standard_normal(s1.dof_count)
    fine = P @ c
    assert_allclose(fine, s1.evaluate(c + 0j, s2.dof_coordinates).real,
                    atol=1e-12)


def test_prolongation_composes():
    mesh = generate_unit_square(2)
    m1 = refine_red(mesh)
    s0 = build_space(mesh, 1)
    s1 = build_space(m1, 1)
    s2 = build_space(m1, 2)
    P01 = build_prolongation(s0, s1)
    P12 = build_prolongation(s1, s2)
    P02 = build_prolongation(s0, s2)
    rng = np.random.default_rng(1)
    c = rng.standard_normal(s0.dof_count) + 1j * rng.standard_normal(s0.dof_count)
    assert_allclose(P02 @ c, P12 @ (P01 @ c), atol=1e-12)


def test_prolongation_pointwise_agreement():
    mesh = generate_unit_square(3)
    fine_mesh = refine_red(refine_red(mesh))
    coarse = build_space(mesh, 2)
    fine = build_space(fine_mesh, 3)
    P = build_prolongation(coarse, fine)
    rng = np.random.default_rng(2)
    c = rng.standard_normal(coarse.dof_count) + 1j * rng.standard_normal(coarse.dof_count)
    pts = rng.uniform(0.05, 0.95, size=(40, 2))
    assert_allclose(fine.evaluate(P @ c, pts), coarse.evaluate(c, pts),
                    atol=1e-12)


def test_prolongation_rejects_non_nested():
    mesh = generate_unit_square(2)
    with pytest.raises(NestingError):
        build_prolongation(build_space(mesh, 2), build_space(mesh, 1))
    with pytest.raises(NestingError):
        build_prolongation(build_space(generate_unit_square(2), 1),
                           build_space(generate_unit_square(4), 1))


def test_interior_prolongation_consistency():
    mesh = generate_unit_square(3)
    fine_mesh = refine_red(mesh)
    coarse, fine = build_space(mesh, 1), build_space(fine_mesh, 1)
    P = build_prolongation(coarse, fine)
    Pi = interior_prolongation(coarse, fine)
    rng = np.random.default_rng(4)
    u = rng.standard_normal(coarse.interior_count)
    full = P @ coarse.extend(u)
    assert_allclose(Pi @ u, fine.restrict(full), atol=1e-13)
    # prolonged Dirichlet functions stay zero on the fine boundary
    assert np.abs(full[fine.boundary_dof_mask]).max() < 1e-13


# -- source solves ---------------------------------------------------------------

def test_solve_source_zero_rhs(pencil4_p1):
    x = solve_source(pencil4_p1, np.zeros(pencil4_p1.size))
    assert np.abs(x).max() == 0.0


def test_solve_source_roundtrip(pencil4_p1):
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal(pencil4_p1.size) + 1j * rng.standard_normal(pencil4_p1.size)
    rhs = pencil4_p1.A_mat @ x0
    x = solve_source(pencil4_p1, rhs)
    assert np.linalg.norm(x - x0) <= 1e-10 * np.linalg.norm(x0)
    rhs_h = pencil4_p1.A_mat.conj().T @ x0
    x = solve_source(pencil4_p1, rhs_h, adjoint=True)
    assert np.linalg.norm(x - x0) <= 1e-10 * np.linalg.norm(x0)


def test_solve_source_symmetric_adjoint_equals_primal(unit_coeffs):
    s = build_space(generate_unit_square(4), 1)
    p = assemble_pencil(s, unit_coeffs)
    rng = np.random.default_rng(7)
    rhs = rng.standard_normal(p.size)
    assert_allclose(p.solve(rhs), p.solve(rhs, adjoint=True), atol=1e-12)


def test_galerkin_orthogonality(pencil4_p1):
    rng = np.random.default_rng(8)
    rhs = rng.standard_normal(pencil4_p1.size) + 1j * rng.standard_normal(pencil4_p1.size)
    x = solve_source(pencil4_p1, rhs)
    res = pencil4_p1.A_mat @ x - rhs
    assert np.abs(res).max() <= 1e-9 * np.linalg.norm(rhs)


def test_discrete_adjoint_identity(pencil4_p1):
    A = pencil4_p1.A_mat
    rng = np.random.default_rng(9)
    for _ in range(10):
        u = rng.standard_normal(A.shape[0]) + 1j * rng.standard_normal(A.shape[0])
        v = rng.standard_normal(A.shape[0]) + 1j * rng.standard_normal(A.shape[0])
        lhs = v.conj() @ (A @ u)
        rhs = np.conj(u.conj() @ (A.conj().T @ v))
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)


def test_rhs_length_checked(pencil4_p1):
    with pytest.raises(ValueError):
        solve_source(pencil4_p1, np.zeros(pencil4_p1.size + 1))


# -- norms -------------------------------------------------------------------------

def test_error_norms_exact_linear():
    s = build_space(generate_unit_square(3), 1)
    f = ExactFunction(
        value=lambda x: 0.25 + 2.0 * x[:, 0] - x[:, 1],
        gradient=lambda x: np.broadcast_to(np.array([2.0, -1.0]), (x.shape[0], 2)))
    u = s.interpolate(f.value)
    l2b, h1 = error_norms(s, u, f, quad_degree=6)
    assert l2b <= 1e-12 and h1 <= 1e-12


def test_error_norms_zero_exact_gives_norms(unit_coeffs):
    s = build_space(generate_unit_square(3), 1)
    u = s.interpolate(lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]))
    l2b, h1 = error_norms(s, u, None, quad_degree=8)
    # independent norms from the Gram matrices
    B = assemble_pencil(s, unit_coeffs, 8).B_full
    G = h1_gram(s, 8)
    assert_allclose(l2b, np.sqrt((u.conj() @ (B @ u)).real), rtol=1e-12)
    assert_allclose(h1, np.sqrt((u.conj() @ (G @ u)).real), rtol=1e-12)


def test_error_norms_quadrature_stability():
    # against the same error measured with a rule two degrees higher
    s = build_space(generate_unit_square(16), 1)
    f = ExactFunction(
        value=lambda x: np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
        gradient=lambda x: np.pi * np.column_stack(
            [np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
             np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])]))
    u = s.interpolate(f.value)
    _, h1_a = error_norms(s, u, f, quad_degree=8)
    _, h1_b = error_norms(s, u, f, quad_degree=10)
    assert abs(h1_a - h1_b) <= 0.2 * h1_b


def test_h1_gram_hermitian_positive():
    s = build_space(generate_unit_square(3), 2)
    G = h1_gram(s).toarray()
    assert np.abs(G - G.conj().T).max() <= 1e-12 * np.abs(G).max()
    evals = np.linalg.eigvalsh((G + G.conj().T) / 2)
    assert evals.min() > 0
