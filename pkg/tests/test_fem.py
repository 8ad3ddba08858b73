import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mfpd import fem
from mfpd.errors import EllipticityError, SolverError, ValidationError
from mfpd.mesh import Mesh2D, gen_disk_mesh


def reference_triangle():
    return Mesh2D(
        vertices=[(0, 0), (1, 0), (0, 1)],
        triangles=[(0, 1, 2)],
        regions=[0],
        boundary_edges=[(0, 1), (1, 2), (2, 0)],
        boundary_markers=[1, 1, 1],
    )


def square_with_center():
    v = [(0, 0), (1, 0), (1, 1), (0, 1), (0.5, 0.5)]
    t = [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]
    return Mesh2D(v, t, [0] * 4, [(0, 1), (1, 2), (2, 3), (3, 0)], [1] * 4)


def test_reference_stiffness():
    k = fem.assemble_stiffness(reference_triangle(), 1.0).toarray()
    assert np.allclose(k, [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]], atol=1e-15)
    k2 = fem.assemble_stiffness(reference_triangle(), 2.0).toarray()
    assert np.array_equal(k2, 2 * k)


def test_reference_mass():
    m = fem.assemble_mass(reference_triangle(), 1.0).toarray()
    assert np.allclose(m, 0.5 / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), atol=1e-15)
    m3 = fem.assemble_mass(reference_triangle(), 3.0).toarray()
    assert np.allclose(m3, 3 * m, rtol=1e-15)


def test_stiffness_kernel_and_symmetry(disk):
    a = 1.0 + disk.barycenters[:, 0] ** 2
    k = fem.assemble_stiffness(disk, a)
    assert np.max(np.abs(k @ np.ones(disk.n_vertices))) < 1e-12
    assert sp.linalg.norm(k - k.T) <= 1e-12 * sp.linalg.norm(k)
    assert np.all(k.diagonal() >= 0)


def test_mass_total(disk):
    m = fem.assemble_mass(disk, 1.0)
    one = np.ones(disk.n_vertices)
    assert abs(one @ m @ one - disk.areas.sum()) < 1e-12
    assert abs(one @ m @ one - math.pi) / math.pi < 0.01
    assert np.all(m.diagonal() > 0)


def test_vertex_coefficient_averaged(disk):
    qv = 1.0 + disk.vertices[:, 1] ** 2
    m1 = fem.assemble_mass(disk, qv)
    m2 = fem.assemble_mass(disk, disk.cell_average(qv))
    assert abs(m1 - m2).max() == 0


def test_ellipticity_checked(disk):
    a = np.ones(disk.n_triangles)
    a[7] = 0.0
    with pytest.raises(EllipticityError, match="cell 7"):
        fem.assemble_stiffness(disk, a)
    with pytest.raises(EllipticityError):
        fem.assemble_mass(disk, -1.0)


def test_scalar_field_validation(disk):
    with pytest.raises(ValidationError):
        fem.ScalarField(disk, np.ones(3))
    with pytest.raises(ValidationError):
        fem.ScalarField(disk, np.full(disk.n_vertices, np.nan))


def test_dirichlet_all_constrained():
    m = reference_triangle()
    k = fem.assemble_stiffness(m)
    red = fem.apply_dirichlet(fem.SparseSystem(k, np.zeros(3)), ([0, 1, 2], [1.0, 2.0, 3.0]))
    assert red.matrix.shape == (0, 0)
    assert np.array_equal(red.expand(np.zeros(0)), [1.0, 2.0, 3.0])


def test_dirichlet_zero_data(disk):
    k = fem.assemble_stiffness(disk)
    red = fem.apply_dirichlet(fem.SparseSystem(k, np.zeros(disk.n_vertices)), (disk.boundary_vertices, 0.0))
    assert np.all(red.expand(fem.solve_spd(red.matrix, red.rhs)) == 0)


def test_dirichlet_square_hand_solve():
    # K_cc = 4 (four triangles, |grad phi_c|^2 = 4, area 1/4); F_c = 4 * (1/4) / 3
    m = square_with_center()
    k = fem.assemble_stiffness(m)
    f = fem.load_vector(m, 1.0)
    red = fem.apply_dirichlet(fem.SparseSystem(k, f), {0: 0.0, 1: 0.0, 2: 0.0, 3: 0.0})
    u = red.expand(fem.solve_spd(red.matrix, red.rhs))
    assert u[4] == pytest.approx(1.0 / 12.0, rel=1e-14)


def test_dirichlet_index_error():
    k = fem.assemble_stiffness(reference_triangle())
    with pytest.raises(ValidationError):
        fem.apply_dirichlet(fem.SparseSystem(k, np.zeros(3)), ([5], [0.0]))


def test_solve_small_systems():
    b = np.array([0.3, -1.0, 2.0])
    assert np.allclose(fem.solve_spd(sp.identity(3), b), b)
    assert np.allclose(fem.solve_spd(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), [3.0, 3.0]), [1.0, 1.0], atol=1e-14)
    with pytest.raises(SolverError):
        fem.solve_spd(sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]]), [1.0, 0.0])
    with pytest.raises(ValidationError):
        fem.solve_spd(sp.csr_matrix([[1.0, 2.0], [0.0, 1.0]]), [1.0, 0.0])


def test_indefinite_solve_residual(homog_op):
    a = homog_op.reduced(7.0)
    b = np.sin(np.arange(a.shape[0]))
    x = fem.Factorization(a).solve(b)
    assert np.linalg.norm(a @ x - b) / np.linalg.norm(b) <= 1e-10


def test_eigenvalue_homogeneity(disk_coarse):
    m = disk_coarse
    i = m.interior_vertices
    k = fem.assemble_stiffness(m).tocsr()[i][:, i]
    mm = fem.assemble_mass(m).tocsr()[i][:, i]
    lam, vec = fem.smallest_eigenvalues(k, mm, 2)
    assert lam[0] < lam[1]
    lam_a, _ = fem.smallest_eigenvalues(2 * k, mm, 2)
    lam_q, _ = fem.smallest_eigenvalues(k, 2 * mm, 2)
    assert np.allclose(lam_a, 2 * lam, rtol=1e-10)
    assert np.allclose(lam_q, lam / 2, rtol=1e-10)
    res = np.linalg.norm(k @ vec - (mm @ vec) * lam, axis=0) / np.linalg.norm((mm @ vec) * lam, axis=0)
    assert np.all(res <= 1e-8)


def test_eigen_count_validation():
    with pytest.raises(ValidationError):
        fem.smallest_eigenvalues(sp.identity(3), sp.identity(3), 0)


def test_p1_gradient_examples(disk):
    x1, x2 = disk.vertices.T
    assert np.allclose(fem.p1_gradient(disk, x1), [1, 0], atol=1e-12)
    assert np.allclose(fem.p1_gradient(disk, np.full(disk.n_vertices, 4.0)), 0, atol=1e-12)
    assert np.allclose(fem.p1_gradient(disk, 3 * x1 + 2 * x2 - 1), [3, 2], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_p1_gradient_affine_exact(a, b, c):
    m = gen_disk_mesh(1.0, 0.25)
    u = a * m.vertices[:, 0] + b * m.vertices[:, 1] + c
    g = fem.p1_gradient(m, u)
    scale = max(abs(a), abs(b), abs(c), 1.0)
    assert np.max(np.abs(g - [a, b])) <= 1e-12 * scale


def test_recover_vertex_gradient(disk):
    g = fem.recover_vertex_gradient(disk, fem.p1_gradient(disk, disk.vertices[:, 0]))
    assert np.allclose(g, [1, 0], atol=1e-12)
    t = reference_triangle()
    g1 = fem.recover_vertex_gradient(t, np.array([[0.7, -0.2]]))
    assert np.allclose(g1, [[0.7, -0.2]] * 3)


def test_recover_gradient_converges():
    errs = []
    for h in (0.2, 0.1, 0.05):
        m = gen_disk_mesh(1.0, h)
        x1 = m.vertices[:, 0]
        g = fem.recover_vertex_gradient(m, fem.p1_gradient(m, x1**2))
        inner = np.linalg.norm(m.vertices, axis=1) < 0.9
        errs.append(np.max(np.abs(g[inner, 0] - 2 * x1[inner])))
    assert errs[0] > errs[1] > errs[2]


def test_l2_norm_examples(disk):
    assert fem.l2_norm(disk, np.ones(disk.n_vertices)) == pytest.approx(math.sqrt(disk.areas.sum()), rel=1e-14)
    assert fem.l2_norm(disk, np.ones(disk.n_vertices)) == pytest.approx(math.sqrt(math.pi), rel=5e-3)
    assert fem.l2_norm(disk, np.zeros(disk.n_triangles)) == 0
    assert fem.l2_norm(disk, disk.vertices[:, 0]) == pytest.approx(math.sqrt(math.pi / 4), rel=1e-2)
    cell = fem.ScalarField(disk, np.ones(disk.n_triangles), "cell")
    assert fem.l2_norm(disk, cell) == pytest.approx(math.sqrt(disk.areas.sum()), rel=1e-14)


def test_galerkin_orthogonality(homog_op):
    sol = homog_op.solve(3.0, "x1+2")
    a = (homog_op.stiffness - 3.0 * homog_op.mass).tocsr()
    r = (a @ sol.u)[homog_op.interior]
    scale = np.linalg.norm(a[homog_op.interior][:, homog_op.boundary] @ sol.u[homog_op.boundary])
    assert np.linalg.norm(r) / scale <= 1e-10
