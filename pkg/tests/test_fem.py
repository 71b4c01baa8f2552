import dataclasses

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from vbocp import fem
from vbocp.mesh import CONTROL, Mesh, control_indicator


def reference_triangle_mesh():
    """Single unit right triangle, all edges natural."""
    return Mesh(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        triangles=np.array([[0, 1, 2]]),
        boundary_edges=np.array([[0, 1], [1, 2], [2, 0]]),
        boundary_tags=np.array(["neumann"] * 3),
        triangle_regions=np.zeros(1, dtype=int),
        in_observation=np.ones(1, dtype=bool),
    )


def test_reference_triangle_stiffness():
    m = reference_triangle_mesh()
    K = fem.assemble_stiffness(m).toarray()
    expected = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    assert np.allclose(K, expected, atol=1e-14)


def test_constants_in_kernel(test1_mesh):
    ones = np.ones(test1_mesh.n_vertices)
    K = fem.assemble_stiffness(test1_mesh)
    A = fem.assemble_advection(test1_mesh)
    assert np.abs(K @ ones).max() < 1e-12
    assert np.abs(A @ ones).max() < 1e-12


def test_observation_mass_area(test1_mesh):
    Mo = fem.assemble_obs_mass(test1_mesh)
    ones = np.ones(test1_mesh.n_vertices)
    assert abs(ones @ (Mo @ ones) - 0.4) < 1e-12


def test_observation_mass_empty(test1_mesh):
    bare = dataclasses.replace(
        test1_mesh, in_observation=np.zeros(test1_mesh.n_triangles, dtype=bool)
    )
    Mo = fem.assemble_obs_mass(bare)
    assert Mo.nnz == 0


def test_observation_mass_psd(test1_mesh):
    Mo = fem.assemble_obs_mass(test1_mesh).toarray()
    lam = scipy.linalg.eigvalsh(Mo)
    assert lam.min() >= -1e-13


def test_edge_moment_blocks(test1_mesh):
    et = fem.assemble_edge_triples(test1_mesh)
    assert np.allclose(
        et.moment_plain, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-15
    )
    assert np.allclose(
        et.moment_first, [[1 / 4, 1 / 12], [1 / 12, 1 / 12]], atol=1e-15
    )
    assert np.allclose(
        et.moment_second, [[1 / 12, 1 / 12], [1 / 12, 1 / 4]], atol=1e-15
    )


def test_weighted_control_affine_exactness(test1_mesh):
    """Direct weighted assembly equals the sum of per-vertex components."""
    et = fem.assemble_edge_triples(test1_mesh)
    rng = np.random.default_rng(0)
    for _ in range(3):
        chi = np.zeros(test1_mesh.n_vertices)
        cand_vertices = np.unique(et.edges.ravel())
        chi[rng.choice(cand_vertices, size=8, replace=False)] = 1.0
        direct = et.weighted(chi)
        summed = sp.csr_matrix(direct.shape)
        for k in np.flatnonzero(chi):
            summed = summed + et.vertex_component(k)
        assert abs(direct - summed).max() < 1e-13


def test_zero_weight_gives_zero_matrix(test1_mesh):
    et = fem.assemble_edge_triples(test1_mesh)
    C = et.weighted(np.zeros(test1_mesh.n_vertices))
    assert C.nnz == 0 or abs(C).max() == 0.0


def test_norm_matrix_definition(test1_mesh):
    X = fem.assemble_norm_matrix(test1_mesh)
    K = fem.assemble_stiffness(test1_mesh)
    M = fem.assemble_mass(test1_mesh)
    assert abs(X - (K + M)).max() < 1e-14
    ones = np.ones(test1_mesh.n_vertices)
    assert abs(ones @ (X @ ones) - 2.0) < 1e-12
    scipy.linalg.cholesky(X.toarray())  # SPD


def test_quadrature_sufficiency(test1_mesh):
    """All integrands are cubic at most, so raising the rules changes nothing."""
    A3 = fem.assemble_advection(test1_mesh, degree=3)
    A5 = fem.assemble_advection(test1_mesh, degree=5)
    scale = abs(A3).max()
    assert abs(A3 - A5).max() < 1e-13 * scale

    M3 = fem.assemble_mass(test1_mesh, degree=3)
    M5 = fem.assemble_mass(test1_mesh, degree=5)
    assert abs(M3 - M5).max() < 1e-13 * abs(M3).max()

    et2 = fem.assemble_edge_triples(test1_mesh, npoints=2)
    et4 = fem.assemble_edge_triples(test1_mesh, npoints=4)
    assert np.abs(et2.moment_first - et4.moment_first).max() < 1e-13
    assert np.abs(et2.moment_second - et4.moment_second).max() < 1e-13


def test_rhs_no_lifting(test1_mesh):
    D = fem.assemble_state_form(test1_mesh, 10.0)
    Mo = fem.assemble_obs_mass(test1_mesh)
    f, yd, lift = fem.assemble_rhs(test1_mesh, D, Mo, 2.0, g=0.0)
    assert np.abs(f).max() == 0.0
    assert np.abs(lift).max() == 0.0
    ones = np.ones(test1_mesh.n_vertices)
    assert np.allclose(yd, 2.0 * (Mo @ ones), atol=1e-15)


def test_rhs_lift_correction_support(test1_mesh):
    """The lift only enters the adjoint side where a Dirichlet hat
    function overlaps the observation strips (the two corner vertices
    at x1 = 1)."""
    D = fem.assemble_state_form(test1_mesh, 10.0)
    Mo = fem.assemble_obs_mass(test1_mesh)
    f, yd, lift = fem.assemble_rhs(test1_mesh, D, Mo, 1.0, g=1.0)
    ones = np.ones(test1_mesh.n_vertices)
    assert np.allclose(yd, Mo @ ones - Mo @ lift, atol=1e-15)
    assert np.abs(f + D @ lift).max() == 0.0
    correction = Mo @ lift
    touched = test1_mesh.vertices[np.abs(correction) > 1e-15]
    # support only next to the corners (1, 0) and (1, 1)
    assert np.all(np.abs(touched[:, 0] - 1.0) <= 0.1 + 1e-9)
    assert np.all(np.minimum(touched[:, 1], 1.0 - touched[:, 1]) <= 0.1 + 1e-9)


def test_operator_set_reduction(test1_mesh):
    ops = fem.build_operator_set(test1_mesh, 12.0, 2.0, 0.4)
    n = len(ops.free)
    dirichlet = test1_mesh.dirichlet_vertices()
    assert n == test1_mesh.n_vertices - len(dirichlet)
    for A in (ops.D_a, ops.M_o, ops.C, ops.X):
        assert A.shape == (n, n)
    assert ops.f.shape == (n,)
    assert np.all(ops.lifting[dirichlet] == 1.0)
    # symmetric operators stay symmetric after reduction
    for A in (ops.M_o, ops.C, ops.X):
        scale = max(abs(A).max(), 1e-30)
        assert abs(A - A.T).max() <= 1e-13 * scale


def test_nonpositive_mu1_rejected(test1_mesh):
    with pytest.raises(ValueError):
        fem.assemble_state_form(test1_mesh, 0.0)
    with pytest.raises(ValueError):
        fem.build_operator_set(test1_mesh, -1.0, 1.0, 0.5)


def test_coo_export_roundtrip(test1_mesh, tmp_path):
    X = fem.assemble_norm_matrix(test1_mesh)
    path = tmp_path / "X.coo"
    fem.export_coo(X, path)
    rows, cols, vals = [], [], []
    for line in path.read_text().splitlines():
        r, c, v = line.split()
        rows.append(int(r))
        cols.append(int(c))
        vals.append(float(v))
    X2 = sp.coo_matrix((vals, (rows, cols)), shape=X.shape).tocsr()
    assert abs(X - X2).max() == 0.0
