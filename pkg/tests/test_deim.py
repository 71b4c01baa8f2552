import numpy as np
import pytest

from vbocp.deim import (
    affine_control_reduced,
    build_deim_model,
    chi_snapshots,
    deim_basis,
    deim_coefficients,
    load_deim,
    magic_points,
    save_deim,
)
from vbocp.fem import assemble_edge_triples
from vbocp.mesh import control_indicator
from vbocp.rom import build_reduced_model


def test_pattern_count_bounded(test1_mesh):
    rng = np.random.default_rng(1)
    snaps = chi_snapshots(test1_mesh, rng.uniform(0.001, 0.999, 350))
    assert snaps.shape[1] <= 11  # ten activation thresholds plus empty


def test_pattern_dedup(test1_mesh):
    # both values sit between the same thresholds
    snaps = chi_snapshots(test1_mesh, [0.31, 0.33])
    assert snaps.shape[1] == 1
    full = chi_snapshots(test1_mesh, [1e-8])
    cand = test1_mesh.edges_with_tag("control")
    cand_vertices = np.unique(test1_mesh.boundary_edges[cand].ravel())
    assert np.array_equal(np.flatnonzero(full[:, 0]), cand_vertices)


def test_basis_two_unit_patterns():
    S = np.eye(4)[:, :2]
    Z, lam = deim_basis(S, 0.5)
    assert Z.shape[1] == 2
    # span check: both patterns reproduced
    coeff = Z.T @ S
    assert np.abs(Z @ coeff - S).max() < 1e-12


def test_basis_single_pattern():
    s = np.array([1.0, 1.0, 0.0])
    Z, lam = deim_basis(s[:, None], 0.5)
    assert Z.shape == (3, 1)
    assert np.allclose(np.abs(Z[:, 0]), s / np.sqrt(2.0), atol=1e-14)


def test_basis_tol_truncates(test1_mesh):
    rng = np.random.default_rng(1)
    snaps = chi_snapshots(test1_mesh, rng.uniform(0.001, 0.999, 350))
    Z, _ = deim_basis(snaps, 0.5)
    assert Z.shape[1] < snaps.shape[1]


def test_basis_rejects_bad_input():
    with pytest.raises(ValueError):
        deim_basis(np.zeros((3, 2)), 1e-5)
    with pytest.raises(ValueError):
        deim_basis(np.eye(2), 0.0)


def test_magic_points_single_column():
    idx = magic_points(np.array([[0.1], [0.9], [0.3]]))
    assert idx.tolist() == [1]


def test_magic_points_two_columns():
    Z = np.array([[0.1, 1.0], [0.9, 0.0], [0.3, 0.0]])
    idx = magic_points(Z)
    assert idx.tolist() == [1, 0]


def test_magic_points_identity_columns():
    Z = np.eye(5)[:, [3, 0, 4]]
    idx = magic_points(Z)
    assert idx.tolist() == [3, 0, 4]


def test_magic_points_ties_take_smallest_index():
    Z = np.array([[0.5], [0.5], [0.2]])
    assert magic_points(Z).tolist() == [0]


def test_greedy_determinism(test1_mesh):
    rng = np.random.default_rng(1)
    snaps = chi_snapshots(test1_mesh, rng.uniform(0.001, 0.999, 200))
    Z, _ = deim_basis(snaps, 1e-12)
    assert np.array_equal(magic_points(Z), magic_points(Z))


def test_coefficients_on_basis_columns(test1_mesh):
    rng = np.random.default_rng(2)
    model = build_deim_model(test1_mesh, rng.uniform(0.001, 0.999, 300), 1e-12)
    for q in (0, model.n_basis - 1):
        theta = deim_coefficients(model.Z[:, q], model)
        e_q = np.zeros(model.n_basis)
        e_q[q] = 1.0
        assert np.allclose(theta, e_q, atol=1e-10)
    assert np.allclose(deim_coefficients(np.zeros(test1_mesh.n_vertices), model), 0.0)


def test_span_exactness_against_least_squares(test1_mesh):
    rng = np.random.default_rng(2)
    model = build_deim_model(test1_mesh, rng.uniform(0.001, 0.999, 300), 1e-12)
    chi = control_indicator(test1_mesh, 0.47).nodal_values
    theta = deim_coefficients(chi, model)
    recon = model.Z @ theta
    assert np.abs(recon - chi).max() <= 1e-12
    # least-squares oracle gives the same reconstruction on the span
    ls, *_ = np.linalg.lstsq(model.Z, chi, rcond=None)
    assert np.abs(model.Z @ ls - recon).max() <= 1e-11


def test_interpolation_rows_always_match(test1_mesh):
    rng = np.random.default_rng(4)
    model = build_deim_model(test1_mesh, rng.uniform(0.001, 0.999, 120), 1e-5)
    for mu_u in rng.uniform(0.001, 0.999, 20):
        chi = control_indicator(test1_mesh, mu_u).nodal_values
        theta = deim_coefficients(chi, model)
        assert np.abs((model.Z @ theta)[model.indices] - chi[model.indices]).max() <= 1e-12


def test_affine_reduced_components(test1_hf, test1_snapshots):
    mesh = test1_hf.mesh
    rng = np.random.default_rng(5)
    model = build_deim_model(mesh, rng.uniform(0.001, 0.999, 300), 1e-12)
    rm = build_reduced_model(test1_hf, test1_snapshots, 4, control_mode="exact")
    Q = rm.Q
    triples = assemble_edge_triples(mesh)
    comps = affine_control_reduced(model, triples, Q)
    assert len(comps) == model.n_basis
    for mu_u in (0.15, 0.52, 0.88):
        chi = control_indicator(mesh, mu_u).nodal_values
        theta = deim_coefficients(chi, model)
        approx = sum(t * c for t, c in zip(theta, comps))
        oracle = Q.T @ (triples.weighted(chi) @ Q)
        assert np.abs(approx - oracle).max() <= 1e-11
    zero = sum(0.0 * c for c in comps)
    assert np.abs(zero).max() == 0.0


def test_single_pattern_model(test1_mesh):
    model = build_deim_model(test1_mesh, [0.31, 0.33, 0.345], 1e-5)
    assert model.n_basis == 1
    chi = control_indicator(test1_mesh, 0.32).nodal_values
    theta = deim_coefficients(chi, model)
    assert np.abs(model.Z @ theta - chi).max() <= 1e-12


def test_save_load_roundtrip(test1_mesh, tmp_path):
    rng = np.random.default_rng(6)
    model = build_deim_model(test1_mesh, rng.uniform(0.001, 0.999, 150), 1e-5)
    save_deim(model, tmp_path, tol=1e-5)
    loaded = load_deim(tmp_path)
    assert np.array_equal(loaded.indices, model.indices)
    assert np.allclose(loaded.Z, model.Z, atol=0)
    assert loaded.n_patterns == model.n_patterns
