import dataclasses
import time

import numpy as np
import pytest
import scipy.sparse as sp

from vbocp import HighFidelityModel, ParameterPoint
from vbocp.fem import build_operator_set, x_norm
from vbocp.ocp import (
    SolverError,
    assemble_saddle,
    evaluate_cost,
    solve_from_ops,
    solve_state,
)

from conftest import random_params


def test_trivial_optimum(test1_hf):
    """With unit boundary data and unit desired level the constant state
    is optimal: zero adjoint, zero control, zero cost."""
    m = test1_hf.mesh
    ones = np.ones(m.n_vertices)
    X = test1_hf.parts.norm_full
    for mu1, mu_u in ((6.5, 0.11), (19.0, 0.93), (12.0, 0.5)):
        sol = test1_hf.solve(ParameterPoint(mu1, 1.0, mu_u))
        assert x_norm(X, sol.y - ones) <= 1e-9
        assert x_norm(X, sol.p) <= 1e-9
        assert abs(sol.cost) <= 1e-18
        assert np.abs(sol.u).max(initial=0.0) <= 1e-9


def test_saddle_block_structure(test1_hf):
    mu = ParameterPoint(12.0, 2.5, 0.5)
    ops = test1_hf.operator_set(mu)
    n = ops.n_free
    K = assemble_saddle(ops, mu.alpha).tocsr()
    block22 = K[n:, n:]
    assert abs(block22 + ops.C / 0.07).max() < 1e-13
    block12 = K[:n, n:]
    block21 = K[n:, :n]
    assert abs(block12 - block21.T).max() <= 1e-13 * abs(block12).max()
    with pytest.raises(ValueError):
        assemble_saddle(ops, 0.0)


def test_decoupled_limit(test1_hf):
    """Without observation and control the two equations decouple and
    the adjoint vanishes."""
    mu = ParameterPoint(12.0, 2.5, 0.5)
    ops = test1_hf.operator_set(mu)
    n = ops.n_free
    zero = sp.csr_matrix((n, n))
    nv = test1_hf.mesh.n_vertices
    bare = dataclasses.replace(
        ops, M_o=zero, C=zero,
        C_full=sp.csr_matrix((nv, nv)), M_o_full=sp.csr_matrix((nv, nv)),
        y_d_vec=np.zeros(n),
    )
    sol = solve_from_ops(bare, mu)
    assert np.abs(sol.p).max() < 1e-12
    y_unc = solve_state(bare, np.zeros(nv))
    assert np.abs(sol.y - y_unc).max() < 1e-10


def test_optimality_versus_uncontrolled(test1_hf):
    mu = ParameterPoint(12.0, 2.5, 0.5)
    ops = test1_hf.operator_set(mu)
    sol = test1_hf.solve(mu)
    y_unc = solve_state(ops, np.zeros(test1_hf.mesh.n_vertices))
    j_unc = evaluate_cost(y_unc, np.zeros(len(y_unc)), mu, ops)
    assert sol.cost <= j_unc


def test_optimality_against_perturbations(test1_hf):
    """Re-solving the state for perturbed controls never improves the
    cost (first-order optimality probed at finite amplitude)."""
    mu = ParameterPoint(10.0, 2.0, 0.35)
    ops = test1_hf.operator_set(mu)
    sol = test1_hf.solve(mu)
    u0 = sol.u_full(test1_hf.mesh.n_vertices)
    rng = np.random.default_rng(21)
    for _ in range(5):
        du = np.zeros_like(u0)
        du[sol.control_dofs] = rng.standard_normal(len(sol.control_dofs))
        u = u0 + 1e-3 * du
        y = solve_state(ops, u)
        assert evaluate_cost(y, u, mu, ops) >= sol.cost - 1e-8


def test_kkt_residuals(test1_hf):
    for mu in random_params(6, seed=3):
        sol = test1_hf.solve(mu)
        assert sol.residual <= 1e-10


def test_cost_evaluation(test1_hf):
    mu = ParameterPoint(12.0, 2.5, 0.5)
    ops = test1_hf.operator_set(mu)
    nv = test1_hf.mesh.n_vertices
    y_d = mu.mu2 * np.ones(nv)
    assert evaluate_cost(y_d, np.zeros(nv), mu, ops) == 0.0
    # control term is quadratic
    u = np.zeros(nv)
    u[ops.free[:5]] = 0.0  # keep zero off the boundary
    sol = test1_hf.solve(mu)
    uf = sol.u_full(nv)
    j1 = evaluate_cost(y_d, uf, mu, ops)
    j2 = evaluate_cost(y_d, 2.0 * uf, mu, ops)
    assert abs(j2 - 4.0 * j1) < 1e-12 * max(j1, 1.0)
    # constant misfit over the strips
    j0 = evaluate_cost(np.zeros(nv), np.zeros(nv), mu, ops)
    assert abs(j0 - 0.5 * mu.mu2**2 * 0.4) < 1e-12


def test_vanishing_control_region_still_solvable(test1_hf):
    mu = ParameterPoint(12.0, 2.5, 0.99)
    sol = test1_hf.solve(mu)
    assert len(sol.control_dofs) == 0
    assert sol.residual <= 1e-10


def test_solver_determinism(test1_hf):
    mu = ParameterPoint(14.2, 1.3, 0.42)
    a = test1_hf.solve(mu)
    b = test1_hf.solve(mu)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.p, b.p)
    assert a.cost == b.cost


def test_parameter_validation():
    with pytest.raises(ValueError):
        ParameterPoint(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        ParameterPoint(10.0, 1.0, 0.5, alpha=0.0)


def test_adjoint_dirichlet_zero(test1_hf):
    mu = ParameterPoint(12.0, 2.5, 0.5)
    sol = test1_hf.solve(mu)
    d = test1_hf.mesh.dirichlet_vertices()
    assert np.abs(sol.p[d]).max() == 0.0
    assert np.abs(sol.y[d] - 1.0).max() == 0.0


def test_one_off_solver_matches_model(test1_mesh, test1_hf):
    from vbocp import solve_hf

    mu = ParameterPoint(9.0, 1.1, 0.61)
    a = solve_hf(test1_mesh, mu)
    b = test1_hf.solve(mu)
    assert np.allclose(a.y, b.y, atol=1e-14)


def test_operator_set_equivalence(test1_mesh, test1_hf):
    mu = ParameterPoint(9.0, 1.1, 0.61)
    fresh = build_operator_set(test1_mesh, mu.mu1, mu.mu2, mu.mu_u)
    cached = test1_hf.operator_set(mu)
    assert abs(fresh.D_a - cached.D_a).max() < 1e-15
    assert abs(fresh.C - cached.C).max() < 1e-15
    assert np.allclose(fresh.f, cached.f, atol=1e-15)
