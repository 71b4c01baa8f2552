"""High-fidelity solver for the coupled state/adjoint optimality system.

The problem is reduced to the state and adjoint unknowns; the boundary
control is recovered afterwards as adjoint/alpha on the active control
region.  Systems are solved with a sparse direct factorization and every
solution is residual-checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from . import mesh as meshmod


class SolverError(RuntimeError):
    """Singular system or a residual above the accepted tolerance."""


RESIDUAL_RTOL = 1e-10


@dataclass(frozen=True)
class ParameterPoint:
    """One parameter value: inverse diffusion mu1, desired level mu2,
    control-boundary position mu_u, and control penalization alpha."""

    mu1: float
    mu2: float
    mu_u: float
    alpha: float = 0.07

    def __post_init__(self):
        if self.mu1 <= 0:
            raise ValueError(f"mu1 must be positive, got {self.mu1}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class HfSolution:
    """Lifted state/adjoint vectors plus the recovered boundary control.

    u holds the control trace values at control_dofs (all vertices the
    weighted boundary form touches); it equals p/alpha there and the
    adjoint vanishes on the Dirichlet boundary.
    """

    y: np.ndarray
    p: np.ndarray
    u: np.ndarray
    control_dofs: np.ndarray
    cost: float
    residual: float

    def u_full(self, n):
        out = np.zeros(n)
        out[self.control_dofs] = self.u
        return out


def assemble_saddle(ops, alpha):
    """Block matrix [[M_o, D_a^T], [D_a, -C/alpha]] on the free dofs."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return sp.bmat(
        [[ops.M_o, ops.D_a.T], [ops.D_a, -ops.C / alpha]], format="csc"
    )


def control_support(ops):
    """Vertices carrying the weighted boundary form at this parameter.

    These are the endpoints of every candidate edge with a nonzero
    weight, including the partially weighted edge at the moving front.
    """
    et = ops.edge_triples
    if len(et.edges) == 0:
        return np.array([], dtype=int)
    wsum = ops.chi[et.edges[:, 0]] + ops.chi[et.edges[:, 1]]
    return np.unique(et.edges[wsum > 0].ravel())


def recover_control(ops, p_full, alpha):
    """Postprocess the control trace u = p/alpha on the control support."""
    dofs = control_support(ops)
    return dofs, p_full[dofs] / alpha


def evaluate_cost(y, u_full, mu, ops):
    """Tracking functional evaluated with the assembly quadrature.

    y and u_full are full-length nodal vectors; the misfit is measured
    against the constant desired level mu.mu2 over the observation
    domain and the control against the weighted boundary mass.
    """
    misfit = y - mu.mu2 * np.ones(len(y))
    track = 0.5 * float(misfit @ (ops.M_o_full @ misfit))
    penalty = 0.5 * mu.alpha * float(u_full @ (ops.C_full @ u_full))
    return track + penalty


def solve_from_ops(ops, mu):
    """Solve the optimality system for an assembled OperatorSet."""
    K = assemble_saddle(ops, mu.alpha)
    rhs = np.concatenate([ops.y_d_vec, ops.f])
    try:
        lu = spla.splu(K)
        z = lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"saddle factorization failed: {exc}") from exc
    if not np.all(np.isfinite(z)):
        raise SolverError("saddle solve produced non-finite values")
    res = np.linalg.norm(K @ z - rhs)
    scale = np.linalg.norm(rhs)
    rel = res / scale if scale > 0 else res
    if rel > RESIDUAL_RTOL:
        raise SolverError(f"saddle residual {rel:.3e} exceeds {RESIDUAL_RTOL:.1e}")

    n = ops.n_free
    y = ops.embed(z[:n]) + ops.lifting
    p = ops.embed(z[n:])
    dofs, u = recover_control(ops, p, mu.alpha)
    u_full = np.zeros(len(y))
    u_full[dofs] = u
    cost = evaluate_cost(y, u_full, mu, ops)
    return HfSolution(y=y, p=p, u=u, control_dofs=dofs, cost=cost, residual=rel)


def solve_state(ops, u_full):
    """Plain state solve for a prescribed control (optimality probes)."""
    rhs = ops.f + (ops.C_full @ u_full)[ops.free]
    y0 = spla.spsolve(ops.D_a.tocsc(), rhs)
    return ops.embed(y0) + ops.lifting


class HighFidelityModel:
    """Caches the parameter-independent operators of one mesh.

    solve() assembles only the parameter-dependent pieces (diffusion
    scaling, control weights, right-hand sides) and is pure: identical
    parameters give identical solutions.
    """

    def __init__(self, mesh, g=1.0, degree=3):
        self.mesh = mesh
        self.g = g
        self.parts = fem.build_parts(mesh, degree=degree)

    @property
    def n_free(self):
        return len(self.parts.free)

    def operator_set(self, mu):
        return fem.operator_set(self.parts, mu.mu1, mu.mu2, mu.mu_u, g=self.g)

    def solve(self, mu):
        return solve_from_ops(self.operator_set(mu), mu)


def solve_hf(mesh, mu, g=1.0):
    """One-off high-fidelity solve (assembles everything from scratch)."""
    return HighFidelityModel(mesh, g=g).solve(mu)
