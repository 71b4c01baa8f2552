"""P1 finite-element assembly for the two-field optimality system.

All assembly routines return matrices over the full vertex set; the
Dirichlet reduction (row/column elimination plus lifting) happens when
an OperatorSet is built.  Quadrature defaults are exact for every
integrand appearing here: a 4-point degree-3 rule on triangles and
2-point Gauss on edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import mesh as meshmod

# degree-3 (4 points) and degree-5 (7 points) rules in barycentric
# coordinates; weights sum to 1 and multiply the triangle area.
_R = np.sqrt(15.0)
TRIANGLE_RULES = {
    3: (
        np.array(
            [
                [1 / 3, 1 / 3, 1 / 3],
                [0.6, 0.2, 0.2],
                [0.2, 0.6, 0.2],
                [0.2, 0.2, 0.6],
            ]
        ),
        np.array([-27 / 48, 25 / 48, 25 / 48, 25 / 48]),
    ),
    5: (
        np.array(
            [
                [1 / 3, 1 / 3, 1 / 3],
                [(6 - _R) / 21, (6 - _R) / 21, (9 + 2 * _R) / 21],
                [(6 - _R) / 21, (9 + 2 * _R) / 21, (6 - _R) / 21],
                [(9 + 2 * _R) / 21, (6 - _R) / 21, (6 - _R) / 21],
                [(6 + _R) / 21, (6 + _R) / 21, (9 - 2 * _R) / 21],
                [(6 + _R) / 21, (9 - 2 * _R) / 21, (6 + _R) / 21],
                [(9 - 2 * _R) / 21, (6 + _R) / 21, (6 + _R) / 21],
            ]
        ),
        np.concatenate(
            [[9 / 40], np.full(3, (155 - _R) / 1200), np.full(3, (155 + _R) / 1200)]
        ),
    ),
}


def _edge_rule(npoints):
    """Gauss-Legendre nodes/weights mapped to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (x + 1.0), 0.5 * w


def _geometry(mesh):
    """Per-triangle areas and constant P1 gradients, vectorized.

    Returns (areas, grads) with grads of shape (nt, 3, 2).
    """
    p = mesh.vertices
    t = mesh.triangles
    v0, v1, v2 = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    d1, d2 = v1 - v0, v2 - v0
    twice_area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(twice_area <= 0):
        bad = int(np.flatnonzero(twice_area <= 0)[0])
        raise meshmod.MeshError(f"triangle {bad} is not counter-clockwise")
    grads = np.empty((len(t), 3, 2))
    grads[:, 0, 0] = v1[:, 1] - v2[:, 1]
    grads[:, 0, 1] = v2[:, 0] - v1[:, 0]
    grads[:, 1, 0] = v2[:, 1] - v0[:, 1]
    grads[:, 1, 1] = v0[:, 0] - v2[:, 0]
    grads[:, 2, 0] = v0[:, 1] - v1[:, 1]
    grads[:, 2, 1] = v1[:, 0] - v0[:, 0]
    grads /= twice_area[:, None, None]
    return 0.5 * twice_area, grads


def _scatter(mesh, local, rows_mask=None):
    """Sum (nt, 3, 3) local matrices into a CSR over all vertices."""
    t = mesh.triangles
    if rows_mask is not None:
        local = local[rows_mask]
        t = t[rows_mask]
    n = mesh.n_vertices
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    return A.tocsr()


def assemble_stiffness(mesh, triangle_mask=None, direction=None):
    """Gradient-gradient matrix; optionally restricted to a triangle
    subset or to a single gradient component (0 for x1, 1 for x2)."""
    areas, grads = _geometry(mesh)
    if direction is None:
        local = np.einsum("tid,tjd,t->tij", grads, grads, areas)
    else:
        g = grads[:, :, direction]
        local = np.einsum("ti,tj,t->tij", g, g, areas)
    return _scatter(mesh, local, triangle_mask)


def assemble_advection(mesh, triangle_mask=None, degree=3):
    """Matrix of the transport term: velocity (x2(1-x2), 0) applied to
    the trial gradient, tested against the basis."""
    areas, grads = _geometry(mesh)
    bary, weights = TRIANGLE_RULES[degree]
    pts = np.einsum("qk,tkd->tqd", bary, mesh.vertices[mesh.triangles])
    vel = pts[:, :, 1] * (1.0 - pts[:, :, 1])  # (nt, nq)
    gx = grads[:, :, 0]  # (nt, 3)
    # local[i, j] = sum_q w_q * area * vel_q * phi_i(q) * dphi_j/dx1
    local = np.einsum("q,tq,qi,tj,t->tij", weights, vel, bary, gx, areas)
    return _scatter(mesh, local, triangle_mask)


def assemble_state_form(mesh, mu1, degree=3):
    """Diffusion (coefficient 1/mu1) plus transport, over all vertices."""
    if mu1 <= 0:
        raise ValueError(f"mu1 must be positive, got {mu1}")
    return assemble_stiffness(mesh) / mu1 + assemble_advection(mesh, degree=degree)


def assemble_mass(mesh, triangle_mask=None, degree=3):
    """L2 mass matrix, optionally restricted to a triangle subset."""
    areas, _ = _geometry(mesh)
    bary, weights = TRIANGLE_RULES[degree]
    local = np.einsum("q,qi,qj,t->tij", weights, bary, bary, areas)
    return _scatter(mesh, local, triangle_mask)


def assemble_obs_mass(mesh, degree=3):
    """Mass matrix of the observation subdomain (zero rows elsewhere)."""
    return assemble_mass(mesh, triangle_mask=mesh.in_observation, degree=degree)


def assemble_norm_matrix(mesh, degree=3):
    """Full H1 inner-product matrix: stiffness plus global mass."""
    return assemble_stiffness(mesh) + assemble_mass(mesh, degree=degree)


@dataclass(frozen=True)
class EdgeTriples:
    """Affine expansion of the weighted control-boundary form.

    For a P1 weight w on the candidate boundary, the weighted edge mass
    C(w)_ij = sum over candidate edges of int w phi_i phi_j ds is linear
    in the nodal values of w; per-edge unit moments make C(w) exact for
    any w.  vertex_component(k) recovers the single-vertex matrices.
    """

    n_vertices: int
    edges: np.ndarray  # (ne, 2) candidate edge vertex pairs
    lengths: np.ndarray
    moment_first: np.ndarray  # 2x2, weight hat function of the first vertex
    moment_second: np.ndarray

    @property
    def moment_plain(self):
        """Unweighted unit-edge mass block."""
        return self.moment_first + self.moment_second

    def weighted(self, w):
        """CSR matrix of the boundary form with nodal weights w (full length)."""
        if len(self.edges) == 0 or w is None:
            return sp.csr_matrix((self.n_vertices, self.n_vertices))
        wa = w[self.edges[:, 0]]
        wb = w[self.edges[:, 1]]
        local = (
            wa[:, None, None] * self.moment_first[None]
            + wb[:, None, None] * self.moment_second[None]
        ) * self.lengths[:, None, None]
        rows = np.repeat(self.edges, 2, axis=1).ravel()
        cols = np.tile(self.edges, (1, 2)).ravel()
        A = sp.coo_matrix(
            (local.ravel(), (rows, cols)), shape=(self.n_vertices, self.n_vertices)
        )
        return A.tocsr()

    def vertex_component(self, k):
        """Matrix of the form weighted by the hat function of vertex k."""
        w = np.zeros(self.n_vertices)
        w[k] = 1.0
        return self.weighted(w)


def assemble_edge_triples(mesh, npoints=2):
    """Per-edge moments of weight*basis*basis on the candidate boundary."""
    cand = mesh.edges_with_tag(meshmod.CONTROL)
    edges = mesh.boundary_edges[cand]
    lengths = mesh.edge_lengths(cand)
    s, w = _edge_rule(npoints)
    basis = np.stack([1.0 - s, s])  # (2, nq)
    m_first = np.einsum("q,q,iq,jq->ij", w, basis[0], basis, basis)
    m_second = np.einsum("q,q,iq,jq->ij", w, basis[1], basis, basis)
    return EdgeTriples(
        n_vertices=mesh.n_vertices,
        edges=edges,
        lengths=lengths,
        moment_first=m_first,
        moment_second=m_second,
    )


# ---------------------------------------------------------------------------
# operator sets with Dirichlet reduction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatorParts:
    """Parameter-independent raw operators of one mesh, assembled once."""

    mesh: object
    stiffness: sp.csr_matrix
    advection: sp.csr_matrix
    mass: sp.csr_matrix
    obs_mass: sp.csr_matrix
    norm_full: sp.csr_matrix
    edge_triples: EdgeTriples
    free: np.ndarray
    dirichlet: np.ndarray
    thresholds: np.ndarray


def build_parts(mesh, degree=3):
    K = assemble_stiffness(mesh)
    A = assemble_advection(mesh, degree=degree)
    M = assemble_mass(mesh, degree=degree)
    Mo = assemble_obs_mass(mesh, degree=degree)
    dirichlet = mesh.dirichlet_vertices()
    free = np.setdiff1d(np.arange(mesh.n_vertices), dirichlet)
    return OperatorParts(
        mesh=mesh,
        stiffness=K,
        advection=A,
        mass=M,
        obs_mass=Mo,
        norm_full=(K + M).tocsr(),
        edge_triples=assemble_edge_triples(mesh),
        free=free,
        dirichlet=dirichlet,
        thresholds=meshmod.control_thresholds(mesh),
    )


@dataclass(frozen=True)
class OperatorSet:
    """Assembled operators of one parameter value.

    D_a, M_o, C, X live on the free dofs; the *_full variants and the
    norm matrix X_full keep all vertices for evaluating norms and costs
    of lifted solutions.  f and y_d_vec are the homogenized right-hand
    sides of the state and adjoint equations.
    """

    mesh: object
    mu1: float
    mu2: float
    mu_u: float
    g: float
    free: np.ndarray
    lifting: np.ndarray
    D_a: sp.csr_matrix
    M_o: sp.csr_matrix
    C: sp.csr_matrix
    X: sp.csr_matrix
    f: np.ndarray
    y_d_vec: np.ndarray
    chi: np.ndarray
    edge_triples: EdgeTriples
    C_full: sp.csr_matrix
    M_o_full: sp.csr_matrix
    X_full: sp.csr_matrix

    @property
    def n_free(self):
        return len(self.free)

    def embed(self, vec_free):
        """Scatter a free-dof vector back to the full vertex set."""
        out = np.zeros(self.mesh.n_vertices)
        out[self.free] = vec_free
        return out


def assemble_rhs(mesh, state_matrix, obs_mass, mu2, g, dirichlet=None):
    """Dirichlet lift and homogenized right-hand sides.

    Returns (f_full, y_d_full, lifting): the lift carries g at Dirichlet
    vertices; f = -D_a * lifting; the adjoint side is the moment vector
    of the constant desired level mu2 over the observation domain minus
    the lifted state's observation moments.
    """
    if dirichlet is None:
        dirichlet = mesh.dirichlet_vertices()
    lifting = np.zeros(mesh.n_vertices)
    lifting[dirichlet] = g
    f_full = -state_matrix @ lifting
    ones = np.ones(mesh.n_vertices)
    y_d_full = mu2 * (obs_mass @ ones) - obs_mass @ lifting
    return f_full, y_d_full, lifting


def operator_set(parts, mu1, mu2, mu_u, g=1.0):
    """Parameter-dependent OperatorSet from precomputed parts."""
    if mu1 <= 0:
        raise ValueError(f"mu1 must be positive, got {mu1}")
    mesh = parts.mesh
    D_full = (parts.stiffness / mu1 + parts.advection).tocsr()
    chi = meshmod.control_indicator(mesh, mu_u).nodal_values
    C_full = parts.edge_triples.weighted(chi)
    f_full, y_d_full, lifting = assemble_rhs(
        mesh, D_full, parts.obs_mass, mu2, g, dirichlet=parts.dirichlet
    )
    fr = parts.free
    reduce = lambda A: A[fr][:, fr].tocsr()  # noqa: E731
    return OperatorSet(
        mesh=mesh,
        mu1=mu1,
        mu2=mu2,
        mu_u=mu_u,
        g=g,
        free=fr,
        lifting=lifting,
        D_a=reduce(D_full),
        M_o=reduce(parts.obs_mass),
        C=reduce(C_full),
        X=reduce(parts.norm_full),
        f=f_full[fr],
        y_d_vec=y_d_full[fr],
        chi=chi,
        edge_triples=parts.edge_triples,
        C_full=C_full,
        M_o_full=parts.obs_mass,
        X_full=parts.norm_full,
    )


def build_operator_set(mesh, mu1, mu2, mu_u, g=1.0, degree=3):
    """Assemble everything for one parameter value from scratch."""
    return operator_set(build_parts(mesh, degree=degree), mu1, mu2, mu_u, g=g)


def x_norm(X_full, vec):
    """Norm induced by a (full) inner-product matrix."""
    return float(np.sqrt(max(vec @ (X_full @ vec), 0.0)))


def export_coo(matrix, path):
    """Dump a sparse matrix as 'row col value' triples for cross-checks."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w", encoding="utf-8") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
