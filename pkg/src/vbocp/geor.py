"""Recasting of the channel problem onto a fixed-boundary reference domain.

The moving control front is absorbed into a piecewise-affine coordinate
map: the left unit square stays put while the channel pieces left and
right of x1 = 1.5 stretch horizontally so that the reference control
boundary (the right pieces' top/bottom edges) lands exactly on the
physical one.  Pulled back to the reference mesh every operator becomes
an exact affine expansion in the two stretch factors, so no indicator
interpolation is needed and the online stage is fully separable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import fem, rom
from . import mesh as meshmod

REFERENCE_MU_U = 0.5
SPLIT_LINE = 1.5
_TOL = 1e-9

# theta keys per stretch class (see rom.THETA_FUNCS)
CLASS_KEYS = {
    "fixed": {"diff1": "inv_mu1", "diff2": "inv_mu1",
              "measure": "one", "desired": "mu2"},
    "left": {"diff1": "inv_stretch_left_mu1", "diff2": "stretch_left_over_mu1",
             "measure": "stretch_left", "desired": "mu2_stretch_left"},
    "right": {"diff1": "inv_stretch_right_mu1", "diff2": "stretch_right_over_mu1",
              "measure": "stretch_right", "desired": "mu2_stretch_right"},
}


def stretches(mu_u):
    """Horizontal stretch factors of the left and right channel pieces."""
    if not 0.0 < mu_u < 1.0:
        raise ValueError(f"mu_u={mu_u} degenerates the map (needs 0 < mu_u < 1)")
    return 2.0 * mu_u, 2.0 * (1.0 - mu_u)


@dataclass(frozen=True)
class AffineSubmap:
    """x -> G x + c on one reference subdomain (axis-aligned box)."""

    label: str
    x1_range: tuple
    x2_range: tuple
    G: np.ndarray
    c: np.ndarray

    def contains(self, point):
        return (
            self.x1_range[0] - _TOL <= point[0] <= self.x1_range[1] + _TOL
            and self.x2_range[0] - _TOL <= point[1] <= self.x2_range[1] + _TOL
        )

    def apply(self, points):
        return np.atleast_2d(points) @ self.G.T + self.c


def build_test1_map(mu_u):
    """The seven submaps of the channel: identity on the left square,
    horizontal stretches on the left/right pieces of the three bands."""
    d_l, d_r = stretches(mu_u)
    bands = {"mid": (0.2, 0.8), "top": (0.8, 1.0), "bottom": (0.0, 0.2)}
    maps = [
        AffineSubmap(
            label="square",
            x1_range=(0.0, 1.0),
            x2_range=(0.0, 1.0),
            G=np.eye(2),
            c=np.zeros(2),
        )
    ]
    for name, x2r in bands.items():
        maps.append(
            AffineSubmap(
                label=f"{name}_left",
                x1_range=(1.0, SPLIT_LINE),
                x2_range=x2r,
                G=np.diag([d_l, 1.0]),
                c=np.array([1.0 - d_l, 0.0]),
            )
        )
        maps.append(
            AffineSubmap(
                label=f"{name}_right",
                x1_range=(SPLIT_LINE, 2.0),
                x2_range=x2r,
                G=np.diag([d_r, 1.0]),
                c=np.array([2.0 * (1.0 - d_r), 0.0]),
            )
        )
    return maps


def map_points(points, mu_u):
    """Vectorized map of reference coordinates to physical ones."""
    d_l, d_r = stretches(mu_u)
    pts = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    x = pts[:, 0]
    left = (x > 1.0) & (x <= SPLIT_LINE)
    right = x > SPLIT_LINE
    pts[left, 0] = d_l * (x[left] - 1.0) + 1.0
    pts[right, 0] = d_r * (x[right] - 2.0) + 2.0
    return pts


def mapped_mesh(mesh, mu_u):
    """The reference triangulation with vertices moved to the physical
    domain; connectivity, tags and regions are unchanged."""
    _require_split_alignment(mesh)
    return meshmod.Mesh(
        vertices=map_points(mesh.vertices, mu_u),
        triangles=mesh.triangles,
        boundary_edges=mesh.boundary_edges,
        boundary_tags=mesh.boundary_tags,
        triangle_regions=mesh.triangle_regions,
        in_observation=mesh.in_observation,
        geometry=mesh.geometry,
        control_interval=mesh.control_interval,
    )


def push_forward(values, mesh, mu_u):
    """Reinterpret reference nodal values on the mapped mesh.

    The map is piecewise affine and mesh-aligned, so composing a P1
    function with its inverse keeps the nodal values and only moves the
    vertices.  Returns (mapped mesh, values).
    """
    return mapped_mesh(mesh, mu_u), np.asarray(values, dtype=float).copy()


def _require_split_alignment(mesh):
    """Every triangle and candidate edge must sit in one stretch class."""
    x = mesh.vertices[:, 0]
    for line in (1.0, SPLIT_LINE):
        tx = x[mesh.triangles]
        straddle = (tx.min(axis=1) < line - _TOL) & (tx.max(axis=1) > line + _TOL)
        if straddle.any():
            raise meshmod.MeshError(
                f"mesh not aligned with x1={line}: triangle "
                f"{int(np.flatnonzero(straddle)[0])} straddles it"
            )


def triangle_classes(mesh):
    """Stretch class of each triangle, by centroid."""
    _require_split_alignment(mesh)
    cx = mesh.vertices[mesh.triangles, 0].mean(axis=1)
    cls = np.where(cx <= 1.0, "fixed", np.where(cx <= SPLIT_LINE, "left", "right"))
    return cls


@dataclass(frozen=True)
class GeoRComponents:
    """Parameter-independent pulled-back operators on the reference mesh.

    Diffusion splits per class and per gradient direction (the
    horizontal part scales with 1/stretch, the vertical with stretch);
    the transport matrix is stretch-invariant because the velocity
    depends only on x2; measures (masses, boundary mass) scale with the
    stretch.  The indicator is frozen at the reference parameter.
    """

    mesh: object
    free: np.ndarray
    dirichlet: np.ndarray
    edge_triples: fem.EdgeTriples
    chi_ref: np.ndarray
    norm_full: sp.csr_matrix
    diff1: dict
    diff2: dict
    advection: sp.csr_matrix
    obs_mass: dict
    full_mass: dict
    control: dict


def assemble_reference_components(mesh):
    if mesh.geometry != meshmod.TEST1:
        raise meshmod.MeshError(
            "recasting is implemented for the channel geometry only"
        )
    cls = triangle_classes(mesh)
    chi_ref = meshmod.control_indicator(mesh, REFERENCE_MU_U).nodal_values
    triples = fem.assemble_edge_triples(mesh)

    diff1, diff2, obs_mass, full_mass, control = {}, {}, {}, {}, {}
    for c in ("fixed", "left", "right"):
        mask = cls == c
        diff1[c] = fem.assemble_stiffness(mesh, triangle_mask=mask, direction=0)
        diff2[c] = fem.assemble_stiffness(mesh, triangle_mask=mask, direction=1)
        obs_mass[c] = fem.assemble_mass(
            mesh, triangle_mask=mask & mesh.in_observation
        )
        full_mass[c] = fem.assemble_mass(mesh, triangle_mask=mask)

        cand = mesh.edges_with_tag(meshmod.CONTROL)
        mids = mesh.edge_midpoints(cand)
        if c == "fixed":
            esel = mids[:, 0] <= 1.0
        elif c == "left":
            esel = (mids[:, 0] > 1.0) & (mids[:, 0] <= SPLIT_LINE)
        else:
            esel = mids[:, 0] > SPLIT_LINE
        sub = fem.EdgeTriples(
            n_vertices=mesh.n_vertices,
            edges=mesh.boundary_edges[cand[esel]],
            lengths=mesh.edge_lengths(cand[esel]),
            moment_first=triples.moment_first,
            moment_second=triples.moment_second,
        )
        control[c] = sub.weighted(chi_ref)

    dirichlet = mesh.dirichlet_vertices()
    free = np.setdiff1d(np.arange(mesh.n_vertices), dirichlet)
    norm_full = fem.assemble_norm_matrix(mesh)
    return GeoRComponents(
        mesh=mesh,
        free=free,
        dirichlet=dirichlet,
        edge_triples=triples,
        chi_ref=chi_ref,
        norm_full=norm_full,
        diff1=diff1,
        diff2=diff2,
        advection=fem.assemble_advection(mesh),
        obs_mass=obs_mass,
        full_mass=full_mass,
        control=control,
    )


def _theta(key, mu):
    return rom.theta_value(key, mu)


def transformed_full_matrices(comp, mu):
    """(D, M_obs, C) over all vertices at one parameter."""
    D = comp.advection.copy()
    M = None
    C = None
    for c in ("fixed", "left", "right"):
        keys = CLASS_KEYS[c]
        D = D + _theta(keys["diff1"], mu) * comp.diff1[c]
        D = D + _theta(keys["diff2"], mu) * comp.diff2[c]
        m_c = _theta(keys["measure"], mu) * comp.obs_mass[c]
        M = m_c if M is None else M + m_c
        c_c = _theta(keys["measure"], mu) * comp.control[c]
        C = c_c if C is None else C + c_c
    return D.tocsr(), M.tocsr(), C.tocsr()


def transformed_operator_set(comp, mu, g=1.0):
    """OperatorSet of the pulled-back problem, ready for the saddle solver."""
    mesh = comp.mesh
    D_full, M_full, C_full = transformed_full_matrices(comp, mu)
    f_full, y_d_full, lifting = fem.assemble_rhs(
        mesh, D_full, M_full, mu.mu2, g, dirichlet=comp.dirichlet
    )
    fr = comp.free
    reduce = lambda A: A[fr][:, fr].tocsr()  # noqa: E731
    return fem.OperatorSet(
        mesh=mesh,
        mu1=mu.mu1,
        mu2=mu.mu2,
        mu_u=mu.mu_u,
        g=g,
        free=fr,
        lifting=lifting,
        D_a=reduce(D_full),
        M_o=reduce(M_full),
        C=reduce(C_full),
        X=reduce(comp.norm_full),
        f=f_full[fr],
        y_d_vec=y_d_full[fr],
        chi=comp.chi_ref,
        edge_triples=comp.edge_triples,
        C_full=C_full,
        M_o_full=M_full,
        X_full=comp.norm_full,
    )


def transformed_norm(comp, mu, vec):
    """H1 norm of a reference nodal vector measured on the mapped domain."""
    d_l, d_r = stretches(mu.mu_u)
    acc = 0.0
    for c, d in (("fixed", 1.0), ("left", d_l), ("right", d_r)):
        A = comp.diff1[c] / d + d * comp.diff2[c] + d * comp.full_mass[c]
        acc += float(vec @ (A @ vec))
    return float(np.sqrt(max(acc, 0.0)))


class GeoRModel:
    """Transformed high-fidelity solver on the reference mesh."""

    def __init__(self, mesh, g=1.0):
        from . import ocp  # local import to avoid a cycle at module load

        self._ocp = ocp
        self.mesh = mesh
        self.g = g
        self.components = assemble_reference_components(mesh)

    @property
    def parts(self):
        # duck-typed view used by the generic snapshot/POD helpers
        comp = self.components
        return _GeoRParts(comp)

    def operator_set(self, mu):
        return transformed_operator_set(self.components, mu, g=self.g)

    def solve(self, mu):
        return self._ocp.solve_from_ops(self.operator_set(mu), mu)


@dataclass(frozen=True)
class _GeoRParts:
    comp: GeoRComponents

    @property
    def norm_full(self):
        return self.comp.norm_full

    @property
    def dirichlet(self):
        return self.comp.dirichlet

    @property
    def free(self):
        return self.comp.free


def build_geor_reduced(model, snapshots, N, bases=None):
    """Affine projection of the pulled-back operators onto N modes.

    bases may carry precomputed (state, adjoint) compressions so a
    sweep over N reuses one eigendecomposition.
    """
    comp = model.components
    mesh = model.mesh
    g = model.g
    X = comp.norm_full
    if bases is None:
        nmax = snapshots.n_snapshots
        bases = (rom.pod(snapshots.Y, X, nmax), rom.pod(snapshots.P, X, nmax))
    y_basis, p_basis = bases
    n_use = min(N, y_basis.n_modes, p_basis.n_modes)
    Q = rom.build_aggregated(y_basis, p_basis, n_use, X)

    lift = np.zeros(mesh.n_vertices)
    lift[comp.dirichlet] = g
    ones = np.ones(mesh.n_vertices)

    def proj(mat):
        return Q.T @ (mat @ Q)

    D_terms = [("one", proj(comp.advection))]
    f_terms = [("one", -Q.T @ (comp.advection @ lift))]
    M_terms, C_terms, yd_terms = [], [], []
    for c in ("fixed", "left", "right"):
        keys = CLASS_KEYS[c]
        for role, mat in (("diff1", comp.diff1[c]), ("diff2", comp.diff2[c])):
            if mat.nnz:
                D_terms.append((keys[role], proj(mat)))
                f_terms.append((keys[role], -Q.T @ (mat @ lift)))
        if comp.obs_mass[c].nnz:
            M_terms.append((keys["measure"], proj(comp.obs_mass[c])))
            yd_terms.append((keys["desired"], Q.T @ (comp.obs_mass[c] @ ones)))
            yd_terms.append((keys["measure"], -Q.T @ (comp.obs_mass[c] @ lift)))
        if comp.control[c].nnz:
            C_terms.append((keys["measure"], proj(comp.control[c])))

    return rom.ReducedModel(
        strategy="geor",
        Q=Q,
        lifting=lift,
        D_terms=D_terms,
        M_terms=M_terms,
        C_terms=C_terms,
        f_terms=f_terms,
        yd_terms=yd_terms,
        control=None,
        eigenvalues_y=y_basis.eigenvalues,
        eigenvalues_p=p_basis.eigenvalues,
        meta={"N": N, "n_snapshots": snapshots.n_snapshots,
              "reference_mu_u": REFERENCE_MU_U},
    )


def geor_offline(mesh, params, N, g=1.0, model=None):
    """Reference-domain snapshots, compression and affine projection.

    Returns (GeoRModel, ReducedModel); the reduced model carries only
    dense blocks and named theta coefficients, so its online solve never
    touches high-fidelity data.
    """
    if model is None:
        model = GeoRModel(mesh, g=g)
    snapshots = rom.collect_snapshots(model, params)
    return model, build_geor_reduced(model, snapshots, N)


def theta_document(model):
    """Human-readable description of the coefficient functions in use."""
    formulas = {
        "one": "1",
        "inv_mu1": "1/mu1",
        "mu2": "mu2",
        "stretch_left": "2*mu_u",
        "stretch_right": "2*(1-mu_u)",
        "inv_stretch_left_mu1": "1/(2*mu_u*mu1)",
        "inv_stretch_right_mu1": "1/(2*(1-mu_u)*mu1)",
        "stretch_left_over_mu1": "2*mu_u/mu1",
        "stretch_right_over_mu1": "2*(1-mu_u)/mu1",
        "mu2_stretch_left": "mu2*2*mu_u",
        "mu2_stretch_right": "mu2*2*(1-mu_u)",
    }
    used = sorted(
        {k for k, _ in model.D_terms + model.M_terms + model.C_terms
         + model.f_terms + model.yd_terms}
    )
    return {
        "reference_mu_u": REFERENCE_MU_U,
        "split_line": SPLIT_LINE,
        "thetas": {k: formulas[k] for k in used},
    }
