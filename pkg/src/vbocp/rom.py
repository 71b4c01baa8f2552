"""Snapshot compression and reduced Galerkin solves.

The reduced space aggregates state and adjoint modes into one basis Q,
so a basis of N modes per variable yields a dense system of size 4N.
Projected operators are stored as (theta-key, block) pairs; evaluating
the named theta coefficients at a parameter assembles the online system
without touching anything of high-fidelity size.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import fem
from . import mesh as meshmod
from .ocp import SolverError

logger = logging.getLogger(__name__)

AGGREGATION_DROP_TOL = 1e-10
EIGENVALUE_FLOOR = 1e-14

# named coefficient functions for the affine operator expansions; the
# stretch factors belong to the recast pipeline (left/right pieces of
# the reference channel).
THETA_FUNCS = {
    "one": lambda mu: 1.0,
    "inv_mu1": lambda mu: 1.0 / mu.mu1,
    "mu2": lambda mu: mu.mu2,
    "stretch_left": lambda mu: 2.0 * mu.mu_u,
    "stretch_right": lambda mu: 2.0 * (1.0 - mu.mu_u),
    "inv_stretch_left_mu1": lambda mu: 1.0 / (2.0 * mu.mu_u * mu.mu1),
    "inv_stretch_right_mu1": lambda mu: 1.0 / (2.0 * (1.0 - mu.mu_u) * mu.mu1),
    "stretch_left_over_mu1": lambda mu: 2.0 * mu.mu_u / mu.mu1,
    "stretch_right_over_mu1": lambda mu: 2.0 * (1.0 - mu.mu_u) / mu.mu1,
    "mu2_stretch_left": lambda mu: mu.mu2 * 2.0 * mu.mu_u,
    "mu2_stretch_right": lambda mu: mu.mu2 * 2.0 * (1.0 - mu.mu_u),
}


def theta_value(key, mu):
    return THETA_FUNCS[key](mu)


@dataclass(frozen=True)
class SnapshotSet:
    """Homogenized state snapshots and adjoint snapshots, one column per
    parameter; the Dirichlet lift is subtracted so columns live in the
    homogeneous space and linear combinations stay admissible."""

    params: tuple
    Y: np.ndarray
    P: np.ndarray

    @property
    def n_snapshots(self):
        return self.Y.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return SnapshotSet(
            params=tuple(self.params[i] for i in idx),
            Y=self.Y[:, idx],
            P=self.P[:, idx],
        )


def collect_snapshots(hf_model, params):
    """One high-fidelity solve per parameter.

    Failures are re-raised with the offending parameter attached.
    """
    if len(params) == 0:
        raise ValueError("parameter list must be nonempty")
    lift = np.zeros(hf_model.mesh.n_vertices)
    lift[hf_model.parts.dirichlet] = hf_model.g
    Y = np.empty((hf_model.mesh.n_vertices, len(params)))
    P = np.empty_like(Y)
    for j, mu in enumerate(params):
        try:
            sol = hf_model.solve(mu)
        except SolverError as exc:
            raise SolverError(f"snapshot solve failed at {mu}: {exc}") from exc
        Y[:, j] = sol.y - lift
        P[:, j] = sol.p
    return SnapshotSet(params=tuple(params), Y=Y, P=P)


@dataclass(frozen=True)
class PodBasis:
    """Compressed basis: modes orthonormal in the supplied inner product,
    eigenvalues of the snapshot correlation matrix kept in full for
    decay diagnostics."""

    modes: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_modes(self):
        return self.modes.shape[1]


def _x_orthonormalize(cols, X, drop_tol=None):
    """Two-pass modified Gram-Schmidt in the X inner product.

    Sequential, so span(cols[:, :k]) is preserved for every k.  With
    drop_tol set, columns whose remaining norm falls below it are
    removed; otherwise a vanishing column is an error.
    """
    kept = []
    dropped = 0
    for j in range(cols.shape[1]):
        v = cols[:, j].copy()
        for _ in range(2):
            for q in kept:
                v -= (q @ (X @ v)) * q
        nrm = np.sqrt(max(v @ (X @ v), 0.0))
        if drop_tol is not None and nrm < drop_tol:
            dropped += 1
            continue
        if nrm <= 0.0:
            raise ValueError(f"column {j} vanished during orthonormalization")
        kept.append(v / nrm)
    return np.column_stack(kept), dropped


def pod(snapshots, X, N):
    """Correlation-matrix compression of a snapshot matrix.

    The Gram matrix G_mn = (s_m, s_n)_X is diagonalized; mode n is the
    snapshot combination weighted by the unit eigenvector, scaled by
    1/sqrt(lambda_n).  Modes whose eigenvalue falls below
    EIGENVALUE_FLOOR relative to the largest are excluded and N is
    capped accordingly.  A Gram-Schmidt polish restores the machine
    orthonormality that the 1/sqrt(lambda) scaling loses for trailing
    eigenvalues; it acts triangularly, so every leading mode span is
    unchanged.
    """
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2 or S.shape[1] == 0:
        raise ValueError("snapshot matrix must have at least one column")
    ns = S.shape[1]
    if not 1 <= N <= ns:
        raise ValueError(f"N={N} outside 1..{ns}")
    XS = X @ S
    gram = S.T @ XS
    gram = 0.5 * (gram + gram.T)
    lam, W = scipy.linalg.eigh(gram)
    lam, W = lam[::-1], W[:, ::-1]
    lam = np.maximum(lam, 0.0)
    if lam[0] <= 0.0:
        raise ValueError("all snapshots are zero")
    keep = int(np.sum(lam > EIGENVALUE_FLOOR * lam[0]))
    if N > keep:
        logger.info("pod: N capped from %d to %d (eigenvalue floor)", N, keep)
        N = keep
    modes = (S @ W[:, :N]) / np.sqrt(lam[:N])
    modes, _ = _x_orthonormalize(modes, X)
    return PodBasis(modes=modes, eigenvalues=lam)


def projection_coefficients(modes, X, vec):
    return modes.T @ (X @ vec)


def pod_error_identity(snapshots, X, basis, N):
    """Both sides of the compression-error identity.

    Left: summed squared projection errors of the snapshots onto the
    first N modes.  Right: sum of the eigenvalues beyond N.  With the
    plain Gram convention used here the identity holds without any
    1/n_snapshots prefactor.
    """
    S = np.asarray(snapshots, dtype=float)
    if N > basis.n_modes:
        raise ValueError(f"N={N} exceeds the {basis.n_modes} available modes")
    modes = basis.modes[:, :N]
    coeff = modes.T @ (X @ S)
    resid = S - modes @ coeff
    lhs = float(np.sum(resid * (X @ resid)))
    rhs = float(np.sum(basis.eigenvalues[N:]))
    return lhs, rhs


def build_aggregated(y_basis, p_basis, N, X):
    """Joint state/adjoint basis, re-orthonormalized.

    Takes the first N modes of each variable, concatenates them and runs
    a modified Gram-Schmidt in the X inner product (two passes); columns
    whose remaining norm falls below AGGREGATION_DROP_TOL are dropped.
    """
    if y_basis.n_modes < N or p_basis.n_modes < N:
        raise ValueError(
            f"need {N} modes per variable, have "
            f"{y_basis.n_modes} (state) and {p_basis.n_modes} (adjoint)"
        )
    cols = np.column_stack([y_basis.modes[:, :N], p_basis.modes[:, :N]])
    Q, dropped = _x_orthonormalize(cols, X, drop_tol=AGGREGATION_DROP_TOL)
    if dropped:
        logger.info("aggregation dropped %d dependent column(s)", dropped)
    return Q


# ---------------------------------------------------------------------------
# reduced models
# ---------------------------------------------------------------------------

@dataclass
class DeimControl:
    """Affine control blocks driven by interpolation coefficients.

    Online: evaluate the nodal indicator at the interpolation rows from
    the stored thresholds, solve the small interpolation system, and
    combine the projected components.
    """

    interp_matrix: np.ndarray  # (n_deim, n_deim) rows of the basis
    indices: np.ndarray
    thresholds_at_indices: np.ndarray
    components: list  # dense projected blocks, one per basis vector

    def coefficients(self, mu):
        chi_rows = meshmod.indicator_from_thresholds(
            self.thresholds_at_indices, mu.mu_u
        )
        return np.linalg.solve(self.interp_matrix, chi_rows)

    def block(self, mu):
        theta = self.coefficients(mu)
        out = np.zeros_like(self.components[0])
        for t, comp in zip(theta, self.components):
            out += t * comp
        return out


@dataclass
class ExactControl:
    """Projected control block assembled from the mesh at each call.

    Keeps the two-sided check against hyper-reduction honest, at the
    price of an online cost that scales with the candidate boundary.
    """

    edge_triples: fem.EdgeTriples
    thresholds: np.ndarray
    Q: np.ndarray

    def block(self, mu):
        chi = meshmod.indicator_from_thresholds(self.thresholds, mu.mu_u)
        C = self.edge_triples.weighted(chi)
        return self.Q.T @ (C @ self.Q)


@dataclass
class ReducedModel:
    """Projected operators of one reduced space.

    Each operator is a list of (theta-key, dense block) pairs evaluated
    through THETA_FUNCS; the control block comes from either the affine
    control components, the exact assembly callback, or C_terms for the
    recast pipeline where the control boundary is fixed.
    """

    strategy: str
    Q: np.ndarray
    lifting: np.ndarray
    D_terms: list
    M_terms: list
    C_terms: list
    f_terms: list
    yd_terms: list
    control: object = None  # DeimControl | ExactControl | None
    eigenvalues_y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eigenvalues_p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    meta: dict = field(default_factory=dict)

    @property
    def n_columns(self):
        return self.Q.shape[1]

    def _combine(self, terms, mu):
        out = None
        for key, block in terms:
            contrib = theta_value(key, mu) * block
            out = contrib if out is None else out + contrib
        if out is None:
            m = self.n_columns
            return np.zeros((m, m))
        return out

    def assemble(self, mu):
        """Dense reduced blocks (D, M, C, f, yd) at one parameter."""
        m = self.n_columns
        D = self._combine(self.D_terms, mu)
        M = self._combine(self.M_terms, mu)
        C = self._combine(self.C_terms, mu)
        if self.control is not None:
            C = C + self.control.block(mu)
        f = np.zeros(m)
        for key, vec in self.f_terms:
            f += theta_value(key, mu) * vec
        yd = np.zeros(m)
        for key, vec in self.yd_terms:
            yd += theta_value(key, mu) * vec
        return D, M, C, f, yd

    def solve_coefficients(self, mu):
        """Online solve; returns the reduced state/adjoint coordinates."""
        D, M, C, f, yd = self.assemble(mu)
        m = self.n_columns
        K = np.block([[M, D.T], [D, -C / mu.alpha]])
        rhs = np.concatenate([yd, f])
        try:
            z = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError as exc:
            cond = np.linalg.cond(K)
            raise SolverError(
                f"reduced system singular (cond ~ {cond:.3e})"
            ) from exc
        if not np.all(np.isfinite(z)):
            raise SolverError("reduced solve produced non-finite values")
        return z[:m], z[m:]


@dataclass(frozen=True)
class ReducedSolution:
    y: np.ndarray
    p: np.ndarray
    y_coeff: np.ndarray
    p_coeff: np.ndarray


def project_and_solve(model, mu):
    """Online solve plus lift back to the full vertex set."""
    yc, pc = model.solve_coefficients(mu)
    return ReducedSolution(
        y=model.Q @ yc + model.lifting,
        p=model.Q @ pc,
        y_coeff=yc,
        p_coeff=pc,
    )


def relative_errors(hf, reduced, X_full):
    """Relative state/adjoint errors in the norm of X_full."""
    ny = fem.x_norm(X_full, hf.y)
    np_ = fem.x_norm(X_full, hf.p)
    if ny == 0.0 or np_ == 0.0:
        raise ValueError("high-fidelity solution has zero norm")
    e_y = fem.x_norm(X_full, hf.y - reduced.y) / ny
    e_p = fem.x_norm(X_full, hf.p - reduced.p) / np_
    return e_y, e_p


def build_reduced_model(hf_model, snapshots, N, control_mode="exact",
                        deim_model=None, strategy="pod", bases=None):
    """Offline projection of the channel/hole pipeline onto N modes.

    bases may carry precomputed (state, adjoint) PodBasis pairs so that
    several values of N reuse one compression; control_mode picks the
    affine interpolation route ("deim", requires deim_model) or the
    exact assembly callback ("exact").
    """
    parts = hf_model.parts
    X = parts.norm_full
    if bases is None:
        nmax = snapshots.n_snapshots
        bases = (pod(snapshots.Y, X, nmax), pod(snapshots.P, X, nmax))
    y_basis, p_basis = bases
    n_y = min(N, y_basis.n_modes)
    n_p = min(N, p_basis.n_modes)
    n_use = min(n_y, n_p)
    if n_use < N:
        logger.info("local basis capped at %d modes (requested %d)", n_use, N)
    Q = build_aggregated(y_basis, p_basis, n_use, X)

    lift = np.zeros(hf_model.mesh.n_vertices)
    lift[parts.dirichlet] = hf_model.g
    ones = np.ones(hf_model.mesh.n_vertices)

    K, A, Mo = parts.stiffness, parts.advection, parts.obs_mass
    D_terms = [("inv_mu1", Q.T @ (K @ Q)), ("one", Q.T @ (A @ Q))]
    M_terms = [("one", Q.T @ (Mo @ Q))]
    f_terms = [("inv_mu1", -Q.T @ (K @ lift)), ("one", -Q.T @ (A @ lift))]
    yd_terms = [("mu2", Q.T @ (Mo @ ones)), ("one", -Q.T @ (Mo @ lift))]

    if control_mode == "deim":
        if deim_model is None:
            raise ValueError("control_mode='deim' needs a deim_model")
        control = DeimControl(
            interp_matrix=deim_model.interp_matrix,
            indices=deim_model.indices,
            thresholds_at_indices=parts.thresholds[deim_model.indices],
            components=[
                Q.T @ (parts.edge_triples.weighted(deim_model.Z[:, q]) @ Q)
                for q in range(deim_model.n_basis)
            ],
        )
    elif control_mode == "exact":
        control = ExactControl(
            edge_triples=parts.edge_triples, thresholds=parts.thresholds, Q=Q
        )
    else:
        raise ValueError(f"unknown control mode '{control_mode}'")

    return ReducedModel(
        strategy=strategy,
        Q=Q,
        lifting=lift,
        D_terms=D_terms,
        M_terms=M_terms,
        C_terms=[],
        f_terms=f_terms,
        yd_terms=yd_terms,
        control=control,
        eigenvalues_y=y_basis.eigenvalues,
        eigenvalues_p=p_basis.eigenvalues,
        meta={"N": N, "n_snapshots": snapshots.n_snapshots,
              "control_mode": control_mode},
    )


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_model(model, outdir, mesh=None, extra_meta=None):
    """Persist basis, eigenvalues and projected blocks as text files."""
    os.makedirs(outdir, exist_ok=True)
    np.savetxt(os.path.join(outdir, "Q.mat"), model.Q)
    np.savetxt(os.path.join(outdir, "lifting.txt"), model.lifting)
    np.savetxt(os.path.join(outdir, "eigvals_y.txt"), model.eigenvalues_y)
    np.savetxt(os.path.join(outdir, "eigvals_p.txt"), model.eigenvalues_p)
    manifest = {"strategy": model.strategy, "terms": []}

    def dump(role, terms):
        for i, (key, block) in enumerate(terms):
            name = f"{role}_{i:03d}.txt"
            np.savetxt(os.path.join(outdir, name), np.atleast_1d(block))
            manifest["terms"].append({"role": role, "theta": key, "file": name})

    dump("D", model.D_terms)
    dump("M", model.M_terms)
    dump("C", model.C_terms)
    dump("f", model.f_terms)
    dump("yd", model.yd_terms)

    if isinstance(model.control, DeimControl):
        ctl = model.control
        np.savetxt(os.path.join(outdir, "deim_interp.mat"), ctl.interp_matrix)
        np.savetxt(os.path.join(outdir, "deim_indices.txt"), ctl.indices, fmt="%d")
        np.savetxt(os.path.join(outdir, "deim_thresholds.txt"),
                   ctl.thresholds_at_indices)
        for q, comp in enumerate(ctl.components):
            np.savetxt(os.path.join(outdir, f"C_deim_{q:03d}.txt"), comp)
        manifest["control"] = {"kind": "deim", "n_components": len(ctl.components)}
    elif isinstance(model.control, ExactControl):
        manifest["control"] = {"kind": "exact"}
    else:
        manifest["control"] = {"kind": "affine"}

    meta = {"strategy": model.strategy, "n_columns": model.n_columns}
    meta.update(model.meta)
    if mesh is not None:
        meshmod.save_mesh(mesh, os.path.join(outdir, "mesh.txt"))
        meta["mesh_digest"] = meshmod.mesh_digest(mesh)
        meta["geometry"] = mesh.geometry
    if extra_meta:
        meta.update(extra_meta)
    with open(os.path.join(outdir, "blocks.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    with open(os.path.join(outdir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_model(outdir):
    """Inverse of save_model; exact-control models need the bundled mesh."""
    with open(os.path.join(outdir, "blocks.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(os.path.join(outdir, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    Q = np.loadtxt(os.path.join(outdir, "Q.mat"), ndmin=2)
    lifting = np.loadtxt(os.path.join(outdir, "lifting.txt"))
    terms = {"D": [], "M": [], "C": [], "f": [], "yd": []}
    for t in manifest["terms"]:
        arr = np.loadtxt(os.path.join(outdir, t["file"]), ndmin=1)
        if t["role"] in ("D", "M", "C"):
            arr = np.atleast_2d(arr)
        terms[t["role"]].append((t["theta"], arr))

    control = None
    kind = manifest["control"]["kind"]
    if kind == "deim":
        interp = np.loadtxt(os.path.join(outdir, "deim_interp.mat"), ndmin=2)
        indices = np.loadtxt(
            os.path.join(outdir, "deim_indices.txt"), dtype=int, ndmin=1
        )
        thr = np.loadtxt(os.path.join(outdir, "deim_thresholds.txt"), ndmin=1)
        comps = [
            np.loadtxt(os.path.join(outdir, f"C_deim_{q:03d}.txt"), ndmin=2)
            for q in range(manifest["control"]["n_components"])
        ]
        control = DeimControl(
            interp_matrix=interp,
            indices=indices,
            thresholds_at_indices=thr,
            components=comps,
        )
    elif kind == "exact":
        mesh = meshmod.load_mesh(
            os.path.join(outdir, "mesh.txt"), geometry=meta.get("geometry", "custom")
        )
        control = ExactControl(
            edge_triples=fem.assemble_edge_triples(mesh),
            thresholds=meshmod.control_thresholds(mesh),
            Q=Q,
        )

    eig_y = np.loadtxt(os.path.join(outdir, "eigvals_y.txt"), ndmin=1)
    eig_p = np.loadtxt(os.path.join(outdir, "eigvals_p.txt"), ndmin=1)
    return ReducedModel(
        strategy=meta["strategy"],
        Q=Q,
        lifting=lifting,
        D_terms=terms["D"],
        M_terms=terms["M"],
        C_terms=terms["C"],
        f_terms=terms["f"],
        yd_terms=terms["yd"],
        control=control,
        eigenvalues_y=eig_y,
        eigenvalues_p=eig_p,
        meta=meta,
    )
