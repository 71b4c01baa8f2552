"""Interpolatory affine reconstruction of the control-boundary indicator.

The weighted boundary form loses its parameter separability because the
active control region moves with mu_u.  Approximating the nodal
indicator in a small basis with greedily selected interpolation rows
restores an affine expansion whose components can be projected once,
offline.  Because the indicator takes finitely many 0/1 patterns on a
fixed mesh, a basis retaining all patterns makes the reconstruction
exact.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import mesh as meshmod

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeimModel:
    """Basis Z (orthonormal columns), ordered interpolation rows, and the
    factorizable row-restricted basis used for the coefficient solves."""

    Z: np.ndarray
    indices: np.ndarray
    interp_matrix: np.ndarray  # Z restricted to the interpolation rows
    eigenvalues: np.ndarray
    n_patterns: int = 0

    @property
    def n_basis(self):
        return self.Z.shape[1]

    @property
    def condition(self):
        return float(np.linalg.cond(self.interp_matrix))


def chi_snapshots(mesh, mu_u_values, geometry=None):
    """Distinct nodal indicator columns over a list of mu_u samples.

    The indicator is piecewise constant between edge-crossing
    thresholds, so duplicates are common and are removed (first
    occurrence kept).
    """
    if len(mu_u_values) == 0:
        raise ValueError("mu_u sample list must be nonempty")
    cols = []
    seen = set()
    for mu_u in mu_u_values:
        chi = meshmod.control_indicator(mesh, mu_u, geometry=geometry).nodal_values
        key = chi.tobytes()
        if key not in seen:
            seen.add(key)
            cols.append(chi)
    return np.column_stack(cols)


def deim_basis(snapshots, tol):
    """Euclidean compression of indicator snapshots with a decay cutoff.

    Keeps the smallest number of modes N such that the (N+1)-th
    eigenvalue of the snapshot Gram matrix falls below tol relative to
    the largest (eigenvalues beyond the snapshot count read as zero).
    Returns (Z, eigenvalues).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    S = np.asarray(snapshots, dtype=float)
    if S.ndim != 2 or S.shape[1] == 0:
        raise ValueError("snapshot matrix must have at least one column")
    gram = S.T @ S
    gram = 0.5 * (gram + gram.T)
    lam, W = scipy.linalg.eigh(gram)
    lam, W = np.maximum(lam[::-1], 0.0), W[:, ::-1]
    if lam[0] <= 0.0:
        raise ValueError("all indicator snapshots are zero")
    ns = len(lam)
    rank = int(np.sum(lam > 1e-14 * lam[0]))
    n_keep = rank
    for n in range(1, rank + 1):
        ratio = lam[n] / lam[0] if n < ns else 0.0
        if ratio < tol:
            n_keep = n
            break
    Z = (S @ W[:, :n_keep]) / np.sqrt(lam[:n_keep])
    return Z, lam


def magic_points(Z):
    """Greedy interpolation rows: start at the largest entry of the first
    basis vector; each step interpolates the next vector on the current
    rows and picks the largest residual entry (ties resolve to the
    smallest index)."""
    Z = np.asarray(Z, dtype=float)
    n_basis = Z.shape[1]
    indices = [int(np.argmax(np.abs(Z[:, 0])))]
    for q in range(1, n_basis):
        sub = Z[indices, :q]
        coeff = np.linalg.solve(sub, Z[indices, q])
        resid = Z[:, q] - Z[:, :q] @ coeff
        if np.max(np.abs(resid)) == 0.0:
            raise ValueError(f"basis column {q} is interpolated exactly; "
                             "redundant column in the basis")
        indices.append(int(np.argmax(np.abs(resid))))
    return np.asarray(indices, dtype=int)


def build_deim_model(mesh, mu_u_values, tol, geometry=None):
    """chi snapshots -> basis -> interpolation rows, in one call."""
    snaps = chi_snapshots(mesh, mu_u_values, geometry=geometry)
    Z, lam = deim_basis(snaps, tol)
    indices = magic_points(Z)
    model = DeimModel(
        Z=Z,
        indices=indices,
        interp_matrix=Z[indices, :],
        eigenvalues=lam,
        n_patterns=snaps.shape[1],
    )
    logger.info(
        "interpolation model: %d basis vectors from %d patterns, cond %.3e",
        model.n_basis, model.n_patterns, model.condition,
    )
    return model


def deim_coefficients(chi_new, model):
    """Coefficients reproducing chi_new exactly at the interpolation rows."""
    rows = chi_new[model.indices]
    return np.linalg.solve(model.interp_matrix, rows)


def reconstruct(theta, model):
    return model.Z @ theta


def affine_control_reduced(model, edge_triples, Q):
    """Projected control components, one dense block per basis vector.

    The weighted boundary form is linear in its nodal weights, so the
    block for weight vector z_q projected onto Q reproduces the full
    projected control matrix whenever the indicator reconstruction is
    exact.
    """
    return [
        Q.T @ (edge_triples.weighted(model.Z[:, q]) @ Q)
        for q in range(model.n_basis)
    ]


def save_deim(model, outdir, tol=None):
    os.makedirs(outdir, exist_ok=True)
    np.savetxt(os.path.join(outdir, "deim_Z.mat"), model.Z)
    np.savetxt(os.path.join(outdir, "deim_indices.txt"), model.indices, fmt="%d")
    np.savetxt(os.path.join(outdir, "deim_eigenvalues.txt"), model.eigenvalues)
    meta = {
        "n_basis": int(model.n_basis),
        "n_patterns": int(model.n_patterns),
        "condition": model.condition,
        "tol": tol,
    }
    with open(os.path.join(outdir, "deim_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_deim(outdir):
    Z = np.loadtxt(os.path.join(outdir, "deim_Z.mat"), ndmin=2)
    indices = np.loadtxt(os.path.join(outdir, "deim_indices.txt"), dtype=int, ndmin=1)
    lam = np.loadtxt(os.path.join(outdir, "deim_eigenvalues.txt"), ndmin=1)
    with open(os.path.join(outdir, "deim_meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    return DeimModel(
        Z=Z,
        indices=indices,
        interp_matrix=Z[indices, :],
        eigenvalues=lam,
        n_patterns=meta.get("n_patterns", 0),
    )
