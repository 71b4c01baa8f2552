"""Computable lower bound for the inf-sup constant of the coupled form.

The discrete surrogates of the coercivity, trace and observation
constants come from generalized eigenproblems against the H1 matrix;
the closed-form bound combines them and is checked against the directly
computed inf-sup constant of the block system.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import ocp

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000


@dataclass(frozen=True)
class StabilityConstants:
    """Discrete coercivity, trace and observation constants plus the
    control penalization they are combined with."""

    gamma_a: float
    gamma_t: float
    c_omega: float
    alpha: float


@dataclass(frozen=True)
class BetaLowerBound:
    """Bound value together with the intermediate constants of the
    splitting (kept for inspection)."""

    value: float
    eps: float
    eta: float
    c1: float
    c2: float
    numerator: float = 0.0
    denominator: float = 0.0


def eigen_extreme(A, X, which, dense_limit=DENSE_LIMIT):
    """Extreme eigenvalue of the symmetric pencil (A, X).

    which is "min" or "max".  Dense solve below dense_limit unknowns;
    above it, shift-invert at zero (inverse iteration on A) for the
    smallest eigenvalue and a plain Lanczos run for the largest.
    """
    n = A.shape[0]
    A = sp.csr_matrix(A)
    A = 0.5 * (A + A.T)
    if n <= dense_limit:
        lam = scipy.linalg.eigh(
            A.toarray(), sp.csr_matrix(X).toarray(), eigvals_only=True
        )
        return float(lam[0] if which == "min" else lam[-1])
    if which == "max":
        lam = spla.eigsh(A, k=1, M=sp.csc_matrix(X), which="LA",
                         return_eigenvectors=False)
        return float(lam[0])
    lam = spla.eigsh(A.tocsc(), k=1, M=sp.csc_matrix(X), sigma=0.0,
                     which="LM", return_eigenvectors=False)
    return float(lam[0])


def coercivity_constant(ops, dense_limit=DENSE_LIMIT):
    """Smallest eigenvalue of the symmetrized state form against the H1
    matrix; negative values mean the bound does not apply."""
    A = 0.5 * (ops.D_a + ops.D_a.T)
    gamma = eigen_extreme(A, ops.X, "min", dense_limit)
    if gamma <= 0:
        raise ValueError(
            f"coercivity lost: smallest symmetric eigenvalue {gamma:.3e} <= 0"
        )
    return gamma


def trace_constant(ops, chi=None, dense_limit=DENSE_LIMIT):
    """Largest eigenvalue of the weighted boundary mass against the H1
    matrix; zero when the control region is empty."""
    C = ops.C if chi is None else ops.edge_triples.weighted(chi)[ops.free][:, ops.free]
    if C.nnz == 0:
        return 0.0
    return eigen_extreme(C, ops.X, "max", dense_limit)


def obs_constant(ops, dense_limit=DENSE_LIMIT):
    """Largest eigenvalue of the observation mass against the H1 matrix."""
    if ops.M_o.nnz == 0:
        return 0.0
    return eigen_extreme(ops.M_o, ops.X, "max", dense_limit)


def compute_constants(ops, alpha, dense_limit=DENSE_LIMIT):
    return StabilityConstants(
        gamma_a=coercivity_constant(ops, dense_limit),
        gamma_t=trace_constant(ops, dense_limit=dense_limit),
        c_omega=obs_constant(ops, dense_limit=dense_limit),
        alpha=alpha,
    )


def beta_lower_bound(k):
    """Closed-form lower bound from the discrete constants.

    With an empty control region (gamma_t = 0) the trace terms drop out
    of both the numerator minimum and the denominator maximum, leaving
    the observation branch; the result stays finite and positive
    whenever gamma_a and c_omega are.
    """
    if k.gamma_a <= 0 or k.c_omega <= 0 or k.alpha <= 0 or k.gamma_t < 0:
        raise ValueError(f"bound needs positive constants, got {k}")
    ga, ct, co, al = k.gamma_a, k.gamma_t, k.c_omega, k.alpha
    eta = co / ga
    c1 = 2.0 * ga / co
    if ct == 0.0:
        eps = np.inf
        c2 = 0.0
        numerator = ga * ga / co
        denominator = np.sqrt(4.0 * ga * ga / (co * co) + 2.0)
    else:
        eps = al * ga / ct
        c2 = 2.0 * al * ga / ct
        numerator = ga * ga * min(al / ct, 1.0 / co)
        denominator = max(
            np.sqrt(8.0 * al * al * ga * ga / (ct * ct) + 1.0),
            np.sqrt(4.0 * ga * ga / (co * co) + 2.0),
        )
    return BetaLowerBound(
        value=numerator / denominator, eps=eps, eta=eta, c1=c1, c2=c2,
        numerator=numerator, denominator=denominator,
    )


def scaled_min_singular(K_dense, X_dense):
    """Smallest singular value of Lhat^-1 K Lhat^-T with Lhat the
    Cholesky factor of diag(X, X); K_dense has twice the size of X."""
    L = scipy.linalg.cholesky(X_dense, lower=True)
    n1 = X_dense.shape[0]
    T = np.empty_like(K_dense)
    for bi in (0, 1):
        rows = slice(bi * n1, (bi + 1) * n1)
        T[rows] = scipy.linalg.solve_triangular(L, K_dense[rows], lower=True)
    for bj in (0, 1):
        cols = slice(bj * n1, (bj + 1) * n1)
        T[:, cols] = scipy.linalg.solve_triangular(
            L, T[:, cols].T, lower=True
        ).T
    return float(scipy.linalg.svdvals(T)[-1])


def beta_h_direct(ops, alpha, dense_limit=DENSE_LIMIT):
    """Discrete inf-sup constant of the block system.

    Equals the smallest singular value of the block matrix symmetrically
    scaled by the block-diagonal H1 norm; computed densely via a
    Cholesky congruence below dense_limit block unknowns, otherwise as
    the smallest eigenvalue of K Xhat^-1 K^T against Xhat through
    shift-inverted Lanczos with factorized K.
    """
    K = ocp.assemble_saddle(ops, alpha)
    n = K.shape[0]
    if n <= dense_limit:
        return scaled_min_singular(K.toarray(), ops.X.toarray())

    Xhat = sp.block_diag([ops.X, ops.X], format="csc")
    try:
        K_lu = spla.splu(K.tocsc())
        X_lu = spla.splu(Xhat)
    except RuntimeError as exc:
        raise ocp.SolverError(f"block matrix singular: {exc}") from exc
    Xhat_csr = Xhat.tocsr()

    def a_mv(v):
        return K @ X_lu.solve(K.T @ v)

    def ainv_mv(v):
        return K_lu.solve(Xhat_csr @ K_lu.solve(v, trans="T"))

    A_op = spla.LinearOperator(K.shape, matvec=a_mv)
    Ainv_op = spla.LinearOperator(K.shape, matvec=ainv_mv)
    lam = spla.eigsh(
        A_op, k=1, M=Xhat, sigma=0.0, which="LM",
        OPinv=Ainv_op, return_eigenvectors=False,
    )
    return float(np.sqrt(max(lam[0], 0.0)))


def stability_row(hf_model, mu, dense_limit=DENSE_LIMIT, slack=1e-12):
    """One CSV row of the bound-versus-direct comparison."""
    ops = hf_model.operator_set(mu)
    try:
        consts = compute_constants(ops, mu.alpha, dense_limit)
        lb = beta_lower_bound(consts).value
        applicable = True
    except ValueError as exc:
        logger.warning("bound not applicable at %s: %s", mu, exc)
        consts = StabilityConstants(np.nan, np.nan, np.nan, mu.alpha)
        lb = np.nan
        applicable = False
    bh = beta_h_direct(ops, mu.alpha, dense_limit)
    ok = applicable and bh >= lb - slack
    return {
        "mu1": mu.mu1,
        "mu2": mu.mu2,
        "muu": mu.mu_u,
        "gamma_a": consts.gamma_a,
        "gamma_T": consts.gamma_t,
        "C_omega": consts.c_omega,
        "beta_lb": lb,
        "beta_h": bh,
        "ok": ok,
    }
