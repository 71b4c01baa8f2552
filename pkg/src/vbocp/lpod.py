"""Local reduced bases over an adaptively halved geometric interval.

The geometric parameter drives transport-like solution changes, so one
global basis decays slowly.  The offline phase repeatedly halves the
mu_u interval while the N-th local state eigenvalue stays above a
tolerance, then builds one reduced model per accepted sub-interval; the
online phase dispatches each parameter to its sub-interval's model.
All high-fidelity solves happen once, up front: splitting only
partitions the stored snapshots.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import rom

logger = logging.getLogger(__name__)


@dataclass
class LocalInterval:
    """One accepted half-open interval (lo, hi] with its local model."""

    lo: float
    hi: float
    model: rom.ReducedModel
    eigenvalues_y: np.ndarray
    eigenvalues_p: np.ndarray
    n_snapshots: int
    criterion_met: bool
    budget_exhausted: bool = False


@dataclass
class IntervalPartition:
    """Disjoint half-open cover of the global mu_u interval."""

    interval: tuple
    intervals: list
    split_log: list = field(default_factory=list)
    tau: float = 0.0
    N: int = 0
    max_splits: int = 0
    relative: bool = True

    @property
    def n_intervals(self):
        return len(self.intervals)


def _members(snapshots, lo, hi, global_lo):
    """Snapshot columns with mu_u in (lo, hi]; the global left endpoint
    belongs to the first interval."""
    out = []
    for j, mu in enumerate(snapshots.params):
        v = mu.mu_u
        if (lo < v <= hi) or (lo == global_lo and v <= lo):
            out.append(j)
    return np.asarray(out, dtype=int)


def _criterion_value(eigs, N, relative):
    """N-th eigenvalue (1-based) of the local state spectrum, optionally
    normalized by the largest; None when fewer than N snapshots exist."""
    if len(eigs) < N:
        return None
    lam = eigs[N - 1]
    return float(lam / eigs[0]) if relative else float(lam)


def lpod_offline(hf_model, snapshots, interval, N, tau, max_splits,
                 control_mode="exact", deim_model=None, relative_tau=True):
    """Adaptive halving of the mu_u interval with one local model each.

    Every final interval either meets the eigenvalue criterion or is
    flagged budget-exhausted; a split that would leave a child without
    snapshots is aborted and the parent kept whole.  The default
    criterion compares the relative eigenvalue lambda_N/lambda_1 to tau;
    relative_tau=False compares the raw eigenvalue instead.
    """
    if N < 1 or tau <= 0 or max_splits < 1:
        raise ValueError("need N >= 1, tau > 0, max_splits >= 1")
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise ValueError(f"empty interval {interval}")
    X = hf_model.parts.norm_full

    part = IntervalPartition(
        interval=(lo, hi), intervals=[], tau=tau, N=N,
        max_splits=max_splits, relative=relative_tau,
    )
    splits = 0
    worklist = [(lo, hi)]
    while worklist:
        a, b = worklist.pop(0)
        idx = _members(snapshots, a, b, lo)
        if len(idx) == 0:
            # only reachable for a degenerate global interval: splits
            # with an empty child are aborted before enqueueing
            raise ValueError(f"interval ({a}, {b}] holds no snapshots")
        local = snapshots.subset(idx)
        nloc = local.n_snapshots
        bases = (
            rom.pod(local.Y, X, min(N, nloc)),
            rom.pod(local.P, X, min(N, nloc)),
        )
        crit = _criterion_value(bases[0].eigenvalues, N, relative_tau)
        met = crit is not None and crit <= tau
        forced = crit is None  # fewer snapshots than N: splitting cannot help

        if met:
            decision = "accept"
        elif forced:
            decision = "forced-accept"
        elif splits >= max_splits:
            decision = "budget-exhausted"
        else:
            m = 0.5 * (a + b)
            left = _members(snapshots, a, m, lo)
            right = _members(snapshots, m, b, lo)
            if len(left) == 0 or len(right) == 0:
                logger.warning(
                    "split of (%g, %g] aborted: empty child; keeping parent", a, b
                )
                decision = "split-aborted"
            else:
                splits += 1
                worklist.extend([(a, m), (m, b)])
                part.split_log.append(
                    {"interval": [a, b], "criterion": crit, "decision": "split"}
                )
                continue

        exhausted = decision == "budget-exhausted"
        part.split_log.append(
            {"interval": [a, b], "criterion": crit, "decision": decision}
        )
        if exhausted:
            logger.warning(
                "interval (%g, %g] kept with criterion %.3e > tau=%.3e "
                "(split budget %d exhausted)", a, b, crit, tau, max_splits
            )
        model = rom.build_reduced_model(
            hf_model, local, min(N, nloc),
            control_mode=control_mode, deim_model=deim_model,
            strategy="lpod-local", bases=bases,
        )
        part.intervals.append(
            LocalInterval(
                lo=a, hi=b, model=model,
                eigenvalues_y=bases[0].eigenvalues,
                eigenvalues_p=bases[1].eigenvalues,
                n_snapshots=nloc,
                criterion_met=met or forced,
                budget_exhausted=exhausted,
            )
        )

    part.intervals.sort(key=lambda iv: iv.lo)
    return part


def dispatch(mu_u, partition):
    """Index of the interval owning mu_u; out-of-range values clamp to
    the nearest interval (logged)."""
    ivs = partition.intervals
    lo, hi = partition.interval
    if mu_u > hi:
        logger.warning("mu_u=%g above %s; clamped to the last interval", mu_u, hi)
        return len(ivs) - 1
    if mu_u < lo:
        logger.warning("mu_u=%g below %s; clamped to the first interval", mu_u, lo)
        return 0
    for i, iv in enumerate(ivs):
        if mu_u <= iv.hi:
            return i
    return len(ivs) - 1


def solve_local(partition, mu):
    """Online solve through the owning local model."""
    i = dispatch(mu.mu_u, partition)
    return rom.project_and_solve(partition.intervals[i].model, mu)


def averaged_eigenvalues(partition, n_values=None):
    """Arithmetic mean of the local spectra per mode index; local
    spectra shorter than the requested length are zero-padded."""
    if n_values is None:
        n_values = max(len(iv.eigenvalues_y) for iv in partition.intervals)

    def pad(arr):
        out = np.zeros(n_values)
        m = min(len(arr), n_values)
        out[:m] = arr[:m]
        return out

    ys = np.mean([pad(iv.eigenvalues_y) for iv in partition.intervals], axis=0)
    ps = np.mean([pad(iv.eigenvalues_p) for iv in partition.intervals], axis=0)
    return ys, ps


def save_partition(partition, outdir, mesh=None):
    """partition.json plus one model directory per interval."""
    os.makedirs(outdir, exist_ok=True)
    doc = {
        "interval": list(partition.interval),
        "tau": partition.tau,
        "N": partition.N,
        "max_splits": partition.max_splits,
        "relative": partition.relative,
        "split_log": partition.split_log,
        "intervals": [
            {
                "lo": iv.lo,
                "hi": iv.hi,
                "n_snapshots": iv.n_snapshots,
                "criterion_met": iv.criterion_met,
                "budget_exhausted": iv.budget_exhausted,
                "eigenvalues_y": iv.eigenvalues_y.tolist(),
                "eigenvalues_p": iv.eigenvalues_p.tolist(),
                "dir": f"interval_{i:02d}",
            }
            for i, iv in enumerate(partition.intervals)
        ],
    }
    with open(os.path.join(outdir, "partition.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    for i, iv in enumerate(partition.intervals):
        rom.save_model(iv.model, os.path.join(outdir, f"interval_{i:02d}"), mesh=mesh)


def load_partition(outdir):
    with open(os.path.join(outdir, "partition.json"), encoding="utf-8") as fh:
        doc = json.load(fh)
    intervals = []
    for item in doc["intervals"]:
        model = rom.load_model(os.path.join(outdir, item["dir"]))
        intervals.append(
            LocalInterval(
                lo=item["lo"],
                hi=item["hi"],
                model=model,
                eigenvalues_y=np.asarray(item["eigenvalues_y"]),
                eigenvalues_p=np.asarray(item["eigenvalues_p"]),
                n_snapshots=item["n_snapshots"],
                criterion_met=item["criterion_met"],
                budget_exhausted=item["budget_exhausted"],
            )
        )
    return IntervalPartition(
        interval=tuple(doc["interval"]),
        intervals=intervals,
        split_log=doc["split_log"],
        tau=doc["tau"],
        N=doc["N"],
        max_splits=doc["max_splits"],
        relative=doc["relative"],
    )
