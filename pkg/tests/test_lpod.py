import numpy as np
import pytest

from vbocp import ParameterPoint
from vbocp.lpod import (
    IntervalPartition,
    LocalInterval,
    averaged_eigenvalues,
    dispatch,
    load_partition,
    lpod_offline,
    save_partition,
    solve_local,
)
from vbocp.rom import SnapshotSet, collect_snapshots, project_and_solve

from conftest import random_params


def synthetic_snapshots(hf, mu_us, mode_count, seed=0, split_at=None):
    """Snapshot set whose columns combine a few fixed random directions;
    with split_at set, the two sides of the interval use disjoint
    direction sets, so halving reduces the local rank."""
    rng = np.random.default_rng(seed)
    nv = hf.mesh.n_vertices
    free = hf.parts.free
    def directions():
        D = np.zeros((nv, mode_count))
        D[free] = rng.standard_normal((len(free), mode_count))
        return D
    left, right = directions(), directions()
    params, cols = [], []
    for mu_u in mu_us:
        params.append(ParameterPoint(10.0, 2.0, mu_u))
        basis = left if (split_at is None or mu_u <= split_at) else right
        cols.append(basis @ rng.standard_normal(mode_count))
    Y = np.column_stack(cols)
    return SnapshotSet(params=tuple(params), Y=Y, P=Y.copy())


def test_rank_deficient_data_never_splits(test1_hf):
    mu_us = np.linspace(0.05, 0.95, 12)
    snaps = synthetic_snapshots(test1_hf, mu_us, mode_count=2)
    part = lpod_offline(test1_hf, snaps, (0.0, 1.0), 3, 1e-3, 5,
                        control_mode="exact")
    assert part.n_intervals == 1
    assert part.intervals[0].criterion_met
    assert part.split_log[-1]["decision"] == "accept"


def test_one_split_then_accept(test1_hf):
    mu_us = np.linspace(0.05, 0.95, 16)
    snaps = synthetic_snapshots(test1_hf, mu_us, mode_count=2, split_at=0.5)
    # rank 4 on the full interval, rank 2 on each half
    part = lpod_offline(test1_hf, snaps, (0.0, 1.0), 3, 1e-3, 5,
                        control_mode="exact")
    assert part.n_intervals == 2
    bounds = [(iv.lo, iv.hi) for iv in part.intervals]
    assert bounds == [(0.0, 0.5), (0.5, 1.0)]
    assert all(iv.criterion_met for iv in part.intervals)


def test_budget_exhaustion(test1_hf):
    rng = np.random.default_rng(3)
    mu_us = np.sort(rng.uniform(0.05, 0.95, 16))
    nv = test1_hf.mesh.n_vertices
    free = test1_hf.parts.free
    Y = np.zeros((nv, 16))
    Y[free] = rng.standard_normal((len(free), 16))
    snaps = SnapshotSet(
        params=tuple(ParameterPoint(10.0, 2.0, v) for v in mu_us),
        Y=Y, P=Y.copy(),
    )
    part = lpod_offline(test1_hf, snaps, (0.0, 1.0), 3, 1e-30, 1,
                        control_mode="exact")
    assert part.n_intervals == 2  # one split, then the budget is gone
    assert any(iv.budget_exhausted for iv in part.intervals)
    assert any(e["decision"] == "budget-exhausted" for e in part.split_log)


def test_empty_child_aborts_split(test1_hf):
    rng = np.random.default_rng(4)
    mu_us = np.sort(rng.uniform(0.05, 0.45, 10))  # all left of the midpoint
    nv = test1_hf.mesh.n_vertices
    free = test1_hf.parts.free
    Y = np.zeros((nv, 10))
    Y[free] = rng.standard_normal((len(free), 10))
    snaps = SnapshotSet(
        params=tuple(ParameterPoint(10.0, 2.0, v) for v in mu_us),
        Y=Y, P=Y.copy(),
    )
    part = lpod_offline(test1_hf, snaps, (0.0, 1.0), 3, 1e-30, 5,
                        control_mode="exact")
    # splitting (0, 1] would empty the right child, and afterwards
    # halving (0, 0.5] at 0.25 keeps failing the same way down the
    # left spine until an empty child stops it
    assert any(e["decision"] == "split-aborted" for e in part.split_log)
    assert part.intervals[-1].hi == 1.0


def test_fewer_snapshots_than_modes_accepts(test1_hf):
    snaps = collect_snapshots(test1_hf, random_params(4, seed=12))
    part = lpod_offline(test1_hf, snaps, (0.0, 1.0), 10, 1e-30, 3,
                        control_mode="exact")
    assert part.n_intervals == 1
    assert part.split_log[-1]["decision"] == "forced-accept"


def _dummy_partition(bounds):
    ivs = [
        LocalInterval(lo=a, hi=b, model=None, eigenvalues_y=np.zeros(1),
                      eigenvalues_p=np.zeros(1), n_snapshots=0,
                      criterion_met=True)
        for a, b in bounds
    ]
    return IntervalPartition(interval=(bounds[0][0], bounds[-1][1]), intervals=ivs)


def test_dispatch_half_open_convention():
    part = _dummy_partition([(0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)])
    assert dispatch(0.25, part) == 0
    assert dispatch(0.26, part) == 1
    assert dispatch(0.999, part) == 3
    assert dispatch(0.0, part) == 0  # global left endpoint
    assert dispatch(-0.5, part) == 0  # clamped
    assert dispatch(1.5, part) == 3  # clamped


def test_averaged_eigenvalues_arithmetic():
    part = _dummy_partition([(0.0, 0.5), (0.5, 1.0)])
    part.intervals[0].eigenvalues_y = np.array([4.0, 1.0])
    part.intervals[0].eigenvalues_p = np.array([2.0])
    part.intervals[1].eigenvalues_y = np.array([2.0, 1.0])
    part.intervals[1].eigenvalues_p = np.array([1.0, 3.0])
    ys, ps = averaged_eigenvalues(part)
    assert np.allclose(ys, [3.0, 1.0])
    assert np.allclose(ps, [1.5, 1.5])  # shorter spectrum zero-padded
    single = _dummy_partition([(0.0, 1.0)])
    single.intervals[0].eigenvalues_y = np.array([5.0, 2.0])
    single.intervals[0].eigenvalues_p = np.array([1.0, 0.5])
    ys, ps = averaged_eigenvalues(single)
    assert np.allclose(ys, [5.0, 2.0]) and np.allclose(ps, [1.0, 0.5])


def test_offline_online_and_persistence(test1_hf, test1_snapshots, tmp_path):
    part = lpod_offline(test1_hf, test1_snapshots, (0.0, 1.0), 4, 1e-12, 4,
                        control_mode="exact")
    mu = ParameterPoint(12.0, 1.8, 0.62)
    sol = solve_local(part, mu)
    assert np.all(np.isfinite(sol.y))
    save_partition(part, tmp_path / "p", mesh=test1_hf.mesh)
    loaded = load_partition(tmp_path / "p")
    assert loaded.n_intervals == part.n_intervals
    sol2 = solve_local(loaded, mu)
    assert np.allclose(sol.y, sol2.y, atol=1e-12)
    assert [e["decision"] for e in loaded.split_log] == [
        e["decision"] for e in part.split_log
    ]


def test_input_validation(test1_hf, test1_snapshots):
    with pytest.raises(ValueError):
        lpod_offline(test1_hf, test1_snapshots, (0.0, 1.0), 0, 1e-3, 5)
    with pytest.raises(ValueError):
        lpod_offline(test1_hf, test1_snapshots, (1.0, 0.0), 3, 1e-3, 5)
