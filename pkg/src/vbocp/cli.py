"""Command-line entry point: mesh | hf-solve | offline | online | bench | stability."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import bench as benchmod
from . import deim as deimmod
from . import fem, geor, lpod, rom, stability
from . import mesh as meshmod
from .ocp import HighFidelityModel, ParameterPoint

logger = logging.getLogger(__name__)


def _load_config(args):
    if args.config:
        cfg = benchmod.ExperimentConfig.from_json(args.config)
    else:
        cfg = benchmod.ExperimentConfig()
    if getattr(args, "paper_scale", False):
        cfg = benchmod.paper_scale_config(cfg)
    return cfg


def _parse_mu(text, alpha):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise SystemExit("--mu expects 'mu1,mu2,mu_u'")
    return ParameterPoint(mu1=parts[0], mu2=parts[1], mu_u=parts[2], alpha=alpha)


def cmd_mesh(args):
    cfg = _load_config(args)
    mesh = benchmod.build_mesh(cfg)
    meshmod.save_mesh(mesh, args.out)
    print(f"wrote {args.out}: {mesh.n_vertices} vertices, "
          f"{mesh.n_triangles} triangles, {len(mesh.boundary_edges)} boundary edges")


def cmd_hf_solve(args):
    cfg = _load_config(args)
    mesh = benchmod.build_mesh(cfg)
    mu = _parse_mu(args.mu, cfg.alpha)
    model = HighFidelityModel(mesh, g=cfg.g)
    ops = model.operator_set(mu)
    from .ocp import solve_from_ops

    sol = solve_from_ops(ops, mu)
    outdir = args.out_dir
    os.makedirs(outdir, exist_ok=True)
    np.savetxt(os.path.join(outdir, "y.vec"), sol.y)
    np.savetxt(os.path.join(outdir, "p.vec"), sol.p)
    np.savetxt(os.path.join(outdir, "u.vec"), sol.u_full(mesh.n_vertices))
    if args.dump_operators:
        opsdir = os.path.join(outdir, args.dump_operators)
        os.makedirs(opsdir, exist_ok=True)
        fem.export_coo(ops.D_a, os.path.join(opsdir, "D_a.coo"))
        fem.export_coo(ops.M_o, os.path.join(opsdir, "M_o.coo"))
        fem.export_coo(ops.C, os.path.join(opsdir, "C.coo"))
        fem.export_coo(ops.X, os.path.join(opsdir, "X.coo"))
    print(f"J = {sol.cost!r}")
    print(f"residual = {sol.residual:.3e}")


def cmd_offline(args):
    cfg = _load_config(args)
    mesh = benchmod.build_mesh(cfg)
    hf = HighFidelityModel(mesh, g=cfg.g)
    os.makedirs(args.out_dir, exist_ok=True)
    n_big = max(cfg.n_list)

    deim_model = None
    if cfg.control_mode == "deim" and (
        "pod" in cfg.strategies or "lpod" in cfg.strategies
    ):
        mu_us = [mu.mu_u for mu in benchmod.sample_params(cfg, "deim")]
        deim_model = deimmod.build_deim_model(mesh, mu_us, cfg.deim_tol)
        deimmod.save_deim(deim_model, args.out_dir, tol=cfg.deim_tol)

    snapshots = None
    if "pod" in cfg.strategies or "lpod" in cfg.strategies:
        snapshots = rom.collect_snapshots(
            hf, benchmod.sample_params(cfg, "train")
        )

    for strategy in cfg.strategies:
        sdir = os.path.join(args.out_dir, strategy)
        if strategy == "pod":
            model = rom.build_reduced_model(
                hf, snapshots, n_big, control_mode=cfg.control_mode,
                deim_model=deim_model,
            )
            rom.save_model(model, sdir, mesh=mesh,
                           extra_meta={"seed": cfg.seed})
        elif strategy == "lpod":
            part = lpod.lpod_offline(
                hf, snapshots, cfg.mu_u_range, n_big, cfg.tau, cfg.max_splits,
                control_mode=cfg.control_mode, deim_model=deim_model,
                relative_tau=not cfg.tau_absolute,
            )
            lpod.save_partition(part, sdir, mesh=mesh)
        elif strategy == "geor":
            gm, reduced = geor.geor_offline(
                mesh, benchmod.sample_params(cfg, "geor"), n_big, g=cfg.g
            )
            rom.save_model(reduced, sdir, mesh=mesh,
                           extra_meta={"seed": cfg.seed})
            with open(os.path.join(sdir, "theta.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(geor.theta_document(reduced), fh, indent=2,
                          sort_keys=True)
        print(f"offline [{strategy}] -> {sdir}")


def cmd_online(args):
    cfg = _load_config(args)
    mu = _parse_mu(args.mu, cfg.alpha)
    if os.path.exists(os.path.join(args.model_dir, "partition.json")):
        part = lpod.load_partition(args.model_dir)
        sol = lpod.solve_local(part, mu)
        idx = lpod.dispatch(mu.mu_u, part)
        print(f"dispatched to interval {idx}: "
              f"({part.intervals[idx].lo}, {part.intervals[idx].hi}]")
    else:
        model = rom.load_model(args.model_dir)
        sol = rom.project_and_solve(model, mu)
    os.makedirs(args.out_dir, exist_ok=True)
    np.savetxt(os.path.join(args.out_dir, "y.vec"), sol.y)
    np.savetxt(os.path.join(args.out_dir, "p.vec"), sol.p)
    print(f"reduced coordinates: {len(sol.y_coeff)} per variable")


def cmd_bench(args):
    cfg = _load_config(args)
    report = benchmod.run_experiment(cfg, outdir=args.out_dir)
    for strategy, sdata in sorted(report["strategies"].items()):
        for N, err in sorted(sdata["errors"].items(), key=lambda kv: int(kv[0])):
            print(f"{strategy:6s} N={N:>4s} E_y={err['E_y']:.3e} "
                  f"E_p={err['E_p']:.3e}")
        print(f"{strategy:6s} speed-up ~ {sdata['timing']['speedup']:.1f}x")
    print(f"outputs in {args.out_dir}")


def cmd_stability(args):
    cfg = _load_config(args)
    mesh = benchmod.build_mesh(cfg)
    hf = HighFidelityModel(mesh, g=cfg.g)
    rng = np.random.default_rng(args.seed)
    rows = []
    for _ in range(args.samples):
        mu = ParameterPoint(
            mu1=rng.uniform(*cfg.mu1_range),
            mu2=rng.uniform(*cfg.mu2_range),
            mu_u=benchmod._draw_open(rng, *cfg.mu_u_range),
            alpha=cfg.alpha,
        )
        rows.append(stability.stability_row(hf, mu))

    fields = ["mu1", "mu2", "muu", "gamma_a", "gamma_T", "C_omega",
              "beta_lb", "beta_h", "ok"]
    out = csv.writer(open(args.out, "w", newline="", encoding="utf-8")
                     if args.out else sys.stdout)
    out.writerow(fields)
    for row in rows:
        out.writerow([row[f] for f in fields])
    if args.out:
        print(f"wrote {args.out}")
    if not all(r["ok"] for r in rows):
        raise SystemExit("bound violated or not applicable for some samples")


def build_parser():
    p = argparse.ArgumentParser(
        prog="vbocp",
        description="Reduced-order pipelines for boundary optimal control "
                    "with a moving control region",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("mesh", help="generate a mesh and write the text format")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_mesh)

    sp = sub.add_parser("hf-solve", help="one high-fidelity solve")
    sp.add_argument("--config", default=None)
    sp.add_argument("--mu", required=True, help="mu1,mu2,mu_u")
    sp.add_argument("--out-dir", default=".")
    sp.add_argument("--dump-operators", default=None, metavar="SUBDIR",
                    help="export assembled operators as row/col/value text")
    sp.set_defaults(func=cmd_hf_solve)

    sp = sub.add_parser("offline", help="build and persist reduced models")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--paper-scale", action="store_true")
    sp.set_defaults(func=cmd_offline)

    sp = sub.add_parser("online", help="solve a persisted reduced model")
    sp.add_argument("--config", default=None)
    sp.add_argument("--model-dir", required=True)
    sp.add_argument("--mu", required=True)
    sp.add_argument("--out-dir", default=".")
    sp.set_defaults(func=cmd_online)

    sp = sub.add_parser("bench", help="full benchmark protocol")
    sp.add_argument("--config", default=None)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--paper-scale", action="store_true")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("stability", help="inf-sup bound versus direct computation")
    sp.add_argument("--config", default=None)
    sp.add_argument("--samples", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_stability)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
