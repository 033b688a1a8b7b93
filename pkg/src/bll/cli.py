"""Command-line entry point.

Subcommands: verify (formula suite), gen-cloud, solve, limit, converge,
report.  Exit codes: 0 success, 1 check failure, 2 configuration error,
3 solver error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bll",
        description="Verification laboratory for the volumetric-drag "
                    "(Brinkman) limit of flow around sphere clouds.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run the formula-verification suite")
    v.add_argument("--fault-delta1", type=float, default=0.0,
                   help="relative perturbation of delta1 (sensitivity mode)")
    v.add_argument("--json", action="store_true", help="machine output")

    g = sub.add_parser("gen-cloud", help="generate a particle cloud")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--rho", default="uniform")
    g.add_argument("--j", default="uniform-z")
    g.add_argument("--side", type=float, default=2.5)
    g.add_argument("--format", choices=("json", "text"), default="json")

    s = sub.add_parser("solve", help="solve the flow around a cloud")
    s.add_argument("--cloud", required=True)
    s.add_argument("--method", choices=("mor", "grid"), default="mor")
    s.add_argument("--g", default="down-z")
    s.add_argument("--h", type=float, default=2.5 / 20,
                   help="grid spacing (background or perforated solve)")
    s.add_argument("--out", default=None,
                   help="output basename (MoR JSON dump or field snapshot)")

    li = sub.add_parser("limit", help="solve the volumetric-drag limit problem")
    li.add_argument("--rho", default="uniform")
    li.add_argument("--j", default="uniform-z")
    li.add_argument("--g", default="down-z")
    li.add_argument("--nu", type=float, default=1.0)
    li.add_argument("--advection", action="store_true")
    li.add_argument("--h", type=float, default=2.5 / 20)
    li.add_argument("--side", type=float, default=2.5)
    li.add_argument("--out", default=None, help="snapshot basename")

    c = sub.add_parser("converge", help="run the N-sweep experiment")
    c.add_argument("--config", required=True, help="JSON config file")

    r = sub.add_parser("report", help="re-emit a stored report")
    r.add_argument("--in", dest="infile", required=True,
                   help="path to report.json")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


def _out_root(path):
    root = os.environ.get("BLL_OUT", "")
    if root and path and not os.path.isabs(path):
        os.makedirs(root, exist_ok=True)
        return os.path.join(root, path)
    return path


def cmd_verify(args) -> int:
    from .harness import run_formula_suite
    report = run_formula_suite(fault_delta1=args.fault_delta1)
    if args.json:
        print(json.dumps(report, indent=1))
    else:
        for c in report["checks"]:
            mark = "PASS" if c["ok"] else "FAIL"
            print(f"[{mark}] {c['name']}: {c['value']:.3e} "
                  f"(tolerance {c['tolerance']:.3e})")
        print("suite:", "PASS" if report["ok"] else "FAIL")
    return EXIT_OK if report["ok"] else EXIT_CHECK


def cmd_gen_cloud(args) -> int:
    from .cloud import Box, generate_cloud, save_cloud, PackingError
    from .presets import moment_preset
    half = args.side / 2.0
    box = Box((-half,) * 3, (args.side,) * 3)
    try:
        mf = moment_preset(args.rho, args.j, box)
    except KeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cloud = generate_cloud(args.n, box, mf, seed=args.seed)
    except PackingError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    save_cloud(cloud, _out_root(args.out), fmt=args.format)
    print(f"wrote {args.out} (n={cloud.n}, eps={cloud.eps:g})")
    return EXIT_OK


def cmd_solve(args) -> int:
    from . import grid, reflections
    from .cloud import load_cloud, CloudError
    from .presets import g_preset
    try:
        cloud = load_cloud(args.cloud)
        g_field = g_preset(args.g, cloud.domain)
    except (CloudError, KeyError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.method == "mor":
            cfg = grid.SolverConfig(h=args.h)
            bg = grid.solve_stokes(cloud.domain, g_field, cfg)
            sol = reflections.solve_mor(cloud, bg.interpolate)
            print(f"reflections={sol.reflections} mismatch={sol.mismatch:.3e}")
            if args.out:
                reflections.save_solution(sol, _out_root(args.out),
                                          cloud_path=args.cloud)
        else:
            cfg = grid.SolverConfig(h=min(args.h, cloud.eps / 4.0))
            side = cloud.domain.sides[0]
            cfg.h = side / int(np.ceil(side / cfg.h))
            field = grid.solve_perforated(cloud, g_field, cfg)
            print(f"divergence={field.meta['div_max']:.3e} "
                  f"mismatch={field.meta['surface_mismatch']:.3e}")
            if args.out:
                grid.save_snapshot(field, _out_root(args.out))
    except (grid.SolverError, reflections.ReflectionError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_limit(args) -> int:
    from . import grid
    from .cloud import Box
    from .presets import moment_preset, g_preset
    half = args.side / 2.0
    box = Box((-half,) * 3, (args.side,) * 3)
    try:
        mf = moment_preset(args.rho, args.j, box)
        g_field = g_preset(args.g, box)
    except KeyError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    problem = grid.BrinkmanProblem(domain=box, g=g_field, rho=mf.rho,
                                   j=mf.j, nu=args.nu,
                                   advection=args.advection)
    try:
        field = grid.solve_brinkman(problem, grid.SolverConfig(h=args.h))
    except grid.SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"l2={field.l2_norm():.6g} divergence={field.meta['div_max']:.3e}")
    if args.out:
        grid.save_snapshot(field, _out_root(args.out))
    return EXIT_OK


def cmd_converge(args) -> int:
    from .harness import ExperimentConfig, run_convergence, emit_report
    try:
        with open(args.config) as fh:
            data = json.load(fh)
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        bad = set(data) - known
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        for key in ("n_list", "seeds", "corner", "sides"):
            if key in data:
                data[key] = tuple(data[key])
        cfg = ExperimentConfig(**data)
        cfg.validate()
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_convergence(cfg)
    files = emit_report(report)
    for f in files:
        print("wrote", f)
    failed = [r for r in report.rows if r["status"] != "ok"]
    if failed:
        for r in failed:
            print(f"row n={r['n']} seed={r['seed']} failed: {r['error']}",
                  file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_report(args) -> int:
    from .harness import load_report, emit_report
    try:
        report = load_report(args.infile)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    files = emit_report(report, formats=(args.format,))
    for f in files:
        print("wrote", f)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "verify": cmd_verify,
        "gen-cloud": cmd_gen_cloud,
        "solve": cmd_solve,
        "limit": cmd_limit,
        "converge": cmd_converge,
        "report": cmd_report,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
