"""Command-line entry point: ``least-energy <command> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import diagnostics as dg
from . import experiments as ex
from . import limit, radial
from .energy import (ProblemParams, continue_in_p, default_schedule, graded_solve,
                     write_field)
from .mesh import DomainSpec, build_mesh, write_mesh


def parse_domain(text):
    """``disk:R``, ``ellipse:a,b``, ``square:s``, ``rectangle:w,h`` or a JSON object."""
    text = text.strip()
    if text.startswith("{"):
        return DomainSpec.from_dict(json.loads(text))
    kind, _, rest = text.partition(":")
    nums = [float(x) for x in rest.split(",")] if rest else []
    if kind == "disk":
        return DomainSpec.disk(*(nums or [1.0]))
    if kind == "ellipse":
        return DomainSpec.ellipse(*nums)
    if kind == "square":
        s = nums[0] if nums else 1.0
        return DomainSpec.rectangle(s, s)
    if kind == "rectangle":
        return DomainSpec.rectangle(*nums)
    raise argparse.ArgumentTypeError(f"unknown domain {text!r}")


def _solve(args):
    dom = args.domain
    params = ProblemParams(args.lam, args.p)
    graded = args.graded if args.graded is not None else args.p > 10
    if graded:
        reports, mesh = graded_solve(dom, params, base_h=args.h)
    else:
        mesh = build_mesh(dom, args.h)
        reports = continue_in_p(params, mesh, default_schedule(args.p))
    return reports, mesh


def _out(args):
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_solve(args):
    reports, mesh = _solve(args)
    out = _out(args)
    rows = [{"p": r.p, "lambda": r.lam, "c_squared": r.c_squared, "sup_norm": r.sup_norm,
             "pde_residual": r.pde_residual, "max_x": r.max_point[0], "max_y": r.max_point[1],
             "iterations": r.iterations, "newton_iterations": r.newton_iterations}
            for r in reports]
    ex.write_table(rows, out / "solve.csv")
    write_field(reports[-1], out / "solution.field")
    write_mesh(mesh, out / "mesh.txt")
    last = reports[-1]
    print(f"p={last.p:g} lambda={last.lam:g} vertices={mesh.n_vertices} "
          f"c^2={last.c_squared:.10g} sup={last.sup_norm:.10g} residual={last.pde_residual:.2e}")
    return 0


def cmd_sweep(args):
    cfg = ex.ExperimentConfig.load(args.config)
    out = _out(args)
    rows = []
    for dom in cfg.domains:
        for lam in cfg.lambda_values:
            for p in cfg.p_schedule:
                rep = ex.cached_graded_solve(dom, lam, p, cfg.mesh_h, cfg.grading_params)
                row = dg.bounds_report([rep])[0]
                rows.append({"domain": ex.domain_label(dom), **row,
                             "pde_residual": rep.pde_residual})
                print(f"{ex.domain_label(dom)} lambda={lam:g} p={p:g} sup={rep.sup_norm:.6g}")
    ex.write_table(rows, out / "sweep.csv")
    return 0


def cmd_profile(args):
    out = _out(args)
    if args.radial:
        sol = radial.shoot(args.p, args.lam)
        cmp = radial.oracle_profile(sol)
    else:
        reports, _ = _solve(args)
        cmp = dg.rescaled_profile(reports[-1])
    ex.write_table(list(cmp.rows()), out / "profile.csv")
    print(f"sup discrepancy {cmp.sup_discrepancy:.6g} resolved={cmp.window_resolved}")
    return 0


def cmd_spectrum(args):
    out = _out(args)
    if args.radial:
        sol = radial.shoot(args.p, args.lam)
        reps = radial.radial_linearized_modes(sol)
        rows = [{"k": r.mode, "multiplicity": r.multiplicity,
                 "eigenvalues": " ".join(f"{x:.10g}" for x in r.eigenvalues)} for r in reps]
        print(f"morse index {radial.morse_index(reps)}")
    else:
        reports, _ = _solve(args)
        sp = dg.linearized_spectrum(reports[-1], k=args.k)
        rows = [{"index": i, "eigenvalue": v} for i, v in enumerate(sp.eigenvalues)]
        print(f"negative count {sp.negative_count}; min |eigenvalue| "
              f"{sp.min_abs_eigenvalue:.6g}; exterior {sp.exterior_eigenvalue:.6g}")
    ex.write_table(rows, out / "spectrum.csv")
    return 0


def cmd_robin(args):
    out = _out(args)
    mesh = build_mesh(args.domain, args.h)
    rf = limit.robin_function(mesh)
    rf.write_csv(out / "robin.csv")
    print(f"critical point ({rf.critical_point[0]:.6g}, {rf.critical_point[1]:.6g}) "
          f"R={rf.critical_value:.6g} |grad R|={rf.gradient_residual:.2e}")
    return 0


def cmd_moser(args):
    b = limit.moser_bound(args.R, args.d, args.p, args.lam)
    print(json.dumps(b._asdict(), indent=2))
    return 0


def cmd_limit_kernel(args):
    out = _out(args)
    rows = []
    for k in range(args.k_max + 1):
        s = limit.mode_shoot(k, args.r_max)
        rows.append({"k": k, "verdict": s.verdict, "near_max": s.near_max, "far_max": s.far_max})
        s.trace.write_csv(out / f"mode_k{k}.csv")
    for k in (0, 1):
        mode = limit.RadialMode.sample(k, lambda r, k=k: limit.kernel_functions(r)[k])
        print(f"residual zeta{k}: {limit.mode_operator_residual(mode):.3e}")
    ex.write_table(rows, out / "kernel.csv")
    for r in rows:
        print(f"k={r['k']} {r['verdict']}")
    return 0


def cmd_oracle_compare(args):
    cfg = ex.ExperimentConfig.from_dict({
        "domain": {"kind": "disk", "radius": 1.0}, "lambda_values": [args.lam],
        "p_schedule": args.p, "mesh_h": args.h, "checks": ["oracle_compare"],
        "options": {"oracle_compare": {"lambda": args.lam}}})
    status, summary = ex.run(cfg, args.out, jobs=args.jobs)
    for c in summary["claims"]:
        print(f"{c['status']:<10} {c['claim']} {c['value']}")
    return status


def cmd_claims(args):
    cfg = ex.ExperimentConfig.load(args.config or ex.shipped_claims_path())
    status, summary = ex.run(cfg, args.out or cfg.output_dir, jobs=args.jobs)
    for c in summary["claims"]:
        print(f"{c['status']:<10} {c['claim']} {c['value']}")
    return status


def cmd_compare(args):
    rows, flipped = ex.compare(args.run_a, args.run_b)
    if not rows:
        print("no differences")
    for r in rows:
        mark = " FLIPPED" if r["flipped"] else ""
        print(f"{r['claim']}: {r['status_a']} -> {r['status_b']} "
              f"value {r['value_a']} -> {r['value_b']} delta {r['delta']}{mark}")
    return 1 if flipped else 0


def build_parser():
    ap = argparse.ArgumentParser(prog="least-energy",
                                 description="Least-energy solutions for large exponents.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=False):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if config:
            p.add_argument("--config", default=None, help="experiment config (JSON)")
        return p

    def problem(p):
        p.add_argument("--domain", type=parse_domain, default=DomainSpec.disk(1.0))
        p.add_argument("--lam", type=float, default=0.0)
        p.add_argument("--p", type=float, default=3.0)
        p.add_argument("--h", type=float, default=0.03, help="mesh size (outer size if graded)")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--graded", dest="graded", action="store_true", default=None)
        g.add_argument("--uniform", dest="graded", action="store_false")

    p = common(sub.add_parser("solve", help="solve one (lambda, p) problem"))
    problem(p)
    p.set_defaults(func=cmd_solve)

    p = common(sub.add_parser("sweep", help="solve every cell of a config"))
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("profile", help="rescaled profile against the bubble"))
    problem(p)
    p.add_argument("--radial", action="store_true", help="use the radial oracle on the unit disk")
    p.set_defaults(func=cmd_profile)

    p = common(sub.add_parser("spectrum", help="linearized eigenvalues"))
    problem(p)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--radial", action="store_true", help="radial modes on the unit disk")
    p.set_defaults(func=cmd_spectrum)

    p = common(sub.add_parser("robin", help="Robin function and its critical point"))
    p.add_argument("--domain", type=parse_domain, default=DomainSpec.disk(1.0))
    p.add_argument("--h", type=float, default=0.03)
    p.set_defaults(func=cmd_robin)

    p = common(sub.add_parser("moser", help="Moser function quotient bound"))
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--d", type=float, default=None)
    p.add_argument("--p", type=float, default=40.0)
    p.add_argument("--lam", type=float, default=0.0)
    p.set_defaults(func=cmd_moser)

    p = common(sub.add_parser("limit-kernel", help="kernel modes of the limit operator"))
    p.add_argument("--k-max", type=int, default=4)
    p.add_argument("--r-max", type=float, default=50.0)
    p.set_defaults(func=cmd_limit_kernel)

    p = common(sub.add_parser("oracle-compare", help="2D solver against the radial oracle"))
    p.add_argument("--p", type=float, nargs="+", default=[3.0, 10.0])
    p.add_argument("--h", type=float, default=0.02)
    p.add_argument("--lam", type=float, default=0.0)
    p.set_defaults(func=cmd_oracle_compare)

    p = sub.add_parser("claims", help="run the claims matrix")
    p.add_argument("--config", default=None, help="defaults to the shipped claims.json")
    p.add_argument("--out", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_claims)

    p = sub.add_parser("compare", help="diff two run summaries")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ex.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
