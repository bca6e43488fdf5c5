"""Experiment harness: configs, solve cells, checks and the claims summary.

A run expands the enabled checks into independent cells (2D graded solves,
uniform solves, radial oracle solves, Robin functions), runs the cells
(optionally in worker processes), then lets every check turn cell results
into CSV tables and pass/fail claims. Outputs never contain timings, so two
runs of the same config produce byte-identical CSVs; timings go to
``timings.json``.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import limit, radial
from .energy import (ProblemParams, SolveReport, Field, continue_in_p, default_schedule,
                     graded_solve, minimize, read_field, write_field)
from .mesh import DomainSpec, GradingSpec, build_mesh, graded_mesh

CACHE_ENV = "LEAST_ENERGY_CACHE"

CHECKS = ("bounds", "profile", "star", "spectrum", "robin", "moser", "limit_kernel",
          "oracle_compare")

TOLERANCES = {
    "oracle_rel": 0.01,
    "oracle_order": 1.7,
    "amp_low": 1.0,
    "amp_high": 2.5,
    "amp_pow_min": 1e10,
    "amp_pow_p": 100.0,
    "trend_growth": 1.2,
    "trend_decay": 0.5,
    "profile_oracle_max": 0.05,
    "profile_2d_max": 0.3,
    "sobolev_max": 0.181,
    "sobolev_p_min": 50.0,
    "kernel_residual": 1e-5,
    "overlap_min": 0.99,
    "robin_hmax_factor": 2.0,
    "robin_center": 1e-3,
    "robin_value": 1e-3,
    "bubble_mass": 1e-12,
}

DEFAULT_GRADING = {"window": 4.0, "resolve": 8.0, "growth": 0.25}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def domain_label(spec: DomainSpec):
    if spec.kind == "rectangle" and spec.params[0] == spec.params[1]:
        return "square"
    return spec.kind


@dataclass(frozen=True)
class ExperimentConfig:
    domains: tuple
    lambda_values: tuple
    p_schedule: tuple
    mesh_h: float
    checks: tuple
    oracle_p: tuple = (10.0, 20.0, 50.0, 100.0, 200.0)
    grading: dict | None = None
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output_dir: str = "out"
    name: str = "run"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")

        def need(key):
            if key not in d:
                raise ConfigError(f"{key}: missing")
            return d[key]

        raw_domains = d.get("domains", [d["domain"]] if "domain" in d else None)
        if not raw_domains:
            raise ConfigError("domains: missing or empty")
        try:
            domains = tuple(DomainSpec.from_dict(x) for x in raw_domains)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"domains: {exc}") from exc
        labels = [domain_label(x) for x in domains]
        if len(set(labels)) != len(labels):
            raise ConfigError("domains: labels must be distinct")
        lams = tuple(float(x) for x in need("lambda_values"))
        if not lams or any(x < 0 for x in lams):
            raise ConfigError("lambda_values: must be a nonempty list of nonnegative numbers")
        sched = tuple(float(x) for x in need("p_schedule"))
        if not sched or any(b <= a for a, b in zip(sched, sched[1:])):
            raise ConfigError("p_schedule: must be nonempty and strictly increasing")
        if sched[0] <= 1:
            raise ConfigError("p_schedule: values must exceed 1")
        oracle_p = tuple(float(x) for x in d.get("oracle_p", cls.oracle_p))
        if any(b <= a for a, b in zip(oracle_p, oracle_p[1:])):
            raise ConfigError("oracle_p: must be strictly increasing")
        h = float(need("mesh_h"))
        if not h > 0:
            raise ConfigError("mesh_h: must be positive")
        checks = tuple(need("checks"))
        if not checks:
            raise ConfigError("checks: must be nonempty")
        unknown = [c for c in checks if c not in CHECKS]
        if unknown:
            raise ConfigError(f"checks: unknown {unknown}; choose from {list(CHECKS)}")
        tol = dict(d.get("tolerances", {}))
        bad = [k for k in tol if k not in TOLERANCES]
        if bad:
            raise ConfigError(f"tolerances: unknown keys {bad}")
        grading = d.get("grading")
        if grading is not None:
            bad = [k for k in grading if k not in DEFAULT_GRADING]
            if bad:
                raise ConfigError(f"grading: unknown keys {bad}")
            grading = {**DEFAULT_GRADING, **grading}
        options = dict(d.get("options", {}))
        bad = [k for k in options if k not in CHECKS]
        if bad:
            raise ConfigError(f"options: unknown checks {bad}")
        return cls(domains=domains, lambda_values=lams, p_schedule=sched, mesh_h=h,
                   checks=tuple(dict.fromkeys(checks)), oracle_p=oracle_p, grading=grading,
                   tolerances=tol, options=options,
                   output_dir=str(d.get("output_dir", "out")), name=str(d.get("name", "run")))

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def to_dict(self):
        return {
            "name": self.name,
            "domains": [x.to_dict() for x in self.domains],
            "lambda_values": list(self.lambda_values),
            "p_schedule": list(self.p_schedule),
            "oracle_p": list(self.oracle_p),
            "mesh_h": self.mesh_h,
            "grading": self.grading,
            "checks": list(self.checks),
            "tolerances": self.tolerances,
            "options": self.options,
            "output_dir": self.output_dir,
        }

    def tol(self, key):
        return float(self.tolerances.get(key, TOLERANCES[key]))

    def opt(self, check, key, default):
        return self.options.get(check, {}).get(key, default)

    def domain(self, label):
        for x in self.domains:
            if domain_label(x) == label:
                return x
        raise ConfigError(f"no domain labelled {label!r} (have {[domain_label(x) for x in self.domains]})")

    @property
    def grading_params(self):
        return self.grading or DEFAULT_GRADING


# ---------------------------------------------------------------------------
# solve cache


def _cache_dir():
    d = os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def _cache_key(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:24]


def _report_from_field(fld, params, meta):
    from .energy import _max_point, quotient

    idx, pt = _max_point(fld.mesh, fld.values)
    return SolveReport(params=params, solution=fld, c_squared=quotient(fld, params),
                       pde_residual=meta["pde_residual"], iterations=meta["iterations"],
                       newton_iterations=meta["newton_iterations"],
                       p_path=tuple(meta["p_path"]), max_point=pt, max_index=idx,
                       sup_norm=float(fld.values[idx]))


def cached_graded_solve(domain, lam, p, base_h, grading):
    """graded_solve with an optional on-disk cache keyed by the inputs."""
    params = ProblemParams(lam, p)
    payload = {"domain": domain.to_dict(), "lam": lam, "p": p, "h": base_h, "grading": grading}
    cache = _cache_dir()
    if cache is not None:
        key = _cache_key(payload)
        meta_path = cache / f"{key}.json"
        field_path = cache / f"{key}.field"
        if meta_path.exists() and field_path.exists():
            meta = json.loads(meta_path.read_text())
            mesh = graded_mesh(domain, base_h, GradingSpec.from_dict(meta["grading_spec"]))
            fld, _, _ = read_field(field_path, mesh)
            return _report_from_field(fld, params, meta)
    reports, mesh = graded_solve(domain, params, base_h=base_h, window=grading["window"],
                                 resolve=grading["resolve"], growth=grading["growth"])
    rep = reports[-1]
    if cache is not None:
        cache.mkdir(parents=True, exist_ok=True)
        g = mesh.size_field.gradings[0]
        meta = {"grading_spec": g.to_dict(), "pde_residual": rep.pde_residual,
                "iterations": rep.iterations, "newton_iterations": rep.newton_iterations,
                "p_path": list(rep.p_path)}
        write_field(rep, field_path)
        meta_path.write_text(json.dumps(meta, sort_keys=True))
    return rep


# ---------------------------------------------------------------------------
# cells


def _solve_metrics(rep):
    return {
        "p": rep.p, "lambda": rep.lam, "n_vertices": rep.mesh.n_vertices,
        "h_max": rep.mesh.h_max, "sup_norm": rep.sup_norm, "c_squared": rep.c_squared,
        "pde_residual": rep.pde_residual, "epsilon": rep.epsilon,
        "max_x": rep.max_point[0], "max_y": rep.max_point[1],
    }


def run_graded_cell(cfg_dict, label, lam, p, analyses, out_dir=None):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    rep = cached_graded_solve(cfg.domain(label), lam, p, cfg.mesh_h, cfg.grading_params)
    res = {"metrics": _solve_metrics(rep)}
    if "star" in analyses:
        st = dg.star_shape_test(rep)
        res["star"] = {"violations": len(st.violations), "tested": st.tested_triangles,
                       "h_ring_min": st.h_values_on_ring[0],
                       "h_ring_max": st.h_values_on_ring[1],
                       "core_radius": st.excluded_core_radius,
                       "boundary_width": st.excluded_boundary_width,
                       "violation_rows": [[t, x, y, v] for t, (x, y), v in st.violations]}
    if "spectrum" in analyses:
        sp = dg.linearized_spectrum(rep)
        res["spectrum"] = {"eigenvalues": [float(x) for x in sp.eigenvalues],
                           "negative_count": sp.negative_count,
                           "min_abs": sp.min_abs_eigenvalue, "gap": sp.gap,
                           "exterior": sp.exterior_eigenvalue}
    if "profile" in analyses:
        pc = dg.rescaled_profile(rep)
        res["profile"] = {"sup": pc.sup_discrepancy, "resolved": bool(pc.window_resolved),
                          "rows": [[r["X1"], r["X2"], r["radius"], r["phi"], r["bubble"],
                                    r["abs_diff"]] for r in pc.rows()]}
    if out_dir is not None:
        d = Path(out_dir) / "fields"
        d.mkdir(parents=True, exist_ok=True)
        write_field(rep, d / f"{label}_lam{lam:g}_p{p:g}.field")
    return res


def run_uniform_cell(cfg_dict, label, lam, p, h):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    mesh = build_mesh(cfg.domain(label), h)
    t = time.perf_counter()
    rep = continue_in_p(ProblemParams(lam, p), mesh, default_schedule(p))[-1]
    return {"metrics": _solve_metrics(rep), "seconds": time.perf_counter() - t}


def run_oracle_cell(cfg_dict, lam, p, analyses):
    sol = radial.shoot(p, lam)
    row = dg.bounds_report([sol], moser_radius=sol.disk_radius)[0]
    res = {"metrics": {**row, "epsilon": sol.epsilon, "c_squared": sol.c_squared,
                       "lambda1": radial.bessel_lambda1(sol.disk_radius)}}
    if "modes" in analyses:
        reps = radial.radial_linearized_modes(sol)
        res["modes"] = {"eigenvalues": [[float(x) for x in r.eigenvalues] for r in reps],
                        "morse": radial.morse_index(reps),
                        "min_abs": min(r.min_abs_eigenvalue for r in reps)}
    if "profile" in analyses:
        res["profile"] = {"sup": radial.oracle_profile(sol).sup_discrepancy}
    if "overlap" in analyses:
        res["overlap"] = radial.zeta1_overlap(sol)
    return res


def run_robin_cell(cfg_dict, label, h):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    dom = cfg.domain(label)
    mesh = build_mesh(dom, h)
    rf = limit.robin_function(mesh)
    center_value = float(limit._RobinSolver(mesh)(np.asarray([dom.center]))[0])
    return {"critical_x": rf.critical_point[0], "critical_y": rf.critical_point[1],
            "critical_value": rf.critical_value, "gradient_residual": rf.gradient_residual,
            "center_value": center_value, "h_max": mesh.h_max,
            "samples": [[x, y, v] for (x, y), v in zip(rf.samples, rf.values)]}


def _run_task(task):
    kind, args = task[0], task[1:]
    fn = {"graded": run_graded_cell, "uniform": run_uniform_cell,
          "oracle": run_oracle_cell, "robin": run_robin_cell}[kind]
    t = time.perf_counter()
    try:
        res = fn(*args)
    except Exception as exc:  # recorded per cell; dependent checks report "error"
        res = {"error": f"{type(exc).__name__}: {exc}"}
    res["_seconds"] = time.perf_counter() - t
    return res


# ---------------------------------------------------------------------------
# checks


class Claims:
    def __init__(self, check):
        self.check = check
        self.items = []

    def add(self, claim, ok, value, tolerance, detail="", status=None):
        if status is None:
            status = "pass" if ok else "fail"
        self.items.append({"check": self.check, "claim": claim, "status": status,
                           "value": _jsonable(value), "tolerance": _jsonable(tolerance),
                           "detail": detail})

    def error(self, claim, message):
        self.items.append({"check": self.check, "claim": claim, "status": "error",
                           "value": None, "tolerance": None, "detail": message})


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if not math.isfinite(v) else float(f"{v:.10g}")
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _last_vs_median(values):
    return values[-1] / statistics.median(values)


def _order(hs, errs):
    errs = np.maximum(np.asarray(errs, dtype=float), 1e-300)
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def _p_list(cfg, check, key, default):
    return [float(x) for x in cfg.opt(check, key, default)]


class Check:
    name = ""

    def tasks(self, cfg):
        return []

    def evaluate(self, cfg, results, claims, tables):
        raise NotImplementedError


def _graded_task(cfg, label, lam, p, analyses):
    return ("graded", label, float(lam), float(p), tuple(sorted(analyses)))


class OracleCompare(Check):
    name = "oracle_compare"

    def _setup(self, cfg):
        label = cfg.opt(self.name, "domain", "disk")
        ps = _p_list(cfg, self.name, "p", [p for p in cfg.p_schedule if p <= 10]
                     or cfg.p_schedule[:1])
        h = float(cfg.opt(self.name, "h", cfg.mesh_h))
        hs = [4.0 * h, 2.0 * h, h]
        lam = float(cfg.opt(self.name, "lambda", 0.0))
        return label, ps, hs, lam

    def tasks(self, cfg):
        label, ps, hs, lam = self._setup(cfg)
        out = [("oracle", lam, p, ()) for p in ps]
        out += [("uniform", label, lam, p, h) for p in ps for h in hs]
        return out

    def evaluate(self, cfg, results, claims, tables):
        label, ps, hs, lam = self._setup(cfg)
        if cfg.domain(label).kind != "disk":
            claims.error("oracle_compare", f"domain {label!r} is not a disk")
            return
        rows = []
        for p in ps:
            orc = results[("oracle", lam, p, ())]
            cells = [results[("uniform", label, lam, p, h)] for h in hs]
            errs = [c.get("error") for c in cells + [orc] if "error" in c]
            if errs:
                claims.error(f"oracle_compare/p={p:g}", errs[0])
                continue
            a0, c0 = orc["metrics"]["sup_norm"], orc["metrics"]["c_squared"]
            ea, ec = [], []
            for h, c in zip(hs, cells):
                m = c["metrics"]
                ea.append(abs(m["sup_norm"] - a0) / a0)
                ec.append(abs(m["c_squared"] - c0) / c0)
                rows.append({"p": p, "lambda": lam, "h": h, "h_max": m["h_max"],
                             "sup_norm": m["sup_norm"], "oracle_sup_norm": a0,
                             "sup_rel_err": ea[-1], "c_squared": m["c_squared"],
                             "oracle_c_squared": c0, "c2_rel_err": ec[-1]})
            oa, oc = _order(hs, ea), _order(hs, ec)
            tol, tord = cfg.tol("oracle_rel"), cfg.tol("oracle_order")
            ok = ea[-1] <= tol and ec[-1] <= tol and oa >= tord and oc >= tord
            claims.add(f"oracle_compare/p={p:g}", ok, [ea[-1], ec[-1], oa, oc], [tol, tord],
                       "finest relative errors (sup, c^2) and observed orders")
        tables["oracle_compare.csv"] = rows


class Bounds(Check):
    name = "bounds"

    def tasks(self, cfg):
        return [("oracle", lam, p, ()) for lam in cfg.lambda_values for p in cfg.oracle_p]

    def evaluate(self, cfg, results, claims, tables):
        rows = []
        for lam in cfg.lambda_values:
            res = [results[("oracle", lam, p, ())] for p in cfg.oracle_p]
            err = next((r["error"] for r in res if "error" in r), None)
            if err:
                claims.error(f"bounds/lambda={lam:g}", err)
                continue
            ms = [r["metrics"] for r in res]
            rows.extend(ms)
            amps = [m["sup_norm"] for m in ms]
            lo, hi = cfg.tol("amp_low"), cfg.tol("amp_high")
            claims.add(f"bounds/amplitude_window/lambda={lam:g}",
                       all(lo <= a <= hi for a in amps), [min(amps), max(amps)], [lo, hi])
            lower = [(lam + m["lambda1"]) ** (1.0 / (m["p"] - 1.0)) for m in ms]
            claims.add(f"bounds/amplitude_lower/lambda={lam:g}",
                       all(a >= b for a, b in zip(amps, lower)),
                       min(a - b for a, b in zip(amps, lower)), 0.0,
                       "amplitude minus (lambda + lambda_1)^(1/(p-1))")
            pw = [m["sup_norm_pow"] for m in ms]
            pstar = cfg.tol("amp_pow_p")
            at = [m["sup_norm_pow"] for m in ms if m["p"] >= pstar]
            inc = all(b > a for a, b in zip(pw, pw[1:]))
            claims.add(f"bounds/amplitude_power_growth/lambda={lam:g}",
                       inc and bool(at) and at[0] > cfg.tol("amp_pow_min"),
                       at[0] if at else None, cfg.tol("amp_pow_min"),
                       f"strictly increasing={inc}; value at first p >= {pstar:g}")
            big = [m for m in ms if m["p"] >= 10]
            for key in ("c2_p", "p_int_pp1"):
                vals = [m[key] for m in big]
                r = _last_vs_median(vals)
                claims.add(f"bounds/{key}_window/lambda={lam:g}", r <= cfg.tol("trend_growth"),
                           r, cfg.tol("trend_growth"), f"last/median; range [{min(vals):.4g}, "
                           f"{max(vals):.4g}]")
            pmin = cfg.tol("sobolev_p_min")
            ds = [m["sobolev_ratio"] for m in ms if m["p"] >= pmin]
            if ds:
                claims.add(f"bounds/sobolev_ratio/lambda={lam:g}",
                           max(ds) <= cfg.tol("sobolev_max"), max(ds), cfg.tol("sobolev_max"),
                           f"max D_p estimate over p >= {pmin:g}")
        tables["bounds.csv"] = rows


class Moser(Check):
    name = "moser"

    def tasks(self, cfg):
        return [("oracle", lam, p, ()) for lam in cfg.lambda_values for p in cfg.oracle_p]

    def evaluate(self, cfg, results, claims, tables):
        rows = []
        for lam in cfg.lambda_values:
            worst = -math.inf
            for p in cfg.oracle_p:
                r = results[("oracle", lam, p, ())]
                if "error" in r:
                    claims.error(f"moser/lambda={lam:g}", r["error"])
                    break
                if p < 10:
                    continue
                c = math.sqrt(r["metrics"]["c_squared"])
                b = limit.moser_bound(1.0, None, p, lam)
                rows.append({"p": p, "lambda": lam, "c": c, "moser_bound": b.quotient_bound,
                             "ratio": c / b.quotient_bound, "gradient_norm": b.gradient_norm})
                worst = max(worst, c / b.quotient_bound)
            else:
                claims.add(f"moser/lambda={lam:g}", worst <= 1.0, worst, 1.0,
                           "max of c / Moser bound over p >= 10")
        tables["moser.csv"] = rows


class Profile(Check):
    name = "profile"

    def _setup(self, cfg):
        op = _p_list(cfg, self.name, "oracle_p", [p for p in cfg.oracle_p if p >= 50])
        p2 = _p_list(cfg, self.name, "p", [p for p in cfg.p_schedule if p >= 10][:2])
        lam = float(cfg.opt(self.name, "lambda", 0.0))
        label = cfg.opt(self.name, "domain", domain_label(cfg.domains[0]))
        return op, p2, lam, label

    def tasks(self, cfg):
        op, p2, lam, label = self._setup(cfg)
        return ([("oracle", lam, p, ("profile",)) for p in op]
                + [_graded_task(cfg, label, lam, p, {"profile"}) for p in p2])

    def evaluate(self, cfg, results, claims, tables):
        op, p2, lam, label = self._setup(cfg)
        res = [results[("oracle", lam, p, ("profile",))] for p in op]
        err = next((r["error"] for r in res if "error" in r), None)
        if err:
            claims.error("profile/oracle", err)
        elif op:
            sups = [r["profile"]["sup"] for r in res]
            dec = all(b < a for a, b in zip(sups, sups[1:]))
            claims.add("profile/oracle", dec and sups[-1] <= cfg.tol("profile_oracle_max"),
                       sups, cfg.tol("profile_oracle_max"),
                       f"strictly decreasing={dec}; last value against tolerance")
            tables["profile_oracle.csv"] = [{"p": p, "lambda": lam, "sup_discrepancy": s}
                                            for p, s in zip(op, sups)]
        res = [results[_graded_task(cfg, label, lam, p, {"profile"})] for p in p2]
        err = next((r["error"] for r in res if "error" in r), None)
        if err:
            claims.error(f"profile/2d/{label}", err)
            return
        if not p2:
            return
        sups = [r["profile"]["sup"] for r in res]
        resolved = all(r["profile"]["resolved"] for r in res)
        dec = all(b < a for a, b in zip(sups, sups[1:]))
        claims.add(f"profile/2d/{label}", dec and max(sups) <= cfg.tol("profile_2d_max"),
                   sups, cfg.tol("profile_2d_max"), f"strictly decreasing={dec}",
                   status=None if resolved else "unresolved")
        rows = []
        for p, r in zip(p2, res):
            for x1, x2, rad, phi, bub, diff in r["profile"]["rows"]:
                rows.append({"p": p, "lambda": lam, "X1": x1, "X2": x2, "radius": rad,
                             "phi": phi, "bubble": bub, "abs_diff": diff})
        tables["profile_2d.csv"] = rows


class Star(Check):
    name = "star"

    def _setup(self, cfg):
        labels = cfg.opt(self.name, "domains", [domain_label(x) for x in cfg.domains])
        p = float(cfg.opt(self.name, "p", cfg.p_schedule[-1]))
        return labels, p

    def tasks(self, cfg):
        labels, p = self._setup(cfg)
        return [_graded_task(cfg, lb, lam, p, {"star"}) for lb in labels
                for lam in cfg.lambda_values]

    def evaluate(self, cfg, results, claims, tables):
        labels, p = self._setup(cfg)
        rows, vrows = [], []
        for lb in labels:
            for lam in cfg.lambda_values:
                r = results[_graded_task(cfg, lb, lam, p, {"star"})]
                name = f"star/{lb}/lambda={lam:g}"
                if "error" in r:
                    claims.error(name, r["error"])
                    continue
                s = r["star"]
                rows.append({"domain": lb, "lambda": lam, "p": p, "violations": s["violations"],
                             "tested_triangles": s["tested"], "h_ring_min": s["h_ring_min"],
                             "h_ring_max": s["h_ring_max"], "core_radius": s["core_radius"],
                             "boundary_width": s["boundary_width"]})
                for t, x, y, v in s["violation_rows"]:
                    vrows.append({"domain": lb, "lambda": lam, "triangle": t, "x": x, "y": y,
                                  "inner_product": v})
                claims.add(name, s["violations"] == 0 and s["h_ring_max"] < 0,
                           [s["violations"], s["h_ring_max"]], [0, 0.0],
                           "violating triangles and max of h on the ring")
        tables["star.csv"] = rows
        tables["star_violations.csv"] = vrows


class Spectrum(Check):
    name = "spectrum"

    def _setup(self, cfg):
        labels = cfg.opt(self.name, "domains", [domain_label(x) for x in cfg.domains])
        ps = _p_list(cfg, self.name, "p", [p for p in cfg.p_schedule if p >= 20])
        op = _p_list(cfg, self.name, "oracle_p", cfg.oracle_p)
        return labels, ps, op

    def tasks(self, cfg):
        labels, ps, op = self._setup(cfg)
        out = [_graded_task(cfg, lb, lam, p, {"spectrum"}) for lb in labels
               for lam in cfg.lambda_values for p in ps]
        out += [("oracle", lam, p, ("modes",)) for lam in cfg.lambda_values for p in op]
        return out

    def _trend(self, claims, name, negs, mins, cfg):
        r = _last_vs_median(mins)
        ok = all(n == 1 for n in negs) and min(mins) > 0 and r >= cfg.tol("trend_decay")
        claims.add(name, ok, [max(negs), min(mins), r], [1, 0.0, cfg.tol("trend_decay")],
                   "max negative count, min |eigenvalue|, last/median of min |eigenvalue|")

    def evaluate(self, cfg, results, claims, tables):
        labels, ps, op = self._setup(cfg)
        rows, rrows = [], []
        for lb in labels:
            for lam in cfg.lambda_values:
                res = [results[_graded_task(cfg, lb, lam, p, {"spectrum"})] for p in ps]
                name = f"spectrum/2d/{lb}/lambda={lam:g}"
                err = next((r["error"] for r in res if "error" in r), None)
                if err:
                    claims.error(name, err)
                    continue
                for p, r in zip(ps, res):
                    s = r["spectrum"]
                    rows.append({"domain": lb, "lambda": lam, "p": p,
                                 "negative_count": s["negative_count"], "min_abs": s["min_abs"],
                                 "exterior": s["exterior"],
                                 "eigenvalues": " ".join(f"{x:.10g}" for x in s["eigenvalues"])})
                if ps:
                    self._trend(claims, name, [r["spectrum"]["negative_count"] for r in res],
                                [r["spectrum"]["min_abs"] for r in res], cfg)
        for lam in cfg.lambda_values:
            res = [results[("oracle", lam, p, ("modes",))] for p in op]
            name = f"spectrum/radial/lambda={lam:g}"
            err = next((r["error"] for r in res if "error" in r), None)
            if err:
                claims.error(name, err)
                continue
            for p, r in zip(op, res):
                for k, ev in enumerate(r["modes"]["eigenvalues"]):
                    rrows.append({"lambda": lam, "p": p, "k": k,
                                  "eigenvalues": " ".join(f"{x:.10g}" for x in ev[:3])})
            if op:
                self._trend(claims, name, [r["modes"]["morse"] for r in res],
                            [r["modes"]["min_abs"] for r in res], cfg)
        tables["spectrum.csv"] = rows
        tables["spectrum_radial.csv"] = rrows


class Robin(Check):
    name = "robin"

    def _setup(self, cfg):
        labels = cfg.opt(self.name, "domains", [domain_label(x) for x in cfg.domains])
        p = float(cfg.opt(self.name, "p", cfg.p_schedule[-1]))
        h = float(cfg.opt(self.name, "h", cfg.mesh_h))
        return labels, p, h

    def tasks(self, cfg):
        labels, p, h = self._setup(cfg)
        return ([("robin", lb, h) for lb in labels]
                + [_graded_task(cfg, lb, 0.0, p, ()) for lb in labels])

    def evaluate(self, cfg, results, claims, tables):
        labels, p, h = self._setup(cfg)
        rows = []
        for lb in labels:
            rb = results[("robin", lb, h)]
            sv = results[_graded_task(cfg, lb, 0.0, p, ())]
            name = f"robin/{lb}"
            if "error" in rb or "error" in sv:
                claims.error(name, rb.get("error") or sv.get("error"))
                continue
            m = sv["metrics"]
            dist = math.hypot(m["max_x"] - rb["critical_x"], m["max_y"] - rb["critical_y"])
            lim = cfg.tol("robin_hmax_factor") * m["h_max"]
            claims.add(f"{name}/blowup_distance", dist <= lim, dist, lim,
                       "distance from the 2D maximum point to the Robin critical point")
            dom = cfg.domain(lb)
            if dom.kind == "disk":
                c = math.dist(dom.center, (rb["critical_x"], rb["critical_y"]))
                ref = math.log(dom.params[0]) / (2.0 * math.pi)
                dv = abs(rb["center_value"] - ref)
                claims.add(f"{name}/critical_point", c <= cfg.tol("robin_center"), c,
                           cfg.tol("robin_center"), "distance of the critical point to the center")
                claims.add(f"{name}/center_value", dv <= cfg.tol("robin_value"), dv,
                           cfg.tol("robin_value"), "|R(center) - log(radius)/(2 pi)|")
            rows.append({"domain": lb, "critical_x": rb["critical_x"],
                         "critical_y": rb["critical_y"], "critical_value": rb["critical_value"],
                         "gradient_residual": rb["gradient_residual"],
                         "center_value": rb["center_value"], "max_x": m["max_x"],
                         "max_y": m["max_y"], "distance": dist, "h_max": m["h_max"]})
            tables[f"robin_{lb}_samples.csv"] = [{"x": x, "y": y, "R": v}
                                                 for x, y, v in rb["samples"]]
        tables["robin.csv"] = rows


class LimitKernel(Check):
    name = "limit_kernel"

    def _p(self, cfg):
        return float(cfg.opt(self.name, "p", cfg.oracle_p[-1]))

    def tasks(self, cfg):
        return [("oracle", 0.0, self._p(cfg), ("overlap",))]

    def evaluate(self, cfg, results, claims, tables):
        tol = cfg.tol("kernel_residual")
        rows = []
        for k in (0, 1):
            mode = limit.RadialMode.sample(k, lambda r, k=k: limit.kernel_functions(r)[k])
            res = limit.mode_operator_residual(mode)
            claims.add(f"limit_kernel/residual_zeta{k}", res <= tol, res, tol)
        expected = ["bounded", "bounded", "unbounded", "unbounded", "unbounded"]
        got = []
        for k in range(5):
            s = limit.mode_shoot(k)
            got.append(s.verdict)
            rows.append({"k": k, "verdict": s.verdict, "near_max": s.near_max,
                         "far_max": s.far_max})
        claims.add("limit_kernel/verdicts", got == expected, got, expected)
        r = results[("oracle", 0.0, self._p(cfg), ("overlap",))]
        if "error" in r:
            claims.error("limit_kernel/zeta1_overlap", r["error"])
        else:
            claims.add("limit_kernel/zeta1_overlap", r["overlap"] >= cfg.tol("overlap_min"),
                       r["overlap"], cfg.tol("overlap_min"), f"p={self._p(cfg):g}")
        b = limit.Bubble.canonical()
        mass_err = abs(limit.bubble_mass(b, math.inf) - 8.0 * math.pi)
        half_err = abs(limit.bubble_mass(b, b.scale_radius) - 4.0 * math.pi)
        claims.add("limit_kernel/bubble_mass", max(mass_err, half_err) <= cfg.tol("bubble_mass"),
                   max(mass_err, half_err), cfg.tol("bubble_mass"),
                   "total mass against 8 pi and half mass at the scale radius")
        u0 = limit.bubble_eval(b, b.center)
        claims.add("limit_kernel/bubble_origin", u0 == 0.0, u0, 0.0, "exact zero")
        tables["kernel.csv"] = rows


CHECK_CLASSES = {c.name: c for c in (OracleCompare, Bounds, Moser, Profile, Star, Spectrum,
                                     Robin, LimitKernel)}


# ---------------------------------------------------------------------------
# running


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def write_table(rows, path):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        if not rows:
            return
        cols = list(rows[0].keys())
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


PROFILE_GP = """# gnuplot: rescaled profile against the limit bubble
set datafile separator ','
set key autotitle columnhead
set xlabel '|X|'
set ylabel 'phi'
U(r) = log(1.0 / (1.0 + r*r/8.0)**2)
plot 'profile_2d.csv' using 5:6 with points title 'phi (2D)', \\
     [0:4] U(x) with lines title 'U'
"""

BOUNDS_GP = """# gnuplot: scaled energies along p
set datafile separator ','
set key autotitle columnhead
set logscale x
set xlabel 'p'
plot 'bounds.csv' using 1:5 with linespoints title 'c^2 p', \\
     'bounds.csv' using 1:6 with linespoints title 'p int u^(p+1)'
"""


def run(cfg: ExperimentConfig, out_dir=None, jobs=1, progress=None):
    """Run every enabled check; returns ``(exit_status, summary)``."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    checks = [CHECK_CLASSES[c]() for c in cfg.checks]
    cfg_dict = cfg.to_dict()
    keys = []
    for ch in checks:
        for t in ch.tasks(cfg):
            if t not in keys:
                keys.append(t)
    # merge graded analyses so each 2D solve runs once
    merged = {}
    for t in keys:
        if t[0] == "graded":
            base = t[:4]
            merged.setdefault(base, set()).update(t[4])
    jobs_list = []
    for t in keys:
        if t[0] == "graded":
            base = t[:4]
            if base in merged:
                jobs_list.append(("graded", cfg_dict, *base[1:], tuple(sorted(merged.pop(base))),
                                  str(out)))
        elif t[0] == "oracle":
            jobs_list.append(("oracle", cfg_dict, *t[1:]))
        else:
            jobs_list.append((t[0], cfg_dict, *t[1:]))
    # oracle analyses are cheap; run the union per (lam, p) too
    oracle_union = {}
    for t in keys:
        if t[0] == "oracle":
            oracle_union.setdefault(t[1:3], set()).update(t[3])
    jobs_list = [j for j in jobs_list if j[0] != "oracle"]
    for (lam, p), an in oracle_union.items():
        jobs_list.append(("oracle", cfg_dict, lam, p, tuple(sorted(an))))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outputs = list(ex.map(_run_task, jobs_list))
    else:
        outputs = []
        for j in jobs_list:
            outputs.append(_run_task(j))
            if progress:
                progress(j, outputs[-1])

    by_base = {}
    for j, r in zip(jobs_list, outputs):
        if j[0] == "graded":
            by_base[("graded",) + tuple(j[2:5])] = r
        elif j[0] == "oracle":
            by_base[("oracle", j[2], j[3])] = r
        else:
            by_base[(j[0],) + tuple(j[2:])] = r
    results = {}
    for t in keys:
        if t[0] == "graded":
            results[t] = by_base[t[:4]]
        elif t[0] == "oracle":
            results[t] = by_base[("oracle", t[1], t[2])]
        else:
            results[t] = by_base[t]

    all_claims, tables, status = [], {}, {}
    for ch in checks:
        cl = Claims(ch.name)
        try:
            ch.evaluate(cfg, results, cl, tables)
        except Exception as exc:
            cl.error(ch.name, f"{type(exc).__name__}: {exc}")
        sts = {c["status"] for c in cl.items}
        status[ch.name] = ("error" if "error" in sts else "fail" if "fail" in sts
                           else "unresolved" if "unresolved" in sts else "pass")
        all_claims.extend(cl.items)

    for name in sorted(tables):
        write_table(tables[name], out / name)
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    (plots / "profile.gp").write_text(PROFILE_GP)
    (plots / "bounds.gp").write_text(BOUNDS_GP)
    summary = {"name": cfg.name, "config": cfg_dict, "checks": status, "claims": all_claims,
               "passed": all(s == "pass" for s in status.values())}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    timings = [{"task": _task_label(j), "seconds": round(r["_seconds"], 3)}
               for j, r in zip(jobs_list, outputs)]
    (out / "timings.json").write_text(json.dumps(timings, indent=2) + "\n")
    return (0 if summary["passed"] else 1), summary


def _task_label(j):
    return "/".join(str(x) for x in (j[0],) + tuple(j[2:5]))


def load_summary(path):
    p = Path(path)
    if p.is_dir():
        p = p / "summary.json"
    if not p.exists():
        raise FileNotFoundError(f"missing summary file: {p}")
    try:
        data = json.loads(p.read_text())
        claims = data["claims"]
        if not isinstance(claims, list) or any("claim" not in c or "status" not in c
                                               for c in claims):
            raise ValueError("claims malformed")
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"corrupted summary {p}: {exc}") from exc
    return data


def compare(run_a, run_b):
    """Per-claim table of values and statuses; returns ``(rows, flipped)``."""
    a = {c["claim"]: c for c in load_summary(run_a)["claims"]}
    b = {c["claim"]: c for c in load_summary(run_b)["claims"]}
    rows, flipped = [], False
    for name in sorted(set(a) | set(b)):
        ca, cb = a.get(name), b.get(name)
        sa = ca["status"] if ca else "missing"
        sb = cb["status"] if cb else "missing"
        va = ca.get("value") if ca else None
        vb = cb.get("value") if cb else None
        if va == vb and sa == sb:
            continue
        delta = None
        if isinstance(va, (int, float)) and isinstance(vb, (int, float)):
            delta = vb - va
        elif isinstance(va, list) and isinstance(vb, list) and len(va) == len(vb) and all(
                isinstance(x, (int, float)) for x in va + vb):
            delta = [y - x for x, y in zip(va, vb)]
        rows.append({"claim": name, "status_a": sa, "status_b": sb, "value_a": va,
                     "value_b": vb, "delta": delta, "flipped": sa != sb})
        flipped |= sa != sb
    return rows, flipped


def shipped_claims_path():
    return Path(__file__).parent / "data" / "claims.json"
