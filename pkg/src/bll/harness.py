"""Experiment orchestration: formula-verification suite, the N-sweep
convergence experiment, and report persistence.

The convergence experiment generates particle clouds of growing N (with
sphere radius 1/N), solves the flow around the spheres, solves the
volumetric-drag limit problem with the matching density and current
presets, and records the relative L2 distance together with every limit
pairing the theory provides, so the convergence trend can be read off a
single CSV.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dfield

import numpy as np

from . import annulus, correctors, grid, measure_limits, presets, reflections
from .cloud import Box, generate_cloud, pair_moments, validate_cloud
from .fields import constant_field, test_field_dictionary
from .quadrature import box_rule, radial_rule

__all__ = [
    "ExperimentConfig",
    "ConvergenceReport",
    "REPORT_COLUMNS",
    "run_formula_suite",
    "run_convergence",
    "emit_report",
    "load_report",
]


@dataclass
class ExperimentConfig:
    """Inputs of one convergence experiment."""

    n_list: tuple = (8, 27, 64)
    seeds: tuple = (0, 1, 2)
    corner: tuple = (-1.25, -1.25, -1.25)
    sides: tuple = (2.5, 2.5, 2.5)
    rho: str = "uniform"
    j: str = "uniform-z"
    g: str = "down-z"
    method: str = "mor"
    nu: float = 1.0
    advection: bool = False
    h_limit: float = 2.5 / 20
    velocity_noise: float = 0.05
    mor_tol: float = 1e-3
    max_reflections: int = 40
    grid_tolerance: float = 1e-7
    out_dir: str = "out"

    def domain(self) -> Box:
        return Box(self.corner, self.sides)

    def validate(self) -> None:
        for n in self.n_list:
            if n < 1:
                raise ValueError(f"invalid N {n}")
        if self.method not in ("mor", "grid", "both"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.rho not in presets.RHO_PRESETS:
            raise ValueError(f"unknown rho preset {self.rho!r}")
        if self.j not in presets.J_PRESETS:
            raise ValueError(f"unknown j preset {self.j!r}")
        if self.g not in presets.G_PRESETS:
            raise ValueError(f"unknown g preset {self.g!r}")

    def config_hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


REPORT_COLUMNS = [
    "n", "seed", "eps", "method",
    "rel_l2_error", "ubar_l2", "limit_l2",
    "corrector_l2_sq", "corrector_h1_sq",
    "source_pairing", "source_limit",
    "friction_pairing", "friction_limit",
    "uffa_isotropic", "uffa_isotropic_limit",
    "uffa_radial", "uffa_radial_limit",
    "mor_mismatch", "mor_reflections", "picard_iterations",
    "runtime_s", "status", "error",
]


@dataclass
class ConvergenceReport:
    """Rows of the N-sweep plus run metadata."""

    config: ExperimentConfig
    rows: list = dfield(default_factory=list)
    metadata: dict = dfield(default_factory=dict)

    def median_errors(self) -> dict:
        """Median relative error per N over the completed seeds."""
        out = {}
        for n in self.config.n_list:
            vals = [r["rel_l2_error"] for r in self.rows
                    if r["n"] == n and r["status"] == "ok"]
            if vals:
                out[n] = float(np.median(vals))
        return out


def _suite_check(checks, name, value, tolerance):
    checks.append({"name": name, "value": float(value),
                   "tolerance": float(tolerance),
                   "ok": bool(value <= tolerance)})


def run_formula_suite(fault_delta1: float = 0.0) -> dict:
    """Run every closed-form identity and oracle comparison.

    ``fault_delta1`` perturbs the scaled coefficient delta1 by the given
    relative amount; any nonzero value must trip the no-slip boundary
    check (suite sensitivity).  Returns {"ok": bool, "checks": [...]}.
    """
    checks = []
    rng = np.random.default_rng(2024)

    def scaled(eps):
        c = annulus.scaled_coefficients(eps)
        if fault_delta1:
            c = dataclasses.replace(c, delta1=c.delta1 * (1.0 + fault_delta1))
        return c

    # no-slip boundary values of the unit annulus at several outer radii
    worst = 0.0
    for R in (2.0, 5.0, 20.0):
        co = annulus.solve_coefficients(R)
        for v in (np.array([0.0, 0.0, 1.0]), rng.standard_normal(3)):
            omega = rng.standard_normal((40, 3))
            omega /= np.linalg.norm(omega, axis=1)[:, None]
            inner = annulus.eval_velocity(co, v, (1.0 + 1e-14) * omega)
            outer = annulus.eval_velocity(co, v, (R - R * 1e-14) * omega)
            worst = max(worst, float(np.abs(inner - v).max()),
                        float(np.abs(outer).max()))
    _suite_check(checks, "annulus no-slip boundary values", worst, 1e-10)

    # scaled inner boundary (sensitive to every coefficient)
    worst = 0.0
    for eps in (1e-2, 1e-3):
        c = scaled(eps)
        omega = rng.standard_normal((20, 3))
        omega /= np.linalg.norm(omega, axis=1)[:, None]
        v = np.array([0.3, -1.0, 0.5])
        val = annulus.eval_velocity(c, v, eps * omega)
        worst = max(worst, float(np.abs(val - v).max() / np.abs(v).max()))
    _suite_check(checks, "scaled corrector inner no-slip", worst, 1e-9)

    # free-space drag: surface traction integrates to -6 pi v
    from .quadrature import sphere_rule
    free = annulus.solve_coefficients(annulus.INFINITE)
    omega, wts = sphere_rule(24, 48)
    v = np.array([0.7, -0.2, 1.1])
    force = (wts[:, None] * annulus.traction(free, v, omega)).sum(axis=0)
    err = np.linalg.norm(force + 6.0 * np.pi * v) / (6.0 * np.pi * np.linalg.norm(v))
    _suite_check(checks, "drag law -6 pi v", err, 1e-12)

    # coefficient asymptotics, envelope constants frozen from the exact
    # expansions: alpha R^3 + 3/8 = -(27/32)/R + O(1/R^2)
    worst = 0.0
    for eps in (1e-2, 1e-3, 1e-4):
        R = eps ** (-2.0 / 3.0)
        c = scaled(eps)
        worst = max(worst, abs(c.alpha1 + 0.375) * R / 1.0,
                    abs(c.beta1 - 1.125 * eps ** (2.0 / 3.0))
                    / (2.0 * eps ** (4.0 / 3.0) * R),
                    abs(c.gamma1 + 0.75 * eps) / (2.0 * eps ** (5.0 / 3.0)),
                    abs(c.delta1 - 0.25 * eps**3) / (2.0 * eps ** (11.0 / 3.0)))
    _suite_check(checks, "coefficient asymptotics envelopes", worst, 1.0)

    # interaction integral against the drag value, eps^(2/3) decay
    v = np.array([1.0, 0.5, -0.25])
    w = np.array([0.2, 1.0, 0.8])  # v.w = 0.5, safely away from zero
    devs = []
    for eps in (1e-2, 1e-3, 1e-4):
        val = annulus.closed_form_norms(eps, v, w)["interaction"]
        devs.append(abs(val / (6.0 * np.pi * eps * np.dot(v, w)) - 1.0))
    # deviation ~ eps^(2/3); eps spans a factor of 100 here
    slope = (math.log(devs[0] / devs[-1]) / math.log(1e2)) if devs[-1] else 1.0
    _suite_check(checks, "interaction drag deviation slope (>=0.6)",
                 0.6 - slope, 0.0)

    # closed-form norms against direct radial quadrature
    eps = 1e-3
    c = scaled(eps)
    prof = annulus.radial_profiles(c)
    r, wr = radial_rule(eps, eps ** (1.0 / 3.0), 200)
    v = np.array([0.0, 0.0, 1.0])
    l2_quad = (4.0 * np.pi / 3.0) * float(
        wr @ (r**2 * (2.0 * prof.A(r) ** 2 + prof.B(r) ** 2))) \
        + (4.0 * np.pi / 3.0) * eps**3
    h1_quad = (16.0 * np.pi / 3.0) * float(
        wr @ (r**2 * ((prof.a(r) + prof.b(r)) ** 2 + 2.0 * prof.b(r) ** 2)))
    nm = annulus.closed_form_norms(eps, v, v)
    _suite_check(checks, "closed-form L2 norm vs quadrature",
                 abs(nm["l2_phi"] - l2_quad) / l2_quad, 1e-8)
    _suite_check(checks, "closed-form H1 norm vs quadrature",
                 abs(nm["h1_phi"] - h1_quad) / h1_quad, 1e-8)

    # gradient against central differences
    x = np.array([0.02, -0.015, 0.01])
    v = np.array([1.0, -2.0, 0.5])
    h = 1e-6
    fd = np.zeros((3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd[i] = (annulus.eval_velocity(c, v, x + e)
                 - annulus.eval_velocity(c, v, x - e)) / (2.0 * h)
    _suite_check(checks, "gradient vs finite differences",
                 np.abs(annulus.eval_grad(c, v, x) - fd).max(), 1e-4)

    # free-space hand values: velocity 11/16 and pressure 3/8
    val = annulus.eval_velocity(free, [1.0, 0.0, 0.0], [2.0, 0.0, 0.0])
    _suite_check(checks, "free-space velocity value 11/16",
                 abs(val[0] - 11.0 / 16.0), 1e-14)
    _suite_check(checks, "free-space pressure value 3/8",
                 abs(annulus.eval_pressure(free, [1., 0., 0.], [2., 0., 0.])
                     - 3.0 / 8.0), 1e-14)

    # gradient pairing closed form vs direct Frobenius contraction
    gw = rng.standard_normal((3, 3)) * 0.4
    xs = np.array([0.05, 0.02, -0.03])
    direct = float(np.sum(annulus.eval_grad(c, v, xs) * gw))
    paired = annulus.pair_gradient_with_field(c, v, None, gw, xs)
    _suite_check(checks, "gradient pairing closed form", abs(direct - paired),
                 1e-12)

    # geometric apparatus on a reference cloud
    box = Box((-1.25,) * 3, (2.5,) * 3)
    mf = presets.moment_preset("uniform", "uniform-z", box)
    cloud = generate_cloud(27, box, mf, seed=11)
    _suite_check(checks, "reference cloud validity",
                 0.0 if validate_cloud(cloud) else 1.0, 0.5)

    gfield = constant_field([0.4, 1.0, -0.7])
    phi = constant_field([1.0, -0.5, 0.25])
    pts_q, wts_q = box_rule(box.corner, box.sides, panels=5, order=6)
    sm = measure_limits.pair_surface_measures(cloud, gfield, phi, mf,
                                              (pts_q, wts_q))
    _suite_check(checks, "surface measure isotropic/radial ratio 3",
                 abs(sm["isotropic"] / sm["radial"] - 3.0), 1e-10)

    aux = measure_limits.AuxiliaryFields(cloud, gfield)
    res = measure_limits.distributional_laplacian_check(aux, phi)
    _suite_check(checks, "distributional identity residual (xi)",
                 abs(res["xi_residual"]), 1e-6)
    _suite_check(checks, "distributional identity residual (chi)",
                 abs(res["chi_residual"]), 1e-6)

    # friction pairing: constant data reduce to the exact drag sum
    u_const = constant_field([0.2, -1.0, 0.4])
    fr = correctors.friction_pairing(cloud, u_const, phi)
    exact = -6.0 * np.pi * cloud.eps * cloud.n * np.dot([0.2, -1.0, 0.4],
                                                        [1.0, -0.5, 0.25])
    _suite_check(checks, "friction pairing constant-data value",
                 abs(fr["pairing"] - exact) / abs(exact), 1e-12)

    # Poincare constant and uniqueness threshold closed forms
    cube = Box((0.0,) * 3, (1.0,) * 3)
    pn = grid.poincare_and_nu0(cube, 0.0, 0.0)
    _suite_check(checks, "unit-cube Poincare constant",
                 abs(pn["C_P"] - 1.0 / (np.pi * np.sqrt(3.0))), 1e-14)
    pn = grid.poincare_and_nu0(cube, 2.0, 0.0)
    _suite_check(checks, "nu0 with j=0 closed root",
                 abs(pn["nu0"] - 2.0 * pn["C_P"] ** 0.75 * np.sqrt(2.0)),
                 1e-13)

    return {"ok": all(c["ok"] for c in checks), "checks": checks}


def _row_skeleton(n, seed, method):
    row = {c: "" for c in REPORT_COLUMNS}
    row.update({"n": n, "seed": seed, "eps": 1.0 / n, "method": method,
                "status": "ok", "error": ""})
    return row


def _run_row(cfg: ExperimentConfig, shared: dict, n: int, seed: int) -> dict:
    row = _row_skeleton(n, seed, cfg.method)
    t0 = time.time()
    try:
        box = cfg.domain()
        mf = shared["moments"]
        # the tight default packing leaves no positional jitter room, so
        # seed sensitivity enters through the velocity data
        cloud = generate_cloud(n, box, mf, seed=seed,
                               velocity_noise=cfg.velocity_noise)
        limit = shared["limit_field"]
        centers = limit.center_points().reshape(-1, 3)
        u_limit = limit.center_velocity().reshape(-1, 3)

        if cfg.method == "grid":
            gcfg = grid.SolverConfig(h=cfg.h_limit, tolerance=cfg.grid_tolerance)
            # perforated solves need h <= eps/4
            gcfg.h = min(cfg.h_limit, cloud.eps / 4.0)
            m = box.sides[0] / gcfg.h
            gcfg.h = box.sides[0] / math.ceil(m)
            pf = grid.solve_perforated(cloud, shared["g_field"], gcfg,
                                       nu=cfg.nu)
            ubar = pf.interpolate(centers)
            row["mor_mismatch"] = pf.meta["surface_mismatch"]
        else:
            sol = reflections.solve_mor_walled(
                cloud, shared["g_field"], shared["grid_cfg"], nu=cfg.nu,
                tol=cfg.mor_tol, max_reflections=cfg.max_reflections,
                background=shared["background"])
            ubar = reflections.evaluate_u_bar(sol, centers)
            row["mor_mismatch"] = sol.mismatch
            row["mor_reflections"] = sol.reflections

        h3 = limit.h**3
        diff = float(np.sqrt(h3 * np.sum((ubar - u_limit) ** 2)))
        lim_norm = float(np.sqrt(h3 * np.sum(u_limit**2)))
        row["rel_l2_error"] = diff / lim_norm
        row["ubar_l2"] = float(np.sqrt(h3 * np.sum(ubar**2)))
        row["limit_l2"] = lim_norm

        cf = correctors.CorrectorField(cloud)
        row["corrector_l2_sq"] = correctors.corrector_l2_norm(cf)
        row["corrector_h1_sq"] = correctors.corrector_h1_seminorm(cf)

        w = shared["test_w"]
        quad = shared["quad"]
        src = correctors.brinkman_source_pairing(cloud, w, mf, quad)
        row["source_pairing"] = src["pairing"]
        row["source_limit"] = src["limit"]
        fr = correctors.friction_pairing(cloud, limit.interpolate, w, mf, quad)
        row["friction_pairing"] = fr["pairing"]
        row["friction_limit"] = fr["limit"]

        sm = measure_limits.pair_surface_measures(cloud, shared["test_g"],
                                                  w, mf, quad)
        row["uffa_isotropic"] = sm["isotropic"]
        row["uffa_isotropic_limit"] = sm["isotropic_limit"]
        row["uffa_radial"] = sm["radial"]
        row["uffa_radial_limit"] = sm["radial_limit"]
        row["picard_iterations"] = shared.get("picard_iterations", 0)
    except Exception as exc:  # per-row failures recorded, run continues
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["runtime_s"] = time.time() - t0
    return row


def run_convergence(config: ExperimentConfig) -> ConvergenceReport:
    """Execute the N-sweep and assemble the report.

    The limit problem and the wall-respecting background flow do not
    depend on N, so they are solved once and shared across rows.
    """
    config.validate()
    box = config.domain()
    mf = presets.moment_preset(config.rho, config.j, box)
    g_field = presets.g_preset(config.g, box)

    gcfg = grid.SolverConfig(h=config.h_limit, tolerance=config.grid_tolerance)
    problem = grid.BrinkmanProblem(domain=box, g=g_field, rho=mf.rho,
                                   j=mf.j, nu=config.nu,
                                   advection=config.advection)
    limit_field = grid.solve_brinkman(problem, gcfg)
    background = grid.solve_stokes(box, g_field, gcfg, nu=config.nu)

    shared = {
        "moments": mf,
        "g_field": g_field,
        "limit_field": limit_field,
        "background": background,
        "grid_cfg": gcfg,
        "test_w": constant_field([0.0, 0.0, 1.0], "ez"),
        "test_g": constant_field([0.0, 0.0, 1.0], "ez"),
        "quad": box_rule(box.corner, box.sides, panels=5, order=6),
        "picard_iterations": len(limit_field.meta.get("picard_increments", [])),
    }

    jobs = [(n, seed) for n in config.n_list for seed in config.seeds]
    workers = int(os.environ.get("BLL_WORKERS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(
                lambda ns: _run_row(config, shared, *ns), jobs))
    else:
        rows = [_run_row(config, shared, n, s) for n, s in jobs]

    meta = {
        "config_hash": config.config_hash(),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "limit_divergence_max": limit_field.meta.get("div_max"),
    }
    return ConvergenceReport(config=config, rows=rows, metadata=meta)


def emit_report(report: ConvergenceReport, out_dir: str = None,
                formats=("csv", "json")) -> list:
    """Write report.csv, report.json, and plots/*.dat under ``out_dir``.

    The CSV holds one row per (N, seed) in the documented column order and
    contains no timestamps, so identical runs produce identical bytes.
    """
    out_dir = out_dir or os.environ.get("BLL_OUT", report.config.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "plots"), exist_ok=True)
    written = []

    if "csv" in formats:
        path = os.path.join(out_dir, "report.csv")
        with open(path, "w") as fh:
            fh.write(",".join(REPORT_COLUMNS) + "\n")
            for row in report.rows:
                fh.write(",".join(_csv_cell(row[c]) for c in REPORT_COLUMNS)
                         + "\n")
        written.append(path)

    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        data = {
            "config": dataclasses.asdict(report.config),
            "rows": report.rows,
            "metadata": report.metadata,
        }
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1)
        written.append(path)

    med = report.median_errors()
    series = {
        "rel_error": [(n, med[n]) for n in sorted(med)],
        "source_pairing_error": _series(report, "source_pairing",
                                        "source_limit"),
        "friction_pairing_error": _series(report, "friction_pairing",
                                          "friction_limit"),
    }
    for name, pairs in series.items():
        path = os.path.join(out_dir, "plots", f"{name}.dat")
        with open(path, "w") as fh:
            for n, val in pairs:
                fh.write(f"{n} {val!r}\n")
        written.append(path)
    return written


def _series(report, col, ref_col):
    out = []
    for n in sorted(set(r["n"] for r in report.rows)):
        vals = [abs(r[col] - r[ref_col]) for r in report.rows
                if r["n"] == n and r["status"] == "ok" and r[col] != ""]
        if vals:
            out.append((n, float(np.median(vals))))
    return out


def _csv_cell(value):
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def load_report(path: str) -> ConvergenceReport:
    """Read back a report.json written by emit_report."""
    with open(path) as fh:
        data = json.load(fh)
    cfg_data = data["config"]
    for key in ("n_list", "seeds", "corner", "sides"):
        cfg_data[key] = tuple(cfg_data[key])
    cfg = ExperimentConfig(**cfg_data)
    return ConvergenceReport(config=cfg, rows=data["rows"],
                             metadata=data["metadata"])
