"""Acceptance suite: one test per quantitative claim of the package.

Each test prints a single pass/fail line with the measured value so the
whole acceptance state can be read off the pytest -s output.  The long
end-to-end runs (cross-solver agreement, the N-sweep trend) live at the
end of the file.
"""

import math

import numpy as np
import sympy as sp

from bll import annulus, correctors, grid, measure_limits, reflections
from bll.cloud import Box, generate_cloud
from bll.fields import constant_field, from_sympy
from bll.fields import test_field_dictionary as field_dictionary
from bll.harness import ExperimentConfig, run_convergence
from bll.presets import g_preset, moment_preset
from bll.quadrature import box_rule, sphere_rule

BOX = Box((-1.25, -1.25, -1.25), (2.5, 2.5, 2.5))
MOMENTS = moment_preset("uniform", "uniform-z", BOX)
QUAD = box_rule(BOX.corner, BOX.sides, panels=5, order=6)


def _report(num, name, ok, detail):
    print(f"\ncriterion {num:02d} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"criterion {num} failed: {name} ({detail})"


def _cloud(n, seed=0):
    return generate_cloud(n, BOX, MOMENTS, seed=seed)


def test_criterion_01_closed_form_stokes_system():
    # the closed-form velocity/pressure satisfy the momentum balance; the
    # finite-difference residual must shrink at second order, and the
    # no-slip boundary values are exact
    v = np.array([0.8, -0.3, 0.5])
    pts = np.array([[1.31, 0.22, -0.45], [-0.4, 1.2, 0.61],
                    [0.9, -0.8, 0.7]])
    orders = []
    bc_worst = 0.0
    for R in (2.0, 5.0, 20.0):
        c = annulus.solve_coefficients(R)
        scale = min(1.0, R / 25.0)

        def residual(h):
            worst = 0.0
            for x in pts * (1.0 + 0.05 * scale):
                lap = np.zeros(3)
                gp = np.zeros(3)
                for i in range(3):
                    e = np.zeros(3)
                    e[i] = h
                    lap += (annulus.eval_velocity(c, v, x + e)
                            - 2.0 * annulus.eval_velocity(c, v, x)
                            + annulus.eval_velocity(c, v, x - e)) / h**2
                    gp[i] = (annulus.eval_pressure(c, v, x + e)
                             - annulus.eval_pressure(c, v, x - e)) / (2.0 * h)
                worst = max(worst, float(np.abs(lap - gp).max()))
            return worst

        r1, r2 = residual(0.02), residual(0.01)
        orders.append(math.log2(r1 / r2))
        omega, _ = sphere_rule(8, 16)
        bc_worst = max(bc_worst,
                       float(np.abs(annulus.eval_velocity(c, v, omega) - v).max()),
                       float(np.abs(annulus.eval_velocity(c, v, R * omega)).max()))
    ok = min(orders) >= 1.9 and bc_worst <= 1e-12
    _report(1, "closed-form Stokes system",
            ok, f"orders {['%.2f' % o for o in orders]}, boundary error "
                f"{bc_worst:.2e}")


def test_criterion_02_drag_law():
    free = annulus.solve_coefficients(annulus.INFINITE)
    v = np.array([0.8, -0.1, 0.6])
    omega, wts = sphere_rule(24, 48)
    force = (wts[:, None] * annulus.traction(free, v, omega)).sum(axis=0)
    rel = float(np.linalg.norm(force + 6.0 * math.pi * v)
                / (6.0 * math.pi * np.linalg.norm(v)))
    _report(2, "drag law -6 pi v", rel <= 1e-10, f"relative error {rel:.2e}")


def test_criterion_03_coefficient_asymptotics():
    # envelope constants frozen from the exact expansions:
    # alpha R^3 + 3/8 = -(27/32)/R + O(1/R^2), so the alpha envelope is
    # 1.0/R on the asymptotic range R >= 25 that the eps sweep visits
    # (the higher-order terms push the ratio to 3.5 down at R = 2); the
    # remaining coefficients use 2x their next-order scale
    worst = 0.0
    for R in (25.0, 100.0, 1e4):
        c = annulus.solve_coefficients(R)
        worst = max(worst, abs(c.alpha * R**3 + 0.375) * R / 1.0)
    for eps in (1e-2, 1e-3, 1e-4):
        R = eps ** (-2.0 / 3.0)
        c = annulus.scaled_coefficients(eps)
        worst = max(worst, abs(c.alpha1 + 0.375) * R / 1.0,
                    abs(c.beta1 - 1.125 * eps ** (2.0 / 3.0))
                    / (2.0 * eps ** (4.0 / 3.0) * R),
                    abs(c.gamma1 + 0.75 * eps) / (2.0 * eps ** (5.0 / 3.0)),
                    abs(c.delta1 - 0.25 * eps**3) / (2.0 * eps ** (11.0 / 3.0)))
    _report(3, "coefficient asymptotics envelopes", worst <= 1.0,
            f"worst envelope ratio {worst:.3f}")


def test_criterion_04_interaction_integral_slope():
    v = np.array([1.0, 0.5, -0.25])
    w = np.array([0.2, 1.0, 0.8])
    eps_list = (1e-2, 1e-3, 1e-4)
    devs = [abs(annulus.closed_form_norms(e, v, w)["interaction"]
                / (6.0 * math.pi * e * float(v @ w)) - 1.0)
            for e in eps_list]
    slope = float(np.polyfit(np.log(eps_list), np.log(devs), 1)[0])
    _report(4, "interaction integral -> Stokes drag", slope >= 0.6,
            f"fitted eps-slope {slope:.3f}, deviations "
            f"{['%.2e' % d for d in devs]}")


def test_criterion_05_corrector_norm_scalings():
    l2, h1, eps_list = [], [], []
    ke_ok = True
    for n in (8, 27, 64, 125):
        cloud = _cloud(n)
        field = correctors.CorrectorField(cloud)
        l2.append(correctors.corrector_l2_norm(field))
        h1.append(correctors.corrector_h1_seminorm(field))
        eps_list.append(cloud.eps)
        ke_ok = ke_ok and cloud.kinetic_energy <= 1.0
    exponent = float(np.polyfit(np.log(eps_list), np.log(l2), 1)[0])
    h1_bounded = max(h1) <= 2.5 * min(h1)
    ok = exponent >= 1.2 and h1_bounded and ke_ok
    _report(5, "corrector norm scalings", ok,
            f"L2 eps-exponent {exponent:.3f}, H1 range "
            f"[{min(h1):.1f}, {max(h1):.1f}], kinetic energy bounded {ke_ok}")


def test_criterion_06_surface_measure_limits():
    pairs = field_dictionary(BOX.corner, BOX.sides)
    medians, iso_rms, rad_rms = [], [], []
    for n in (8, 27, 64, 125):
        cloud = _cloud(n)
        per_pair, iso_err, rad_err = [], [], []
        for G, phi in pairs:
            sm = measure_limits.pair_surface_measures(cloud, G, phi,
                                                      MOMENTS, QUAD)
            ei = abs(sm["isotropic"] - sm["isotropic_limit"])
            er = abs(sm["radial"] - sm["radial_limit"])
            per_pair.append(math.hypot(ei, er))
            iso_err.append(ei)
            rad_err.append(er)
        medians.append(float(np.median(per_pair)))
        iso_rms.append(float(np.sqrt(np.mean(np.square(iso_err)))))
        rad_rms.append(float(np.sqrt(np.mean(np.square(rad_err)))))
    monotone = (all(a > b for a, b in zip(medians, medians[1:]))
                and all(a > b for a, b in zip(iso_rms, iso_rms[1:]))
                and all(a > b for a, b in zip(rad_rms, rad_rms[1:])))
    sm = measure_limits.pair_surface_measures(
        _cloud(64), constant_field([0.4, 1.0, -0.7]),
        constant_field([1.0, -0.5, 0.25]))
    ratio = sm["isotropic"] / sm["radial"]
    ratio_ok = abs(ratio - 3.0) <= 0.01 * 3.0
    _report(6, "surface-measure limits", monotone and ratio_ok,
            f"median errors {['%.3f' % m for m in medians]}, "
            f"iso/radial ratio {ratio:.12f}")


def test_criterion_07_auxiliary_field_apparatus():
    x, y, z = sp.symbols("x y z")
    rng = np.random.default_rng(5)
    cg = rng.uniform(-0.5, 0.5, (3, 4))
    cp = rng.uniform(-0.5, 0.5, (3, 4))
    G = from_sympy([c[0] + c[1] * x + c[2] * y + c[3] * z for c in cg], "G")
    phi = from_sympy([c[0] + c[1] * x * y + c[2] * sp.cos(sp.pi * z / 5)
                      + c[3] * z for c in cp], "phi")
    ratios = {"xi_l2": [], "xi_h1": [], "chi_l2": [], "chi_h1": []}
    for n in (8, 27, 64, 125):
        cloud = _cloud(n)
        aux = measure_limits.AuxiliaryFields(cloud, G)
        nm = measure_limits.auxiliary_norms(aux)
        r = cloud.r_sep
        ratios["xi_l2"].append(nm["xi_l2"] / r**4)
        ratios["xi_h1"].append(nm["xi_h1"] / r**2)
        ratios["chi_l2"].append(nm["chi_l2"] / r**4)
        ratios["chi_h1"].append(nm["chi_h1"] / r**2)
    bounded = all(max(v) <= 2.0 * min(v) for v in ratios.values())
    aux = measure_limits.AuxiliaryFields(_cloud(27), G)
    res = measure_limits.distributional_laplacian_check(aux, phi)
    resid = max(abs(res["xi_residual"]), abs(res["chi_residual"]))
    _report(7, "auxiliary-field apparatus", bounded and resid <= 1e-6,
            f"ratio spreads bounded {bounded}, distributional residual "
            f"{resid:.2e}")


def test_criterion_08_limit_equation_pairings():
    x, y, z = sp.symbols("x y z")
    w = from_sympy([0.1 * y, sp.cos(sp.pi * z / 5), 1 + 0.2 * x * x], "w")
    u = from_sympy([0.3 * z * z, 0.5 + 0.1 * x * y,
                    1 - 0.2 * sp.sin(sp.pi * y / 5)], "u")
    src_err, fr_err = [], []
    for n in (8, 27, 64, 125):
        cloud = _cloud(n)
        src = correctors.brinkman_source_pairing(cloud, w, MOMENTS, QUAD)
        fr = correctors.friction_pairing(cloud, u, w, MOMENTS, QUAD)
        src_err.append(abs(src["pairing"] - src["limit"]) / abs(src["limit"]))
        fr_err.append(abs(fr["pairing"] - fr["limit"]) / abs(fr["limit"]))
    ok = (all(a > b for a, b in zip(src_err, src_err[1:]))
          and all(a > b for a, b in zip(fr_err, fr_err[1:])))
    _report(8, "limit-equation pairings", ok,
            f"source errors {['%.4f' % e for e in src_err]}, friction errors "
            f"{['%.5f' % e for e in fr_err]}")


def test_criterion_09_solver_verification():
    u_exact, _, g = grid.manufactured_solution(BOX, nu=0.7, rho_coef="1.0")
    problem = grid.BrinkmanProblem(
        domain=BOX, g=g, rho=lambda p: np.ones(len(np.atleast_2d(p))),
        j=None, nu=0.7)
    errs, div_worst, h1l4_ok = [], 0.0, True
    c_p = grid.poincare_and_nu0(BOX, 0.0, 0.0)["C_P"]
    for cells in (10, 20):
        field = grid.solve_brinkman(problem,
                                    grid.SolverConfig(h=2.5 / cells,
                                                      tolerance=1e-9))
        pts = field.center_points().reshape(-1, 3)
        diff = field.center_velocity().reshape(-1, 3) - u_exact(pts)
        errs.append(float(np.sqrt((diff**2).sum() / (u_exact(pts) ** 2).sum())))
        div_worst = max(div_worst, float(np.abs(field.divergence()).max()))
        h1l4_ok = h1l4_ok and (field.l4_norm() ** 4
                               <= 4.0 * c_p * field.h1_seminorm() ** 4)
    order = math.log2(errs[0] / errs[1])
    pn = grid.poincare_and_nu0(BOX, g_norm=2.0, j_norm=0.0)
    nu0_err = abs(pn["nu0"] - 2.0 * pn["C_P"] ** 0.75 * math.sqrt(2.0))
    ok = (order >= 1.9 and div_worst <= 1e-6 and h1l4_ok
          and nu0_err <= 1e-13)
    _report(9, "grid solver verification", ok,
            f"order {order:.2f}, max divergence {div_worst:.1e}, "
            f"L4 inequality {h1l4_ok}, nu0 closed-root error {nu0_err:.1e}")


def test_criterion_10_cross_solver_consistency():
    cloud = _cloud(8)
    g = g_preset("down-z", BOX)
    pf = grid.solve_perforated(
        cloud, g, grid.SolverConfig(h=2.5 / 80, tolerance=1e-4,
                                    inner_tolerance=1e-6))
    pts = pf.center_points().reshape(-1, 3)
    ug = pf.center_velocity().reshape(-1, 3)
    sol = reflections.solve_mor_walled(
        cloud, g, grid.SolverConfig(h=2.5 / 32, tolerance=1e-8),
        tol=1e-3, max_reflections=40)
    um = reflections.evaluate_u_bar(sol, pts)
    rel = float(np.sqrt(np.sum((ug - um) ** 2) / np.sum(ug**2)))
    _report(10, "cross-solver consistency (N=8)", rel <= 0.10,
            f"relative L2 difference {rel:.4f}")


def test_criterion_11_end_to_end_convergence_trend():
    cfg = ExperimentConfig(n_list=(8, 27, 64), seeds=(0, 1, 2), method="mor")
    stokes = run_convergence(cfg)
    med_s = [stokes.median_errors()[n] for n in cfg.n_list]

    mf = moment_preset(cfg.rho, cfg.j, BOX)
    g_field = g_preset(cfg.g, BOX)
    gn = grid._field_l2(BOX, g_field, cfg.h_limit)
    jn = grid._field_l2(BOX, mf.j, cfg.h_limit)
    nu0 = grid.poincare_and_nu0(BOX, gn, jn)["nu0"]
    cfg_ns = ExperimentConfig(n_list=(8, 27, 64), seeds=(0, 1, 2),
                              method="mor", nu=2.0 * nu0, advection=True)
    navier = run_convergence(cfg_ns)
    med_n = [navier.median_errors()[n] for n in cfg_ns.n_list]

    rows_ok = all(r["status"] == "ok" for r in stokes.rows + navier.rows)
    picard_ok = all(r["picard_iterations"] >= 1 for r in navier.rows)
    dec_s = all(a > b for a, b in zip(med_s, med_s[1:]))
    dec_n = all(a > b for a, b in zip(med_n, med_n[1:]))
    ok = rows_ok and picard_ok and dec_s and dec_n
    _report(11, "end-to-end convergence trend", ok,
            f"Stokes medians {['%.3f' % m for m in med_s]}, "
            f"Navier-Stokes medians {['%.3f' % m for m in med_n]}, "
            f"all rows ok {rows_ok}, Picard converged {picard_ok}")
