"""Acceptance suite: one test per criterion, each printing a pass/fail line."""

import math
import time

import numpy as np
import pytest

from varbesov import harness as H
from varbesov.domains import half_plane, koch_domain, l_shape, unit_square, zigzag
from varbesov.dyadic import DyadicCube, Grid, GridFunction, cube_bounds, quasi_norm_Lr
from varbesov.extension import jones_devore_extend, rychkov_extend, whitney_setup
from varbesov.kernels import KernelFamily, ReproducingPair, build_reproducing_pair, make_mother_kernel
from varbesov.polyapprox import (
    best_error, exponents, local_modulus, normalized_error, verify_local_equivalence,
    verify_subadditivity,
)
from varbesov.weights import (
    check_W_class, check_X_class, constant_smoothness, microlocal_weight, power_weight,
)

pytestmark = pytest.mark.acceptance


def _finish(acceptance, n, name, ok, detail, t0, budget):
    dt = time.perf_counter() - t0
    ok = bool(ok) and dt <= budget
    acceptance(n, name, ok, f"{detail} (budget {budget:.0f}s)", dt)
    assert ok, detail


def test_c01_polynomial_annihilation(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    grids = {1: Grid(10, (-2,), (2,)), 2: Grid(7, (-2, -2), (2, 2))}
    worst, cubes = 0.0, 0
    for n, g in grids.items():
        for l in (1, 2, 3):
            for r in (1.0, 2.0, math.inf):
                for _ in range(12):
                    k = int(rng.integers(0, 4))
                    idx = tuple(int(v) for v in rng.integers(-2 << k, 2 << k, n))
                    cube = DyadicCube(k, idx)
                    coef = rng.normal(size=len(exponents(n, l)))
                    poly = lambda p, coef=coef, l=l: sum(
                        c * np.prod([p[..., i] ** e[i] for i in range(n)], axis=0)
                        for c, e in zip(coef, exponents(n, l)))
                    f = GridFunction.from_callable(g, poly)
                    # sup of f near the cube, scaled like the normalised error
                    scale = quasi_norm_Lr(f, cube_bounds(cube).dilate(1.5), math.inf) \
                        * max(1.0, 2.0 ** (k * n / r))
                    rel = max(best_error(f, l, cube, r), normalized_error(f, l, cube, r),
                              local_modulus(f, l, cube, cube, r)) / scale
                    worst = max(worst, rel)
                    cubes += 1
    _finish(acceptance, 1, "polynomial annihilation", cubes >= 200 and worst <= 1e-10,
            f"{cubes} cubes, max relative value {worst:.2e}", t0, 60)


def test_c02_local_equivalence(acceptance):
    t0 = time.perf_counter()
    bat = H.make_battery(center=(0.5, 0.5), radius=1.0)
    stats = {}
    for J in (8, 9):
        g = Grid(J, (0, 0), (1, 1))
        stats[J] = verify_local_equivalence(H.sample_battery(bat, g), 2, 1.0, [0, 1, 2, 3]).stats()
    s8, s9 = stats[8], stats[9]
    drift = abs(s9["median"] / s8["median"] - 1)
    ok = all(s["min"] > 0 and math.isfinite(s["max"]) for s in stats.values()) and drift <= 0.2
    _finish(acceptance, 2, "local equivalence",
            ok, f"bracket J=9 [{s9['min']:.3g}, {s9['max']:.3g}] over {s9['count']} cubes, "
                f"median {s8['median']:.6g} -> {s9['median']:.6g} (drift {drift:.2e})", t0, 300)


def test_c03_subadditivity(acceptance):
    t0 = time.perf_counter()
    g = Grid(8, (-1, -1), (2, 2))
    worst = 0.0
    for fid, f in H.sample_battery(H.make_battery(center=(0.5, 0.5), radius=1.0), g).items():
        for k in (1, 2, 3):
            for c in (1.0, 9 / 8):
                worst = max(worst, verify_subadditivity(f, 2, 1.0, c, k, (0, 0), 50.0).ratio)
    _finish(acceptance, 3, "subadditivity", worst <= 50, f"max ratio {worst:.4g} (budget 50)", t0, 300)


def test_c04_hardy(acceptance):
    t0 = time.perf_counter()
    reps = H.hardy_battery(40, 10.0)
    neg = H.hardy_negative_control()
    worst = max(r.ratio for _, r in reps)
    modes = {r.mode for _, r in reps}
    ok = len(reps) == 40 and modes == {1, 2} and all(r.passed for _, r in reps) and neg["grows"]
    _finish(acceptance, 4, "Hardy inequality", ok,
            f"20 sequences x 2 modes, max ratio {worst:.3f}; negative control ratios "
            f"{[round(v, 2) for v in neg['ratios']]}", t0, 1)


def test_c05_weight_classes(acceptance):
    t0 = time.perf_counter()
    g = Grid(8, (0, 0), (2, 2))
    const = check_X_class(constant_smoothness(0.8, 2.0, sigma=(2.0, 2.0)), g, 5)
    const_ok = const.passed and abs(const.C1 - 1) <= 1e-12 and abs(const.C2 - 1) <= 1e-12 \
        and const.alpha3 == 0.0
    pw = check_X_class(power_weight(0.5, [[1.0, 1.0]], [0.5], p=2.0, sigma=(2.0, 2.0)), g, 5)
    gm = Grid(7, (0, 0), (1, 1))
    ml = microlocal_weight(0.5, 1.5, [[0.5, 0.5]], p=2.0)
    mlw = check_W_class(ml, gm, 4)
    fam_ok = all(r.passed and math.isfinite(r.C1) and math.isfinite(r.C2) for r in (pw, mlw))
    bad = check_X_class(constant_smoothness(0.8, 2.0).with_params(alpha=(0.8, 0.3)), Grid(8, (0, 0), (1, 1)), 6)
    ok = const_ok and fam_ok and not bad.passed
    _finish(acceptance, 5, "weight classes", ok,
            f"constant C1={const.C1:.12g} C2={const.C2:.12g} a3={const.alpha3}; "
            f"power C1={pw.C1:.3g} C2={pw.C2:.3g}; microlocal C1={mlw.C1:.3g} C2={mlw.C2:.3g}; "
            f"mis-declared alpha2 {'fails' if not bad.passed else 'PASSES'}", t0, 60)


def test_c06_whitney_invariants(acceptance):
    t0 = time.perf_counter()
    cases = [(half_plane(), Grid(9, (-2, -2), (2, 2))), (unit_square(), Grid(9, (-1, -1), (2, 2))),
             (l_shape(), Grid(9, (-1, -1), (2, 2))), (koch_domain(2), Grid(9, (-1, -1), (2, 2)))]
    ok, parts = True, []
    for dom, g in cases:
        S = whitney_setup(dom, g)
        for W in (S.interior, S.exterior):
            inv = W.check_invariants()
            ov = W.overlap_multiplicity()
            ok &= bool(inv["ok"] and inv["disjoint"]) and 1 <= inv["min_ratio"] \
                and inv["max_ratio"] <= 4 and ov <= 12
        s = S.reflection.summary()
        ok &= bool(s["defining_ok"]) and math.isfinite(s["multiplicity"])
        parts.append(f"{dom.name}: overlap {S.exterior.overlap_multiplicity()}/"
                     f"{S.interior.overlap_multiplicity()} multiplicity {s['multiplicity']}")
    _finish(acceptance, 6, "Whitney invariants", ok, "; ".join(parts), t0, 60)


def test_c07_extension_identities(acceptance):
    t0 = time.perf_counter()
    g = Grid(8, (-2, -3), (2, 1))
    G = zigzag().mask(g)
    pair = ReproducingPair(KernelFamily(make_mother_kernel("cone", 2)), 2, 4)
    bat = H.make_battery(center=(0.0, 0.0), radius=0.9)
    f = GridFunction.from_callable(g, bat["bump(0.3, 0.2)-0.35"], G)
    h = GridFunction.from_callable(g, bat["abs^0.5"], G)
    E = rychkov_extend(f, pair)
    trace_r = np.array_equal(E.extended.samples[G], f.samples[G])
    lhs = rychkov_extend(f * 1.7 + h * -0.4, pair).extended.samples
    rhs = 1.7 * E.extended.samples - 0.4 * rychkov_extend(h, pair).extended.samples
    lin = float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(lhs)))
    ok = trace_r and lin <= 1e-12
    poly_err, one_err, trace_j = 0.0, 0.0, True
    for dom in (unit_square(), l_shape()):
        gs = Grid(8, (-1, -1), (2, 2))
        S = whitney_setup(dom, gs)
        m = dom.mask(gs)
        one = jones_devore_extend(GridFunction(gs, np.ones(gs.shape), m), S, 2, 2.0)
        col = one.diagnostics["collar"]
        one_err = max(one_err, float(np.max(np.abs(one.extended.samples[m | col] - 1))))
        for l, poly in ((2, lambda p: 1 + 2 * p[..., 0] - p[..., 1]),
                        (3, lambda p: 0.5 - p[..., 0] * p[..., 1] + p[..., 1] ** 2)):
            fp = GridFunction.from_callable(gs, poly, m)
            Ep = jones_devore_extend(fp, S, l, 2.0)
            trace_j &= np.array_equal(Ep.extended.samples[m], fp.samples[m])
            poly_err = max(poly_err, float(np.max(np.abs(Ep.extended.samples - poly(gs.centers()))[col])))
        fb = GridFunction.from_callable(gs, H.make_battery(center=(0.5, 0.5), radius=1.2)["chirp-12.0"], m)
        trace_j &= np.array_equal(jones_devore_extend(fb, S, 2, 1.0).extended.samples[m], fb.samples[m])
    ok &= trace_j and poly_err <= 1e-8 and one_err <= 1e-10
    _finish(acceptance, 7, "extension identities", ok,
            f"traces exact={trace_r and trace_j}, linearity {lin:.1e}, collar polynomial error "
            f"{poly_err:.1e}, constant error {one_err:.1e}", t0, 120)


def test_c08_reproducing_pair(acceptance):
    t0 = time.perf_counter()
    pair = build_reproducing_pair(make_mother_kernel("cone", 2), 2, 5, J=9)
    res = [pair.residuals[K] for K in (3, 4, 5)]
    ok = res[2] <= 1e-2 and res[0] > res[1] > res[2]
    _finish(acceptance, 8, "reproducing pair", ok,
            f"residuals K=3..5: {', '.join(f'{v:.3e}' for v in res)}", t0, 120)


def test_c09_lipschitz_trace(acceptance):
    t0 = time.perf_counter()
    ok, parts, C = True, [], 0.0
    for dom in ("half-plane", "zigzag"):
        cfg = H.ExperimentConfig(domain=dom)
        rep = H.run_lipschitz_trace_experiment(cfg, refine=True)
        ok &= rep.passed and not rep.degenerate
        C = max(C, rep.extras["maximal_C"])
        for name in ("extension", "restriction"):
            s, d = rep.stats(name), rep.deltas(name)
            parts.append(f"{dom} {name} [{s['min']:.3g}, {s['max']:.3g}] delta {max(d.values()):.3f}")
    ok &= math.isfinite(C)
    _finish(acceptance, 9, "Lipschitz trace", ok,
            "; ".join(parts) + f"; maximal-function constant C={C:.3f} (A=1)", t0, 900)


def test_c10_epsdelta_trace(acceptance):
    t0 = time.perf_counter()
    ok, parts = True, []
    for dom in ("unit-square", "L-shape", "koch"):
        cfg = H.ExperimentConfig(domain=dom, box=((-1, -1), (2, 2)), center=(0.5, 0.5), radius=1.2,
                                 params={"J": 8, "K_max": 4})
        rep = H.run_epsdelta_trace_experiment(cfg, refine=True)
        ok &= rep.passed and not rep.degenerate
        for name in ("extension", "restriction"):
            s, d = rep.stats(name), rep.deltas(name)
            parts.append(f"{dom} {name} [{s['min']:.3g}, {s['max']:.3g}] delta {max(d.values()):.3f}")
        parts.append(f"{dom} lemma43 max {rep.extras['lemma43']['max']:.3g}")
    ctl = H.dumbbell_control()
    ok &= ctl["control_ok"]
    parts.append(f"dumbbell fails check: {ctl['control_ok']}")
    _finish(acceptance, 10, "(eps,delta) trace", ok, "; ".join(parts), t0, 1200)
