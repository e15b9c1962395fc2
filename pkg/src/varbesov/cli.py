"""Command-line entry point: ``varbesov <command> <config> [--out DIR] [--seed N] [--refine] [--json]``.

``config`` is a JSON file with the fields of :class:`ExperimentConfig`, or
``default`` for the built-in defaults. The exit code is 0 iff every
configured budget passes.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import harness as H
from .domains import EpsDeltaDomain, SpecialLipschitzDomain
from .dyadic import Grid, GridFunction
from .extension import (
    collar_cubes, jones_devore_extend, lemma43_ratios, rychkov_extend, whitney_setup,
)
from .kernels import KernelFamily, ReproducingPair, build_reproducing_pair, kernel_from_config
from .norms import conv_norm, maximal_norm, osc_norm, osc_norm_discrete
from .polyapprox import verify_local_equivalence, verify_subadditivity


def _config(args) -> H.ExperimentConfig:
    if args.config == "default":
        cfg = H.ExperimentConfig()
    else:
        cfg = H.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    return cfg


def _outdir(cfg) -> Path | None:
    if not cfg.out:
        return None
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _function(cfg, grid, valid=None) -> tuple:
    bat = cfg.make_battery()
    fid = cfg.params.get("function") or next(k for k in bat if k.startswith("bump"))
    return fid, GridFunction.from_callable(grid, bat[fid], valid)


# -- commands -----------------------------------------------------------------------------

def cmd_whitney(cfg, args) -> tuple:
    dom = cfg.domain_obj()
    g = cfg.grid()
    setup = whitney_setup(dom, g)
    out = {"domain": dom.name}
    ok = True
    for side, W in (("interior", setup.interior), ("exterior", setup.exterior)):
        inv = W.check_invariants()
        out[side] = {**inv, "cubes": len(W.cubes), "floor": len(W.floor),
                     "overlap": W.overlap_multiplicity()}
        ok &= bool(inv["ok"] and inv["disjoint"]) and out[side]["overlap"] <= 12
    out["reflection"] = setup.reflection.summary()
    ok &= bool(out["reflection"]["defining_ok"])
    d = _outdir(cfg)
    if d:
        for side, W in (("interior", setup.interior), ("exterior", setup.exterior)):
            with open(d / f"whitney_{side}.csv", "w") as fh:
                fh.write("level,index,side,dist\n")
                for q, dist in zip(W.cubes, W.dist):
                    fh.write(f"{q.level},{' '.join(map(str, q.index))},{q.side!r},{dist!r}\n")
    lines = [f"whitney[{dom.name}] {side}: cubes={out[side]['cubes']} "
             f"ratio=[{out[side]['min_ratio']:.3g}, {out[side]['max_ratio']:.3g}] "
             f"overlap={out[side]['overlap']}" for side in ("interior", "exterior")]
    lines.append(f"whitney[{dom.name}] reflection: {out['reflection']}")
    return ok, out, lines


def cmd_extend(cfg, args) -> tuple:
    dom = cfg.domain_obj()
    g = cfg.grid()
    m = dom.mask(g)
    fid, f = _function(cfg, g, m)
    P = cfg.params
    if isinstance(dom, SpecialLipschitzDomain):
        phi0, L, _ = kernel_from_config(cfg.kernel, dom.n)
        res = rychkov_extend(f, ReproducingPair(KernelFamily(phi0), L, P["K_max"]))
    else:
        res = jones_devore_extend(f, whitney_setup(dom, g), P["l"], P["r"], P["lam"])
    trace_ok = bool(np.array_equal(res.extended.samples[m], f.samples[m]))
    d = _outdir(cfg)
    if d:
        res.dump(d / "extension")
    diag = {k: v for k, v in res.diagnostics.items() if not isinstance(v, np.ndarray)}
    out = {"function": fid, "trace_exact": trace_ok, "diagnostics": diag}
    return trace_ok, out, [f"extend[{dom.name}] {fid}: trace exact={trace_ok} {diag}"]


def cmd_norm(cfg, args) -> tuple:
    g = cfg.grid()
    P = cfg.params
    dom = cfg.domain_obj()
    mask = dom.mask(g) if P.get("masked") else None
    fid, f = _function(cfg, g)
    ws = cfg.weights()
    kind = P.get("norm", "osc")
    phi0, _, _ = kernel_from_config(cfg.kernel, g.n)
    if kind == "conv":
        rep = conv_norm(f, ws, phi0, P["p"], P["q"], P["K_max"], mask)
    elif kind == "maximal":
        A = P.get("A", max(-ws.alpha[0], 0.0) + 1.0)
        rep = maximal_norm(f, ws, phi0, A, P["c"], P["p"], P["q"], P["K_max"], mask)
    elif kind == "osc":
        rep = osc_norm(f, ws, P["l"], P["p"], P["q"], P["r"], P["K_max"], mask)
    elif kind == "osc-discrete":
        rep = osc_norm_discrete(f, ws, P["l"], P["p"], P["q"], P["r"], P["c"], P["k0"],
                                P["K_max"], within=mask)
    else:
        raise ValueError(f"unknown norm {kind!r}")
    d = _outdir(cfg)
    if d:
        rep.to_csv(d / f"norm_{kind}.csv")
    ok = math.isfinite(rep.total)
    return ok, json.loads(rep.to_json()), [f"norm[{kind}] {fid}: total={rep.total:.6g}"]


def cmd_verify(cfg, args) -> tuple:
    """Local equivalence, subadditivity, the maximal-function bound and the Whitney checks."""
    P = cfg.params
    dom = cfg.domain_obj()
    l, r = P["l"], P["r"]
    bat = cfg.make_battery()
    out, lines, ok = {}, [], True
    # local equivalence on the unit cube around the battery centre
    meds = []
    Js = [7, 8] if args.refine else [7]
    for J in Js:
        lo = tuple(int(np.floor(c)) for c in cfg.center)
        g = Grid(J, lo, tuple(v + 1 for v in lo))
        rep = verify_local_equivalence(H.sample_battery(bat, g), l, r, [0, 1, 2])
        st = rep.stats()
        meds.append(st.get("median", math.nan))
        out[f"local_equivalence_J{J}"] = st
        good = st["count"] > 0 and 0 < st["min"] and math.isfinite(st["max"])
        ok &= good
        lines.append(f"verify local-equivalence J={J}: {st} {'pass' if good else 'FAIL'}")
    if len(meds) == 2:
        drift = abs(meds[1] / meds[0] - 1)
        out["local_equivalence_drift"] = drift
        ok &= drift <= P["refine_tol"]
        lines.append(f"verify local-equivalence median drift={drift:.3f}")
    g = cfg.grid()
    budget = P.get("subadditivity_budget", 50.0)
    worst = 0.0
    m0 = tuple(int(np.floor(c)) for c in cfg.center)
    for fid, f in H.sample_battery(bat, g).items():
        for k in (1, 2, 3):
            for c in (1.0, 9 / 8):
                worst = max(worst, verify_subadditivity(f, l, r, c, k, m0, budget).ratio)
    out["subadditivity_max"] = worst
    ok &= worst <= budget
    lines.append(f"verify subadditivity: max ratio={worst:.4g} budget={budget}")
    ws = cfg.weights()
    phi0, _, _ = kernel_from_config(cfg.kernel, g.n)
    A = P.get("A", max(-ws.alpha[0], 0.0) + 1.0)
    C = 0.0
    for fid, f in H.sample_battery(bat, g).items():
        cv = conv_norm(f, ws, phi0, P["p"], P["q"], P["K_max"]).total
        if cv > 0:
            C = max(C, maximal_norm(f, ws, phi0, A, P["c"], P["p"], P["q"], P["K_max"]).total / cv)
    out["maximal_C"] = C
    ok &= math.isfinite(C)
    lines.append(f"verify maximal <= C conv: C={C:.4g}")
    if isinstance(dom, EpsDeltaDomain):
        setup = whitney_setup(dom, g)
        s = setup.reflection.summary()
        out["reflection"] = s
        ok &= bool(s["defining_ok"]) and math.isfinite(s["multiplicity"])
        lines.append(f"verify reflection: {s}")
        m = dom.mask(g)
        one = jones_devore_extend(GridFunction(g, np.ones(g.shape), m), setup, l, 2.0)
        Rs = collar_cubes(dom, g, (2, 3), within=m | one.diagnostics["collar"])
        fid, f = _function(cfg, g, m)
        ext = jones_devore_extend(f, setup, l, r, P["lam"])
        vals = lemma43_ratios(f, ext, Rs, setup.interior, l, r)
        fin = vals[~np.isnan(vals)]
        good = bool(fin.size == 0 or np.all(np.isfinite(fin)))
        out["lemma43"] = {"cubes": len(Rs), "max": float(fin.max()) if fin.size else math.nan}
        ok &= good
        lines.append(f"verify lemma43: {out['lemma43']} {'pass' if good else 'FAIL'}")
    return ok, out, lines


def cmd_hardy(cfg, args) -> tuple:
    P = cfg.params
    K = int(P.get("hardy_K", 40))
    budget = float(P.get("hardy_budget", 10.0))
    reps = H.hardy_battery(K, budget, cfg.seed)
    neg = H.hardy_negative_control()
    worst = max(r.ratio for _, r in reps)
    ok = all(r.passed for _, r in reps) and neg["grows"]
    out = {"max_ratio": worst, "cases": len(reps), "negative_control": neg}
    d = _outdir(cfg)
    if d:
        with open(d / "hardy.csv", "w") as fh:
            fh.write("case,mode,K,lhs,rhs,ratio\n")
            for name, r in reps:
                fh.write(f"{name},{r.mode},{r.K},{r.lhs!r},{r.rhs!r},{r.ratio!r}\n")
    return ok, out, [f"hardy: {len(reps)} cases max ratio={worst:.4g} budget={budget}",
                     f"hardy negative control ratios={np.round(neg['ratios'], 3).tolist()} "
                     f"grows={neg['grows']}"]


def _experiment(run, cfg, args) -> tuple:
    rep = run(cfg, refine=args.refine)
    d = _outdir(cfg)
    if d:
        rep.to_csv(d / f"{rep.experiment}_{rep.domain}.csv")
    return rep.passed, rep.to_dict(), rep.summary()


def cmd_trace_lipschitz(cfg, args) -> tuple:
    return _experiment(H.run_lipschitz_trace_experiment, cfg, args)


def cmd_trace_epsdelta(cfg, args) -> tuple:
    ok, out, lines = _experiment(H.run_epsdelta_trace_experiment, cfg, args)
    if cfg.params.get("dumbbell_control", True):
        ctl = H.dumbbell_control()
        out["dumbbell"] = ctl
        ok &= ctl["control_ok"]
        lines.append(f"trace-epsdelta dumbbell control: check passed={ctl['passed_check']} "
                     f"{'pass' if ctl['control_ok'] else 'FAIL'}")
    return ok, out, lines


def cmd_repro_pair(cfg, args) -> tuple:
    phi0, L, K = kernel_from_config(cfg.kernel, 2)
    J = int(cfg.params.get("pair_J", 9))
    tol = float(cfg.params.get("pair_tol", 1e-2))
    try:
        pair = build_reproducing_pair(phi0, L, K, J=J, tol=tol)
    except ValueError as e:
        return False, {"error": str(e)}, [f"repro-pair: {e}"]
    res = [pair.residuals[k] for k in sorted(pair.residuals)]
    mono = all(b <= a for a, b in zip(res[3:], res[4:]))
    out = {"L": L, "K_max": K, "J": J, "residuals": res, "monotone_from_3": mono}
    return mono, out, [f"repro-pair L={L} K_max={K} J={J}: residuals="
                       f"{[f'{v:.3e}' for v in res]} monotone={mono}"]


COMMANDS = {
    "whitney": cmd_whitney, "extend": cmd_extend, "norm": cmd_norm, "verify": cmd_verify,
    "hardy": cmd_hardy, "trace-lipschitz": cmd_trace_lipschitz,
    "trace-epsdelta": cmd_trace_epsdelta, "repro-pair": cmd_repro_pair,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="varbesov", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", help="JSON config file, or 'default'")
    ap.add_argument("--out", help="directory for CSV and grid dumps")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--refine", action="store_true", help="run J and J+1 and report deltas")
    ap.add_argument("--json", action="store_true", help="print a machine-readable report")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _config(args)
    ok, out, lines = COMMANDS[args.command](cfg, args)
    if args.json:
        print(json.dumps({"command": args.command, "passed": bool(ok), "report": out},
                         default=str, indent=1))
    else:
        for line in lines:
            print(line)
        print(f"{args.command}: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
