"""Experiment driver.

Hardy-inequality and multiplier checks, test-function batteries, and the two
trace experiments: Lipschitz epigraphs with the linear extension, and
(ε, δ)-domains with the Whitney-reflection extension. Norm equivalences are
verified as two-sided ratio brackets plus refinement stability from ``J`` to
``J + 1``, since only the existence of the constants is known.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domains import (
    Domain, EpsDeltaDomain, SpecialLipschitzDomain, check_eps_delta, domain_from_config,
    pinched_dumbbell,
)
from .dyadic import Grid, GridFunction
from .extension import (
    collar_cubes, jones_devore_extend, lemma43_ratios, rychkov_extend, whitney_setup,
)
from .kernels import KernelFamily, ReproducingPair, kernel_from_config
from .norms import conv_norm, maximal_norm, osc_norm
from .weights import WeightSequence, weight_from_config

BRACKET = (1e-3, 1e3)
REFINE_TOL = 0.2


# -- Hardy inequality -----------------------------------------------------------------------

@dataclass
class HardyReport:
    mode: int
    K: int
    lhs: float
    rhs: float
    ratio: float
    budget: float

    @property
    def passed(self) -> bool:
        return math.isfinite(self.ratio) and self.ratio <= self.budget


def _weighted_lq(x: np.ndarray, alpha: float, q: float) -> float:
    k = np.arange(len(x))
    w = 2.0 ** (k * alpha) * np.abs(x)
    if math.isinf(q):
        return float(w.max()) if w.size else 0.0
    return float(np.sum(w ** q) ** (1 / q))


def hardy_majorant(a, lam: float | None, mu: float, mode: int, C: float = 1.0) -> np.ndarray:
    """The sequence ``b`` that attains the majorant of the chosen mode.

    Mode 1: ``b_k = C 2^{-kλ} (Σ_{j<=k} 2^{jλμ} |a_j|^μ)^{1/μ}``.
    Mode 2: ``b_k = C (Σ_{j>k} |a_j|^μ)^{1/μ}`` with ``a_j = 0`` past the end.
    """
    a = np.abs(np.asarray(a, float))
    k = np.arange(len(a))
    if mode == 1:
        s = np.cumsum(2.0 ** (k * lam * mu) * a ** mu)
        return C * 2.0 ** (-k * lam) * s ** (1 / mu)
    if mode == 2:
        tail = np.cumsum((a ** mu)[::-1])[::-1]
        return C * np.r_[tail[1:], 0.0] ** (1 / mu)
    raise ValueError(f"mode must be 1 or 2, got {mode}")


def hardy_check(a, alpha: float, lam: float | None, mu: float, q: float, mode: int,
                K: int | None = None, budget: float = 10.0) -> HardyReport:
    """Ratio of the weighted ``l_q`` sums of ``b`` and ``a`` up to truncation ``K``."""
    a = np.asarray(a, float)
    K = len(a) - 1 if K is None else K
    a = a[:K + 1]
    if not 0 < mu <= q:
        warnings.warn(f"need 0 < mu <= q (mu={mu}, q={q})")
    if mode == 1 and not lam > alpha:
        warnings.warn(f"mode 1 outside its hypothesis: lambda={lam} <= alpha={alpha}")
    b = hardy_majorant(a, lam, mu, mode)
    lhs, rhs = _weighted_lq(b, alpha, q), _weighted_lq(a, alpha, q)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return HardyReport(mode, K, lhs, rhs, ratio, budget)


def hardy_sequences(K: int = 40, seed: int = 0) -> dict:
    """Twenty sequences: geometric, polynomial decay and mixed, some with random signs."""
    rng = np.random.default_rng(seed)
    j = np.arange(K + 1)
    out = {}
    for rho in (0.3, 0.5, 0.7, 0.9, 1.0, 1.1, 1.2):
        out[f"geom-{rho}"] = rho ** j
    for g in (0.5, 1.0, 1.5, 2.0, 3.0, 4.0):
        out[f"poly-{g}"] = (1.0 + j) ** -g
    for rho, g in ((0.8, 1.0), (0.95, 2.0), (1.05, 0.5)):
        out[f"mixed-{rho}-{g}"] = rho ** j * (1.0 + j) ** -g
    for i in range(4):
        out[f"random-{i}"] = rng.choice([-1.0, 1.0], K + 1) * rng.uniform(0, 1, K + 1) * 0.9 ** j
    return out


HARDY_PARAMS = {1: dict(alpha=0.5, lam=1.5, mu=1.0, q=2.0), 2: dict(alpha=1.0, lam=None, mu=1.0, q=2.0)}


def hardy_battery(K: int = 40, budget: float = 10.0, seed: int = 0, params: dict | None = None) -> list:
    """Both modes on every compliant sequence; returns ``(name, report)`` pairs."""
    params = params or HARDY_PARAMS
    out = []
    for name, a in hardy_sequences(K, seed).items():
        for mode in (1, 2):
            out.append((f"{name}/mode{mode}", hardy_check(a, mode=mode, K=K, budget=budget,
                                                          **params[mode])))
    return out


def hardy_negative_control(alpha: float = 1.0, lam: float = 1.0, mu: float = 1.0, q: float = 2.0,
                           Ks=(5, 10, 20, 40)) -> dict:
    """Mode 1 with ``λ <= α`` on ``a_j = 2^{-jα}``: the ratio must grow with ``K``."""
    ratios = []
    for K in Ks:
        a = 2.0 ** (-alpha * np.arange(K + 1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ratios.append(hardy_check(a, alpha, lam, mu, q, 1, K).ratio)
    grows = all(b > a for a, b in zip(ratios, ratios[1:]))
    return {"Ks": list(Ks), "ratios": ratios, "grows": grows}


# -- batteries ------------------------------------------------------------------------------

def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
    return a / (a + b)


def cutoff(pts, center, radius: float):
    """Smooth cutoff: 1 on ``|x - c| <= radius/2``, 0 outside ``|x - c| < radius``."""
    rho = np.linalg.norm(np.asarray(pts) - np.asarray(center), axis=-1) / radius
    return 1.0 - _smooth_step(2 * rho - 1)


def _member(kind: str, center, radius: float, **kw) -> tuple:
    c = np.asarray(center, float)
    if kind == "const":
        return "const", lambda p: np.ones(p.shape[:-1])
    if kind == "monomial":
        ax, d = kw["axis"], kw["degree"]
        return f"x{ax + 1}^{d}", lambda p: ((p[..., ax] - c[ax]) / radius) ** d
    if kind == "bump":
        a, w = c + radius * np.asarray(kw["at"]), kw["width"] * radius
        return (f"bump{tuple(kw['at'])}-{kw['width']}",
                lambda p: np.exp(-np.sum((p - a) ** 2, axis=-1) / w ** 2))
    if kind == "power":
        a, th = c + radius * np.asarray(kw.get("at", (0.1, 0.05))), kw["theta"]
        return f"abs^{th}", lambda p: (np.linalg.norm(p - a, axis=-1) / radius) ** th
    if kind == "chirp":
        fr = kw.get("freq", 12.0)
        return (f"chirp-{fr}", lambda p: np.sin(fr * np.sum((p - c) ** 2, axis=-1) / radius ** 2)
                * np.exp(-np.sum((p - c) ** 2, axis=-1) / (0.4 * radius) ** 2))
    raise ValueError(f"unknown battery member {kind!r}")


DEFAULT_BATTERY = (
    [{"kind": "const"}]
    + [{"kind": "monomial", "axis": ax, "degree": d} for d in (1, 2, 3) for ax in (0, 1)]
    + [{"kind": "bump", "at": at, "width": w}
       for at in ((0.0, 0.0), (0.3, 0.2), (-0.25, -0.3)) for w in (0.15, 0.35)]
    + [{"kind": "power", "theta": th} for th in (0.5, 1.5)]
    + [{"kind": "chirp"}]
)


def make_battery(spec=None, center=(0.0, 0.0), radius: float = 1.0, cut: bool = True) -> dict:
    """Named callables ``pts -> values``; with ``cut`` each is multiplied by a smooth cutoff.

    ``spec`` is a list of member dicts (``kind`` plus parameters) or a ready
    dict of callables, which is returned unchanged.

    The cutoff makes every member compactly supported in the ball of ``radius``
    so that the zero extension past the grid box plays no role.
    """
    spec = DEFAULT_BATTERY if spec is None else spec
    if isinstance(spec, dict):
        return dict(spec)
    out = {}
    for entry in spec:
        entry = dict(entry)
        name, fn = _member(entry.pop("kind"), center, radius, **entry)
        if cut:
            fn = (lambda p, fn=fn: fn(p) * cutoff(p, center, radius))
        out[name] = fn
    return out


def sample_battery(battery: dict, grid: Grid, valid=None) -> dict:
    return {k: GridFunction.from_callable(grid, fn, valid) for k, fn in battery.items()}


# -- multiplier check -----------------------------------------------------------------------

@dataclass
class MultiplierReport:
    ratios: dict                     # fid -> {J: ratio}
    skipped: list
    max_ratio: float
    deltas: dict
    tol: float = REFINE_TOL

    @property
    def passed(self) -> bool:
        finite = all(math.isfinite(v) for r in self.ratios.values() for v in r.values())
        return finite and all(d <= self.tol for d in self.deltas.values())


def multiplier_check(battery: dict, omega: Callable, ws: WeightSequence, phi0, p: float, q: float,
                     K_max: int, grids, L_phi: int | None = None) -> MultiplierReport:
    """``conv_norm(ω f) / conv_norm(f)`` per battery member on each grid (coarse to fine)."""
    if L_phi is not None and not 1 + L_phi > ws.alpha[1]:
        warnings.warn(f"multiplier hypothesis 1 + L_phi > alpha2 fails ({L_phi}, {ws.alpha[1]})")
    if ws.sigma[1] < p:
        warnings.warn(f"multiplier hypothesis sigma2 >= p fails ({ws.sigma[1]} < {p})")
    ratios, skipped = {}, []
    for g in grids:
        w = omega(g.centers())
        for fid, fn in battery.items():
            f = GridFunction.from_callable(g, fn)
            den = conv_norm(f, ws, phi0, p, q, K_max).total
            if den == 0:
                skipped.append((fid, g.J))
                continue
            num = conv_norm(GridFunction(g, f.samples * w), ws, phi0, p, q, K_max).total
            ratios.setdefault(fid, {})[g.J] = num / den
    deltas = _deltas(ratios)
    mx = max((v for r in ratios.values() for v in r.values()), default=0.0)
    return MultiplierReport(ratios, skipped, mx, deltas)


def _deltas(ratios: dict) -> dict:
    """Relative change of each ratio between its two finest grids."""
    out = {}
    for fid, by_J in ratios.items():
        Js = sorted(by_J)
        if len(Js) >= 2:
            a, b = by_J[Js[-2]], by_J[Js[-1]]
            out[fid] = abs(b / a - 1) if a > 0 else (0.0 if b == 0 else math.inf)
    return out


# -- configs and reports ----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    domain: object = "half-plane"
    weight: dict = field(default_factory=lambda: {"family": "constant", "s": 0.8})
    kernel: dict = field(default_factory=lambda: {"shape": "cone", "M": 1.0, "L": 2, "Kmax": 4})
    params: dict = field(default_factory=dict)
    battery: list | None = None
    box: tuple = ((-2, -3), (2, 1))
    center: tuple = (0.0, 0.0)
    radius: float = 0.9
    seed: int = 0
    out: str | None = None

    DEFAULTS = dict(p=2.0, q=2.0, r=1.0, l=2, lam=2.0, c=1.0, k0=0, K_max=4, J=8,
                    bracket=BRACKET, refine_tol=REFINE_TOL)

    def __post_init__(self):
        self.params = {**self.DEFAULTS, **self.params}
        if self.params["J"] < self.params["K_max"] + 4:
            raise ValueError("need J >= K_max + 4")
        self.domain_obj()
        self.weights()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        for key in ("box", "center"):
            if key in d:
                d[key] = tuple(tuple(v) if isinstance(v, list) else v for v in d[key])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def domain_obj(self) -> Domain:
        return self.domain if isinstance(self.domain, Domain) else domain_from_config(self.domain)

    def weights(self) -> WeightSequence:
        if isinstance(self.weight, WeightSequence):
            return self.weight
        return weight_from_config({**self.weight, "p": self.params["p"]})

    def grid(self, J: int | None = None) -> Grid:
        return Grid(self.params["J"] if J is None else J, *self.box)

    def make_battery(self) -> dict:
        return make_battery(self.battery, self.center, self.radius)


@dataclass
class EquivalenceReport:
    experiment: str
    domain: str
    norms: dict = field(default_factory=dict)       # (fid, J) -> {quantity: value}
    ratios: dict = field(default_factory=dict)      # ratio name -> {fid: {J: value}}
    degenerate: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)      # extra named pass/fail checks
    extras: dict = field(default_factory=dict)
    bracket: tuple = BRACKET
    tol: float = REFINE_TOL

    def add(self, name: str, fid: str, J: int, value: float) -> None:
        self.ratios.setdefault(name, {}).setdefault(fid, {})[J] = float(value)

    def stats(self, name: str) -> dict:
        vals = np.array([v for r in self.ratios.get(name, {}).values() for v in r.values()])
        if vals.size == 0:
            return {"count": 0}
        return {"count": int(vals.size), "min": float(vals.min()), "median": float(np.median(vals)),
                "max": float(vals.max())}

    def deltas(self, name: str) -> dict:
        return _deltas(self.ratios.get(name, {}))

    def ratio_ok(self, name: str) -> bool:
        lo, hi = self.bracket
        vals = [v for r in self.ratios.get(name, {}).values() for v in r.values()]
        inside = bool(vals) and all(math.isfinite(v) and lo <= v <= hi for v in vals)
        return inside and all(d <= self.tol for d in self.deltas(name).values())

    @property
    def passed(self) -> bool:
        return all(self.ratio_ok(n) for n in self.ratios) and all(self.checks.values())

    def summary(self) -> list:
        lines = []
        for name in self.ratios:
            s, d = self.stats(name), self.deltas(name)
            worst = f"{max(d.values()):.3f}" if d else "n/a"
            lines.append(f"{self.experiment}[{self.domain}] {name}: n={s['count']} "
                         f"min={s['min']:.4g} median={s['median']:.4g} max={s['max']:.4g} "
                         f"max refinement delta={worst} "
                         f"{'pass' if self.ratio_ok(name) else 'FAIL'}")
        for name, ok in self.checks.items():
            lines.append(f"{self.experiment}[{self.domain}] {name}: {'pass' if ok else 'FAIL'}")
        return lines

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["experiment", "domain", "ratio", "fid", "J", "value"])
            for name, by_f in self.ratios.items():
                for fid, by_J in by_f.items():
                    for J, v in sorted(by_J.items()):
                        w.writerow([self.experiment, self.domain, name, fid, J, repr(v)])

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "domain": self.domain, "passed": self.passed,
                "stats": {n: self.stats(n) for n in self.ratios},
                "deltas": {n: self.deltas(n) for n in self.ratios},
                "ratios": {n: {f: {str(J): v for J, v in r.items()} for f, r in by_f.items()}
                           for n, by_f in self.ratios.items()},
                "norms": {f"{fid}@J{J}": v for (fid, J), v in self.norms.items()},
                "degenerate": self.degenerate, "checks": self.checks, "extras": self.extras}


def _levels(cfg: ExperimentConfig, refine: bool) -> list:
    J = cfg.params["J"]
    return [J, J + 1] if refine else [J]


# -- Lipschitz trace experiment -----------------------------------------------------------

def run_lipschitz_trace_experiment(cfg: ExperimentConfig, refine: bool = True) -> EquivalenceReport:
    """Intrinsic convolution norm on ``G`` against the maximal-function norm and the
    full-box norms of the linear extension and of the known global function.

    Ratios: ``extension = ||Ext f|| / ||f||_G``, ``restriction = ||f||_G / ||g||``
    and ``maximal = ||f||_max,G / ||f||_G`` (its maximum is the recorded constant
    of the maximal-function bound).
    """
    dom = cfg.domain_obj()
    if not isinstance(dom, SpecialLipschitzDomain):
        raise ValueError("the Lipschitz experiment needs an epigraph domain")
    ws = cfg.weights()
    P = cfg.params
    phi0, L, _ = kernel_from_config(cfg.kernel, dom.n)
    K = P["K_max"]
    pair = ReproducingPair(KernelFamily(phi0), L, K)
    A = P.get("A", max(-ws.alpha[0], 0.0) + 1.0)
    rep = EquivalenceReport("trace-lipschitz", dom.name, bracket=tuple(P["bracket"]),
                            tol=P["refine_tol"])
    battery = cfg.make_battery()
    for J in _levels(cfg, refine):
        g = cfg.grid(J)
        G = dom.mask(g)
        for fid, fn in battery.items():
            full = GridFunction.from_callable(g, fn)
            f = full.restrict(G)
            intr = conv_norm(f, ws, pair.family, P["p"], P["q"], K, mask=G).total
            if intr == 0:
                rep.degenerate.append((fid, J))
                continue
            mx = maximal_norm(f, ws, pair.family, A, P["c"], P["p"], P["q"], K, mask=G).total
            ext = rychkov_extend(f, pair)
            e = conv_norm(ext.extended, ws, pair.family, P["p"], P["q"], K).total
            gl = conv_norm(full, ws, pair.family, P["p"], P["q"], K).total
            rep.norms[(fid, J)] = {"intrinsic": intr, "maximal": mx, "extension": e, "global": gl}
            rep.add("extension", fid, J, e / intr)
            rep.add("restriction", fid, J, intr / gl)
            rep.add("maximal", fid, J, mx / intr)
    rep.extras["maximal_C"] = rep.stats("maximal").get("max", math.nan)
    rep.extras["A"] = A
    return rep


# -- (ε, δ) trace experiment --------------------------------------------------------------

def _check_hypotheses(ws: WeightSequence, p: float, r: float, l: int) -> list:
    notes = []
    s1, s2 = ws.sigma
    if r < p and s1 < r * p / (p - r):
        notes.append(f"sigma1={s1} < rp/(p-r)")
    if s2 < p:
        notes.append(f"sigma2={s2} < p")
    if not 0 < ws.alpha[0] <= ws.alpha[1] < l:
        notes.append(f"need 0 < alpha1 <= alpha2 < l (alpha={ws.alpha}, l={l})")
    if r > p:
        notes.append(f"r={r} > p={p}")
    for n in notes:
        warnings.warn(n)
    return notes


def run_epsdelta_trace_experiment(cfg: ExperimentConfig, refine: bool = True,
                                  lemma43: bool = True) -> EquivalenceReport:
    """Intrinsic oscillation norm on ``Ω`` against the oscillation norm of the
    Whitney-reflection extension and of the known global function.

    The full-side norms are taken over ``Ω ∪ collar`` (the set where the
    extension's partition of unity is complete), with levels from ``k = 0``.
    Boundary error ratios (``lemma43_ratios``) run over every collar cube ``R`` on the finest grid.
    """
    dom = cfg.domain_obj()
    if not isinstance(dom, EpsDeltaDomain):
        raise ValueError("the (eps, delta) experiment needs an EpsDeltaDomain")
    ws = cfg.weights()
    P = cfg.params
    l, r, p, q, K = P["l"], P["r"], P["p"], P["q"], P["K_max"]
    rep = EquivalenceReport("trace-epsdelta", dom.name, bracket=tuple(P["bracket"]),
                            tol=P["refine_tol"])
    rep.extras["hypothesis_notes"] = _check_hypotheses(ws, p, r, l)
    battery = cfg.make_battery()
    Js = _levels(cfg, refine)
    for J in Js:
        g = cfg.grid(J)
        setup = whitney_setup(dom, g)
        m = dom.mask(g)
        one = jones_devore_extend(GridFunction(g, np.ones(g.shape), m), setup, l, 2.0)
        near = m | one.diagnostics["collar"]
        l43 = []
        Rs = collar_cubes(dom, g, P.get("lemma43_levels", (2, 3)), within=near) \
            if lemma43 and J == Js[-1] else []
        for fid, fn in battery.items():
            full = GridFunction.from_callable(g, fn)
            f = full.restrict(m)
            intr = osc_norm(f, ws, l, p, q, r, K, mask=m).total
            if intr == 0:
                rep.degenerate.append((fid, J))
                continue
            ext = jones_devore_extend(f, setup, l, r, P["lam"])
            e = osc_norm(ext.extended.restrict(near), ws, l, p, q, r, K, mask=near, k_start=0).total
            gl = osc_norm(full.restrict(near), ws, l, p, q, r, K, mask=near, k_start=0).total
            rep.norms[(fid, J)] = {"intrinsic": intr, "extension": e, "global": gl,
                                   "near_best_ratio_max": ext.diagnostics["near_best_ratio_max"]}
            rep.add("extension", fid, J, e / intr)
            rep.add("restriction", fid, J, intr / gl)
            if Rs:
                l43 += [(fid, v) for v in lemma43_ratios(f, ext, Rs, setup.interior, l, r)]
        if l43:
            vals = np.array([v for _, v in l43])
            finite = vals[~np.isnan(vals)]
            rep.extras["lemma43"] = {"cubes": len(Rs), "evaluated": int(finite.size),
                                     "degenerate": int(np.isnan(vals).sum()),
                                     "max": float(finite.max()) if finite.size else math.nan}
            rep.checks["lemma43 finite"] = bool(np.all(np.isfinite(finite)))
    return rep


def dumbbell_control(J: int = 7, sample_pairs: int = 40, seed: int = 0) -> dict:
    """The pinched dumbbell must fail the (ε, δ) check."""
    g = Grid(J, (-1, -1), (2, 2))
    r = check_eps_delta(pinched_dumbbell(), g, sample_pairs, seed)
    return {"passed_check": r.passed, "eps_hat": r.eps_hat, "disconnected": len(r.disconnected),
            "control_ok": not r.passed}
