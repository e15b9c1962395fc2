"""Quasi-norm functionals on grids.

Convolution norms (plain or restricted to an open set ``G``), sliding-window
oscillation norms (plain or with differences confined to ``Ω``), the discrete
cube form built from best approximations, and maximal-function norms. Every
functional returns a :class:`NormReport` holding the per-level contributions
so the total can be recomputed from them.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _lattice as lat
from .dyadic import GridFunction, block_reduce, lq_sum
from .kernels import Kernel, KernelFamily, cube_sup, maximal_fields
from .polyapprox import tile_errors
from .weights import WeightSequence

RHO = 8            # nodes per window side for the oscillation levels
BASE_NODES = 64    # nodes per window side for the zero-level term
STAR = 9 / 8


@dataclass(frozen=True)
class NormReport:
    tag: str
    total: float
    contributions: dict            # level -> contribution
    q: float
    base: float = 0.0              # additive zero-level term (0 if absent)
    params: dict = field(default_factory=dict)
    skipped: int = 0

    def recompute(self) -> float:
        return lq_sum(list(self.contributions.values()), self.q) + self.base

    def rows(self) -> list:
        out = [(self.tag, k, v, self.total) for k, v in sorted(self.contributions.items())]
        if self.base:
            out.append((self.tag, "base", self.base, self.total))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["norm_tag", "k", "contribution", "total"])
            w.writerows(self.rows())

    def to_json(self) -> str:
        return json.dumps({"tag": self.tag, "total": self.total, "base": self.base,
                           "contributions": {str(k): v for k, v in self.contributions.items()},
                           "skipped": self.skipped, "params": self.params}, default=str)


def _lp(values: np.ndarray, weight: float, p: float) -> float:
    """``(Σ weight |v|^p)^{1/p}`` or the max for ``p = inf``."""
    a = np.abs(np.asarray(values, float))
    if a.size == 0:
        return 0.0
    if math.isinf(p):
        return float(a.max())
    return float((np.sum(a ** p) * weight) ** (1.0 / p))


def _report(tag, contribs, q, base=0.0, params=None, skipped=0) -> NormReport:
    total = lq_sum(list(contribs.values()), q) + base
    return NormReport(tag, total, dict(contribs), q, base, dict(params or {}), skipped)


def _family(phi0) -> KernelFamily:
    return phi0 if isinstance(phi0, KernelFamily) else KernelFamily(phi0)


# -- convolution norm --------------------------------------------------------------

def conv_norm(f: GridFunction, ws: WeightSequence, phi0, p: float, q: float, K_max: int,
              mask: np.ndarray | None = None) -> NormReport:
    """``(Σ_k ||t_k (φ_k * f) | L_p(box or G)||^q)^{1/q}``."""
    fam = _family(phi0)
    g = f.grid
    vals = f.zero_extended()
    sel = np.ones(g.shape, bool) if mask is None else np.asarray(mask, bool)
    contribs = {}
    for k in range(K_max + 1):
        conv = fam.convolve(k, vals, g.J)
        t = np.asarray(ws.on_grid(g, k))
        contribs[k] = _lp((t * conv)[sel], g.cell_volume, p)
    params = dict(p=p, q=q, kernel=fam.phi0.name, K_max=K_max, masked=mask is not None)
    return _report("conv", contribs, q, params=params)


# -- maximal-function norm -------------------------------------------------------------

def maximal_norm(f: GridFunction, ws: WeightSequence, phi0, A: float, c: float, p: float,
                 q: float, K_max: int, mask: np.ndarray | None = None) -> NormReport:
    """``(Σ_j (Σ_m t_{j,m}^p (M^G_A(m, j, c) f)^p)^{q/p})^{1/q}``."""
    if A <= max(-ws.alpha[0], 0.0):
        warnings.warn(f"A={A} does not exceed max(-alpha1, 0)")
    fam = _family(phi0)
    g = f.grid
    vals = f.zero_extended()
    convs = [fam.convolve(k, vals, g.J) for k in range(K_max + 1)]
    contribs = {}
    for j in range(K_max + 1):
        M = maximal_fields(f, fam, A, j, K_max, c, mask, convs)
        t = np.asarray(ws.cell_norms(g, j)).ravel()
        contribs[j] = _lp(t * M, 1.0, p)
    params = dict(p=p, q=q, A=A, c=c, kernel=fam.phi0.name, K_max=K_max, masked=mask is not None)
    return _report("maximal", contribs, q, params=params)


# -- sliding-window oscillation norm --------------------------------------------------------

_FIELD_CACHE: dict = {}


def _difference_field(lattice, l, reach, U):
    key = (lattice, l, reach, None if U is None else hash(U.tobytes()))
    if key not in _FIELD_CACHE:
        if len(_FIELD_CACHE) > 32:
            _FIELD_CACHE.clear()
        _FIELD_CACHE[key] = lat.DifferenceField(lattice, l, reach, U=U)
    return _FIELD_CACHE[key]


def _power_stride(cells: int, nodes: int, grid) -> int:
    s = 1
    while s * 2 * nodes <= cells and all(n % (s * 2) == 0 for n in grid.shape):
        s *= 2
    return s


def window_modulus(f: GridFunction, l: int, r: float, k: int, U: np.ndarray | None = None,
                   rho: int = RHO):
    """``x ↦ δ^l_r(x + 2^{-k} I, U) f`` on a node lattice; returns ``(lattice, values)``.

    The window has side ``L = 2^{1-k}`` and ``h`` ranges over ``L·I``.
    """
    g = f.grid
    cells = 1 << (g.J + 1 - k)
    s = _power_stride(cells, rho, g)
    lattice = lat.NodeLattice(g, s)
    reach = cells // s
    half = reach // 2
    field_ = _difference_field(lattice, l, reach, U)
    # window sums (maxes) commute with the weighted step sum (max)
    acc = np.zeros(lattice.shape)
    for w, a in field_.fields(f.zero_extended(), f.domain, r):
        if math.isinf(r):
            np.maximum(acc, a, out=acc)
        else:
            acc += w * a
    if math.isinf(r):
        return lattice, lat.window_max(acc, half)
    acc = np.maximum(lat.window_sum(acc, half), 0.0)
    L = 2.0 ** (1 - k)
    return lattice, (acc * lattice.weight ** 2 / L ** (2 * g.n)) ** (1.0 / r)


def window_lr(f: GridFunction, r: float, base_nodes: int = BASE_NODES):
    """``x ↦ ||f | L_r((x + I) ∩ domain)||`` on a node lattice; returns ``(lattice, values)``."""
    g = f.grid
    cells = 1 << (g.J + 1)
    s = _power_stride(cells, base_nodes, g)
    lattice = lat.NodeLattice(g, s)
    half = (cells // s) // 2
    a = np.abs(f.zero_extended())
    if math.isinf(r):
        return lattice, lat.window_max(block_reduce(a, s, "max"), half)
    mass = block_reduce(a ** r, s) * g.cell_volume
    return lattice, np.maximum(lat.window_sum(mass, half), 0.0) ** (1.0 / r)


def osc_norm(f: GridFunction, ws: WeightSequence, l: int, p: float, q: float, r: float,
             K_max: int, mask: np.ndarray | None = None, k_start: int | None = None,
             rho: int = RHO, base_nodes: int = BASE_NODES) -> NormReport:
    """Sliding-window oscillation norm.

    Unmasked: ``(Σ_{k>=0} ||t_k δ^l_r(· + 2^{-k} I) f | L_p||^q)^{1/q} + ||t_0 ||f|L_r(· + I)|| | L_p||``.
    With ``mask = Ω`` the differences are confined to ``Ω``, ``x`` ranges over
    ``Ω``, the levels start at ``k = 1`` and the base window is ``(x + I) ∩ Ω``.
    """
    if r > p:
        warnings.warn(f"r={r} exceeds p={p}")
    g = f.grid
    U = None if mask is None else np.asarray(mask, bool)
    if U is not None:
        f = f.restrict(U)
    k_start = (0 if U is None else 1) if k_start is None else k_start
    contribs = {}
    for k in range(k_start, K_max + 1):
        lattice, d = window_modulus(f, l, r, k, U, rho)
        t = lattice.take(np.asarray(ws.on_grid(g, k)))
        sel = np.ones(lattice.shape, bool) if U is None else lattice.take(U)
        contribs[k] = _lp((t * d)[sel], lattice.weight, p)
    lattice, b = window_lr(f, r, base_nodes)
    t0 = lattice.take(np.asarray(ws.on_grid(g, 0)))
    sel = np.ones(lattice.shape, bool) if U is None else lattice.take(U)
    base = _lp((t0 * b)[sel], lattice.weight, p)
    params = dict(p=p, q=q, r=r, l=l, K_max=K_max, k_start=k_start, rho=rho,
                  base_nodes=base_nodes, masked=U is not None)
    return _report("osc", contribs, q, base, params)


# -- discrete cube form ------------------------------------------------------------

def inside_cubes(mask: np.ndarray, grid, k: int, c: float = STAR) -> np.ndarray:
    """Level-k tiling cubes whose dilate ``c Q`` has all its cells inside ``mask``."""
    out = np.where(np.asarray(mask, bool), 0.0, 1.0)
    return cube_sup(out, grid, k, c) == 0


def osc_norm_discrete(f: GridFunction, ws: WeightSequence, l: int, p: float, q: float, r: float,
                      c: float = 1.0, k0: int = 0, K_max: int = 5, within: np.ndarray | None = None,
                      max_nodes: int | None = None) -> NormReport:
    """``(Σ_{k>=k0} (Σ_m t_{k,m}^p 𝓔_l(f, cQ_{k,m})_r^p)^{q/p})^{1/q} + (Σ_m t_{k0,m}^p ||f|L_r(Q_{k0,m})||^p)^{1/p}``.

    ``within`` restricts ``m`` to cubes with ``Q* ⊂ within``. Under-resolved
    cubes are skipped and counted.
    """
    if not 1 <= c <= STAR:
        warnings.warn(f"dilation c={c} outside [1, 9/8]")
    g = f.grid
    contribs, skipped = {}, 0
    for k in range(k0, K_max + 1):
        err, _ = tile_errors(f, l, k, r, max_nodes, c=c, strict=False)
        t = np.asarray(ws.cell_norms(g, k)).ravel()
        keep = np.isfinite(err)
        if within is not None:
            keep &= inside_cubes(within, g, k)
            skipped += int(np.sum(~np.isfinite(err) & inside_cubes(within, g, k)))
        else:
            skipped += int(np.sum(~np.isfinite(err)))
        contribs[k] = _lp(t[keep] * err[keep], 1.0, p)
    b = 1 << (g.J - k0)
    a = np.abs(f.zero_extended())
    if math.isinf(r):
        loc = block_reduce(a, b, "max").ravel()
    else:
        loc = (block_reduce(a ** r, b) * g.cell_volume).ravel() ** (1.0 / r)
    t0 = np.asarray(ws.cell_norms(g, k0)).ravel()
    keep = np.ones(loc.shape, bool) if within is None else inside_cubes(within, g, k0)
    base = _lp(t0[keep] * loc[keep], 1.0, p)
    params = dict(p=p, q=q, r=r, l=l, c=c, k0=k0, K_max=K_max, restricted=within is not None)
    return _report("osc-discrete", contribs, q, base, params, skipped)
