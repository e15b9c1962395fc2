"""Weight sequences ``{t_k}`` and finite certification of their classes.

A weight sequence maps a level ``k`` and points ``x`` to ``t_k(x) > 0``.
Class checks evaluate the defining inequalities over every dyadic cube
inside a region up to a maximal level ``K`` and report the smallest
constants that make them hold on that finite range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .dyadic import Box, DyadicCube, Grid, GridFunction, block_expand, block_reduce

INF = math.inf


def _pow_mean(block_sum_of_powers: np.ndarray, vol: float, e: float) -> np.ndarray:
    return (block_sum_of_powers / vol) ** (1.0 / e)


class WeightSequence:
    """A family ``{t_k}`` with its declared class parameters.

    ``evaluator(k, pts)`` receives points of shape ``(..., n)`` and returns
    an array broadcastable to ``pts.shape[:-1]``.
    """

    def __init__(self, evaluator: Callable, p: float, sigma=(INF, INF),
                 alpha=(0.0, 0.0), alpha3: float = 0.0, family: str = "custom",
                 params: dict | None = None):
        if not p > 0:
            raise ValueError("p must be positive")
        self.evaluator = evaluator
        self.p = float(p)
        self.sigma = tuple(float(s) for s in sigma)
        self.alpha = tuple(float(a) for a in alpha)
        self.alpha3 = float(alpha3)
        self.family = family
        self.params = dict(params or {})
        self._cache: dict = {}

    def __repr__(self):
        return (f"WeightSequence({self.family}, p={self.p}, sigma={self.sigma}, "
                f"alpha={self.alpha}, alpha3={self.alpha3})")

    def __call__(self, k: int, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.broadcast_to(np.asarray(self.evaluator(k, pts), dtype=float), pts.shape[:-1])

    def with_params(self, **kw) -> "WeightSequence":
        args = dict(p=self.p, sigma=self.sigma, alpha=self.alpha, alpha3=self.alpha3)
        args.update(kw)
        return WeightSequence(self.evaluator, family=self.family, params=self.params, **args)

    @property
    def x_independent(self) -> bool:
        return self.family == "constant"

    def on_grid(self, grid: Grid, k: int) -> np.ndarray:
        """``t_k`` sampled at the cell centers of ``grid`` (cached)."""
        key = (grid, k)
        if key not in self._cache:
            if len(self._cache) > 24:
                self._cache.clear()
            if self.x_independent:
                val = float(self(k, np.zeros((1, grid.n)))[0])
                arr = np.broadcast_to(val, grid.shape)
            else:
                arr = self(k, grid.centers())
            arr.setflags(write=False)
            self._cache[key] = arr
        return self._cache[key]

    def cell_norms(self, grid: Grid, k: int) -> np.ndarray:
        """``t_{k,m} = ||t_k | L_p(Q_{k,m})||`` for the level-k cubes tiling ``grid``."""
        key = ("cell", grid, k)
        if key not in self._cache:
            t = self.on_grid(grid, k)
            if not np.all(np.isfinite(t)) or np.any(t <= 0):
                raise ValueError("degenerate weight")
            w = 1 << (grid.J - k)
            if math.isinf(self.p):
                out = block_reduce(np.asarray(t), w, "max") if not self.x_independent \
                    else np.full(grid.block_shape(k), float(t.flat[0]))
            elif self.x_independent:
                out = np.full(grid.block_shape(k),
                              float(t.flat[0]) * (2.0 ** (-k * grid.n)) ** (1 / self.p))
            else:
                out = (block_reduce(t ** self.p, w) * grid.cell_volume) ** (1 / self.p)
            if np.any(out <= 0):
                raise ValueError("degenerate weight")
            out.setflags(write=False)
            self._cache[key] = out
        return self._cache[key]


# -- built-in families ------------------------------------------------------

def constant_smoothness(s: float, p: float = 2.0, sigma=(INF, INF), alpha3: float = 0.0) -> WeightSequence:
    """``t_k = 2^{ks}``."""
    return WeightSequence(lambda k, x: 2.0 ** (k * s), p, sigma, (s, s), alpha3,
                          family="constant", params={"s": s})


def power_weight(s: float, points, betas, p: float = 2.0, sigma=(INF, INF),
                 alpha=None, alpha3: float = 0.0) -> WeightSequence:
    """``t_k(x) = 2^{ks} prod_i |x - a_i|^{beta_i}``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    if len(pts) != len(betas):
        raise ValueError("one exponent per singular point")

    def ev(k, x):
        g = np.ones(x.shape[:-1])
        for a, b in zip(pts, betas):
            g = g * np.linalg.norm(x - a, axis=-1) ** b
        return 2.0 ** (k * s) * g

    alpha = (s, s) if alpha is None else alpha
    return WeightSequence(ev, p, sigma, alpha, alpha3, family="power",
                          params={"s": s, "points": pts.tolist(), "betas": betas.tolist()})


def microlocal_weight(s: float, s_prime: float, points, p: float = 2.0,
                      sigma=(INF, INF), alpha=None, alpha3=None) -> WeightSequence:
    """2-microlocal ``s_k(x) = 2^{ks} (1 + 2^k dist(x, U))^{s'}`` with ``U`` a finite set."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))

    def ev(k, x):
        d = np.min(np.stack([np.linalg.norm(x - a, axis=-1) for a in pts]), axis=0)
        return 2.0 ** (k * s) * (1.0 + 2.0 ** k * d) ** s_prime

    if alpha is None:
        alpha = (s + min(s_prime, 0.0), s + max(s_prime, 0.0))
    alpha3 = abs(s_prime) if alpha3 is None else alpha3
    return WeightSequence(ev, p, sigma, alpha, alpha3, family="microlocal",
                          params={"s": s, "s_prime": s_prime, "points": pts.tolist()})


def table_weight(values, level: int, origin, p: float = 2.0, sigma=(INF, INF),
                 alpha=(0.0, 0.0), alpha3: float = 0.0) -> WeightSequence:
    """Tabulated sequence: ``values[k]`` holds piecewise-constant values on the
    level-``level`` cells starting at cube index ``origin``; points beyond the
    table are clamped to the nearest entry."""
    tabs = [np.asarray(v, dtype=float) for v in values]
    origin = np.asarray(origin, dtype=int)

    def ev(k, x):
        if k >= len(tabs):
            raise ValueError(f"table has no entry for level {k}")
        tab = tabs[k]
        idx = np.floor(x * 2.0 ** level).astype(int) - origin
        idx = np.clip(idx, 0, np.array(tab.shape) - 1)
        return tab[tuple(idx[..., i] for i in range(tab.ndim))]

    return WeightSequence(ev, p, sigma, alpha, alpha3, family="table",
                          params={"level": level, "origin": origin.tolist(),
                                  "values": [t.tolist() for t in tabs]})


def weight_from_config(cfg: dict) -> WeightSequence:
    fam = cfg.get("family", "constant")
    p = float(cfg.get("p", 2.0))
    sigma = tuple(float(v) for v in cfg.get("sigma", [INF, INF]))
    kw = {}
    if "alpha" in cfg:
        kw["alpha"] = tuple(cfg["alpha"])
    if "alpha3" in cfg:
        kw["alpha3"] = float(cfg["alpha3"])
    if fam == "constant":
        ws = constant_smoothness(float(cfg["s"]), p, sigma, kw.get("alpha3", 0.0))
        return ws.with_params(alpha=kw["alpha"]) if "alpha" in kw else ws
    if fam == "power":
        return power_weight(float(cfg["s"]), cfg["points"], cfg["betas"], p, sigma, **kw)
    if fam == "microlocal":
        return microlocal_weight(float(cfg["s"]), float(cfg["s_prime"]), cfg["points"], p, sigma, **kw)
    if fam == "table":
        return table_weight(cfg["values"], int(cfg["level"]), cfg["origin"], p, sigma, **kw)
    raise ValueError(f"unknown weight family {fam!r}")


# -- single-cube quantities --------------------------------------------------

def cell_norm(ws: WeightSequence, cube: DyadicCube, grid: Grid) -> float:
    sl = grid.cube_slices(cube)
    t = np.asarray(ws.on_grid(grid, cube.level))[sl]
    if math.isinf(ws.p):
        val = float(t.max())
    else:
        val = float((np.sum(t ** ws.p) * grid.cell_volume) ** (1 / ws.p))
    if not val > 0 or not math.isfinite(val):
        raise ValueError("degenerate weight")
    return val


def bar_weight(ws: WeightSequence, grid: Grid, k: int) -> GridFunction:
    """Step weight ``2^{kn/p} t_{k,m}`` on each half-open level-k cube."""
    scale = 1.0 if math.isinf(ws.p) else 2.0 ** (k * grid.n / ws.p)
    vals = block_expand(np.asarray(ws.cell_norms(grid, k)) * scale, 1 << (grid.J - k))
    return GridFunction(grid, vals)


# -- class certification ------------------------------------------------------

def _inside_blocks(grid: Grid, k: int, region: Box | None) -> np.ndarray:
    """Mask over level-k blocks of cubes lying inside ``region``."""
    shape = grid.block_shape(k)
    if region is None:
        return np.ones(shape, bool)
    side = 2.0 ** -k
    sel = []
    for ax in range(grid.n):
        lo = grid.lo[ax] + side * np.arange(shape[ax])
        sel.append((lo >= region.lo[ax] - 1e-12) & (lo + side <= region.hi[ax] + 1e-12))
    return sel[0] if grid.n == 1 else sel[0][:, None] & sel[1][None, :]


def _block_power_mean(t: np.ndarray, grid: Grid, k: int, e: float) -> np.ndarray:
    """``(2^{kn} int_Q t^e)^{1/e}`` per level-k cube; ``e = +-inf`` gives max/min."""
    w = 1 << (grid.J - k)
    if math.isinf(e):
        return block_reduce(t, w, "max") if e > 0 else -block_reduce(-t, w, "max")
    vol = 2.0 ** (-k * grid.n)
    return _pow_mean(block_reduce(t ** e, w) * grid.cell_volume, vol, e)


def growth_rate(consts) -> float:
    """Least-squares slope of ``log2 C(d)`` over the upper half of gaps ``d``.

    A persistent positive slope means the constant is unbounded in ``j - k``.
    """
    c = np.asarray(consts, dtype=float)
    if c.size < 3 or not np.all(np.isfinite(c)) or np.any(c <= 0):
        return 0.0 if c.size < 3 else math.inf
    d = np.arange(c.size)
    lo = c.size // 2
    if c.size - lo < 2:
        lo = c.size - 2
    return float(np.polyfit(d[lo:], np.log2(c[lo:]), 1)[0])


@dataclass
class ClassReport:
    family: str
    max_level: int
    region: Box | None
    C1: float
    C2: float
    alpha3: float
    C1_by_gap: list = field(default_factory=list)
    C2_by_gap: list = field(default_factory=list)
    growth: tuple = (0.0, 0.0)
    passed: bool = True
    note: str = ""

    def summary(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (f"{self.family}: C1={self.C1:.4g} C2={self.C2:.4g} alpha3={self.alpha3:.4g} "
                f"[{status}; certified for levels 0..{self.max_level}]")


def achieved_alpha3(ws: WeightSequence, grid: Grid, max_level: int, region: Box | None = None) -> float:
    """Smallest ``alpha3`` with ``t_{k,m} <= 2^{alpha3} t_{k,m'}`` for neighbouring cells."""
    worst = 0.0
    for k in range(max_level + 1):
        t = np.asarray(ws.cell_norms(grid, k))
        inside = _inside_blocks(grid, k, region)
        lt = np.where(inside, np.log2(t), np.nan)
        for off in _neighbour_offsets(grid.n):
            a, b = _shifted_pair(lt, off)
            diff = a - b
            if np.any(np.isfinite(diff)):
                worst = max(worst, float(np.nanmax(np.abs(diff))))
    return worst


def _neighbour_offsets(n):
    if n == 1:
        return [(1,)]
    return [(1, 0), (0, 1), (1, 1), (1, -1)]


def _shifted_pair(a: np.ndarray, off):
    sl_a, sl_b = [], []
    for o, size in zip(off, a.shape):
        if o >= 0:
            sl_a.append(slice(o, size))
            sl_b.append(slice(0, size - o))
        else:
            sl_a.append(slice(0, size + o))
            sl_b.append(slice(-o, size))
    return a[tuple(sl_a)], a[tuple(sl_b)]


def check_X_class(ws: WeightSequence, grid: Grid, max_level: int, region: Box | None = None,
                  growth_tol: float = 0.1) -> ClassReport:
    """Certify the cross-level conditions and the neighbour condition up to ``max_level``.

    For every pair ``0 <= k <= j <= K`` and level-k cube inside ``region`` the
    left sides of the two cross-level inequalities are divided by their
    right-hand powers of two; ``C1``/``C2`` are the maxima of these ratios.
    """
    if max_level < 1:
        raise ValueError("max_level must be >= 1")
    p, (s1, s2) = ws.p, ws.sigma
    a1, a2 = ws.alpha
    K = max_level
    c1_gap = np.zeros(K + 1)
    c2_gap = np.zeros(K + 1)
    for j in range(K + 1):
        tj = np.asarray(ws.on_grid(grid, j))
        if np.any(tj <= 0) or not np.all(np.isfinite(tj)):
            raise ValueError("weight not σ₁-integrable")
        for k in range(j + 1):
            inside = _inside_blocks(grid, k, region)
            if not inside.any():
                continue
            tk_mean = _block_power_mean(np.asarray(ws.on_grid(grid, k)), grid, k, p)
            inv_mean = 1.0 / _block_power_mean(tj, grid, k, -s1)
            up_mean = _block_power_mean(tj, grid, k, s2)
            lhs1 = (tk_mean * inv_mean)[inside]
            lhs2 = (up_mean / tk_mean)[inside]
            r1 = float(lhs1.max()) / 2.0 ** (a1 * (k - j))
            r2 = float(lhs2.max()) / 2.0 ** (a2 * (j - k))
            d = j - k
            c1_gap[d] = max(c1_gap[d], r1)
            c2_gap[d] = max(c2_gap[d], r2)
    a3 = achieved_alpha3(ws, grid, K, region)
    g1, g2 = growth_rate(c1_gap), growth_rate(c2_gap)
    C1, C2 = float(c1_gap.max()), float(c2_gap.max())
    finite = all(math.isfinite(v) for v in (C1, C2, a3))
    passed = finite and g1 <= growth_tol and g2 <= growth_tol
    note = "" if passed else "constants grow with the level gap" if finite else "non-finite constant"
    return ClassReport(ws.family, K, region, C1, C2, a3, c1_gap.tolist(), c2_gap.tolist(),
                       (g1, g2), passed, note)


def _sample_points(grid: Grid, region: Box | None, max_points: int) -> np.ndarray:
    pts = grid.centers()
    sel = np.ones(grid.shape, bool) if region is None else grid.region_mask(region)
    stride = 1
    while np.count_nonzero(sel[tuple(slice(None, None, stride) for _ in range(grid.n))]) > max_points:
        stride *= 2
    sub = tuple(slice(stride // 2, None, stride) for _ in range(grid.n))
    return pts[sub][sel[sub]]


def check_W_class(ws: WeightSequence, grid: Grid, max_level: int, region: Box | None = None,
                  max_points: int = 1024, growth_tol: float = 0.1) -> ClassReport:
    """Pointwise certification of the two-sided level ratio and the slow-variation bound.

    The pairwise condition is tested on at most ``max_points`` sample points.
    """
    a1, a2 = ws.alpha
    K = max_level
    pts = _sample_points(grid, region, max_points)
    vals = []
    for k in range(K + 1):
        v = np.asarray(ws(k, pts), dtype=float)
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("degenerate weight")
        vals.append(v)
    c1_gap = np.zeros(K + 1)
    for k in range(K + 1):
        for l in range(k + 1):
            ratio = vals[k] / vals[l]
            up = float(np.max(ratio / 2.0 ** (a2 * (k - l))))
            down = float(np.max(2.0 ** (a1 * (k - l)) / ratio))
            c1_gap[k - l] = max(c1_gap[k - l], up, down)
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    C2, a3 = 0.0, 0.0
    for k in range(K + 1):
        ratio = vals[k][:, None] / vals[k][None, :]
        base = 1.0 + 2.0 ** k * dist
        C2 = max(C2, float(np.max(ratio / base ** ws.alpha3)))
        off = base > 1.0
        if np.any(off):
            a3 = max(a3, float(np.max(np.log(ratio[off]) / np.log(base[off]))))
    g1 = growth_rate(c1_gap)
    C1 = float(c1_gap.max())
    passed = math.isfinite(C1) and math.isfinite(C2) and g1 <= growth_tol
    return ClassReport(ws.family, K, region, C1, C2, max(a3, 0.0), c1_gap.tolist(), [],
                       (g1, 0.0), passed, "" if passed else "level ratio constant grows")


@dataclass
class DerivedReport:
    nested_sum_C: float
    two_sided_C_by_gap: dict
    chain_C: float
    alpha3: float


def derived_inequalities_check(ws: WeightSequence, grid: Grid, max_level: int,
                               region: Box | None = None, max_gap: int = 3) -> DerivedReport:
    """Empirical constants of the consequences of the class conditions.

    ``nested_sum_C`` bounds ``t_{k,m} (sum_{Q_j ⊂ Q_k} t_{j,m'}^{-σ1})^{1/σ1}``
    against ``2^{(α1 - n/p - n/σ1)(k-j)}``; ``two_sided_C_by_gap[d]`` is the
    two-sided comparison of ``t_{k,m}`` with its level-``k+d`` descendants;
    ``chain_C`` compares arbitrary same-level pairs with
    ``2^{α3* |m - m'|_inf}`` where ``α3*`` is the achieved neighbour exponent.
    """
    n, p, s1 = grid.n, ws.p, ws.sigma[0]
    a1 = ws.alpha[0]
    K = max_level
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    inv_s = 0.0 if math.isinf(s1) else 1.0 / s1
    nested = 0.0
    two_sided: dict = {}
    for k in range(K + 1):
        inside = _inside_blocks(grid, k, region)
        tk = np.asarray(ws.cell_norms(grid, k))
        for j in range(k, K + 1):
            tj = np.asarray(ws.cell_norms(grid, j))
            w = 1 << (j - k)
            if math.isinf(s1):
                agg = 1.0 / (-block_reduce(-tj, w, "max"))
            else:
                agg = block_reduce(tj ** (-s1), w) ** (1 / s1)
            lhs = (tk * agg)[inside]
            if lhs.size:
                nested = max(nested, float(lhs.max()) / 2.0 ** ((a1 - n * inv_p - n * inv_s) * (k - j)))
            d = j - k
            if d <= max_gap and lhs.size:
                child_max = block_reduce(tj, w, "max")
                child_min = -block_reduce(-tj, w, "max")
                c = max(float((tk / child_min)[inside].max()), float((child_max / tk)[inside].max()))
                two_sided[d] = max(two_sided.get(d, 0.0), c)
    a3 = achieved_alpha3(ws, grid, K, region)
    chain = 0.0
    for k in range(K + 1):
        inside = _inside_blocks(grid, k, region)
        t = np.asarray(ws.cell_norms(grid, k))[inside]
        idx = np.argwhere(inside)
        if len(t) > 2000:
            step = len(t) // 2000 + 1
            t, idx = t[::step], idx[::step]
        dist = np.max(np.abs(idx[:, None, :] - idx[None, :, :]), axis=-1)
        ratio = t[:, None] / t[None, :]
        chain = max(chain, float(np.max(ratio / 2.0 ** (a3 * dist))))
    return DerivedReport(nested, two_sided, chain, a3)
