"""Local polynomial approximation on cubes.

Best approximation ``E_l(f, Q)_r`` over polynomials of total degree ``< l`` is
computed on a node subset of the grid cells in ``Q`` (at most ``max_nodes``
per side, each node carrying the volume of the cells it stands for). The same
nodes drive the local modulus, so the two sides of the local equivalence see
identical data.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from . import _lattice as lat
from .dyadic import Box, DyadicCube, Grid, GridFunction, cube_bounds, cubes_intersecting

DEFAULT_NODES = {1: 128, 2: 32}
MODULUS_NODES = {1: 128, 2: 16}
IRLS_ITER = 50
LAWSON_ITER = 300
STAGNATION = 1e-10
ZERO_TOL = 1e-12


# -- basis -------------------------------------------------------------------

def n_coeffs(n: int, l: int) -> int:
    return int(comb(n + l - 1, n, exact=True))


def exponents(n: int, l: int) -> list:
    out = [e for d in range(l) for e in itertools.product(range(d + 1), repeat=n) if sum(e) == d]
    return out


def monomials(t: np.ndarray, l: int) -> np.ndarray:
    """Monomials of total degree ``< l`` at local points ``t`` (..., n)."""
    t = np.asarray(t, float)
    cols = [np.prod([t[..., i] ** e[i] for i in range(t.shape[-1])], axis=0)
            for e in exponents(t.shape[-1], l)]
    return np.stack(cols, axis=-1)


def _as_box(region) -> Box:
    return cube_bounds(region) if isinstance(region, DyadicCube) else region


@dataclass(frozen=True)
class PolyOnCube:
    """Polynomial of total degree ``< l`` stored in local coordinates of ``box``."""

    box: Box
    l: int
    coeffs: np.ndarray
    cube: DyadicCube | None = None

    def __post_init__(self):
        c = np.asarray(self.coeffs, float)
        if c.shape != (n_coeffs(self.box.n, self.l),):
            raise ValueError(f"expected {n_coeffs(self.box.n, self.l)} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    def local(self, pts) -> np.ndarray:
        return (np.asarray(pts, float) - self.box.center) / (0.5 * self.box.sides)

    def __call__(self, pts) -> np.ndarray:
        return monomials(self.local(pts), self.l) @ self.coeffs

    def on_grid(self, grid: Grid) -> np.ndarray:
        return self(grid.centers())


# -- node sets ---------------------------------------------------------------

def _axis_nodes(centers: np.ndarray, a: float, b: float, h: float, cap: int):
    idx = np.nonzero((centers >= a - 1e-12) & (centers <= b + 1e-12))[0]
    if idx.size == 0:
        return idx, 0.0
    s = 1
    while -(-idx.size // s) > cap:
        s *= 2
    sel = idx[s // 2::s]
    return sel, idx.size * h / sel.size


def region_nodes(f: GridFunction, region, max_nodes: int | None = None):
    """``(points, values, weights)`` of the nodes in a box; weight 0 off the domain."""
    box = _as_box(region)
    g = f.grid
    cap = max_nodes or DEFAULT_NODES[g.n]
    sels, wts = zip(*[_axis_nodes(g.axis_centers(i), box.lo[i], box.hi[i], g.h, cap)
                      for i in range(g.n)])
    if any(s.size == 0 for s in sels):
        return np.zeros((0, g.n)), np.zeros(0), np.zeros(0)
    ix = np.ix_(*sels)
    pts = np.stack(np.meshgrid(*[g.axis_centers(i)[s] for i, s in enumerate(sels)],
                               indexing="ij"), axis=-1).reshape(-1, g.n)
    vals = f.zero_extended()[ix].ravel()
    w = np.where(f.domain[ix].ravel(), float(np.prod(wts)), 0.0)
    return pts, vals, w


def tile_nodes(f: GridFunction, level: int, max_nodes: int | None = None):
    """Nodes of every level cube tiling the grid box, batched.

    Returns ``(local, values, weights, stride)`` with ``local`` (P, n) shared
    local coordinates, ``values``/``weights`` (B, P) in ``grid.cubes(level)`` order.
    """
    g = f.grid
    b = 1 << (g.J - level)
    cap = max_nodes or DEFAULT_NODES[g.n]
    per = min(cap, b)
    s = b // per
    nb = g.block_shape(level)
    vals = f.zero_extended()
    dom = f.domain
    sl = tuple(slice(s // 2, None, s) for _ in range(g.n))
    v, d = vals[sl], dom[sl]
    if g.n == 1:
        v = v.reshape(nb[0], per)
        d = d.reshape(nb[0], per)
    else:
        v = v.reshape(nb[0], per, nb[1], per).transpose(0, 2, 1, 3).reshape(nb[0] * nb[1], per * per)
        d = d.reshape(nb[0], per, nb[1], per).transpose(0, 2, 1, 3).reshape(nb[0] * nb[1], per * per)
    t1 = (np.arange(per) * s + s // 2 + 0.5) / b * 2 - 1
    local = np.stack(np.meshgrid(*([t1] * g.n), indexing="ij"), axis=-1).reshape(-1, g.n)
    w = np.where(d, (s * g.h) ** g.n, 0.0)
    return local, v, w, s


# -- batched fitting ---------------------------------------------------------

@dataclass
class BatchFit:
    coeffs: np.ndarray      # (B, c) in the monomial local basis
    error: np.ndarray       # (B,)
    lower: np.ndarray       # (B,) certified lower bound (nan if unavailable)
    resolved: np.ndarray    # (B,) bool
    method: str


def _norm(e, w, r):
    if math.isinf(r):
        return np.max(np.where(w > 0, np.abs(e), 0.0), axis=-1)
    return np.sum(w * np.abs(e) ** r, axis=-1) ** (1.0 / r)


def _wls(V, vals, u, ridge=1e-13):
    c = V.shape[1]
    G = (u @ (V[:, :, None] * V[:, None, :]).reshape(len(V), c * c)).reshape(-1, c, c)
    rhs = (u * vals) @ V
    tr = np.trace(G, axis1=1, axis2=2)[:, None, None] / V.shape[1]
    G = G + ridge * np.maximum(tr, 1e-300) * np.eye(V.shape[1])
    return np.linalg.solve(G, rhs[..., None])[..., 0]


def _dual_lower(V, vals, w, g, r):
    """``|<f, g_perp>| / ||g_perp||_{r'}`` with ``g_perp`` orthogonal to polynomials."""
    gp = g - _wls(V, g, w) @ V.T
    gp = np.where(w > 0, gp, 0.0)
    num = np.abs(np.sum(w * vals * gp, axis=-1))
    if r == 1:
        den = np.max(np.abs(gp), axis=-1)
    elif math.isinf(r):
        den = np.sum(w * np.abs(gp), axis=-1)
    else:
        rp = r / (r - 1)
        den = np.sum(w * np.abs(gp) ** rp, axis=-1) ** (1 / rp)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, 0.0)


def _irls(V, vals, w, a, r, iters, scale):
    best_a = a
    best = _norm(vals - a @ V.T, w, r)
    for _ in range(iters):
        e = vals - a @ V.T
        eps = 1e-9 * scale[:, None]
        u = w * np.maximum(np.abs(e), eps) ** (r - 2)
        a = _wls(V, vals, u)
        err = _norm(vals - a @ V.T, w, r)
        better = err < best
        gain = np.where(best > 0, (best - err) / np.maximum(best, 1e-300), 0.0)
        best_a = np.where(better[:, None], a, best_a)
        best = np.where(better, err, best)
        if np.all(gain < STAGNATION):
            break
    return best_a, best


def _lawson(V, vals, w, a0, iters, scale):
    active = (w > 0).astype(float)
    u = active / np.maximum(active.sum(axis=-1, keepdims=True), 1)
    best_a = a0
    best = _norm(vals - a0 @ V.T, w, math.inf)
    lower = np.zeros(len(vals))
    for _ in range(iters):
        a = _wls(V, vals, u)
        e = np.where(active > 0, vals - a @ V.T, 0.0)
        err = np.max(np.abs(e), axis=-1)
        ue = u * np.abs(e)
        s = ue.sum(axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            lo = np.where(s > 0, np.sum(u * e * e, axis=-1) / s, 0.0)
        lower = np.maximum(lower, lo)
        better = err < best
        best_a = np.where(better[:, None], a, best_a)
        best = np.where(better, err, best)
        if np.all(best - lower <= 1e-6 * np.maximum(best, 1e-300)) or np.all(best <= 1e-14 * scale):
            break
        u = np.where(s[:, None] > 0, ue / np.maximum(s[:, None], 1e-300), u)
    return best_a, best, lower


def fit_batch(local: np.ndarray, vals: np.ndarray, w: np.ndarray, l: int, r: float,
              seed: int = 0) -> BatchFit:
    """Best ``L_r`` approximation by degree ``< l`` polynomials, batched over rows."""
    if not r > 0:
        raise ValueError("r must be positive")
    vals = np.atleast_2d(np.asarray(vals, float))
    w = np.atleast_2d(np.asarray(w, float))
    B = len(vals)
    c = n_coeffs(local.shape[1], l)
    M = monomials(local, l)
    # orthonormalize against the full node measure
    wf = np.full(len(local), 1.0 / len(local))
    _, R = np.linalg.qr(np.sqrt(wf)[:, None] * M)
    Rinv = np.linalg.inv(R)
    V = M @ Rinv
    count = (w > 0).sum(axis=1)
    G = np.einsum("bp,pi,pj->bij", (w > 0).astype(float), V, V)
    ev = np.linalg.eigvalsh(G)
    resolved = (count >= c) & (ev[:, 0] > 1e-10 * np.maximum(ev[:, -1], 1e-300))
    empty = count == 0
    scale = np.max(np.where(w > 0, np.abs(vals), 0.0), axis=1)
    scale = np.where(scale > 0, scale, 1.0)
    vals = np.where(w > 0, vals, 0.0)
    ww = w

    a = _wls(V, vals, ww)
    if l == 1 and math.isinf(r):
        big = np.where(w > 0, vals, -np.inf).max(axis=1)
        small = np.where(w > 0, vals, np.inf).min(axis=1)
        a = np.where(empty, 0.0, 0.5 * (big + small))[:, None] * np.ones((1, c)) / V[0, 0]
        err = np.where(empty, 0.0, 0.5 * (big - small))
        lower, method = err.copy(), "midrange"
    elif r == 2:
        err = _norm(vals - a @ V.T, ww, 2)
        lower, method = err.copy(), "least-squares"
    elif math.isinf(r):
        a, err, lower = _lawson(V, vals, ww, a, LAWSON_ITER, scale)
        method = "lawson"
    elif r >= 1:
        a, err = _irls(V, vals, ww, a, r, IRLS_ITER, scale)
        e = vals - a @ V.T
        if r == 1:
            g = np.clip(e / (1e-9 * scale[:, None]), -1, 1)
        else:
            g = np.sign(e) * np.abs(e) ** (r - 1)
        lower = np.minimum(_dual_lower(V, vals, ww, g, r), err)
        method = "irls"
    else:
        rng = np.random.default_rng(seed)
        l2 = _norm(vals - a @ V.T, ww, 2) / np.maximum(np.sum(ww, axis=1), 1e-300) ** 0.5
        a1, _ = _irls(V, vals, ww, a, 1.0, IRLS_ITER, scale)
        starts = [a, a1] + [a + rng.normal(size=a.shape) * l2[:, None] for _ in range(3)]
        best_a, best = None, None
        for s0 in starts:
            aa, ee = _irls(V, vals, ww, s0, r, IRLS_ITER, scale)
            if best is None:
                best_a, best = aa, ee
            else:
                better = ee < best
                best_a = np.where(better[:, None], aa, best_a)
                best = np.where(better, ee, best)
        a, err = best_a, best
        lower = np.full(B, np.nan)
        method = "multistart"
    err = np.where(empty, 0.0, err)
    lower = np.where(empty, 0.0, lower)
    a = np.where(empty[:, None], 0.0, a)
    mono = a @ Rinv.T
    return BatchFit(mono, err, lower, resolved | empty, method)


# -- single-region front ends -------------------------------------------------

@dataclass
class FitResult:
    poly: PolyOnCube
    error: float
    lower: float
    method: str

    @property
    def ratio(self) -> float:
        """Achieved near-best ratio ``error / lower`` (1 when both vanish)."""
        if self.error <= ZERO_TOL * max(1.0, abs(self.lower)) or self.error == self.lower:
            return 1.0
        if not self.lower > 0:
            return math.nan
        return self.error / self.lower

    @property
    def certified(self) -> bool:
        return math.isfinite(self.ratio)


def _fit_region(f: GridFunction, l: int, region, r: float, max_nodes=None, seed=0) -> FitResult:
    box = _as_box(region)
    pts, vals, w = region_nodes(f, box, max_nodes)
    c = n_coeffs(f.grid.n, l)
    count = int((w > 0).sum())
    cube = region if isinstance(region, DyadicCube) else None
    if count == 0:
        return FitResult(PolyOnCube(box, l, np.zeros(c), cube), 0.0, 0.0, "empty")
    if count < c:
        raise ValueError(f"under-resolved cube: {count} cells for {c} coefficients")
    local = (pts - box.center) / (0.5 * box.sides)
    bf = fit_batch(local, vals[None], w[None], l, r, seed)
    if not bf.resolved[0]:
        raise ValueError(f"under-resolved cube: {count} cells for {c} coefficients")
    return FitResult(PolyOnCube(box, l, bf.coeffs[0], cube), float(bf.error[0]),
                     float(bf.lower[0]), bf.method)


def best_error(f: GridFunction, l: int, region, r: float, max_nodes=None) -> float:
    """``E_l(f, region)_r``; 0 if ``f`` is undefined on the whole region."""
    return _fit_region(f, l, region, r, max_nodes).error


def best_fit(f: GridFunction, l: int, region, r: float, max_nodes=None) -> FitResult:
    return _fit_region(f, l, region, r, max_nodes)


def normalized_error(f: GridFunction, l: int, cube: DyadicCube, r: float, c: float = 1.0,
                     max_nodes=None) -> float:
    """``2^{kn/r} E_l(f, cQ)_r`` for a level-k cube ``Q``."""
    box = cube_bounds(cube).dilate(c) if c != 1 else cube
    e = best_error(f, l, box, r, max_nodes)
    return e if math.isinf(r) else 2.0 ** (cube.level * cube.n / r) * e


def near_best_poly(f: GridFunction, l: int, region, r: float, lam: float = 1.0,
                   max_nodes=None) -> tuple:
    """Polynomial ``π`` with ``||f - π||_r <= lam * E_l``; returns ``(π, report)``."""
    if lam < 1:
        raise ValueError("lambda must be >= 1")
    res = _fit_region(f, l, region, r, max_nodes)
    ratio = res.ratio
    report = {"error": res.error, "lower": res.lower, "ratio": ratio, "method": res.method,
              "certified": res.certified}
    if res.certified and ratio > lam * (1 + 1e-12):
        raise ValueError(f"near-best target missed: achieved ratio {ratio:.6g} > {lam}")
    return res.poly, report


# -- differences and moduli ----------------------------------------------------

def _as_mask(grid: Grid, U) -> np.ndarray:
    if U is None:
        return np.ones(grid.shape, bool)
    if isinstance(U, DyadicCube):
        U = cube_bounds(U)
    if isinstance(U, Box):
        return grid.region_mask(U)
    return np.asarray(U, bool)


def finite_difference(f: GridFunction, l: int, h, U=None, x=None) -> float:
    """``Σ_i (-1)^{l-i} C(l,i) f(x + i h)`` if ``[x, x + l h] ⊂ U``, else 0."""
    g = f.grid
    h = np.atleast_1d(np.asarray(h, float))
    x = np.atleast_1d(np.asarray(x, float))
    mask = _as_mask(g, U) & f.domain
    m = int(math.ceil(2 * l * np.max(np.abs(h)) / g.h)) + 1
    seg = x + np.linspace(0, l, m + 1)[:, None] * h
    if not np.all(g.contains_points(seg)):
        return 0.0
    if not np.all(mask[tuple(g.index_of(seg).T)]):
        return 0.0
    pts = x + np.arange(l + 1)[:, None] * h
    vals = f.samples[tuple(g.index_of(pts).T)]
    coef = [(-1) ** (l - i) * comb(l, i, exact=True) for i in range(l + 1)]
    return float(np.dot(coef, vals))


def local_modulus(f: GridFunction, l: int, cube, U=None, r: float = 2.0,
                  max_nodes: int | None = None) -> float:
    """``δ^l_r(Q, U) f`` for a cube (or box) of side ``L``: h ranges over ``L·I``.

    Quadrature: node subset of the cells in ``Q`` for ``x``; trapezoid rule on
    the node lattice for ``h``. ``U=None`` means the whole line/plane
    (restricted to the grid box).
    """
    g = f.grid
    box = _as_box(cube)
    L = float(box.sides[0])
    cap = max_nodes or MODULUS_NODES[g.n]
    pts, _, w = region_nodes(GridFunction(g, np.zeros(g.shape)), box, cap)
    if len(pts) == 0:
        return 0.0
    idx = g.index_of(pts)
    cells = int(round(L / g.h))
    s = 1
    while -(-cells // s) > cap:
        s *= 2
    reach = -(-cells // s)
    steps = lat.step_vectors(g.n, reach)
    hw = lat.trapezoid_weights(steps, reach) * (L / reach) ** g.n
    xw = w[0]
    convex = U is None or isinstance(U, (Box, DyadicCube))
    mask = _as_mask(g, U) & f.domain
    vals = f.zero_extended()
    shape = np.array(g.shape)
    H = steps * s
    coef = np.array([(-1) ** (l - j) * comb(l, j, exact=True) for j in range(l + 1)], float)
    acc = np.zeros((len(idx), len(H)))
    ok = np.ones_like(acc, bool)
    # convex U: the nodes x + jh suffice; otherwise sample the segment densely
    ts = [j / l for j in range(l + 1)]
    if not convex:
        seg = min(s, 1 << max(g.J - 6, 0))
        m = max(1, int(math.ceil(l * reach * s / seg)))
        ts = sorted(set(ts) | {t / m for t in range(m + 1)})
    for t in ts:
        q = idx[:, None, :] + np.rint(l * H[None] * t).astype(int)
        inside = np.all((q >= 0) & (q < shape), axis=-1)
        qc = np.clip(q, 0, shape - 1)
        ok &= inside & mask[tuple(np.moveaxis(qc, -1, 0))]
    for j, cj in enumerate(coef):
        q = np.clip(idx[:, None, :] + j * H[None], 0, shape - 1)
        acc += cj * vals[tuple(np.moveaxis(q, -1, 0))]
    a = np.where(ok, np.abs(acc), 0.0)
    if math.isinf(r):
        return float(a.max())
    total = np.sum(a ** r * hw[None, :]) * xw
    return float((total / L ** (2 * g.n)) ** (1.0 / r))


def tile_moduli(f: GridFunction, l: int, level: int, r: float, max_nodes: int | None = None):
    """``δ^l_r(Q, Q) f`` for every level cube tiling the grid (``grid.cubes`` order)."""
    g = f.grid
    b = 1 << (g.J - level)
    per = min(max_nodes or MODULUS_NODES[g.n], b)
    s = b // per
    L = 2.0 ** -level
    lattice = lat.NodeLattice(g, s)
    field = lat.DifferenceField(lattice, l, per, U=None, tiles=per)
    tot = None
    for w, a in field.fields(f.zero_extended(), f.domain, r):
        blk = lat.block_max(a, per) if math.isinf(r) else w * lat.block_sum(a, per)
        tot = blk if tot is None else (np.maximum(tot, blk) if math.isinf(r) else tot + blk)
    tot = tot.ravel()
    if math.isinf(r):
        return tot
    return (tot * lattice.weight ** 2 / L ** (2 * g.n)) ** (1.0 / r)


def dilation_cells(grid: Grid, level: int, c: float) -> int:
    """Extra cells per side of ``c Q`` whose centers lie in the closed dilated cube."""
    b = 1 << (grid.J - level)
    return int(math.floor((c - 1) * b / 2 + 0.5 + 1e-9)) if c > 1 else 0


def dilated_tile_nodes(f: GridFunction, level: int, c: float, max_nodes: int | None = None,
                       select=None):
    """Like ``tile_nodes`` for the dilated cubes ``c Q``; cells off the box get weight 0.

    ``select`` keeps only the given positions in ``grid.cubes(level)`` order.
    """
    g = f.grid
    b = 1 << (g.J - level)
    e = dilation_cells(g, level, c)
    m = b + 2 * e
    cap = max_nodes or DEFAULT_NODES[g.n]
    s = 1
    while -(-m // s) > cap:
        s *= 2
    sel = np.arange(s // 2, m, s)
    wt = m * g.h / sel.size
    vals = np.pad(f.zero_extended(), e)
    dom = np.pad(f.domain, e, constant_values=False)
    nb = g.block_shape(level)
    rows = [np.arange(nb[i])[:, None] * b + sel[None] for i in range(g.n)]
    if g.n == 1:
        v, d = vals[rows[0]], dom[rows[0]]
    else:
        ix = (rows[0][:, None, :, None], rows[1][None, :, None, :])
        P = sel.size * sel.size
        v = vals[ix].reshape(nb[0] * nb[1], P)
        d = dom[ix].reshape(nb[0] * nb[1], P)
    if select is not None:
        v, d = v[select], d[select]
    t1 = (sel + 0.5) / m * 2 - 1
    local = np.stack(np.meshgrid(*([t1] * g.n), indexing="ij"), axis=-1).reshape(-1, g.n)
    w = np.where(d, wt ** g.n, 0.0)
    return local, v, w, s


def tile_errors(f: GridFunction, l: int, level: int, r: float, max_nodes=None, c: float = 1.0,
                strict: bool = True, select=None):
    """``𝓔_l(f, cQ)_r`` for every level cube tiling the grid, and the fits.

    With ``strict=False`` under-resolved cubes get ``nan`` instead of raising.
    ``select`` restricts the computation to the given positions in
    ``grid.cubes(level)`` order.
    """
    if c > 1:
        local, vals, w, _ = dilated_tile_nodes(f, level, c, max_nodes, select)
    else:
        local, vals, w, _ = tile_nodes(f, level, max_nodes)
        if select is not None:
            vals, w = vals[select], w[select]
    nc = n_coeffs(f.grid.n, l)
    bf = fit_batch(local, vals, w, l, r)
    if strict and not np.all(bf.resolved):
        raise ValueError(f"under-resolved cube at level {level} ({nc} coefficients)")
    fac = 1.0 if math.isinf(r) else 2.0 ** (level * f.grid.n / r)
    err = np.where(bf.resolved, fac * bf.error, np.nan)
    return err, bf


# -- verification -------------------------------------------------------------

@dataclass
class EquivalenceReport:
    rows: list = field(default_factory=list)   # (fid, level, m, lhs, rhs, ratio)
    skipped: int = 0

    @property
    def ratios(self) -> np.ndarray:
        return np.array([row[5] for row in self.rows], float)

    def stats(self) -> dict:
        q = self.ratios
        if q.size == 0:
            return {"count": 0, "skipped": self.skipped}
        return {"count": int(q.size), "skipped": self.skipped, "min": float(q.min()),
                "median": float(np.median(q)), "max": float(q.max())}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["fid", "level", "m", "lhs", "rhs", "ratio"])
            for fid, k, m, a, b, q in self.rows:
                wr.writerow([fid, k, " ".join(map(str, m)), repr(a), repr(b), repr(q)])


def verify_local_equivalence(battery, l: int, r: float, levels, max_nodes: int | None = None
                             ) -> EquivalenceReport:
    """Ratios ``𝓔_l(f,Q)_r / δ^l_r(Q,Q) f`` over a battery and the tiling cubes of each level.

    ``battery`` maps ids to grid functions (or is a list of ``(id, f)``).
    Both sides use the same node lattice of at most ``max_nodes`` per side.
    """
    items = list(battery.items()) if isinstance(battery, dict) else list(battery)
    if not items:
        raise ValueError("battery is empty")
    rep = EquivalenceReport()
    for fid, f in items:
        cap = max_nodes or MODULUS_NODES[f.grid.n]
        for k in levels:
            lhs, _ = tile_errors(f, l, k, r, cap)
            rhs = tile_moduli(f, l, k, r, cap)
            for cube, a, b in zip(f.grid.cubes(k), lhs, rhs):
                scale = max(1.0, float(np.nanmax(np.abs(f.zero_extended()))))
                if a < ZERO_TOL * scale and b < ZERO_TOL * scale:
                    rep.skipped += 1
                    continue
                q = a / b if b > 0 else math.inf
                rep.rows.append((fid, k, cube.index, float(a), float(b), float(q)))
    return rep


@dataclass
class SubadditivityReport:
    lhs: float
    rhs: float
    ratio: float
    budget: float
    cubes: int

    @property
    def passed(self) -> bool:
        return self.ratio <= self.budget


def verify_subadditivity(f: GridFunction, l: int, r: float, c: float, k: int,
                         m=None, budget: float = 50.0, max_nodes=None) -> SubadditivityReport:
    """``𝓔_l(f, cQ_{0,m})`` against the sum of ``𝓔_l(f, cQ_{k,m'})`` over level-k cubes meeting it."""
    if c < 1 or k < 1:
        raise ValueError("need c >= 1 and k >= 1")
    n = f.grid.n
    m = tuple(m) if m is not None else tuple(int(v) for v in f.grid.lo)
    big = cube_bounds(DyadicCube(0, m)).dilate(c)
    lhs = best_error(f, l, big, r, max_nodes)
    rhs = 0.0
    cubes = cubes_intersecting(big, k)
    for q in cubes:
        box = cube_bounds(q).dilate(c)
        _, _, w = region_nodes(f, box, max_nodes)
        if not np.any(w > 0):
            continue
        e = best_error(f, l, box, r, max_nodes)
        rhs += e if math.isinf(r) else 2.0 ** (k * n / r) * e
    scale = max(1.0, float(np.nanmax(np.abs(f.zero_extended()))))
    if lhs <= ZERO_TOL * scale:
        ratio = 0.0
    else:
        ratio = lhs / rhs if rhs > 0 else math.inf
    return SubadditivityReport(lhs, rhs, ratio, budget, len(cubes))

