"""Rough planar domains, Whitney decompositions, reflections, chains,
partitions of unity and an (ε, δ) falsifier.

Two families of domains are supported: epigraphs of piecewise-linear
functions (special Lipschitz domains) and finite unions of closed dyadic
squares (open interior), which also carry rasterized polygons such as
Koch-curve prefixes. Distances to the boundary are exact (shapely) for both.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from shapely.geometry import LineString, Polygon, box as sbox
from shapely.ops import unary_union

from .dyadic import Box, DyadicCube, Grid, GridFunction, cube_bounds, dilate

FAR = 1e4
STAR = 9 / 8


# -- domains -----------------------------------------------------------------------

class Domain:
    n: int = 2
    name: str = "domain"
    eps: float | None = None
    delta: float | None = None

    def inside(self, pts) -> np.ndarray:
        raise NotImplementedError

    def boundary_distance_boxes(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def boundary_distance_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        return self.boundary_distance_boxes(pts, pts)

    def mask(self, grid: Grid) -> np.ndarray:
        return self.inside(grid.centers())

    def boundary_cells(self, grid: Grid) -> np.ndarray:
        c = grid.centers()
        d = self.boundary_distance_boxes(c - grid.h / 2, c + grid.h / 2)
        return d <= 1e-12

    def membership(self, x, grid: Grid | None = None) -> str:
        x = np.asarray(x, float)
        if grid is not None:
            i = grid.index_of(x)
            lo = np.array(grid.lo) + i * grid.h
            if self.boundary_distance_boxes(lo[None], (lo + grid.h)[None])[0] <= 1e-12:
                return "boundary-cell"
        elif self.boundary_distance_points(x[None])[0] <= 1e-12:
            return "boundary-cell"
        return "inside" if self.inside(x[None])[0] else "outside"


class SpecialLipschitzDomain(Domain):
    """``G = {x : x_n > ϖ(x')}`` with piecewise-linear ``ϖ`` (constant beyond the breakpoints)."""

    def __init__(self, breakpoints, M: float = 1.0, name: str = "epigraph", n: int = 2):
        bp = np.atleast_2d(np.asarray(breakpoints, float))
        self.n = n
        self.name = name
        self.M = float(M)
        if M < 1:
            raise ValueError("Lipschitz constant must be >= 1")
        if n == 1:
            self.level = float(bp[0, -1])
            self.t = self.v = None
            return
        order = np.argsort(bp[:, 0])
        self.t, self.v = bp[order, 0], bp[order, 1]
        if len(self.t) > 1:
            slopes = np.diff(self.v) / np.diff(self.t)
            if np.any(np.abs(slopes) > self.M + 1e-12):
                raise ValueError(f"breakpoint slope {np.max(np.abs(slopes)):.3g} exceeds M={M}")
        xs = np.r_[-FAR, self.t, FAR]
        ys = np.r_[self.v[0], self.v, self.v[-1]]
        self.graph = LineString(np.c_[xs, ys])

    def varpi(self, s) -> np.ndarray:
        if self.n == 1:
            return np.full(np.shape(s), self.level)
        return np.interp(s, self.t, self.v)

    def inside(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        return pts[..., -1] > self.varpi(pts[..., 0]) if self.n == 2 else pts[..., 0] > self.level

    def boundary_distance_boxes(self, lo, hi):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        if self.n == 1:
            return np.maximum.reduce([lo[..., 0] - self.level, self.level - hi[..., 0],
                                      np.zeros(lo.shape[:-1])])
        shp = lo.shape[:-1]
        geoms = shapely.box(lo[..., 0].ravel(), lo[..., 1].ravel(), hi[..., 0].ravel(), hi[..., 1].ravel())
        return shapely.distance(geoms, self.graph).reshape(shp)


class EpsDeltaDomain(Domain):
    """Interior of a finite union of closed dyadic squares at ``level``."""

    def __init__(self, level: int, cells, eps: float | None = None, delta: float | None = None,
                 name: str = "squares", min_radius: float = 0.0):
        self.n = 2
        self.level = int(level)
        self.cells = sorted({tuple(int(v) for v in c) for c in cells})
        if not self.cells:
            raise ValueError("empty domain")
        self.eps, self.delta, self.name = eps, delta, name
        s = 2.0 ** -self.level
        self.geom = unary_union([sbox(i * s, j * s, (i + 1) * s, (j + 1) * s) for i, j in self.cells])
        self.boundary = self.geom.boundary
        shapely.prepare(self.geom)
        self.min_radius = min_radius

    def inside(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        return shapely.contains_xy(self.geom, pts[..., 0], pts[..., 1])

    def boundary_distance_boxes(self, lo, hi):
        lo, hi = np.asarray(lo, float), np.asarray(hi, float)
        shp = lo.shape[:-1]
        geoms = shapely.box(lo[..., 0].ravel(), lo[..., 1].ravel(), hi[..., 0].ravel(), hi[..., 1].ravel())
        return shapely.distance(geoms, self.boundary).reshape(shp)

    def bounds(self) -> Box:
        x0, y0, x1, y1 = self.geom.bounds
        return Box((x0, y0), (x1, y1))

    def component_radii(self, grid: Grid) -> list:
        """Inradius of each connected component (grid estimate)."""
        m = self.mask(grid)
        lab, k = ndimage.label(m)
        d = ndimage.distance_transform_edt(m) * grid.h
        return [float(d[lab == i].max()) for i in range(1, k + 1)]

    def rad_check(self, grid: Grid) -> dict:
        radii = self.component_radii(grid)
        return {"radii": radii, "flagged": [r for r in radii if r < self.min_radius]}


def rasterize(polygon: Polygon, level: int, **kw) -> EpsDeltaDomain:
    """Inner approximation of a polygon by closed level squares contained in it."""
    s = 2.0 ** -level
    x0, y0, x1, y1 = polygon.bounds
    I = np.arange(math.floor(x0 / s), math.ceil(x1 / s))
    Jj = np.arange(math.floor(y0 / s), math.ceil(y1 / s))
    ii, jj = np.meshgrid(I, Jj, indexing="ij")
    boxes = shapely.box(ii.ravel() * s, jj.ravel() * s, (ii.ravel() + 1) * s, (jj.ravel() + 1) * s)
    shapely.prepare(polygon)
    keep = shapely.covered_by(boxes, polygon)
    cells = list(zip(ii.ravel()[keep].tolist(), jj.ravel()[keep].tolist()))
    return EpsDeltaDomain(level, cells, **kw)


# -- built-in domains ----------------------------------------------------------------

def half_plane() -> SpecialLipschitzDomain:
    return SpecialLipschitzDomain([[0.0, 0.0]], M=1.0, name="half-plane")


def half_line(a: float = 0.0) -> SpecialLipschitzDomain:
    return SpecialLipschitzDomain([[a]], M=1.0, name="half-line", n=1)


def zigzag(period: float = 1.0, slope: float = 1.0, span: float = 8.0, shift: float = 0.0
           ) -> SpecialLipschitzDomain:
    """``ϖ(t) = slope * (|((t - shift) mod period) - period/2| - period/4)``."""
    t = np.arange(-span, span + period / 4, period / 2) + shift
    v = slope * (np.abs(np.mod(t - shift, period) - period / 2) - period / 4)
    return SpecialLipschitzDomain(np.c_[t, v], M=max(1.0, slope), name="zigzag")


def unit_square(eps: float = 0.2, delta: float = 0.5) -> EpsDeltaDomain:
    return EpsDeltaDomain(0, [(0, 0)], eps, delta, name="unit-square", min_radius=0.1)


def l_shape(eps: float = 0.1, delta: float = 0.5) -> EpsDeltaDomain:
    return EpsDeltaDomain(1, [(0, 0), (1, 0), (0, 1)], eps, delta, name="L-shape", min_radius=0.1)


def pinched_dumbbell(eps: float = 0.1, delta: float = 0.5) -> EpsDeltaDomain:
    """Two squares meeting at a single corner: the interior is disconnected at the pinch."""
    return EpsDeltaDomain(1, [(0, 0), (1, 1)], eps, delta, name="pinched-dumbbell", min_radius=0.1)


def koch_polygon(depth: int = 2, center=(0.5, 0.5), size: float = 0.6) -> Polygon:
    if not 0 <= depth <= 3:
        raise ValueError("Koch depth must be in 0..3")
    ang = np.deg2rad([90, 210, 330])
    pts = [np.array([math.cos(a), math.sin(a)]) for a in ang]
    for _ in range(depth):
        new = []
        for a, b in zip(pts, pts[1:] + pts[:1]):
            d = (b - a) / 3
            rot = np.array([d[0] * 0.5 + d[1] * math.sqrt(3) / 2, -d[0] * math.sqrt(3) / 2 + d[1] * 0.5])
            new += [a, a + d, a + d + rot, a + 2 * d]
        pts = new
    P = np.array(pts)
    P = P / np.max(np.abs(P)) * size / 2 + np.array(center)
    poly = Polygon(P)
    if not poly.is_valid:
        raise ValueError("invalid Koch polygon")
    return poly


def koch_domain(depth: int = 2, level: int = 6, eps: float = 0.02, delta: float = 0.25
                ) -> EpsDeltaDomain:
    return rasterize(koch_polygon(depth), level, eps=eps, delta=delta, name=f"koch-{depth}",
                     min_radius=0.05)


BUILTIN = {
    "half-plane": half_plane, "zigzag": zigzag, "unit-square": unit_square,
    "L-shape": l_shape, "pinched-dumbbell": pinched_dumbbell, "koch": koch_domain,
}


def domain_from_config(cfg) -> Domain:
    if isinstance(cfg, str):
        return BUILTIN[cfg]()
    kind = cfg.get("type")
    if kind == "epigraph":
        return SpecialLipschitzDomain(cfg["breakpoints"], cfg.get("M", 1.0), cfg.get("name", "epigraph"))
    if kind == "squares":
        return EpsDeltaDomain(cfg["level"], cfg["cells"], cfg.get("eps"), cfg.get("delta"),
                              cfg.get("name", "squares"))
    if kind == "builtin":
        args = {k: v for k, v in cfg.items() if k not in ("type", "name")}
        return BUILTIN[cfg["name"]](**args)
    raise ValueError(f"unknown domain type {kind!r}")


# -- Whitney decomposition ----------------------------------------------------------------

def _box_arrays(level: int, idx: np.ndarray):
    s = 2.0 ** -level
    return idx * s, (idx + 1) * s


@dataclass
class WhitneyDecomposition:
    """Maximal dyadic cubes ``Q`` in the open set with ``diam Q <= dist(Q, ∂Ω)``.

    ``floor`` holds the cubes at ``max_level`` that meet the open set but are
    too close to the boundary to be accepted; they are used only to cover the
    boundary strip in the partition of unity.
    """

    domain: Domain
    side: str
    region: Box
    max_level: int
    cubes: list
    dist: np.ndarray
    floor: list = field(default_factory=list)
    floor_dist: np.ndarray = field(default_factory=lambda: np.zeros(0))
    far: int = 0

    @property
    def diam(self) -> np.ndarray:
        return np.array([q.diam for q in self.cubes])

    def lo_hi(self, which: str = "cubes"):
        cs = self.cubes if which == "cubes" else self.floor
        if not cs:
            return np.zeros((0, self.domain.n)), np.zeros((0, self.domain.n))
        lv = np.array([q.level for q in cs], float)[:, None]
        ix = np.array([q.index for q in cs], float)
        s = 2.0 ** -lv
        return ix * s, (ix + 1) * s

    def ratios(self) -> np.ndarray:
        return self.dist / self.diam

    def check_invariants(self) -> dict:
        q = self.ratios()
        lo, hi = self.lo_hi()
        return {"min_ratio": float(q.min()) if q.size else math.nan,
                "max_ratio": float(q.max()) if q.size else math.nan,
                "ok": bool(np.all(q >= 1 - 1e-12) and np.all(q <= 4 + 1e-12)),
                "disjoint": disjoint_interiors(lo, hi)}

    def covered_measure(self) -> float:
        return float(sum(q.side ** q.n for q in self.cubes))

    def index(self) -> dict:
        return {q: i for i, q in enumerate(self.cubes)}

    def overlap_multiplicity(self, c: float = STAR, level: int | None = None) -> int:
        """Max number of dilated cubes ``cQ`` over any point (raster estimate)."""
        level = level if level is not None else self.max_level + 3
        lo, hi = self.lo_hi()
        if len(lo) == 0:
            return 0
        ctr, half = (lo + hi) / 2, (hi - lo) / 2 * c
        a, b = ctr - half, ctr + half
        h = 2.0 ** -level
        base = np.floor(a.min(axis=0) / h).astype(int)
        ia = np.ceil(a / h - 0.5 - 1e-9).astype(int) - base
        ib = np.floor(b / h - 0.5 + 1e-9).astype(int) - base + 1
        shape = tuple(ib.max(axis=0) + 1)
        acc = np.zeros(shape, np.int32)
        if self.domain.n == 1:
            np.add.at(acc, ia[:, 0], 1)
            np.add.at(acc, ib[:, 0], -1)
            return int(np.cumsum(acc).max())
        np.add.at(acc, (ia[:, 0], ia[:, 1]), 1)
        np.add.at(acc, (ib[:, 0], ia[:, 1]), -1)
        np.add.at(acc, (ia[:, 0], ib[:, 1]), -1)
        np.add.at(acc, (ib[:, 0], ib[:, 1]), 1)
        return int(np.cumsum(np.cumsum(acc, 0), 1).max())


def disjoint_interiors(lo: np.ndarray, hi: np.ndarray) -> bool:
    """Pairwise interior disjointness via a sweep over the first axis."""
    if len(lo) < 2:
        return True
    order = np.argsort(lo[:, 0])
    lo, hi = lo[order], hi[order]
    active: list = []
    for i in range(len(lo)):
        active = [j for j in active if hi[j, 0] > lo[i, 0] + 1e-12]
        for j in active:
            if np.all(np.minimum(hi[i], hi[j]) - np.maximum(lo[i], lo[j]) > 1e-12):
                return False
        active.append(i)
    return True


def whitney(domain: Domain, max_level: int, region: Box, side: str = "interior"
            ) -> WhitneyDecomposition:
    """Whitney decomposition of ``Ω`` (``side="interior"``) or of ``R^n \\ closure(Ω)`` in ``region``.

    ``region`` must be level-0 aligned. Level-0 cubes farther than ``4 diam``
    from the boundary are dropped (reported in ``far``).
    """
    if any(abs(v - round(v)) > 1e-12 for v in region.lo + region.hi):
        raise ValueError("region must be level-0 aligned")
    n = domain.n
    want_inside = side == "interior"
    rng = [np.arange(int(round(a)), int(round(b))) for a, b in zip(region.lo, region.hi)]
    idx = np.stack(np.meshgrid(*rng, indexing="ij"), axis=-1).reshape(-1, n)
    accepted, adist, floor, fdist = [], [], [], []
    far = 0
    for k in range(max_level + 1):
        if len(idx) == 0:
            break
        lo, hi = _box_arrays(k, idx)
        d = domain.boundary_distance_boxes(lo, hi)
        diam = math.sqrt(n) * 2.0 ** -k
        ins = domain.inside((lo + hi) / 2)
        touching = d <= 1e-12
        # a cube at positive distance lies wholly on one side
        on_side = np.where(touching, True, ins == want_inside)
        ok = on_side & ~touching & (d >= diam * (1 - 1e-12))
        if k == 0:
            farm = ok & (d > 4 * diam * (1 + 1e-12))
            far += int(farm.sum())
            ok &= ~farm
        accepted += [DyadicCube(k, tuple(int(v) for v in row)) for row in idx[ok]]
        adist.append(d[ok])
        rest = on_side & ~ok & ~((k == 0) & (d > 4 * diam * (1 + 1e-12)))
        if k == max_level:
            # keep floor cubes that meet the open set
            sel = rest & _meets_side(domain, lo, hi, want_inside)
            floor += [DyadicCube(k, tuple(int(v) for v in row)) for row in idx[sel]]
            fdist.append(d[sel])
            break
        kids = idx[rest]
        if n == 1:
            idx = np.concatenate([2 * kids, 2 * kids + 1])
        else:
            offs = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
            idx = (2 * kids[:, None, :] + offs[None]).reshape(-1, 2)
    dist = np.concatenate(adist) if adist else np.zeros(0)
    fd = np.concatenate(fdist) if fdist else np.zeros(0)
    return WhitneyDecomposition(domain, side, region, max_level, accepted, dist, floor, fd, far)


def _meets_side(domain, lo, hi, want_inside, samples: int = 5):
    """Whether the cube meets the open side (sampled on a lattice of points)."""
    t = (np.arange(samples) + 0.5) / samples
    n = lo.shape[1]
    if n == 1:
        pts = lo[:, None, :] + (hi - lo)[:, None, :] * t[None, :, None]
    else:
        a, b = np.meshgrid(t, t, indexing="ij")
        tt = np.stack([a.ravel(), b.ravel()], -1)
        pts = lo[:, None, :] + (hi - lo)[:, None, :] * tt[None]
    ins = domain.inside(pts)
    return np.any(ins == want_inside, axis=1)


# -- reflection ------------------------------------------------------------------------

def box_distances(alo, ahi, blo, bhi) -> np.ndarray:
    """Euclidean distances between every box of ``a`` and every box of ``b``."""
    gap = np.maximum(0.0, np.maximum(blo[None] - ahi[:, None], alo[:, None] - bhi[None]))
    return np.sqrt(np.sum(gap * gap, axis=-1))


@dataclass
class ReflectionMap:
    pairs: dict                  # Q (exterior) -> Q^s (interior)
    floor_pairs: dict            # floor cube -> reflected interior cube
    delta: float
    size_ratio: tuple = (math.nan, math.nan)
    distance_C: float = math.nan
    multiplicity: int = 0
    defining_ok: bool = True

    def __getitem__(self, q):
        return self.pairs[q] if q in self.pairs else self.floor_pairs[q]

    def summary(self) -> dict:
        return {"count": len(self.pairs), "floor": len(self.floor_pairs),
                "size_ratio_min": self.size_ratio[0], "size_ratio_max": self.size_ratio[1],
                "distance_C": self.distance_C, "multiplicity": self.multiplicity,
                "defining_ok": self.defining_ok}


def _pick(cands: np.ndarray, inner: WhitneyDecomposition, lvl: np.ndarray, ix: np.ndarray):
    """Maximal-diameter candidate, ties broken by the smallest index tuple."""
    c = np.nonzero(cands)[0]
    if c.size == 0:
        return None
    top = lvl[c].min()
    c = c[lvl[c] == top]
    order = np.lexsort(tuple(ix[c, i] for i in reversed(range(ix.shape[1]))))
    return int(c[order[0]])


def reflect(exterior: WhitneyDecomposition, interior: WhitneyDecomposition, delta: float,
            chunk: int = 512) -> ReflectionMap:
    """``Q^s`` for ``Q ∈ F_c`` with ``diam Q <= δ``: the largest ``S ∈ F`` with ``dist(S,Q) < 2 dist(Q,∂Ω)``.

    Floor cubes of the exterior use the relaxed rule
    ``dist(S,Q) < 2 max(dist(Q,∂Ω), diam Q)``.
    """
    ilo, ihi = interior.lo_hi()
    if len(ilo) == 0:
        raise ValueError("reflection failed: interior decomposition is empty")
    lvl = np.array([q.level for q in interior.cubes])
    ix = np.array([q.index for q in interior.cubes])
    pairs, fpairs = {}, {}
    for which, store in (("cubes", pairs), ("floor", fpairs)):
        cubes = exterior.cubes if which == "cubes" else exterior.floor
        dists = exterior.dist if which == "cubes" else exterior.floor_dist
        lo, hi = exterior.lo_hi(which)
        for s in range(0, len(cubes), chunk):
            D = box_distances(lo[s:s + chunk], hi[s:s + chunk], ilo, ihi)
            for r in range(D.shape[0]):
                q = cubes[s + r]
                if q.diam > delta + 1e-12:
                    continue
                d = dists[s + r]
                bound = 2 * d if which == "cubes" else 2 * max(d, q.diam)
                j = _pick(D[r] < bound, interior, lvl, ix)
                if j is None:
                    raise ValueError(f"reflection failed for {q}")
                store[q] = interior.cubes[j]
    rm = ReflectionMap(pairs, fpairs, delta)
    if pairs:
        qs = list(pairs)
        ratio = np.array([pairs[q].side / q.side for q in qs])
        qlo, qhi = np.array([cube_bounds(q).lo for q in qs]), np.array([cube_bounds(q).hi for q in qs])
        slo = np.array([cube_bounds(pairs[q]).lo for q in qs])
        shi = np.array([cube_bounds(pairs[q]).hi for q in qs])
        gap = np.maximum(0.0, np.maximum(slo - qhi, qlo - shi))
        dd = np.sqrt(np.sum(gap * gap, axis=1))
        dmap = dict(zip(exterior.cubes, exterior.dist))
        dq = np.array([dmap[q] for q in qs])
        rm.size_ratio = (float(ratio.min()), float(ratio.max()))
        rm.distance_C = float(np.max(dd / np.array([q.side for q in qs])))
        rm.defining_ok = bool(np.all(dd < 2 * dq))
        counts: dict = {}
        for q in qs:
            counts[pairs[q]] = counts.get(pairs[q], 0) + 1
        rm.multiplicity = max(counts.values())
    return rm


# -- chains ---------------------------------------------------------------------------

def _touch(a: Box, b: Box) -> bool:
    return a.intersects(b)


def _containing_dilation(outer: Box, inner: Box) -> float:
    """Smallest ``c`` with ``inner ⊆ c * outer`` (dilation about the center)."""
    ctr, half = outer.center, outer.sides / 2
    far = np.maximum(np.abs(np.array(inner.lo) - ctr), np.abs(np.array(inner.hi) - ctr))
    return float(np.max(far / half))


def chain(W: WhitneyDecomposition, Q: DyadicCube, R0: DyadicCube, C1: float = 4.0,
          c_values=(2.0, 4.0, 8.0, 16.0, 32.0)) -> tuple:
    """Touching chain ``Q = R_m, ..., R_0`` in ``W`` restricted to ``c R0``.

    Returns ``(chain, c)`` where ``c`` is the smallest tried dilation that
    works and also covers ``Q ⊆ c R_j`` for ``j < m``.
    """
    idx = W.index()
    if Q not in idx or R0 not in idx:
        raise ValueError("chain endpoints must belong to the decomposition")
    if Q == R0:
        return [Q], 1.0
    lo, hi = W.lo_hi()
    r0 = cube_bounds(R0)
    qb = cube_bounds(Q)
    for c in c_values:
        big = r0.dilate(c)
        inside = np.all((lo >= np.array(big.lo) - 1e-12) & (hi <= np.array(big.hi) + 1e-12), axis=1)
        nodes = np.nonzero(inside)[0]
        if idx[Q] not in set(nodes.tolist()):
            continue
        nlo, nhi = lo[nodes], hi[nodes]
        gap = np.maximum(0.0, np.maximum(nlo[None] - nhi[:, None], nlo[:, None] - nhi[None]))
        adj = np.all(gap <= 1e-12, axis=-1)
        np.fill_diagonal(adj, False)
        pos = {int(g): i for i, g in enumerate(nodes)}
        start, goal = pos[idx[Q]], pos.get(idx[R0])
        if goal is None:
            continue
        prev = {start: None}
        dq = deque([start])
        while dq:
            u = dq.popleft()
            if u == goal:
                break
            for v in np.nonzero(adj[u])[0]:
                v = int(v)
                if v not in prev:
                    prev[v] = u
                    dq.append(v)
        if goal not in prev:
            continue
        path = []
        u = goal
        while u is not None:
            path.append(W.cubes[int(nodes[u])])
            u = prev[u]
        path = path[::-1]          # Q ... R0
        need = max([_containing_dilation(cube_bounds(R), qb) for R in path[1:]] + [1.0])
        return path, max(c, need)
    raise ValueError(f"chain not found between {Q} and {R0}")


# -- partition of unity -----------------------------------------------------------------

def _bump(t):
    out = np.zeros_like(t)
    m = np.abs(t) < 1
    out[m] = np.exp(-1.0 / (1.0 - t[m] ** 2))
    return out


@dataclass
class PartitionOfUnity:
    """Shepard-normalized bumps on ``Q* = (9/8) Q``, restricted to the complement cells."""

    grid: Grid
    cubes: list
    windows: list            # slices into the grid
    values: list             # φ_Q on its window
    total: np.ndarray        # Σ θ_Q (un-normalized) on the grid
    outside: np.ndarray      # complement mask used

    def phi(self, i: int) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        out[self.windows[i]] = self.values[i]
        return out

    def sum(self) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        for w, v in zip(self.windows, self.values):
            out[w] += v
        return out

    @property
    def covered(self) -> np.ndarray:
        return self.total > 0


def _window(grid: Grid, b: Box):
    sl = []
    for ax in range(grid.n):
        c = grid.axis_centers(ax)
        i0 = int(np.searchsorted(c, b.lo[ax] - 1e-12, side="left"))
        i1 = int(np.searchsorted(c, b.hi[ax] + 1e-12, side="right"))
        sl.append(slice(i0, i1))
    return tuple(sl)


def partition_of_unity(Wc: WhitneyDecomposition, grid: Grid, include_floor: bool = True
                       ) -> PartitionOfUnity:
    outside = ~Wc.domain.mask(grid) if Wc.side == "exterior" else Wc.domain.mask(grid)
    cubes = list(Wc.cubes) + (list(Wc.floor) if include_floor else [])
    windows, thetas = [], []
    total = np.zeros(grid.shape)
    for q in cubes:
        star = dilate(q, STAR)
        w = _window(grid, star)
        axes = [grid.axis_centers(ax)[w[ax]] for ax in range(grid.n)]
        ctr = star.center
        half = star.sides / 2
        th = np.ones([len(a) for a in axes])
        for ax, a in enumerate(axes):
            shape = [1] * grid.n
            shape[ax] = len(a)
            th = th * _bump((a - ctr[ax]) / half[ax]).reshape(shape)
        th = th * outside[w]
        windows.append(w)
        thetas.append(th)
        total[w] += th
    values = []
    for w, th in zip(windows, thetas):
        tot = total[w]
        values.append(np.where(tot > 0, th / np.where(tot > 0, tot, 1.0), 0.0))
    return PartitionOfUnity(grid, cubes, windows, values, total, outside)


# -- (ε, δ) falsifier -------------------------------------------------------------------

@dataclass
class EpsDeltaReport:
    eps_hat: float
    claimed: float | None
    passed: bool
    worst_pair: tuple | None
    pairs: int
    disconnected: list = field(default_factory=list)
    note: str = "falsifier: ε̂ certifies sampled pairs only"


def _path_eps(path_pts, dists, x, y):
    xy = np.linalg.norm(y - x)
    seg = np.linalg.norm(np.diff(path_pts, axis=0), axis=1).sum()
    length_term = xy / seg if seg > 0 else math.inf
    zx = np.linalg.norm(path_pts - x, axis=1)
    zy = np.linalg.norm(path_pts - y, axis=1)
    prod = zx * zy
    m = prod > 1e-15
    cigar = np.min(dists[m] * xy / prod[m]) if np.any(m) else math.inf
    return min(length_term, cigar)


def _pair_eps(mask, dist, grid, a, b, lambdas=(0.0, 0.3, 1.0, 3.0)):
    """Best certified ε over a few clearance-penalized grid shortest paths (None if disconnected)."""
    h = grid.h
    x = np.array([grid.axis_centers(i)[a[i]] for i in range(2)])
    y = np.array([grid.axis_centers(i)[b[i]] for i in range(2)])
    xy = np.linalg.norm(x - y)
    pad = int(math.ceil(xy / h)) + 4
    lo = np.maximum(np.minimum(a, b) - pad, 0)
    hi = np.minimum(np.maximum(a, b) + pad + 1, np.array(mask.shape))
    sub = mask[lo[0]:hi[0], lo[1]:hi[1]]
    dsub = dist[lo[0]:hi[0], lo[1]:hi[1]]
    ids = -np.ones(sub.shape, int)
    ids[sub] = np.arange(sub.sum())
    ci, cj = np.nonzero(sub)
    P = np.c_[grid.axis_centers(0)[ci + lo[0]], grid.axis_centers(1)[cj + lo[1]]]
    zx = np.linalg.norm(P - x, axis=1)
    zy = np.linalg.norm(P - y, axis=1)
    inv_cigar = zx * zy / (max(xy, h) * np.maximum(dsub[sub], 1e-12))
    src, dst = ids[a[0] - lo[0], a[1] - lo[1]], ids[b[0] - lo[0], b[1] - lo[1]]
    rows, cols, lens = [], [], []
    N0, N1 = sub.shape
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        # A holds cell p, B holds p + (di, dj)
        ra, rb = slice(0, N0 - di), slice(di, N0)
        ca, cb = slice(max(0, -dj), N1 - max(0, dj)), slice(max(0, dj), N1 - max(0, -dj))
        A, B = ids[ra, ca], ids[rb, cb]
        ok = (A >= 0) & (B >= 0)
        if di and dj:
            # diagonal moves need both side cells p + (di, 0) and p + (0, dj)
            ok &= (ids[rb, ca] >= 0) & (ids[ra, cb] >= 0)
        rows.append(A[ok])
        cols.append(B[ok])
        lens.append(np.full(ok.sum(), h * math.hypot(di, dj)))
    rows, cols, lens = map(np.concatenate, (rows, cols, lens))
    best = None
    N = len(P)
    for lam in lambdas:
        w = lens * (1 + lam * 0.5 * (inv_cigar[rows] + inv_cigar[cols]))
        G = coo_matrix((w, (rows, cols)), shape=(N, N)).tocsr()
        _, pred = dijkstra(G, directed=False, indices=src, return_predecessors=True)
        if src != dst and pred[dst] < 0:
            return None
        path = [dst]
        while path[-1] != src:
            path.append(pred[path[-1]])
        path = path[::-1]
        pts = P[path]
        e = _path_eps(pts, dsub[sub][path], x, y)
        best = e if best is None else max(best, e)
    return best


def check_eps_delta(domain: EpsDeltaDomain, grid: Grid, sample_pairs: int = 100, seed: int = 0,
                    eps: float | None = None, delta: float | None = None) -> EpsDeltaReport:
    """Sampled lower bound ``ε̂`` for the (ε, δ) condition; pairs across components within δ fail."""
    eps = domain.eps if eps is None else eps
    delta = domain.delta if delta is None else delta
    mask = domain.mask(grid)
    c = grid.centers()
    dist = np.where(mask, domain.boundary_distance_points(c), 0.0)
    rng = np.random.default_rng(seed)
    cells = np.argwhere(mask)
    h = grid.h
    pairs = []
    # closest cells of distinct components
    lab, k = ndimage.label(mask)
    disconnected = []
    if k > 1:
        for i in range(1, k + 1):
            edt, inds = ndimage.distance_transform_edt(lab != i, return_indices=True)
            for j in range(i + 1, k + 1):
                sel = np.argwhere(lab == j)
                dd = edt[lab == j] * h
                t = int(np.argmin(dd))
                if dd[t] < delta:
                    b = tuple(int(v) for v in sel[t])
                    a = tuple(int(v) for v in inds[:, b[0], b[1]])
                    disconnected.append((a, b))
    tries = 0
    while len(pairs) < sample_pairs and tries < 50 * sample_pairs:
        tries += 1
        a = cells[rng.integers(len(cells))]
        off = rng.uniform(-delta, delta, 2)
        if np.linalg.norm(off) >= delta:
            continue
        b = np.floor((c[tuple(a)] + off - np.array(grid.lo)) / h).astype(int)
        if np.any(b < 0) or np.any(b >= np.array(grid.shape)) or not mask[tuple(b)]:
            continue
        if np.all(a == b):
            continue
        pairs.append((tuple(int(v) for v in a), tuple(int(v) for v in b)))
    worst, worst_pair = math.inf, None
    for a, b in pairs:
        if lab[a] != lab[b]:
            disconnected.append((a, b))
            continue
        e = _pair_eps(mask, dist, grid, np.array(a), np.array(b))
        if e is None:
            disconnected.append((a, b))
            continue
        if e < worst:
            worst, worst_pair = e, (a, b)
    if disconnected:
        return EpsDeltaReport(0.0, eps, False, disconnected[0], len(pairs), disconnected)
    slack = 2.0 ** (-grid.J + 2)
    passed = eps is None or worst >= eps - slack
    return EpsDeltaReport(float(worst), eps, bool(passed), worst_pair, len(pairs))
