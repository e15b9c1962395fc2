"""Dyadic cubes, uniform cell-centered grids and sampled functions."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

_TOL = 1e-12


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box ``prod [lo_i, hi_i]``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("lo/hi dimension mismatch")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"inverted box {self.lo} {self.hi}")

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lo) + np.array(self.hi))

    @property
    def sides(self) -> np.ndarray:
        return np.array(self.hi) - np.array(self.lo)

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(self.sides))

    def dilate(self, c: float) -> "Box":
        half = 0.5 * c * self.sides
        return Box(tuple(self.center - half), tuple(self.center + half))

    def contains_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        lo, hi = np.array(self.lo), np.array(self.hi)
        return np.all((pts >= lo - _TOL) & (pts <= hi + _TOL), axis=-1)

    def contains_box(self, other: "Box") -> bool:
        return all(a - _TOL <= c and d <= b + _TOL
                   for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def intersects(self, other: "Box") -> bool:
        return all(c <= b + _TOL and a <= d + _TOL
                   for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def distance(self, other: "Box") -> float:
        gaps = [max(c - b, a - d, 0.0)
                for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi)]
        return math.hypot(*gaps) if len(gaps) > 1 else gaps[0]


@dataclass(frozen=True, order=True)
class DyadicCube:
    """Closed dyadic cube ``Q_{k,m}`` of rank ``level`` and integer ``index``."""

    level: int
    index: tuple

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("negative levels are not supported")
        object.__setattr__(self, "index", tuple(int(v) for v in self.index))
        if len(self.index) not in (1, 2):
            raise ValueError("only n in {1, 2} is supported")

    @property
    def n(self) -> int:
        return len(self.index)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def diam(self) -> float:
        return self.side * math.sqrt(self.n)

    def parent(self) -> "DyadicCube":
        if self.level == 0:
            raise ValueError("level-0 cubes have no parent")
        return DyadicCube(self.level - 1, tuple(m >> 1 for m in self.index))

    def children(self) -> list:
        base = [2 * m for m in self.index]
        offs = np.ndindex(*([2] * self.n))
        return [DyadicCube(self.level + 1, tuple(b + o for b, o in zip(base, off)))
                for off in offs]

    def contains(self, other: "DyadicCube") -> bool:
        if other.level < self.level:
            return False
        shift = other.level - self.level
        return tuple(m >> shift for m in other.index) == self.index


def cube_bounds(cube: DyadicCube) -> Box:
    s = cube.side
    return Box(tuple(m * s for m in cube.index), tuple((m + 1) * s for m in cube.index))


def dilate(cube: DyadicCube, c: float) -> Box:
    if c < 1:
        raise ValueError("dilation factor must be >= 1")
    return cube_bounds(cube).dilate(c)


def cubes_intersecting(region: Box, level: int) -> list:
    """Level-``level`` closed dyadic cubes meeting the closed ``region``.

    Points on dyadic faces belong to every touching cube.
    """
    scale = 2.0 ** level
    ranges = []
    for a, b in zip(region.lo, region.hi):
        first = math.ceil(a * scale - 1 - _TOL)
        last = math.floor(b * scale + _TOL)
        ranges.append(range(first, last + 1))
    return [DyadicCube(level, idx) for idx in _product(ranges)]


def _product(ranges) -> Iterator[tuple]:
    if len(ranges) == 1:
        for i in ranges[0]:
            yield (i,)
    else:
        for i in ranges[0]:
            for j in ranges[1]:
                yield (i, j)


@dataclass(frozen=True)
class Grid:
    """Uniform grid of spacing ``2**-J`` over a box with integer corners."""

    J: int
    lo: tuple
    hi: tuple

    def __post_init__(self):
        if self.J < 0:
            raise ValueError("resolution J must be >= 0")
        lo = tuple(math.floor(v) for v in self.lo)
        hi = tuple(math.ceil(v) for v in self.hi)
        if any(float(a) != b for a, b in zip((*self.lo, *self.hi), (*lo, *hi))):
            warnings.warn(f"bounding box snapped outward to {lo}..{hi}", stacklevel=3)
        if len(lo) not in (1, 2) or len(lo) != len(hi):
            raise ValueError("only n in {1, 2} is supported")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("empty bounding box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def h(self) -> float:
        return 2.0 ** (-self.J)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    @property
    def shape(self) -> tuple:
        return tuple((b - a) << self.J for a, b in zip(self.lo, self.hi))

    @property
    def box(self) -> Box:
        return Box(self.lo, self.hi)

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.lo[axis] + (np.arange(self.shape[axis]) + 0.5) * self.h

    def centers(self) -> np.ndarray:
        """Cell centers, shape ``grid.shape + (n,)``."""
        axes = [self.axis_centers(i) for i in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def region_mask(self, region: Box) -> np.ndarray:
        sel = [(c >= a - _TOL) & (c <= b + _TOL)
               for c, a, b in zip((self.axis_centers(i) for i in range(self.n)),
                                  region.lo, region.hi)]
        if self.n == 1:
            return sel[0]
        return sel[0][:, None] & sel[1][None, :]

    def cube_slices(self, cube: DyadicCube) -> tuple:
        """Cells of the half-open cube; raises if the cube leaves the box."""
        if cube.level > self.J:
            raise ValueError("cube finer than the grid")
        w = 1 << (self.J - cube.level)
        out = []
        for ax, m in enumerate(cube.index):
            start = m * w - (self.lo[ax] << self.J)
            if start < 0 or start + w > self.shape[ax]:
                raise ValueError(f"{cube} outside grid box")
            out.append(slice(start, start + w))
        return tuple(out)

    def cubes(self, level: int) -> list:
        """All level cubes tiling the box (half-open partition)."""
        ranges = [range(a << level, b << level) for a, b in zip(self.lo, self.hi)]
        return [DyadicCube(level, idx) for idx in _product(ranges)]

    def cube_origin(self, level: int) -> tuple:
        return tuple(a << level for a in self.lo)

    def block_shape(self, level: int) -> tuple:
        return tuple(s >> (self.J - level) for s in self.shape)

    def index_of(self, pts: np.ndarray) -> np.ndarray:
        """Nearest cell indices (clipped) of points, shape ``(..., n)``."""
        pts = np.asarray(pts, dtype=float)
        idx = np.floor((pts - np.array(self.lo)) / self.h).astype(int)
        return np.clip(idx, 0, np.array(self.shape) - 1)

    def contains_points(self, pts) -> np.ndarray:
        return self.box.contains_points(pts)


def block_reduce(a: np.ndarray, w: int, how: str = "sum") -> np.ndarray:
    """Reduce ``w**n`` blocks of ``a`` (sum or max)."""
    if a.ndim == 1:
        b = a.reshape(-1, w)
        axes = (1,)
    else:
        b = a.reshape(a.shape[0] // w, w, a.shape[1] // w, w)
        axes = (1, 3)
    return b.max(axis=axes) if how == "max" else b.sum(axis=axes)


def block_expand(a: np.ndarray, w: int) -> np.ndarray:
    out = a
    for ax in range(a.ndim):
        out = np.repeat(out, w, axis=ax)
    return out


@dataclass(frozen=True)
class GridFunction:
    """Cell-centered samples on a :class:`Grid`.

    ``valid`` marks the cells belonging to the function's domain (``None``
    means every cell). Samples outside the domain are stored as ``nan``.
    """

    grid: Grid
    samples: np.ndarray
    valid: np.ndarray | None = field(default=None)

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.shape != self.grid.shape:
            raise ValueError(f"samples shape {s.shape} != grid {self.grid.shape}")
        v = None
        if self.valid is not None:
            v = np.array(self.valid, dtype=bool)
            if v.shape != s.shape:
                raise ValueError("mask shape mismatch")
            s[~v] = np.nan
            v.setflags(write=False)
        inner = s if v is None else s[v]
        if not np.all(np.isfinite(inner)):
            raise ValueError("samples must be finite on the domain")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "valid", v)

    @classmethod
    def from_callable(cls, grid: Grid, func: Callable, valid=None) -> "GridFunction":
        pts = grid.centers()
        vals = np.asarray(func(pts), dtype=float)
        vals = np.broadcast_to(vals, grid.shape).copy()
        if valid is not None:
            vals[~np.asarray(valid, bool)] = np.nan
        return cls(grid, vals, valid)

    @property
    def domain(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.grid.shape, dtype=bool)
        return self.valid

    def zero_extended(self) -> np.ndarray:
        """Samples with cells outside the domain set to zero."""
        if self.valid is None:
            return np.array(self.samples)
        return np.where(self.valid, self.samples, 0.0)

    def restrict(self, valid) -> "GridFunction":
        valid = np.asarray(valid, bool) & self.domain
        return GridFunction(self.grid, self.zero_extended(), valid)

    def __mul__(self, a: float) -> "GridFunction":
        return GridFunction(self.grid, self.zero_extended() * a, self.valid)

    __rmul__ = __mul__

    def __add__(self, other: "GridFunction") -> "GridFunction":
        valid = None
        if self.valid is not None or other.valid is not None:
            valid = self.domain & other.domain
        return GridFunction(self.grid, self.zero_extended() + other.zero_extended(), valid)


def _region_cells(f: GridFunction, region) -> np.ndarray:
    if region is None:
        sel = np.ones(f.grid.shape, dtype=bool)
    elif isinstance(region, Box):
        sel = f.grid.region_mask(region)
    else:
        sel = np.asarray(region, dtype=bool)
    return sel & f.domain


def lq_sum(values: Sequence[float], q: float) -> float:
    """``(sum |a|^q)^(1/q)``, or the max for ``q = inf``."""
    a = np.abs(np.asarray(values, dtype=float))
    if a.size == 0:
        return 0.0
    if math.isinf(q):
        return float(a.max())
    return float(np.sum(a ** q) ** (1.0 / q))


def quasi_norm_Lr(f: GridFunction, region=None, r: float = 2.0) -> float:
    """Midpoint-rule ``||f | L_r(region)||``; ``r = inf`` gives the max."""
    if not r > 0:
        raise ValueError("r must be positive")
    sel = _region_cells(f, region)
    if not sel.any():
        raise ValueError("empty region")
    vals = np.abs(f.samples[sel])
    if math.isinf(r):
        return float(vals.max())
    return float((np.sum(vals ** r) * f.grid.cell_volume) ** (1.0 / r))


def dump_grid(path, f: GridFunction, fmt: str = "%.17g") -> None:
    """Write ``n J lo... hi...`` then one row of samples per line."""
    g = f.grid
    header = " ".join(str(v) for v in (g.n, g.J, *g.lo, *g.hi))
    data = np.atleast_2d(np.asarray(f.samples, dtype=float))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(" ".join("nan" if not np.isfinite(v) else fmt % v for v in row) + "\n")


def dump_array(path, grid: Grid, arr: np.ndarray, fmt: str = "%d") -> None:
    header = " ".join(str(v) for v in (grid.n, grid.J, *grid.lo, *grid.hi))
    np.savetxt(path, np.atleast_2d(arr), fmt=fmt, header=header, comments="")


def load_grid(path) -> GridFunction:
    with open(path) as fh:
        head = fh.readline().split()
        n, J = int(head[0]), int(head[1])
        lo = tuple(int(float(v)) for v in head[2:2 + n])
        hi = tuple(int(float(v)) for v in head[2 + n:2 + 2 * n])
        data = np.loadtxt(fh, ndmin=2)
    grid = Grid(J, lo, hi)
    data = data.reshape(grid.shape)
    valid = np.isfinite(data)
    return GridFunction(grid, data, None if valid.all() else valid)
