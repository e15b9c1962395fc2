"""Node lattices for the double integrals behind the local moduli.

A lattice takes every ``stride``-th cell of a grid (cell ``stride*a + stride//2``
along each axis). Differences ``Δ^l_h`` use steps ``h`` that are integer node
vectors, so every point ``x + j h`` is again a node. Segment containment
``[x, x + l h] ⊂ U`` is tested on the full-resolution mask at sample points
no farther apart than ``seg_cells`` cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import comb

from .dyadic import Grid


@dataclass(frozen=True)
class NodeLattice:
    grid: Grid
    stride: int

    def __post_init__(self):
        if self.stride < 1 or any(s % self.stride for s in self.grid.shape):
            raise ValueError(f"stride {self.stride} does not divide grid {self.grid.shape}")

    @property
    def offset(self) -> int:
        return self.stride // 2

    @property
    def shape(self) -> tuple:
        return tuple(s // self.stride for s in self.grid.shape)

    @property
    def spacing(self) -> float:
        return self.stride * self.grid.h

    @property
    def weight(self) -> float:
        return self.spacing ** self.grid.n

    def take(self, arr: np.ndarray) -> np.ndarray:
        sl = tuple(slice(self.offset, None, self.stride) for _ in range(self.grid.n))
        return np.asarray(arr)[sl]

    def axis_coords(self, axis: int) -> np.ndarray:
        g = self.grid
        return g.lo[axis] + (np.arange(self.shape[axis]) * self.stride + self.offset + 0.5) * g.h

    def coords(self) -> np.ndarray:
        axes = [self.axis_coords(i) for i in range(self.grid.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def stride_for(grid: Grid, length: float, nodes: int) -> int:
    """Largest power-of-two stride giving at least ``nodes`` nodes across ``length``."""
    cells = length / grid.h
    stride = 1
    while stride * 2 <= cells / nodes and grid.shape[0] % (stride * 2) == 0 \
            and all(s % (stride * 2) == 0 for s in grid.shape):
        stride *= 2
    return stride


def step_vectors(n: int, reach: int) -> np.ndarray:
    rng = np.arange(-reach, reach + 1)
    if n == 1:
        return rng[:, None]
    a, b = np.meshgrid(rng, rng, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=-1)


def trapezoid_weights(steps: np.ndarray, reach: int) -> np.ndarray:
    w = np.ones(len(steps))
    for ax in range(steps.shape[1]):
        w = w * np.where(np.abs(steps[:, ax]) == reach, 0.5, 1.0)
    return w


def _shift(a: np.ndarray, off, pad: int, shape) -> np.ndarray:
    """Slice of the padded array ``a`` shifted by node offset ``off``."""
    return a[tuple(slice(pad + o, pad + o + s) for o, s in zip(off, shape))]


class DifferenceField:
    """``|Δ^l(h, U) f(x)|^r`` on a node lattice for all steps ``|h|_inf <= reach``.

    ``U`` is a full-resolution boolean mask (``None`` means the grid box).
    ``tiles`` (node block size) confines each difference to its own block,
    which realises ``U = Q`` for the tiling cubes.
    """

    def __init__(self, lattice: NodeLattice, l: int, reach: int, U: np.ndarray | None = None,
                 tiles: int | None = None, seg_cells: int | None = None):
        self.lattice = lattice
        self.l = int(l)
        self.reach = int(reach)
        self.tiles = tiles
        self.steps = step_vectors(lattice.grid.n, reach)
        self.step_weights = trapezoid_weights(self.steps, reach) if reach > 0 else np.ones(1)
        self.coeffs = np.array([(-1) ** (self.l - j) * comb(self.l, j, exact=True)
                                for j in range(self.l + 1)], dtype=float)
        grid = lattice.grid
        self.U = None if U is None else np.asarray(U, bool)
        if seg_cells is None:
            seg_cells = min(lattice.stride, 1 << max(grid.J - 6, 0))
        self.seg_cells = seg_cells
        self._valid_cache: dict = {}

    @cached_property
    def _padded_U(self):
        g = self.lattice.grid
        pad = self.l * self.reach * self.lattice.stride + self.lattice.stride
        base = np.ones(g.shape, bool) if self.U is None else self.U
        return np.pad(base, pad, constant_values=False), pad

    def _segment_valid(self, i: np.ndarray) -> np.ndarray:
        key = tuple(int(v) for v in i)
        if key in self._valid_cache:
            return self._valid_cache[key]
        lat = self.lattice
        Upad, pad = self._padded_U
        s, off = lat.stride, lat.offset
        span = self.l * i * s
        m = max(1, int(math.ceil(np.max(np.abs(span)) / self.seg_cells))) if np.any(span) else 1
        valid = np.ones(lat.shape, bool)
        # the grid box is convex: the node checks in ``fields`` suffice
        for t in (range(m + 1) if self.U is not None else ()):
            d = np.rint(span * t / m).astype(int)
            sl = tuple(slice(pad + off + dd, pad + off + dd + n * s, s)
                       for dd, n in zip(d, lat.shape))
            valid &= Upad[sl]
        if self.tiles is not None:
            b = self.tiles
            for ax, n in enumerate(lat.shape):
                a = np.arange(n)
                end = a + self.l * i[ax]
                ok = (end // b == a // b) & (end >= 0) & (end < n)
                shape = [1] * len(lat.shape)
                shape[ax] = n
                valid &= ok.reshape(shape)
        if len(self._valid_cache) < 4096:
            self._valid_cache[key] = valid
        return valid

    def fields(self, values: np.ndarray, defined: np.ndarray, r: float):
        """Yield ``(weight, field)`` per step; ``field`` is ``|Δ|^r`` (or ``|Δ|`` for r=inf)."""
        lat = self.lattice
        F = lat.take(values)
        D = lat.take(defined)
        F = np.where(D, F, 0.0)
        pad = self.l * self.reach
        Fp = np.pad(F, pad)
        Dp = np.pad(D, pad, constant_values=False)
        shape = lat.shape
        for i, w in zip(self.steps, self.step_weights):
            acc = np.zeros(shape)
            ok = self._segment_valid(i).copy()
            for j, c in enumerate(self.coeffs):
                off = tuple(j * i)
                acc += c * _shift(Fp, off, pad, shape)
                ok &= _shift(Dp, off, pad, shape)
            a = np.abs(acc)
            if not math.isinf(r):
                a = a ** r
            yield w, np.where(ok, a, 0.0)


def window_sum(a: np.ndarray, half: int) -> np.ndarray:
    """Trapezoid sum over the centered window of ``2*half + 1`` nodes (zeros outside)."""
    out = a
    for ax in range(a.ndim):
        c = np.cumsum(np.pad(out, [(half + 1, half) if i == ax else (0, 0) for i in range(a.ndim)]),
                      axis=ax)
        n = out.shape[ax]
        hi = np.take(c, np.arange(2 * half + 1, 2 * half + 1 + n), axis=ax)
        lo = np.take(c, np.arange(0, n), axis=ax)
        full = hi - lo
        padded = np.pad(out, [(half, half) if i == ax else (0, 0) for i in range(a.ndim)])
        left = np.take(padded, np.arange(0, n), axis=ax)
        right = np.take(padded, np.arange(2 * half, 2 * half + n), axis=ax)
        out = full - 0.5 * (left + right)
    return out


def window_max(a: np.ndarray, half: int) -> np.ndarray:
    from scipy.ndimage import maximum_filter
    return maximum_filter(a, size=2 * half + 1, mode="constant", cval=0.0)


def block_sum(a: np.ndarray, b: int) -> np.ndarray:
    if a.ndim == 1:
        return a.reshape(-1, b).sum(axis=1)
    return a.reshape(a.shape[0] // b, b, a.shape[1] // b, b).sum(axis=(1, 3))


def block_max(a: np.ndarray, b: int) -> np.ndarray:
    if a.ndim == 1:
        return a.reshape(-1, b).max(axis=1)
    return a.reshape(a.shape[0] // b, b, a.shape[1] // b, b).max(axis=(1, 3))
