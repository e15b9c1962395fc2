"""Mollifier kernels, scaled convolutions, reproducing pairs and maximal functions.

Kernels are used through *stencils*: the level-``j`` dilate ``g_j = 2^{jn} g(2^j .)``
sampled at integer cell offsets of a level-``J`` grid and multiplied by the
cell volume. Stencils are ``(weights, lo)`` pairs where ``lo`` is the integer
offset of ``weights[0, ...]``. Mother stencils are renormalized to sum to one,
so the derived stencils ``(φ0)_j - (φ0)_{j-1}`` sum to zero exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.signal import fftconvolve

from .dyadic import Box, DyadicCube, Grid, GridFunction, cube_bounds

MIN_CELLS = 4


def _bump1(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t, dtype=float)
    inside = np.abs(t) < 1
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


# -- stencil algebra -------------------------------------------------------------

def stencil_conv(a, b):
    (wa, la), (wb, lb) = a, b
    if wa.size * wb.size < 4096:
        from scipy.signal import convolve
        w = convolve(wa, wb, mode="full", method="direct")
    else:
        w = fftconvolve(wa, wb, mode="full")
    return w, tuple(x + y for x, y in zip(la, lb))


def stencil_add(a, b, beta: float = 1.0):
    """``a + beta * b`` on the union of the index ranges."""
    (wa, la), (wb, lb) = a, b
    lo = tuple(min(x, y) for x, y in zip(la, lb))
    hi = tuple(max(x + s, y + t) for x, y, s, t in zip(la, lb, wa.shape, wb.shape))
    out = np.zeros(tuple(h - l for h, l in zip(hi, lo)))
    out[tuple(slice(x - l, x - l + s) for x, l, s in zip(la, lo, wa.shape))] += wa
    out[tuple(slice(y - l, y - l + t) for y, l, t in zip(lb, lo, wb.shape))] += beta * wb
    return out, lo


def delta_stencil(n: int):
    return np.ones((1,) * n), (0,) * n


def apply_stencil(st, values: np.ndarray) -> np.ndarray:
    """``out[x] = Σ_i w[i] values[x - i]`` on the grid of ``values`` (zero outside)."""
    w, lo = st
    full = fftconvolve(values, w, mode="full") if w.size > 1 else values * w.ravel()[0]
    if w.size == 1:
        return _shift_array(full, lo)
    # full[q] corresponds to x = q + lo
    out = np.zeros(values.shape)
    src, dst = [], []
    for ax, n in enumerate(values.shape):
        x0 = max(0, lo[ax])
        x1 = min(n, full.shape[ax] + lo[ax])
        if x1 <= x0:
            return out
        src.append(slice(x0 - lo[ax], x1 - lo[ax]))
        dst.append(slice(x0, x1))
    out[tuple(dst)] = full[tuple(src)]
    return out


def _shift_array(a, lo):
    out = np.zeros_like(a)
    src, dst = [], []
    for ax, n in enumerate(a.shape):
        s = lo[ax]
        if abs(s) >= n:
            return out
        src.append(slice(max(0, -s), n - max(0, s)))
        dst.append(slice(max(0, s), n - max(0, -s)))
    out[tuple(dst)] = a[tuple(src)]
    return out


# -- kernels -----------------------------------------------------------------------

@dataclass(eq=False)
class Kernel:
    """A kernel on ``R^n`` with compact support in ``support``.

    ``evaluator`` gives closed-form values of the level-0 kernel; composed
    kernels supply ``builder(j, J) -> stencil`` instead. ``normalization``
    is ``"unit"`` (discrete integral one), ``"zero"`` or ``"none"``.
    """

    name: str
    n: int
    support: Box
    evaluator: Callable | None = None
    normalization: str = "none"
    builder: Callable | None = None
    declared_moments: int | None = None
    params: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, x) -> np.ndarray:
        if self.evaluator is None:
            raise TypeError(f"{self.name} has no closed form")
        x = np.asarray(x, float)
        return np.where(self.support.contains_points(x), self.evaluator(x), 0.0)

    def cells_across(self, j: int, J: int) -> float:
        return float(np.min(self.support.sides)) * 2.0 ** (J - j)

    def stencil(self, j: int, J: int):
        key = (j, J)
        if key not in self._cache:
            if self.builder is not None:
                st = self.builder(j, J)
            else:
                st = self._sample(j, J)
            st[0].setflags(write=False)
            self._cache[key] = st
        return self._cache[key]

    def _sample(self, j, J):
        if self.cells_across(j, J) < MIN_CELLS:
            raise ValueError(f"kernel under-resolved at level {j}")
        t = 2.0 ** (j - J)
        los = [int(math.ceil(a / t - 1e-9)) for a in self.support.lo]
        his = [int(math.floor(b / t + 1e-9)) for b in self.support.hi]
        axes = [np.arange(a, b + 1) * t for a, b in zip(los, his)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        w = self(pts) * t ** self.n
        if self.normalization == "unit":
            w = w / w.sum()
        return w, tuple(los)


def make_mother_kernel(shape: str = "cube", n: int = 2, M: float = 1.0, radius: float = 0.125
                       ) -> Kernel:
    """Smooth product bump with unit discrete integral.

    ``cube``: supported in ``[-1, 1]^n``. ``cone``: supported in a box of
    half-side ``radius`` centered at ``-c e_n`` with ``c`` chosen so the box lies in
    ``-K = {x_n < -M |x'|}``.
    """
    if shape == "cube":
        support = Box((-1.0,) * n, (1.0,) * n)
        center = np.zeros(n)
        rad = 1.0
    elif shape == "cone":
        if M < 1:
            raise ValueError("cone kernels need M >= 1")
        c = radius * (1 + M) * 1.25
        center = np.zeros(n)
        center[-1] = -c
        rad = radius
        support = Box(tuple(center - rad), tuple(center + rad))
    else:
        raise ValueError(f"unknown kernel shape {shape!r}")

    def ev(x):
        t = (x - center) / rad
        return np.prod(_bump1(t), axis=-1)

    return Kernel(f"phi0-{shape}", n, support, ev, "unit",
                  params={"shape": shape, "M": M, "radius": rad, "center": center.tolist()})


def derived_kernel(phi0: Kernel) -> Kernel:
    """``φ(x) = φ0(x) - 2^{-n} φ0(x/2)``; stencils are differences of normalized mother stencils."""
    lo = np.minimum(np.array(phi0.support.lo), 2 * np.array(phi0.support.lo))
    hi = np.maximum(np.array(phi0.support.hi), 2 * np.array(phi0.support.hi))
    n = phi0.n

    def ev(x):
        return phi0(x) - 2.0 ** -n * phi0(x / 2)

    def build(j, J):
        return stencil_add(phi0.stencil(j, J), phi0.stencil(j - 1, J), -1.0)

    return Kernel(f"phi-{phi0.params.get('shape', 'custom')}", n, Box(tuple(lo), tuple(hi)), ev,
                  "zero", builder=build, params=dict(phi0.params))


def moment_order(psi: Kernel, L_max: int, J: int = 7, level: int = 0, tol: float = 1e-8) -> int:
    """Largest ``L <= L_max`` with all discrete moments of order ``<= L`` vanishing; -1 if none."""
    w, lo = psi.stencil(level, J)
    t = 2.0 ** (level - J)
    axes = [(np.arange(s) + l) * t for s, l in zip(w.shape, lo)]
    X = np.meshgrid(*axes, indexing="ij")
    norm1 = np.abs(w).sum()
    R = max(1.0, float(max(np.max(np.abs(a)) for a in axes)))
    from .polyapprox import exponents
    order = -1
    for d in range(L_max + 1):
        ok = True
        for beta in exponents(psi.n, d + 1):
            if sum(beta) != d:
                continue
            mom = np.sum(w * np.prod([X[i] ** beta[i] for i in range(psi.n)], axis=0))
            if abs(mom) > tol * norm1 * R ** d:
                ok = False
                break
        if not ok:
            break
        order = d
    return order


# -- families and convolution -----------------------------------------------------------

class KernelFamily:
    """The sequence ``φ_0 = φ0``, ``φ_k = (φ0)_k - (φ0)_{k-1}`` (k >= 1)."""

    def __init__(self, phi0: Kernel):
        self.phi0 = phi0
        self.phi = derived_kernel(phi0)
        self.n = phi0.n

    def stencil(self, k: int, J: int):
        return self.phi0.stencil(0, J) if k == 0 else self.phi.stencil(k, J)

    def convolve(self, k: int, values: np.ndarray, J: int) -> np.ndarray:
        return apply_stencil(self.stencil(k, J), values)

    def max_level(self, J: int) -> int:
        k = 0
        while self.phi0.cells_across(k + 1, J) >= MIN_CELLS:
            k += 1
        return k


def scale_convolve(g: Kernel, j: int, f: GridFunction, mask: np.ndarray | None = None
                   ) -> GridFunction:
    """``g_j * f`` on f's grid; ``f`` is zero-extended (and multiplied by ``mask`` if given)."""
    data = f.zero_extended()
    if mask is not None:
        data = data * np.asarray(mask, bool)
    return GridFunction(f.grid, apply_stencil(g.stencil(j, f.grid.J), data))


# -- reproducing pair --------------------------------------------------------------

@dataclass(eq=False)
class ReproducingPair:
    """Kernels with ``Σ_{k<=K} ψ_k * φ_k = δ - (δ - (φ0)_K)^{*N}``, ``N = L + 2``.

    With ``A_k = δ - (φ0)_k``: ``ψ_0 = Σ_{i<N} A_0^i`` and
    ``ψ_k = Σ_{i<N} A_{k-1}^i A_k^{N-1-i}``, so each ``ψ_k * φ_k`` telescopes.
    ``ψ`` has ``N - 2`` vanishing moments. Both ``ψ`` kernels contain a point
    mass at the origin, which lies on the boundary of ``-K``.
    """

    family: KernelFamily
    L: int
    K_max: int
    residuals: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return self.L + 2

    @property
    def n(self) -> int:
        return self.family.n

    def _A(self, k, J):
        return stencil_add(delta_stencil(self.n), self.family.phi0.stencil(k, J), -1.0)

    def psi_stencil(self, k: int, J: int):
        key = ("psi", k, J)
        if key not in self._cache:
            N = self.N
            if k == 0:
                A = self._A(0, J)
                acc, term = delta_stencil(self.n), delta_stencil(self.n)
                for _ in range(N - 1):
                    term = stencil_conv(term, A)
                    acc = stencil_add(acc, term)
            else:
                Ap, Ak = self._A(k - 1, J), self._A(k, J)
                # Horner in A_{k-1} over the powers A_k^m
                pk = [delta_stencil(self.n)]
                for _ in range(N - 1):
                    pk.append(stencil_conv(pk[-1], Ak))
                acc = pk[0]
                for m in range(1, N):
                    acc = stencil_add(pk[m], stencil_conv(Ap, acc))
            self._cache[key] = acc
        return self._cache[key]

    def psi0(self) -> Kernel:
        return Kernel("psi0", self.n, Box((-2.0,) * self.n, (2.0,) * self.n),
                      builder=lambda j, J: self.psi_stencil(0, J))

    def psi(self) -> Kernel:
        """``ψ`` as a kernel; its level-``j`` stencil is ``ψ_j`` built from ``(φ0)_j, (φ0)_{j-1}``."""
        return Kernel("psi", self.n, Box((-4.0,) * self.n, (4.0,) * self.n),
                      builder=lambda j, J: self.psi_stencil(max(j, 1), J),
                      declared_moments=self.L)

    def product_stencil(self, k: int, J: int):
        return stencil_conv(self.psi_stencil(k, J), self.family.stencil(k, J))

    def reproduce(self, values: np.ndarray, J: int, K: int | None = None,
                  mask: np.ndarray | None = None) -> np.ndarray:
        """``Σ_{k<=K} ψ_k * (χ φ_k * f)`` for sampled ``values``."""
        K = self.K_max if K is None else K
        out = np.zeros(values.shape)
        for k in range(K + 1):
            g = self.family.convolve(k, values, J)
            if mask is not None:
                g = g * mask
            out += apply_stencil(self.psi_stencil(k, J), g)
        return out

    def residual(self, probes, K: int | None = None) -> float:
        """Sup-norm of ``f - Σ_{k<=K} ψ_k * φ_k * f`` over the probe functions."""
        K = self.K_max if K is None else K
        worst = 0.0
        for f in probes:
            J = f.grid.J
            total = delta_stencil(self.n)
            total = (np.zeros_like(total[0]), total[1])
            for k in range(K + 1):
                total = stencil_add(total, self.product_stencil(k, J))
            vals = f.zero_extended()
            worst = max(worst, float(np.max(np.abs(vals - apply_stencil(total, vals)))))
        return worst


def default_probes(n: int = 2, J: int = 9, box=None) -> list:
    box = box or ((-1,) * n, (1,) * n)
    g = Grid(J, *box)
    out = []
    for c, R in (((0.0,) * n, 0.9), ((0.1,) * n, 0.7)):
        c = np.array(c)
        out.append(GridFunction.from_callable(
            g, lambda p, c=c, R=R: np.exp(1.0) * _bump1(np.linalg.norm(p - c, axis=-1) / R)))
    return out


def build_reproducing_pair(phi0: Kernel, L: int, K_max: int, probes=None, J: int = 9,
                           tol: float = 1e-2) -> ReproducingPair:
    """Reproducing pair with ``L_ψ >= L``; residual recorded for each ``K <= K_max``."""
    if L < 0:
        raise ValueError("L must be >= 0")
    pair = ReproducingPair(KernelFamily(phi0), L, K_max)
    probes = probes if probes is not None else default_probes(phi0.n, J)
    for K in range(K_max + 1):
        pair.residuals[K] = pair.residual(probes, K)
    if pair.residuals[K_max] > tol:
        raise ValueError(f"reproducing pair failed: residual {pair.residuals[K_max]:.3e} > {tol}")
    return pair


def kernel_from_config(cfg: dict, n: int = 2):
    """``{"shape": "cube"|"cone", "M": .., "L": .., "Kmax": ..}`` -> (φ0, L, Kmax)."""
    shape = cfg.get("shape", "cube")
    phi0 = make_mother_kernel(shape, n, M=float(cfg.get("M", 1.0)),
                              radius=float(cfg.get("radius", 0.125)))
    return phi0, int(cfg.get("L", 2)), int(cfg.get("Kmax", 5))


# -- maximal functions ----------------------------------------------------------------

def cube_sup(field_: np.ndarray, grid: Grid, j: int, c: float = 1.0) -> np.ndarray:
    """Max of ``field_`` over the cells of ``c Q_{j,m}`` for every tiling cube (``grid.cubes`` order)."""
    b = 1 << (grid.J - j)
    # cells whose centers lie in the closed dilated cube
    e = int(math.floor((c - 1) * b / 2 + 0.5 + 1e-9)) if c > 1 else 0
    if e == 0:
        if grid.n == 1:
            return field_.reshape(-1, b).max(axis=1)
        s = field_.shape
        return field_.reshape(s[0] // b, b, s[1] // b, b).max(axis=(1, 3)).ravel()
    size = b + 2 * e
    mf = maximum_filter(field_, size=size, mode="constant", cval=-np.inf)
    start = -e + size // 2
    sl = tuple(slice(start, None, b) for _ in range(grid.n))
    out = mf[sl][tuple(slice(0, n) for n in grid.block_shape(j))]
    return out.ravel()


def maximal_fields(f: GridFunction, family: KernelFamily, A: float, j: int, K_max: int,
                   c: float = 1.0, mask: np.ndarray | None = None, convs=None) -> np.ndarray:
    """``M_A(m, j, c)[f]`` (or ``M^G_A`` with ``mask``) for all level-j cubes of the grid."""
    g = f.grid
    best = np.zeros(int(np.prod(g.block_shape(j))))
    for k in range(j, K_max + 1):
        conv = convs[k] if convs is not None else family.convolve(k, f.zero_extended(), g.J)
        a = np.abs(conv)
        if mask is not None:
            a = np.where(mask, a, -np.inf)
        s = cube_sup(a, g, j, c)
        s = np.where(np.isfinite(s), s, 0.0)
        best = np.maximum(best, 2.0 ** (A * (j - k)) * s)
    return best


def maximal_function(f: GridFunction, family, A: float, j: int, m, c: float = 1.0,
                     K_max: int | None = None, mask: np.ndarray | None = None) -> float:
    """``sup_{j<=k<=K_max} 2^{A(j-k)} sup_{y in cQ_{j,m} (∩ G)} |φ_k * f(y)|``."""
    if A <= 0:
        raise ValueError("A must be positive")
    if isinstance(family, Kernel):
        family = KernelFamily(family)
    g = f.grid
    K_max = family.max_level(g.J) if K_max is None else K_max
    cubes = g.cubes(j)
    idx = cubes.index(DyadicCube(j, tuple(m)))
    return float(maximal_fields(f, family, A, j, K_max, c, mask)[idx])
