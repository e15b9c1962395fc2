"""Extension operators.

``rychkov_extend`` is the linear operator ``Σ_j ψ_j * (χ_G φ_j * f)`` for
epigraphs, built from a cone-supported reproducing pair. ``jones_devore_extend``
blends near-best polynomials of reflected interior cubes with a partition of
unity on the exterior Whitney cubes. Both return ``f`` itself on the domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domains import (
    STAR, Domain, PartitionOfUnity, ReflectionMap, WhitneyDecomposition, partition_of_unity,
    reflect, whitney,
)
from .dyadic import Box, DyadicCube, Grid, GridFunction, cube_bounds, dump_array, dump_grid
from .kernels import ReproducingPair
from .polyapprox import best_error, near_best_poly, tile_errors

TAGS = {"original": 0, "collar-polynomial": 1, "reproducing-sum": 2, "zero": 3}


@dataclass
class ExtensionResult:
    extended: GridFunction
    provenance: np.ndarray          # int tags, see TAGS
    diagnostics: dict = field(default_factory=dict)

    def tag_mask(self, tag: str) -> np.ndarray:
        return self.provenance == TAGS[tag]

    def dump(self, prefix) -> None:
        dump_grid(f"{prefix}_extended.txt", self.extended)
        dump_array(f"{prefix}_provenance.txt", self.extended.grid, self.provenance)


# -- Lipschitz epigraphs ----------------------------------------------------------------

def check_cone(phi0, M: float) -> None:
    """The support box of ``φ0`` must lie in ``-K = {x_n < -M |x'|}``."""
    sup = phi0.support
    top = sup.hi[-1]
    # the worst points are the top corners
    lateral = max(max(abs(a), abs(b)) for a, b in zip(sup.lo[:-1], sup.hi[:-1])) if sup.n > 1 else 0.0
    if not top < -M * lateral - 1e-12 and not (sup.n == 1 and top < 0):
        raise ValueError(f"cone violation: kernel support {sup} not inside -K for M={M}")


def rychkov_extend(f: GridFunction, pair: ReproducingPair, K_max: int | None = None,
                   M: float | None = None) -> ExtensionResult:
    """``Ext f = Σ_{j<=K} ψ_j * (χ_G φ_j * f)`` off ``G``; ``f`` itself on ``G = f.domain``."""
    phi0 = pair.family.phi0
    M = float(phi0.params.get("M", 1.0)) if M is None else M
    check_cone(phi0, M)
    g = f.grid
    K = pair.K_max if K_max is None else K_max
    G = f.domain
    raw = pair.reproduce(f.zero_extended(), g.J, K, mask=G)
    ext = np.where(G, f.zero_extended(), raw)
    prov = np.where(G, TAGS["original"], TAGS["reproducing-sum"]).astype(np.int8)
    diag = {"K_max": K, "raw": raw,
            "residual_on_G": float(np.max(np.abs(raw - f.zero_extended())[G])) if G.any() else 0.0}
    return ExtensionResult(GridFunction(g, ext), prov, diag)


# -- (ε, δ) domains ---------------------------------------------------------------------

@dataclass
class WhitneySetup:
    interior: WhitneyDecomposition
    exterior: WhitneyDecomposition
    reflection: ReflectionMap
    pou: PartitionOfUnity


def whitney_setup(domain: Domain, grid: Grid, delta: float | None = None,
                  floor_gap: int = 4, depth: int = 2) -> WhitneySetup:
    """Decompositions at floor level ``J - floor_gap`` (exterior) and ``+ depth`` deeper (interior).

    Domains without a ``delta`` (epigraphs) reflect every exterior cube.
    """
    if delta is None:
        delta = getattr(domain, "delta", None)
        delta = math.inf if delta is None else delta
    region = grid.box
    Jw = grid.J - floor_gap
    Wi = whitney(domain, min(Jw + depth, grid.J), region, "interior")
    We = whitney(domain, Jw, region, "exterior")
    R = reflect(We, Wi, delta)
    return WhitneySetup(Wi, We, R, partition_of_unity(We, grid))


def jones_devore_extend(f: GridFunction, setup: WhitneySetup, l: int, r: float, lam: float = 2.0,
                        max_nodes: int | None = None) -> ExtensionResult:
    """``χ_Ω f + Σ_{Q ∈ F_c, diam Q <= δ} P_{Q^s}[f] φ_Q`` on the grid."""
    g = f.grid
    pou, R = setup.pou, setup.reflection
    inside = ~pou.outside
    out = np.zeros(g.shape)
    weight = np.zeros(g.shape)
    fits: dict = {}
    ratios = []
    for q, win, phi in zip(pou.cubes, pou.windows, pou.values):
        try:
            qs = R[q]
        except KeyError:
            continue                       # far field: diam Q > δ
        if qs not in fits:
            poly, rep = near_best_poly(f, l, qs, r, lam, max_nodes)
            fits[qs] = poly
            ratios.append(rep["ratio"])
        axes = [g.axis_centers(ax)[win[ax]] for ax in range(g.n)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        out[win] += fits[qs](pts) * phi
        weight[win] += phi
    ext = np.where(inside, f.zero_extended(), out)
    prov = np.full(g.shape, TAGS["zero"], np.int8)
    prov[inside] = TAGS["original"]
    prov[~inside & (weight > 0)] = TAGS["collar-polynomial"]
    ratios = np.array(ratios, float)
    diag = {"collar": ~inside & (np.abs(weight - 1) <= 1e-12), "fits": len(fits),
            "near_best_ratio_max": float(np.nanmax(ratios)) if np.any(np.isfinite(ratios)) else math.nan,
            "uncertified": int(np.sum(~np.isfinite(ratios)))}
    return ExtensionResult(GridFunction(g, ext), prov, diag)


# -- local error check ------------------------------------------------------------------

def collar_cubes(domain: Domain, grid: Grid, levels, a: float = 1.0, delta: float | None = None,
                 margin: float = 0.0, within: np.ndarray | None = None) -> list:
    """Dyadic cubes ``R`` inside the grid box with ``dist(R, ∂Ω) <= diam R <= a δ``.

    ``within`` (a grid mask, typically ``Ω ∪ collar``) keeps only cubes whose
    cells all lie in it.
    """
    delta = domain.delta if delta is None else delta
    inner = Box(tuple(v + margin for v in grid.lo), tuple(v - margin for v in grid.hi))
    out = []
    for k in levels:
        cubes = [q for q in grid.cubes(k) if q.diam <= a * delta + 1e-12
                 and inner.contains_box(cube_bounds(q))]
        if within is not None:
            cubes = [q for q in cubes if np.all(within[grid.cube_slices(q)])]
        if not cubes:
            continue
        lo = np.array([cube_bounds(q).lo for q in cubes])
        hi = np.array([cube_bounds(q).hi for q in cubes])
        d = domain.boundary_distance_boxes(lo, hi)
        out += [q for q, dq in zip(cubes, d) if dq <= q.diam]
    return out


def _cover(W: WhitneyDecomposition) -> tuple:
    """Whitney cubes followed by floor cubes: together they tile the decomposed set."""
    lo, hi = W.lo_hi()
    flo, fhi = W.lo_hi("floor")
    return list(W.cubes) + list(W.floor), np.vstack([lo, flo]), np.vstack([hi, fhi])


def _positions(grid: Grid, cubes) -> np.ndarray:
    """Positions of level-k cubes in ``grid.cubes(k)`` order (all cubes share one level)."""
    k = cubes[0].level
    ix = np.array([q.index for q in cubes]) - np.array(grid.cube_origin(k))
    return np.ravel_multi_index(tuple(ix.T), grid.block_shape(k))


def _batched_errors(f: GridFunction, cubes, l: int, r: float, c: float, max_nodes) -> np.ndarray:
    """``E_l(f, cQ)_r`` for a list of dyadic cubes inside the grid box, one batch per level."""
    g = f.grid
    out = np.full(len(cubes), np.nan)
    levels = np.array([q.level for q in cubes])
    for k in np.unique(levels):
        k = int(k)
        sel = np.nonzero(levels == k)[0]
        pos = _positions(g, [cubes[i] for i in sel])
        err, _ = tile_errors(f, l, k, r, max_nodes, c=c, strict=False, select=pos)
        out[sel] = err / (1.0 if math.isinf(r) else 2.0 ** (k * g.n / r))
    return out


def whitney_errors(f: GridFunction, W: WhitneyDecomposition, l: int, r: float,
                   max_nodes: int | None = None) -> np.ndarray:
    """``E_l(f, S*)_r`` for every cube ``S`` of ``W.cubes + W.floor`` (batched per level)."""
    cubes, _, _ = _cover(W)
    return _batched_errors(f, cubes, l, r, STAR, max_nodes)


def _lemma43_ratio(lhs: float, errs: np.ndarray, r: float, scale: float) -> float:
    if math.isinf(r):
        rhs, lhs_p = (float(errs.max()) if errs.size else 0.0), lhs
    else:
        rhs, lhs_p = float(np.sum(errs ** r)), lhs ** r
    tiny = (1e-12 * scale) ** (1 if math.isinf(r) else r)
    if rhs <= tiny:
        return math.nan if lhs_p <= tiny * 1e4 else math.inf
    return lhs_p / rhs


def _inside(lo, hi, box) -> np.ndarray:
    return np.all((lo >= np.array(box.lo) - 1e-12) & (hi <= np.array(box.hi) + 1e-12), axis=1)


def lemma43_check(f: GridFunction, ext: ExtensionResult, R, interior: WhitneyDecomposition,
                  l: int, r: float, c: float = 6.0, max_nodes: int | None = None,
                  errors: np.ndarray | None = None) -> float:
    """``E_l(Ext f, R)_r^r / Σ_{S ∈ F, S ⊂ cR} E_l(f, S*)_r^r``.

    ``F`` is the interior Whitney cover including its floor cubes, which
    complete it next to the boundary on the grid. ``errors`` may hold the
    precomputed ``E_l(f, S*)_r`` in that order (see ``whitney_errors``).
    ``nan`` when both sides vanish (polynomial regime), ``inf`` when only the
    right-hand side does.
    """
    box = cube_bounds(R) if isinstance(R, DyadicCube) else R
    lhs = best_error(ext.extended, l, box, r, max_nodes)
    cubes, lo, hi = _cover(interior)
    sel = _inside(lo, hi, box.dilate(c))
    if errors is None:
        errs = np.array([best_error(f, l, cube_bounds(S).dilate(STAR), r, max_nodes)
                         for S, keep in zip(cubes, sel) if keep])
    else:
        errs = np.nan_to_num(errors[sel])
    return _lemma43_ratio(lhs, errs, r, max(float(np.max(np.abs(f.zero_extended()))), 1e-300))


def lemma43_ratios(f: GridFunction, ext: ExtensionResult, Rs, interior: WhitneyDecomposition,
                   l: int, r: float, c: float = 6.0, max_nodes: int | None = None) -> np.ndarray:
    """``lemma43_check`` for a list of dyadic cubes ``R``, with both sides batched."""
    if not Rs:
        return np.zeros(0)
    lhs = _batched_errors(ext.extended, Rs, l, r, 1.0, max_nodes)
    errs = np.nan_to_num(whitney_errors(f, interior, l, r, max_nodes))
    _, lo, hi = _cover(interior)
    scale = max(float(np.max(np.abs(f.zero_extended()))), 1e-300)
    return np.array([_lemma43_ratio(a, errs[_inside(lo, hi, cube_bounds(R).dilate(c))], r, scale)
                     for R, a in zip(Rs, lhs)])
