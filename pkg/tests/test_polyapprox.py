import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog, minimize

from varbesov.dyadic import Box, DyadicCube, Grid, GridFunction
from varbesov.polyapprox import (
    PolyOnCube, best_error, best_fit, exponents, finite_difference, local_modulus, monomials,
    n_coeffs, near_best_poly, normalized_error, tile_errors, tile_moduli,
    verify_local_equivalence, verify_subadditivity,
)

UNIT = Box((0,), (1,))


def _fx(J, func, lo=(0,), hi=(1,)):
    g = Grid(J, lo, hi)
    return GridFunction.from_callable(g, func)


def _lp_oracle(x, y, l, r):
    """Minimax (r=inf) or least-absolute (r=1) polynomial fit by linear programming."""
    V = np.vander(x, l, increasing=True)
    m, c = len(x), l
    if math.isinf(r):
        # vars: coef (c), t ; minimize t, |y - V a| <= t
        cost = np.r_[np.zeros(c), 1.0]
        A = np.block([[-V, -np.ones((m, 1))], [V, -np.ones((m, 1))]])
        b = np.r_[-y, y]
        res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * c + [(0, None)])
        return res.fun
    cost = np.r_[np.zeros(c), np.ones(m) / m]
    A = np.block([[-V, -np.eye(m)], [V, -np.eye(m)]])
    b = np.r_[-y, y]
    res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * c + [(0, None)] * m)
    return res.fun


def test_basis_dimension():
    assert n_coeffs(1, 3) == 3 and n_coeffs(2, 1) == 1 and n_coeffs(2, 3) == 6
    t = np.random.default_rng(0).uniform(-1, 1, (5, 2))
    assert monomials(t, 3).shape == (5, 6)
    with pytest.raises(ValueError):
        PolyOnCube(Box((0, 0), (1, 1)), 3, np.zeros(5))


def test_finite_difference_examples():
    f = _fx(8, lambda p: p[..., 0], hi=(4,))
    for h in (0.25, -0.5, 1.0):
        assert finite_difference(f, 1, h, None, 2.0 + 2 ** -9) == pytest.approx(h, abs=1e-12)
    q = _fx(8, lambda p: p[..., 0] ** 2, hi=(4,))
    for x in (0.5, 1.5):
        h = 0.25
        x = x + 2 ** -9
        assert finite_difference(q, 2, h, None, x) == pytest.approx(2 * h * h, abs=1e-12)
    U = Box((0,), (1,))
    assert finite_difference(q, 2, 0.25, U, 0.8) == 0.0
    assert finite_difference(q, 1, 1.5, None, 3.0) == 0.0  # leaves the grid


def test_finite_difference_segment_must_stay_in_mask():
    g = Grid(6, (0, 0), (1, 1))
    f = GridFunction.from_callable(g, lambda p: p[..., 0] + p[..., 1] ** 2)
    hole = np.ones(g.shape, bool)
    hole[30:34, 30:34] = False
    x = np.array([0.2, 0.2]) + 2 ** -7
    h = np.array([0.15, 0.15])
    assert finite_difference(f, 2, h, hole, x) == 0.0
    assert finite_difference(f, 2, h, None, x) != 0.0


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("l", [1, 2, 3])
def test_modulus_and_errors_annihilate_polynomials(n, l):
    lo, hi = (0,) * n, (2,) * n
    rng = np.random.default_rng(l + 10 * n)
    exps = exponents(n, l)
    cf = rng.normal(size=len(exps))
    f = _fx(7 if n == 2 else 9, lambda p: sum(c * np.prod([p[..., i] ** e[i] for i in range(n)], axis=0)
                                              for c, e in zip(cf, exps)), lo, hi)
    scale = np.abs(f.samples).max()
    for r in (1.0, 2.0, math.inf):
        for cube in (DyadicCube(0, (0,) * n), DyadicCube(2, (3,) * n)):
            assert best_error(f, l, cube, r) <= 1e-10 * scale
            assert normalized_error(f, l, cube, r) <= 1e-10 * scale * 2 ** (2 * n)
            assert local_modulus(f, l, cube, cube, r) <= 1e-10 * scale


def test_local_modulus_closed_forms():
    # f(x) = x, l = 1, r = 2, Q = [0,1]: U = R gives 2/3, U = Q gives 1/6 (squared)
    f = _fx(10, lambda p: p[..., 0], lo=(-1,), hi=(2,))
    Q = DyadicCube(0, (0,))
    assert local_modulus(f, 1, Q, None, 2) == pytest.approx(math.sqrt(2 / 3), rel=1e-3)
    assert local_modulus(f, 1, Q, Q, 2) == pytest.approx(math.sqrt(1 / 6), rel=1e-2)


def test_local_modulus_sup_example():
    # brute force: max |(x+h)^2 - x^2| over x, x+h in [0,1], |h| <= 1 is 1
    x = np.linspace(0, 1, 2001)
    X, H = np.meshgrid(x, np.linspace(-1, 1, 4001), indexing="ij")
    ok = (X + H >= 0) & (X + H <= 1)
    oracle = np.max(np.where(ok, np.abs((X + H) ** 2 - X ** 2), 0))
    assert oracle == pytest.approx(1.0)
    J = 10
    f = _fx(J, lambda p: p[..., 0] ** 2)
    val = local_modulus(f, 1, DyadicCube(0, (0,)), UNIT, math.inf, max_nodes=1 << J)
    assert abs(val - oracle) <= 2 * 2 ** -J


def test_local_modulus_matches_tiled_engine():
    g = Grid(7, (0, 0), (1, 1))
    f = GridFunction.from_callable(g, lambda p: np.sin(3 * p[..., 0]) * np.exp(p[..., 1]))
    for k in (1, 2):
        tiled = tile_moduli(f, 2, k, 1.5, max_nodes=8)
        direct = [local_modulus(f, 2, q, q, 1.5, max_nodes=8) for q in g.cubes(k)]
        np.testing.assert_allclose(tiled, direct, rtol=1e-10)


def test_best_error_examples():
    J = 7
    f = _fx(J, lambda p: p[..., 0] ** 2)
    h = 2.0 ** -J
    assert best_error(f, 1, UNIT, math.inf) == pytest.approx((1 - h) / 2, rel=1e-14)
    g = _fx(J, lambda p: p[..., 0])
    assert abs(best_error(g, 1, UNIT, 2) - 1 / math.sqrt(12)) <= h * h
    assert best_error(GridFunction(f.grid, np.zeros(f.grid.shape)), 2, UNIT, 1) == 0.0


@pytest.mark.parametrize("r", [1.0, math.inf])
def test_best_error_against_linear_programming(r):
    J = 7
    f = _fx(J, lambda p: np.abs(p[..., 0] - 0.3) + 0.2 * np.sin(7 * p[..., 0]))
    x = f.grid.axis_centers(0)
    oracle = _lp_oracle(x, f.samples, 3, r)
    res = best_fit(f, 3, UNIT, r)
    assert res.lower <= oracle * (1 + 1e-8) + 1e-12
    assert res.error >= oracle * (1 - 1e-8)
    assert res.error <= oracle * (1 + 1e-3)


def test_best_error_intermediate_r_is_certified():
    f = _fx(7, lambda p: np.abs(p[..., 0] - 0.3))
    x = f.grid.axis_centers(0)
    y = f.samples
    r = 1.5
    obj = lambda a: np.mean(np.abs(y - a[0] - a[1] * x) ** r) ** (1 / r)
    oracle = minimize(obj, [0.0, 0.0], method="Nelder-Mead", options={"xatol": 1e-12, "fatol": 1e-14}).fun
    res = best_fit(f, 2, UNIT, r)
    assert res.lower <= oracle * (1 + 1e-6)
    assert res.error <= oracle * (1 + 1e-6)
    assert res.ratio <= 1 + 1e-6


def test_best_error_quasi_norm_multistart():
    f = _fx(7, lambda p: np.abs(p[..., 0] - 0.3))
    ls = best_error(f, 2, UNIT, 2)
    res = best_fit(f, 2, UNIT, 0.5)
    assert res.method == "multistart" and not res.certified
    y, x = f.samples, f.grid.axis_centers(0)
    ls_res = np.polyfit(x, y, 1)
    ls_r = np.mean(np.abs(y - np.polyval(ls_res, x)) ** 0.5) ** 2
    assert 0 < res.error <= ls_r * (1 + 1e-9)
    assert ls > 0


def test_under_resolved_and_empty():
    f = _fx(3, lambda p: p[..., 0])
    with pytest.raises(ValueError, match="under-resolved cube"):
        best_error(f, 3, Box((0,), (0.2,)), 2)
    valid = np.zeros(f.grid.shape, bool)
    g = GridFunction(f.grid, np.zeros(f.grid.shape), valid)
    assert best_error(g, 2, UNIT, 2) == 0.0


def test_normalized_error_examples():
    J = 7
    f = _fx(J, lambda p: p[..., 0])
    q0 = DyadicCube(0, (0,))
    assert normalized_error(f, 1, q0, 2) == best_error(f, 1, q0, 2)
    val = normalized_error(f, 1, DyadicCube(1, (0,)), 2)
    assert abs(val - 1 / (4 * math.sqrt(3))) <= 4.0 ** -J
    z = GridFunction(f.grid, np.zeros(f.grid.shape))
    for k in range(4):
        assert normalized_error(z, 2, DyadicCube(k, (0,)), 1) == 0.0


def test_near_best_examples():
    f = _fx(7, lambda p: 1 + 2 * p[..., 0])
    poly, rep = near_best_poly(f, 2, UNIT, 1, lam=1.0)
    assert rep["ratio"] == 1.0 and rep["error"] <= 1e-12
    np.testing.assert_allclose(poly.on_grid(f.grid), f.samples, atol=1e-12)
    g = _fx(7, lambda p: np.sin(4 * p[..., 0]))
    _, rep = near_best_poly(g, 2, UNIT, 2, lam=1.0)
    assert rep["ratio"] == 1.0
    # |x - 1/2|, l = 2, r = 1 against a dense coefficient grid
    a = _fx(8, lambda p: np.abs(p[..., 0] - 0.5))
    x, y = a.grid.axis_centers(0), a.samples
    A, B = np.meshgrid(np.linspace(0, 0.6, 241), np.linspace(-0.6, 0.6, 241), indexing="ij")
    errs = np.mean(np.abs(y[None, None] - A[..., None] - B[..., None] * x), axis=-1)
    oracle = errs.min()
    poly, rep = near_best_poly(a, 2, UNIT, 1, lam=2.0)
    resid = np.mean(np.abs(y - poly.on_grid(a.grid)))
    assert resid <= 2.0 * oracle
    assert rep["ratio"] <= 2.0


def test_near_best_missed_raises():
    f = _fx(7, lambda p: np.abs(p[..., 0] - 0.37))
    import varbesov.polyapprox as pa
    old = pa.IRLS_ITER
    pa.IRLS_ITER = 0
    try:
        with pytest.raises(ValueError, match="near-best target missed"):
            near_best_poly(f, 2, UNIT, 1, lam=1.0)
    finally:
        pa.IRLS_ITER = old


@settings(max_examples=15, deadline=None)
@given(st.floats(-4, 4).filter(lambda a: abs(a) > 1e-3), st.sampled_from([1.0, 2.0, math.inf]))
def test_homogeneity(a, r):
    g = Grid(6, (0, 0), (1, 1))
    f = GridFunction.from_callable(g, lambda p: np.cos(3 * p[..., 0]) + p[..., 1] ** 3)
    cube = DyadicCube(1, (0, 1))
    for fn in (lambda u: best_error(u, 2, cube, r), lambda u: local_modulus(u, 2, cube, cube, r)):
        assert fn(a * f) == pytest.approx(abs(a) * fn(f), rel=1e-6)


def test_monotone_in_l():
    g = Grid(6, (0, 0), (1, 1))
    f = GridFunction.from_callable(g, lambda p: np.exp(p[..., 0] * p[..., 1]) + np.abs(p[..., 0] - 0.4))
    for r in (1.0, 2.0, math.inf):
        for q in (DyadicCube(0, (0, 0)), DyadicCube(2, (1, 2))):
            e = [best_error(f, l, q, r) for l in (1, 2, 3)]
            assert e[1] <= e[0] * (1 + 1e-9) and e[2] <= e[1] * (1 + 1e-9)


def test_tile_errors_match_single_cube():
    g = Grid(7, (0, 0), (1, 1))
    f = GridFunction.from_callable(g, lambda p: np.abs(p[..., 0] - 0.3) * p[..., 1])
    for r in (1.0, 2.0, math.inf):
        tiled, _ = tile_errors(f, 2, 2, r, max_nodes=16)
        direct = [normalized_error(f, 2, q, r, max_nodes=16) for q in g.cubes(2)]
        np.testing.assert_allclose(tiled, direct, rtol=1e-6, atol=1e-14)


def test_local_equivalence_battery(tmp_path):
    polys = {"c": lambda p: 3 + 0 * p[..., 0], "lin": lambda p: p[..., 0] - 2 * p[..., 1]}
    g = Grid(6, (0, 0), (1, 1))
    bat = {k: GridFunction.from_callable(g, v) for k, v in polys.items()}
    rep = verify_local_equivalence(bat, 2, 2.0, [0, 1, 2])
    assert rep.rows == [] and rep.skipped == 2 * (1 + 4 + 16)
    med = []
    for J in (7, 8):
        g = Grid(J, (0, 0), (1, 1))
        bat = [("x2", GridFunction.from_callable(g, lambda p: p[..., 0] ** 2)),
               ("xy", GridFunction.from_callable(g, lambda p: p[..., 0] * p[..., 1]))]
        rep = verify_local_equivalence(bat, 2, 2.0, [0, 1, 2])
        q = rep.ratios
        assert np.all(q > 0) and np.all(np.isfinite(q))
        med.append(rep.stats()["median"])
    assert abs(med[1] / med[0] - 1) <= 0.2
    path = tmp_path / "eq.csv"
    rep.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["fid", "level", "m", "lhs", "rhs", "ratio"]
    assert len(rows) == 1 + len(rep.rows)


def test_subadditivity_examples():
    f = _fx(9, lambda p: 1 + p[..., 0], lo=(-1,), hi=(2,))
    assert verify_subadditivity(f, 2, 2.0, 1.0, 1, m=(0,)).passed
    q = _fx(9, lambda p: p[..., 0] ** 2, lo=(-1,), hi=(2,))
    rep = verify_subadditivity(q, 1, 2.0, 1.0, 1, m=(0,))
    assert 0 < rep.ratio <= rep.budget
    ratios = [verify_subadditivity(q, 1, 2.0, 9 / 8, k, m=(0,)).ratio for k in (1, 2, 3, 4)]
    # the sum over finer cubes tends to a limit, so the ratio stays bounded
    assert max(ratios) <= 1.5


@pytest.mark.parametrize("c", [1.0, 9 / 8, 1.5])
def test_tile_errors_dilated_matches_per_cube(c):
    g = Grid(6, (0, 0), (2, 2))
    f = GridFunction.from_callable(g, lambda p: np.sin(3 * p[..., 0]) * p[..., 1] ** 2)
    err, _ = tile_errors(f, 2, 2, 2.0, c=c)
    ref = np.array([normalized_error(f, 2, q, 2.0, c=c) for q in g.cubes(2)])
    np.testing.assert_allclose(err, ref, rtol=1e-10)
