import csv
import json
import math

import numpy as np
import pytest

from varbesov import harness as H
from varbesov.cli import main
from varbesov.dyadic import Grid
from varbesov.kernels import make_mother_kernel
from varbesov.weights import constant_smoothness


# -- Hardy --------------------------------------------------------------------------------

def test_hardy_mode2_geometric_closed_form():
    K = 40
    a = 2.0 ** -np.arange(K + 1)
    rep = H.hardy_check(a, 0.0, None, 1.0, 1.0, 2, K)
    # b_k = 2^-k - 2^-K for k < K and 0 at K (a is zero past K)
    lhs = sum(2.0 ** -k - 2.0 ** -K for k in range(K))
    assert rep.lhs == pytest.approx(lhs, rel=1e-14)
    assert rep.rhs == pytest.approx(2 - 2.0 ** -K, rel=1e-14)
    assert rep.ratio == pytest.approx(1.0, abs=1e-9)


def test_hardy_single_spike_gives_zero():
    a = np.zeros(11)
    a[0] = 1.0
    rep = H.hardy_check(a, 0.5, None, 1.0, 2.0, 2)
    assert rep.lhs == 0 and rep.ratio == 0 and rep.passed


@pytest.mark.parametrize("mu,q", [(1.0, 1.0), (0.5, 2.0), (1.0, math.inf)])
def test_hardy_mode1_matches_brute_force(mu, q):
    rng = np.random.default_rng(1)
    a = rng.normal(size=15)
    alpha, lam = 0.3, 1.1
    b = [2.0 ** (-k * lam) * sum(2.0 ** (j * lam * mu) * abs(a[j]) ** mu
                                 for j in range(k + 1)) ** (1 / mu) for k in range(15)]
    w = lambda x: [2.0 ** (k * alpha) * abs(v) for k, v in enumerate(x)]
    agg = (lambda x: max(x)) if math.isinf(q) else (lambda x: sum(v ** q for v in x) ** (1 / q))
    rep = H.hardy_check(a, alpha, lam, mu, q, 1)
    assert rep.ratio == pytest.approx(agg(w(b)) / agg(w(a)), rel=1e-12)


def test_hardy_mode1_q1_constant():
    # for mu = q = 1 the exact constant is 1 / (1 - 2^{alpha - lam})
    alpha, lam = 0.5, 1.5
    a = np.zeros(200)
    a[0] = 1.0
    rep = H.hardy_check(a, alpha, lam, 1.0, 1.0, 1)
    assert rep.ratio == pytest.approx(1 / (1 - 2.0 ** (alpha - lam)), rel=1e-12)


def test_hardy_battery_and_negative_control():
    reps = H.hardy_battery(40)
    assert len(reps) == 40 and len({n.split("/")[0] for n, _ in reps}) == 20
    assert all(r.passed and r.ratio <= 10 for _, r in reps)
    neg = H.hardy_negative_control()
    assert neg["grows"] and neg["ratios"][-1] > 10
    with pytest.warns(UserWarning, match="outside its hypothesis"):
        H.hardy_check(np.ones(5), 1.0, 0.5, 1.0, 2.0, 1)


# -- batteries ----------------------------------------------------------------------------

def test_battery_contents_and_cutoff():
    bat = H.make_battery(center=(0.5, 0.5), radius=1.0)
    assert len(bat) == 16
    assert {"const", "x1^1", "x2^3", "abs^0.5", "abs^1.5", "chirp-12.0"} <= set(bat)
    pts = np.array([[0.5, 0.5], [0.9, 0.6], [1.6, 0.5], [0.5, -0.6]])
    assert np.allclose(bat["const"](pts), [1, 1, 0, 0])
    c = H.cutoff(np.linspace(0, 1.2, 50)[:, None] * np.array([1.0, 0.0]), (0, 0), 1.0)
    assert np.all(np.diff(c) <= 1e-15) and c[0] == 1 and c[-1] == 0
    raw = H.make_battery([{"kind": "monomial", "axis": 0, "degree": 2}], cut=False)
    assert raw["x1^2"](np.array([[3.0, 1.0]])) == pytest.approx(9.0)
    with pytest.raises(ValueError):
        H.make_battery([{"kind": "nope"}])


# -- multiplier ----------------------------------------------------------------------------

def test_multiplier_check():
    ws = constant_smoothness(0.8)
    phi = make_mother_kernel("cube", 2)
    grids = [Grid(7, (-2, -2), (2, 2))]
    bat = {k: v for k, v in H.make_battery().items() if k in ("const", "bump(0.0, 0.0)-0.35")}
    bat["zero"] = lambda p: 0 * p[..., 0]
    one = H.multiplier_check(bat, lambda p: np.ones(p.shape[:-1]), ws, phi, 2, 2, 3, grids)
    assert all(v[7] == pytest.approx(1.0, rel=1e-12) for v in one.ratios.values())
    assert one.skipped == [("zero", 7)]
    omega = lambda p: H.cutoff(p, (0.2, 0.1), 1.5)
    a = H.multiplier_check(bat, omega, ws, phi, 2, 2, 3, grids)
    b = H.multiplier_check(bat, lambda p: -2.5 * omega(p), ws, phi, 2, 2, 3, grids)
    for fid in a.ratios:
        assert b.ratios[fid][7] == pytest.approx(2.5 * a.ratios[fid][7], rel=1e-12)
    assert math.isfinite(a.max_ratio)


# -- configs and reports ----------------------------------------------------------------------

def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="K_max"):
        H.ExperimentConfig(params={"J": 7, "K_max": 4})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"domain": "unit-square", "box": [[-1, -1], [2, 2]],
                                "params": {"J": 7, "K_max": 3}}))
    cfg = H.ExperimentConfig.load(path)
    assert cfg.box == ((-1, -1), (2, 2)) and cfg.grid().J == 7
    assert cfg.params["p"] == 2.0 and cfg.weights().alpha == (0.8, 0.8)


def test_equivalence_report_logic(tmp_path):
    rep = H.EquivalenceReport("x", "d")
    rep.add("ext", "f", 8, 2.0)
    rep.add("ext", "f", 9, 2.3)
    assert rep.deltas("ext")["f"] == pytest.approx(0.15)
    assert rep.passed
    rep.add("ext", "g", 8, 2.0)
    rep.add("ext", "g", 9, 2.5)
    assert not rep.passed
    rep2 = H.EquivalenceReport("x", "d")
    rep2.add("ext", "f", 8, 2e3)
    assert not rep2.passed
    rep.to_csv(tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["experiment", "domain", "ratio", "fid", "J", "value"] and len(rows) == 5
    json.dumps(rep.to_dict())


# -- experiments (small grids; the full-size runs live in the acceptance suite) ---------------

def test_lipschitz_experiment_small():
    bat = {"zero": lambda p: 0 * p[..., 0],
           "bump": H.make_battery([{"kind": "bump", "at": (0.1, 0.2), "width": 0.3}])[
               "bump(0.1, 0.2)-0.3"]}
    cfg = H.ExperimentConfig(domain="zigzag", battery=bat, params={"J": 7, "K_max": 3})
    rep = H.run_lipschitz_trace_experiment(cfg, refine=False)
    assert rep.degenerate == [("zero", 7)]
    n = rep.norms[("bump", 7)]
    assert all(v > 0 and math.isfinite(v) for v in n.values())
    # the masked norm never exceeds the maximal one at the same levels
    assert n["maximal"] >= n["intrinsic"]
    assert rep.passed and rep.extras["maximal_C"] >= 1


def test_epsdelta_experiment_polynomials():
    bat = {"x1": lambda p: p[..., 0], "c1": lambda p: np.ones(p.shape[:-1]),
           "c3": lambda p: 3 * np.ones(p.shape[:-1])}
    cfg = H.ExperimentConfig(domain="unit-square", box=((-1, -1), (2, 2)), battery=bat,
                             center=(0.5, 0.5), params={"J": 7, "K_max": 3})
    rep = H.run_epsdelta_trace_experiment(cfg, refine=False)
    assert rep.norms[("c3", 7)]["intrinsic"] == pytest.approx(3 * rep.norms[("c1", 7)]["intrinsic"])
    # polynomials of degree < l: the extension reproduces them on the collar, so both full-side
    # norms agree with the norm of the global polynomial
    for fid in bat:
        assert rep.ratios["extension"][fid][7] == pytest.approx(
            1 / rep.ratios["restriction"][fid][7], rel=1e-8)
    assert rep.extras["lemma43"]["degenerate"] == rep.extras["lemma43"]["cubes"] * 3
    assert rep.checks["lemma43 finite"]


def test_dumbbell_control():
    assert H.dumbbell_control()["control_ok"]


# -- CLI --------------------------------------------------------------------------------------

def test_cli_hardy_and_json(capsys, tmp_path):
    assert main(["hardy", "default", "--out", str(tmp_path)]) == 0
    assert "hardy: PASS" in capsys.readouterr().out
    assert (tmp_path / "hardy.csv").exists()
    assert main(["hardy", "default", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True


@pytest.fixture
def square_cfg(tmp_path):
    path = tmp_path / "sq.json"
    path.write_text(json.dumps({
        "domain": "unit-square", "box": [[-1, -1], [2, 2]], "center": [0.5, 0.5],
        "radius": 1.2, "params": {"J": 7, "K_max": 3},
        "battery": [{"kind": "bump", "at": [0.1, 0.1], "width": 0.3}]}))
    return str(path)


def test_cli_whitney_extend_norm(square_cfg, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["whitney", square_cfg, "--out", str(out)]) == 0
    assert (out / "whitney_interior.csv").exists() and (out / "whitney_exterior.csv").exists()
    assert main(["extend", square_cfg, "--out", str(out)]) == 0
    assert (out / "extension_extended.txt").exists()
    capsys.readouterr()
    assert main(["norm", square_cfg, "--out", str(out), "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["report"]["tag"] == "osc" and rep["report"]["total"] > 0
    assert (out / "norm_osc.csv").exists()


def test_cli_verify(square_cfg, capsys):
    assert main(["verify", square_cfg]) == 0
    out = capsys.readouterr().out
    assert "verify lemma43" in out and "verify: PASS" in out


def test_cli_repro_pair_failure_exit_code(tmp_path, capsys):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"kernel": {"shape": "cone", "L": 2, "Kmax": 1},
                                "params": {"pair_J": 7, "pair_tol": 1e-12}}))
    assert main(["repro-pair", str(path)]) == 1
    assert "FAIL" in capsys.readouterr().out
