"""Acceptance suite: one group of tests per criterion, tagged ``criterion(n)``.

Every tolerance is a module constant.  Monte Carlo groups run their
identity once at the default budget (10^4 paths, dt = 1e-4) and share
the report; the terminal summary prints one line per criterion.
"""

import functools
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from levy_rk import CompoundPoissonExp, LevyModel, StableAlpha, brownian, phi_right_inverse
from levy_rk.cli import main
from levy_rk.rk_verify import MCSettings, REGISTRY, Z_MAX, run_identity
from levy_rk.scale_fn import (BinRate, ScaleKernel, W_f_table, eval_W, parse_rate,
                              script_W_integral_route, script_W_table)

from . import test_properties as props

# -- pinned tolerances ---------------------------------------------------------
W_REL = 1e-6            # 1: Talbot vs closed form
WQ_REL = 1e-6           # 1: BM W^(q) vs 2 sinh
WF_REL = 1e-6           # 2: W_f with f = q vs W^(q)
WF_HALVING = 1e-5       # 2: change under h -> h/2
ROUTES_REL = 1e-4       # 3: limit vs integral route
SCRIPT_W_EXP = 1e-5     # 3: script-W_q vs exp(-Phi(q) x)
Z_LIMIT = 3.0           # all Monte Carlo z-scores
KS_P = 0.01             # 5, 7: KS and chi^2 p-values
MIN_MIXED = 10_000      # 5: E+- excursions in the overshoot sample
C_PLUS_TOL = 0.05       # 6
R2_MIN = 0.99           # 6
DEFAULT_N, DEFAULT_DT = 10_000, 1e-4
DET_N, DET_DT = 500, 1e-4  # 11: reduced path count for the three full-suite runs

BM = brownian()
CP = LevyModel(0.0, 1.0, CompoundPoissonExp(1.0, 1.0))
STABLES = {a: LevyModel(0.0, 0.0, StableAlpha(a)) for a in (1.2, 1.5, 1.8)}
XS = np.geomspace(0.01, 5.0, 25)

crit = pytest.mark.criterion


@functools.lru_cache(maxsize=None)
def report(ident):
    """Default-budget report for ``ident`` (computed once per session)."""
    assert Z_MAX == Z_LIMIT
    mc = MCSettings(n_paths=DEFAULT_N, dt=DEFAULT_DT, seed=0)
    return run_identity(ident, mc)


def _zs(rep):
    return {e["name"]: z for e, z in zip(rep.estimates, rep.z)}


def _check(rep, name):
    hits = [c for c in rep.checks if c["name"] == name]
    assert hits, f"{rep.id} has no check {name!r}"
    return hits[0]


def _assert_all_z(rep):
    bad = {k: round(z, 2) for k, z in _zs(rep).items() if abs(z) > Z_LIMIT}
    assert not bad, f"{rep.id}: |z| > {Z_LIMIT}: {bad}"


def _assert_checks(rep):
    bad = [c for c in rep.checks if not c["ok"]]
    assert not bad, f"{rep.id}: failed checks {bad}"


# -- 1: scale functions ----------------------------------------------------------

@crit(1)
def test_c1_brownian_W_talbot():
    num = eval_W(BM, XS, method="talbot")
    assert np.max(np.abs(num - 2 * XS) / (2 * XS)) <= W_REL


@crit(1)
@pytest.mark.parametrize("alpha", sorted(STABLES))
def test_c1_stable_W_talbot(alpha):
    num = eval_W(STABLES[alpha], XS, method="talbot")
    closed = XS ** (alpha - 1) / math.gamma(alpha)
    assert np.max(np.abs(num - closed) / closed) <= W_REL


@crit(1)
def test_c1_brownian_Wq_sinh():
    for method in ("auto", "talbot"):
        num = eval_W(BM, XS, q=0.5, method=method)
        ref = 2 * np.sinh(XS)
        assert np.max(np.abs(num - ref) / ref) <= WQ_REL, method


# -- 2: generalized scale function ------------------------------------------------

@crit(2)
@pytest.mark.parametrize("name", ["bm", "cp", "stable"])
def test_c2_constant_rate_gives_Wq(name):
    m = {"bm": BM, "cp": CP, "stable": STABLES[1.5]}[name]
    q = 0.5
    tab = W_f_table(m, BinRate(q), 0.0, 3.0, h=1e-3)
    ref = eval_W(m, tab.x[1:], q=q, method="talbot")
    assert np.max(np.abs(tab.values[1:] - ref) / ref) <= WF_REL


@crit(2)
@pytest.mark.parametrize("name", ["bm", "cp", "stable"])
def test_c2_zero_rate_gives_W_exactly(name):
    m = {"bm": BM, "cp": CP, "stable": STABLES[1.5]}[name]
    tab = W_f_table(m, BinRate(), -1.0, 2.0, h=1e-3)
    assert np.array_equal(tab.values, ScaleKernel(m)(tab.x + 1.0))


@crit(2)
@pytest.mark.parametrize("name", ["bm", "cp", "stable"])
def test_c2_h_halving(name):
    m = {"bm": BM, "cp": CP, "stable": STABLES[1.5]}[name]
    f = parse_rate("bin:0.2:0.6:1.5+bin:-0.5:0:0.7")
    a = W_f_table(m, f, -1.0, 2.0, h=2e-3)
    b = W_f_table(m, f, -1.0, 2.0, h=1e-3)
    fine = b.values[::2]
    assert np.max(np.abs(fine - a.values) / np.maximum(np.abs(a.values), 1e-12)) < WF_HALVING


# -- 3: script-W ------------------------------------------------------------------

ROUTE_MODELS = {"bm": BM, "cp": CP, "stable": STABLES[1.5]}
ROUTE_RATES = {"const": "const:2", "bin": "bin:0.2:0.8:2"}


@crit(3)
@pytest.mark.parametrize("rate", sorted(ROUTE_RATES))
@pytest.mark.parametrize("name", sorted(ROUTE_MODELS))
def test_c3_dual_routes(name, rate):
    m, f = ROUTE_MODELS[name], parse_rate(ROUTE_RATES[rate])
    x_max = 2.0
    zi, Fi = script_W_integral_route(m, f, x_max)
    lim = script_W_table(m, f, x_max, h=1e-3)(zi)
    rel = np.max(np.abs(Fi - lim) / lim)
    assert rel <= ROUTES_REL, f"max relative gap {rel:.3g}"


@crit(3)
@pytest.mark.parametrize("name", sorted(ROUTE_MODELS))
def test_c3_constant_rate_is_exponential(name):
    m, q = ROUTE_MODELS[name], 2.0
    tab = script_W_table(m, BinRate(q), 3.0, h=1e-3)
    ref = np.exp(-phi_right_inverse(m, q) * tab.x)
    assert np.max(np.abs(tab.values - ref) / ref) <= SCRIPT_W_EXP


@crit(3)
def test_c3_monte_carlo_laplace():
    rep = report("script_W_laplace")
    _assert_all_z(rep)
    _assert_checks(rep)


# -- 4: Brownian Ray-Knight ---------------------------------------------------------

@crit(4)
def test_c4_rk2_value():
    rep = report("rk2_brownian")
    e = {x["name"]: x for x in rep.estimates}
    t = {x["name"]: x["value"] for x in rep.targets}
    assert t["y=1,lam=1"] == pytest.approx(0.71653, abs=5e-6)
    assert abs(_zs(rep)["y=1,lam=1"]) <= Z_LIMIT, e["y=1,lam=1"]
    _assert_all_z(rep)


@crit(4)
def test_c4_rk2_halving_trend():
    rep = report("rk2_brownian")
    assert _check(rep, "trend[y=1,lam=1]")["ok"]
    _assert_checks(rep)


@crit(4)
def test_c4_rk1_value():
    rep = report("rk1_brownian")
    t = {x["name"]: x["value"] for x in rep.targets}
    assert t["z=1,lam=1"] == pytest.approx(1 / 3)
    assert abs(_zs(rep)["z=1,lam=1"]) <= Z_LIMIT
    _assert_all_z(rep)


@crit(4)
def test_c4_rk1_halving_trend():
    rep = report("rk1_brownian")
    assert _check(rep, "trend[z=1,lam=1]")["ok"]
    _assert_checks(rep)


# -- 5: overshoot and undershoot ------------------------------------------------------

@crit(5)
def test_c5_overshoot_law():
    rep = report("overshoot_law")
    assert rep.model == CP.card()
    assert _check(rep, "E+- count")["value"] >= MIN_MIXED
    for name in ("ks_p[O]", "ks_p[U]", "chi2_p[O,U]"):
        c = _check(rep, name)
        assert c["value"] > KS_P, c
    _assert_all_z(rep)
    _assert_checks(rep)


# -- 6: supremum excursion functionals and calibration ---------------------------------

@crit(6)
def test_c6_sup_excursion_functionals():
    rep = report("sup_excursion_functionals")
    t = [x["value"] for x in rep.targets]
    assert t == pytest.approx([1.0, 2.0])
    _assert_all_z(rep)
    _assert_checks(rep)


@crit(6)
def test_c6_calibration():
    rep = report("calibrate_constants")
    c = {x["name"]: x["value"] for x in rep.estimates}
    assert abs(c["c_plus"] - 1.0) <= C_PLUS_TOL
    assert _check(rep, "r2_plus")["value"] > R2_MIN
    _assert_checks(rep)


# -- 7: exponential local time ------------------------------------------------------

@crit(7)
def test_c7_exponential_local_time():
    rep = report("exponential_local_time")
    assert [x["value"] for x in rep.targets] == pytest.approx([1.0, 2.0])
    for x in (0.5, 1.0):
        assert _check(rep, f"ks_p[x={x:g}]")["value"] > KS_P
    _assert_all_z(rep)
    _assert_checks(rep)


# -- 8: u_y and v_xy ----------------------------------------------------------------

@crit(8)
def test_c8_u_y_grid():
    rep = report("u_y")
    assert len(rep.z) == 9
    _assert_all_z(rep)
    _assert_checks(rep)


@crit(8)
def test_c8_v_xy():
    rep = report("v_xy")
    assert rep.model == CP.card()
    _assert_all_z(rep)
    _assert_checks(rep)


# -- 9: infinite divisibility ---------------------------------------------------------

@crit(9)
def test_c9_tau_c_laplace():
    rep = report("tau_c_laplace")
    assert _check(rep, "linear_in_c max|resid/se|")["ok"]
    assert _check(rep, "convolution z")["ok"]
    _assert_all_z(rep)
    _assert_checks(rep)


# -- 10: marked Poisson reconstruction --------------------------------------------------

@crit(10)
def test_c10_marked_construction():
    rep = report("marked_construction")
    assert rep.model == STABLES[1.5].card()
    levels = rep.params["levels"]
    assert len(levels) == 3 and all(y < 0 for y in levels)
    _assert_all_z(rep)
    _assert_checks(rep)


# -- 11: determinism ------------------------------------------------------------------

def _verify_all(tmp_path, tag, workers):
    out = tmp_path / tag
    r = CliRunner().invoke(main, ["--out", str(out), "verify", "--all", "--n-paths", str(DET_N),
                                  "--dt", str(DET_DT), "--seed", "3", "--workers", str(workers)])
    assert r.exit_code in (0, 1), r.output
    files = sorted(p.name for p in out.glob("*.json"))
    assert len(files) == len(REGISTRY) + 1
    return {n: (out / n).read_bytes() for n in files}


@pytest.fixture(scope="module")
def det_runs(tmp_path_factory, monkeypatch_module):
    tmp = tmp_path_factory.mktemp("det")
    return _verify_all(tmp, "a", 1), _verify_all(tmp, "b", 1), _verify_all(tmp, "c", 2)


@pytest.fixture(scope="module")
def monkeypatch_module():
    mp = pytest.MonkeyPatch()
    mp.delenv("LEVY_RK_OUT", raising=False)
    yield mp
    mp.undo()


@crit(11)
def test_c11_same_seed_byte_identical(det_runs):
    a, b, _ = det_runs
    assert a.keys() == b.keys()
    diff = [k for k in a if a[k] != b[k]]
    assert not diff, diff


@crit(11)
def test_c11_workers_do_not_change_reports(det_runs):
    a, _, c = det_runs
    diff = [k for k in a if a[k] != c[k]]
    assert not diff, diff
    assert all(json.loads(a[k]) for k in a)


# -- 12: property suites -------------------------------------------------------------

PROPERTIES = [
    props.test_psi_is_convex,
    props.test_phi_is_right_inverse,
    props.test_W_zero_at_origin_and_increasing,
    props.test_script_W_in_unit_interval_and_nonincreasing,
    props.test_monotone_in_rate,
    props.test_occupation_identity_exact,
    props.test_local_time_additive,
    props.test_sup_excursion_lifetimes_close,
    props.test_point_excursion_lifetimes_close,
]


@crit(12)
@pytest.mark.parametrize("prop", PROPERTIES, ids=[p.__name__[5:] for p in PROPERTIES])
def test_c12_property(prop):
    prop()
