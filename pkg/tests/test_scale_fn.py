import math

import numpy as np
import pytest

from levy_rk import CompoundPoissonExp, LevyModel, StableAlpha, brownian, phi_right_inverse
from levy_rk.scale_fn import (
    BinRate, RouteDisagreement, ScaleKernel, W_f_table, convolution_series_W,
    eval_W, eval_W_f, eval_g_f, eval_script_W, parse_rate, picard_W_f,
    scale_table, script_W_integral_route, script_W_table, script_W_truncated,
)
from levy_rk.talbot import talbot_double, talbot_mp

BM = brownian()
CP = LevyModel(0.0, 1.0, CompoundPoissonExp(1.0, 1.0))
ST = LevyModel(jumps=StableAlpha(1.5))


# -- Laplace inversion ------------------------------------------------------

def test_talbot_known_pairs():
    t = np.array([0.5, 1.0, 3.0])
    assert np.allclose(talbot_double(lambda s: 1 / (s + 1), t), np.exp(-t), rtol=1e-10)
    assert np.allclose(talbot_double(lambda s: 1 / s ** 2, t), t, rtol=1e-10)
    assert float(talbot_mp(lambda s: 1 / (s * s + 1), 2.0)) == pytest.approx(math.sin(2.0), rel=1e-12)


# -- W^(q) ------------------------------------------------------------------

def test_bm_closed_forms():
    x = np.linspace(0.01, 5, 50)
    assert np.allclose(eval_W(BM, x), 2 * x, rtol=1e-12)
    assert np.allclose(eval_W(BM, x, q=0.5), 2 * np.sinh(x), rtol=1e-12)


def test_cp_closed_form_against_talbot():
    x = np.array([0.1, 0.7, 2.0, 4.0])
    for q in (0.0, 0.8):
        a = eval_W(CP, x, q=q)
        b = eval_W(CP, x, q=q, method="talbot")
        assert np.allclose(a, b, rtol=1e-9)


def test_cp_zero_mean_growth():
    # W(x) -> 1/psi'(0+) is infinite at zero mean: W grows linearly like 2x/(s^2 + jump variance)
    x = np.array([30.0, 40.0])
    w = eval_W(CP, x)
    assert (w[1] - w[0]) / 10 == pytest.approx(2 / (1 + 2), rel=1e-3)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
def test_stable_talbot(alpha):
    m = LevyModel(jumps=StableAlpha(alpha))
    x = np.linspace(0.01, 5, 30)
    num = eval_W(m, x, method="talbot")
    assert np.allclose(num, x ** (alpha - 1) / math.gamma(alpha), rtol=1e-8)


def test_eval_W_rejects_negative_x():
    with pytest.raises(ValueError):
        eval_W(BM, -1.0)
    with pytest.raises(ValueError):
        eval_W(BM, 1.0, method="euler")


def test_kernel_antiderivatives():
    for m in (BM, CP, ST, LevyModel(0.2, 0.0, StableAlpha(1.5))):
        ker = ScaleKernel(m)
        from scipy.integrate import quad

        I = quad(lambda z: float(ker(z)), 0, 1.3, limit=200)[0]
        assert float(ker(1.3, 1)) == pytest.approx(I, rel=1e-7)


def test_kernel_derivatives():
    for m in (BM, CP, ST):
        ker = ScaleKernel(m)
        x, h = 0.8, 1e-5
        fd = (ker(x + h) - ker(x - h)) / (2 * h)
        assert float(ker.derivative(x)) == pytest.approx(float(fd), rel=1e-6)
        fd2 = (ker(x + 1e-3) - 2 * ker(x) + ker(x - 1e-3)) / 1e-6
        assert float(ker.second_derivative(x)) == pytest.approx(float(fd2), rel=1e-4)


def test_scale_table_zero_below_origin():
    tab = scale_table(CP, 2.0, h=0.01)
    assert tab(-0.5) == 0.0
    assert tab.W[0] == 0.0
    assert np.all(np.diff(tab.W) > 0)


def test_convolution_series_matches_Wq():
    x, tot, _ = convolution_series_W(BM, 0.5, 2.0, h=2e-3)
    assert np.max(np.abs(tot - 2 * np.sinh(x))) < 1e-5


# -- rate functions ---------------------------------------------------------

def test_parse_rate_and_spec():
    f = parse_rate("const:1 + bin:0:1:2")
    assert f(np.array([-1.0, 0.5, 2.0])).tolist() == [1.0, 3.0, 1.0]
    assert parse_rate(f.spec()) == f
    assert parse_rate("zero").is_zero
    with pytest.raises(ValueError):
        parse_rate("ramp:1")
    with pytest.raises(ValueError):
        BinRate(0.0, ((1.0, 1.0, 2.0),))


def test_bin_edges_take_midpoint():
    f = parse_rate("bin:0:1:2")
    assert f.node_values(np.array([0.0, 1.0])).tolist() == [1.0, 1.0]


def test_rate_transforms():
    f = parse_rate("bin:-inf:0:1+bin:2:3:4")
    z = np.array([-0.5, 0.5, 2.5])
    assert np.allclose(f.shift(1.0)(z), f(z + 1.0))
    assert np.allclose(f.reflect()(z), f(-z))
    assert np.allclose(f.scale(3)(z), 3 * f(z))
    assert f.at_minus_inf == 1.0 and f.at_plus_inf == 0.0
    q, g, L = f.split_tail()
    assert q == 1.0 and L == 0.0
    zz = np.linspace(-2.95, 3.95, 47)   # off the bin edges
    assert np.allclose(q + g(zz), f(zz))
    r = f.restrict(-1.0, 2.5)
    assert np.allclose(r(zz), np.where((zz > -1) & (zz < 2.5), f(zz), 0.0))


# -- W_f --------------------------------------------------------------------

@pytest.mark.parametrize("m", [BM, CP, ST], ids=["bm", "cp", "stable"])
def test_W_f_constant_is_Wq(m):
    q = 0.7
    tab = W_f_table(m, BinRate(q), 0.0, 2.0, h=1e-3)
    ref = eval_W(m, tab.x[1:], q=q, method="talbot")
    assert np.max(np.abs(tab.values[1:] - ref) / ref) < 1e-6


def test_W_f_zero_is_W_exactly():
    tab = W_f_table(CP, BinRate(), -0.5, 1.5, h=1e-2)
    assert np.array_equal(tab.values, ScaleKernel(CP)(tab.x + 0.5))


def test_W_f_point_and_picard():
    f = parse_rate("bin:0.2:0.6:1.5")
    a = eval_W_f(CP, f, 1.0, 0.0, h=1e-3)
    b = picard_W_f(CP, f, 1.0, 0.0, h=1e-3)
    assert a == pytest.approx(b, rel=1e-6)
    assert a > float(eval_W(CP, 1.0))


# -- script-W ---------------------------------------------------------------

@pytest.mark.parametrize("m", [BM, CP, ST], ids=["bm", "cp", "stable"])
def test_script_W_constant_is_exponential(m):
    q = 2.0
    x = np.array([0.25, 0.5, 1.0, 2.0])
    val = eval_script_W(m, q, x)
    assert np.allclose(val, np.exp(-phi_right_inverse(m, q) * x), rtol=1e-5)
    assert eval_g_f(m, q, 1.0) == pytest.approx(phi_right_inverse(m, q), rel=1e-4)


def test_script_W_zero_rate_is_one():
    assert np.allclose(script_W_table(CP, BinRate(), 2.0).values, 1.0)


def test_script_W_truncation_converges():
    # zero mean: the finite-b ratio approaches the limit like 1/B
    f = parse_rate("bin:0:1:2")
    lim = eval_script_W(CP, f, 1.0)
    a, b = (script_W_truncated(CP, f, 1.0, B, h=4e-3) for B in (20.0, 40.0))
    assert a < b < lim
    assert (lim - b) / (lim - a) == pytest.approx(0.5, abs=0.05)
    assert 2 * b - a == pytest.approx(lim, rel=2e-3)


def test_integral_route_brownian_constant():
    x, F = script_W_integral_route(BM, 2.0, 1.0)
    assert np.max(np.abs(F - np.exp(-2 * x))) < 1e-4


def test_route_check_raises_on_disagreement():
    # the two routes only coincide for Brownian motion with constant rate
    with pytest.raises(RouteDisagreement):
        eval_script_W(CP, parse_rate("bin:0:1:2"), 0.5, route="both")
    with pytest.raises(ValueError):
        eval_script_W(BM, 1.0, 0.5, route="other")
