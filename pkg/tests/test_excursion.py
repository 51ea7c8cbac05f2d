import numpy as np
import pytest

from levy_rk import CompoundPoissonExp, LevyModel
from levy_rk.excursion import (
    E_MINUS, E_MIXED, E_PLUS, Excursion, estimate_excursion_functional,
    excursion_level_local_times, excursions_from_point, excursions_from_supremum,
    ratio_estimate, split_at_first_passage,
)
from levy_rk.path_sim import LocalTimeAtZero, SimConfig, simulate_until

from .helpers import make_path


def test_sup_excursions_by_hand():
    p = make_path([0.0, 0.5, 0.2, 0.1, 0.6, 0.7, 0.3, 0.65, 0.9, 0.4])
    t = excursions_from_supremum(p)
    assert t.start.tolist() == [1, 5] and t.end.tolist() == [4, 8]
    assert np.allclose(t.height, [0.4, 0.4])
    assert np.allclose(t.zeta, [0.03, 0.03])
    assert np.allclose(t.s, [0.5, 0.7])
    assert t.budget == pytest.approx(0.9)
    t2 = excursions_from_supremum(p, include_open=True)
    assert len(t2) == 3 and t2.height[-1] == pytest.approx(0.5)


def test_point_excursion_classes():
    # up, back down through 0, then a jump from 0.3 to -0.4, then back up
    v = [0.0, 0.2, 0.3, -0.1, -0.2, 0.1, 0.3, -0.4, -0.3, 0.2]
    j = [0, 0, 0, 0, 0, 0, 0, -0.7, 0, 0]
    t = excursions_from_point(make_path(v, jumps=j, eps=0.05), 0.0)
    assert t.cls.tolist() == [E_PLUS, E_MINUS, E_MIXED, E_MINUS][: len(t)]
    mix = t.to_list()[2]
    assert mix.cls == "E+-"
    assert mix.overshoot == pytest.approx(0.3) and mix.undershoot == pytest.approx(-0.4)


def test_include_open_adds_tail():
    v = [0.0, 0.2, -0.1, -0.3, -0.2]
    p = make_path(v, eps=0.05)
    closed = excursions_from_point(p, 0.0)
    opened = excursions_from_point(p, 0.0, include_open=True)
    assert len(opened) == len(closed) + 1
    assert opened.end[-1] == p.n
    assert opened.dead_time < closed.dead_time


def test_band_drops_small_excursions():
    v = [0.0, 0.2, -0.01, 0.01, -0.3, 0.1]
    p = make_path(v, eps=0.05)
    t = excursions_from_point(p, 0.0)
    assert np.all(t.height >= 0.05)


def test_level_local_times_inside_excursions():
    v = [0.0, 0.5, 0.2, 0.1, 0.6]
    p = make_path(v, eps=0.06)
    t = excursions_from_supremum(p)
    L = excursion_level_local_times(t, [0.3, 0.4])
    # interior points sit at depths 0.3 and 0.4, each holding one step
    assert np.allclose(L, [[0.01 / 0.12, 0.01 / 0.12]])


def test_split_at_first_passage():
    e = Excursion("point", 0.0, 1.0, 0.5, samples=np.array([0.0, 0.2, 0.5, -0.3, -0.1]),
                  pre=np.array([0.0, 0.2, 0.5, 0.4, -0.1]))
    back, fwd = split_at_first_passage(e)
    assert back.tolist() == [0.4, 0.5, 0.2, 0.0]
    assert fwd.tolist() == [-0.3, -0.1]
    with pytest.raises(ValueError):
        split_at_first_passage(Excursion("point", 0, 1, 1, samples=np.array([0.1, 0.2])))


def test_ratio_estimate():
    r, se = ratio_estimate([1, 2, 3], [1, 1, 1])
    assert r == 2.0 and se == pytest.approx(np.sqrt(2 * 3 / 2) / 3)
    with pytest.raises(ZeroDivisionError):
        ratio_estimate([1], [0])


def test_functional_on_simulated_paths():
    m = LevyModel(0.0, 1.0, CompoundPoissonExp(1.0, 1.0))
    tabs = []
    for i in range(20):
        p = simulate_until(m, SimConfig(dt=1e-3, seed=1, path_index=i), LocalTimeAtZero(1.0)).path
        tabs.append(excursions_from_point(p, 0.0, include_open=True))
    r, se = estimate_excursion_functional(tabs, lambda t: 1.0, lambda t: t.cls == E_MIXED)
    assert r >= 0 and np.isfinite(se)
    z, z_se = estimate_excursion_functional(tabs, lambda t: 0.0)
    assert (z, z_se) == (0.0, 0.0)


def test_csv(tmp_path):
    t = excursions_from_supremum(make_path([0.0, 0.5, 0.2, 0.6]))
    out = tmp_path / "e.csv"
    t.to_csv(out, {"seed": 1})
    assert out.read_text().splitlines()[1].startswith("kind,s,zeta")
