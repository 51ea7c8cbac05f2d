import math

import numpy as np
import pytest

from levy_rk import (
    CompoundPoissonExp, HypothesisError, LevyModel, NoJumps, StableAlpha,
    brownian, check_hypotheses, laplace_exponent, model_from_card,
    phi_right_inverse,
)

MODELS = [
    brownian(),
    brownian(sigma=0.7, d=0.3),
    LevyModel(0.0, 1.0, CompoundPoissonExp(1.0, 1.0)),
    LevyModel(0.5, 0.2, CompoundPoissonExp(3.0, 0.5)),
    LevyModel(0.0, 0.0, StableAlpha(1.5)),
    LevyModel(0.1, 0.0, StableAlpha(1.2)),
]


def test_brownian_exponent():
    lam = np.linspace(0, 4, 9)
    assert np.allclose(laplace_exponent(brownian(), lam), lam ** 2 / 2)


def test_cp_exponent_matches_levy_khintchine():
    # psi(l) = d l + s^2 l^2/2 + int (e^{l y} - 1 - l y) Pi(dy), by quadrature
    from scipy.integrate import quad

    m = LevyModel(0.2, 0.5, CompoundPoissonExp(2.0, 1.5))
    for lam in (0.3, 1.0, 4.0):
        jump = quad(lambda y: (math.exp(lam * y) - 1 - lam * y) * m.levy_density(np.array(y)), -np.inf, 0)[0]
        assert m.psi(lam) == pytest.approx(0.2 * lam + 0.125 * lam ** 2 + jump, rel=1e-9)


def test_stable_tail_and_density_agree():
    m = LevyModel(jumps=StableAlpha(1.5))
    from scipy.integrate import quad

    z = 0.7
    tail = quad(lambda y: float(m.levy_density(np.array(y))), -np.inf, -z)[0]
    assert float(m.tail(z)) == pytest.approx(tail, rel=1e-8)


def test_dpsi_is_derivative():
    for m in MODELS:
        for lam in (0.5, 2.0):
            h = 1e-6
            fd = (m.psi(lam + h) - m.psi(lam - h)) / (2 * h)
            assert float(m.dpsi(lam)) == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("m", MODELS, ids=str)
def test_phi_inverts_psi(m):
    for q in (1e-3, 0.5, 1.0, 7.0):
        assert float(m.psi(phi_right_inverse(m, q))) == pytest.approx(q, rel=1e-10)
    assert phi_right_inverse(m, 0.0) == 0.0


def test_phi_rejects_negative_q():
    with pytest.raises(ValueError):
        phi_right_inverse(brownian(), -1.0)


def test_laplace_exponent_domain():
    with pytest.raises(ValueError):
        laplace_exponent(brownian(), -0.1)


def test_hypotheses():
    assert check_hypotheses(brownian()) == "B2"
    assert check_hypotheses(brownian(d=1.0)) == "B1"
    assert check_hypotheses(LevyModel(jumps=StableAlpha(1.7))) == "B2"
    with pytest.raises(HypothesisError) as e:
        check_hypotheses(LevyModel(0.0, 0.0, CompoundPoissonExp(1, 1)))
    assert e.value.hypothesis == "A"
    with pytest.raises(HypothesisError) as e:
        check_hypotheses(brownian(d=-0.1))
    assert e.value.hypothesis == "B"


def test_parameter_validation():
    with pytest.raises(ValueError):
        StableAlpha(2.0)
    with pytest.raises(ValueError):
        CompoundPoissonExp(0.0, 1.0)
    with pytest.raises(ValueError):
        LevyModel(sigma=-1)


@pytest.mark.parametrize("m", MODELS, ids=str)
def test_card_roundtrip(m):
    again = model_from_card({k: str(v) for k, v in m.card().items()})
    assert again == m
    assert again.card_hash() == m.card_hash()


def test_card_unknown_family():
    with pytest.raises(ValueError):
        model_from_card({"family": "gamma"})


def test_no_jump_variance():
    assert brownian().jump_variance_rate() == 0.0
    assert LevyModel(0, 1, CompoundPoissonExp(1, 2)).jump_variance_rate() == pytest.approx(0.5)
    assert isinstance(brownian().jumps, NoJumps)
