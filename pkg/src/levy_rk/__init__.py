"""Fluctuation-theory toolkit for spectrally negative Levy processes."""

from .levy_model import (
    CompoundPoissonExp, HypothesisError, LevyModel, NoJumps, StableAlpha,
    brownian, check_hypotheses, laplace_exponent, model_from_card,
    phi_right_inverse,
)

__version__ = "0.1.0"
