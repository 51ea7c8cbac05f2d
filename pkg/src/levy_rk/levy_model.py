"""Spectrally negative Levy processes given by a triplet (d, sigma, Pi).

Two parametric jump families are supported, each with a closed-form
Laplace exponent and exact tails:

* ``CompoundPoissonExp(rate, scale)``: jumps ``-Exp(scale)`` at ``rate``.
  The compensator ``rate/scale`` is folded into the exponent so that the
  mean of ``X_1`` is always the drift ``d``::

      psi(l) = d*l + s^2 l^2 / 2 + rate*(scale/(scale+l) - 1) + rate*l/scale

* ``StableAlpha(alpha)``: the unit spectrally negative stable law with
  ``psi(l) = l**alpha`` for ``1 < alpha < 2`` (plus optional d, sigma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "NoJumps", "CompoundPoissonExp", "StableAlpha", "LevyModel",
    "HypothesisError", "laplace_exponent", "phi_right_inverse",
    "check_hypotheses", "brownian", "model_from_card",
]


class HypothesisError(ValueError):
    """Model rejected; ``hypothesis`` is "A" or "B"."""

    def __init__(self, hypothesis: str, message: str):
        super().__init__(f"hypothesis ({hypothesis}) violated: {message}")
        self.hypothesis = hypothesis


@dataclass(frozen=True)
class NoJumps:
    family = "bm"


@dataclass(frozen=True)
class CompoundPoissonExp:
    rate: float
    scale: float
    family = "cp_exp"

    def __post_init__(self):
        if not (self.rate > 0 and self.scale > 0):
            raise ValueError("CompoundPoissonExp needs rate > 0 and scale > 0")


@dataclass(frozen=True)
class StableAlpha:
    alpha: float
    family = "stable"

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise ValueError("StableAlpha needs 1 < alpha < 2")

    @property
    def density_const(self) -> float:
        # Pi(dx) = c |x|^{-1-alpha} dx on x < 0 gives psi(l) = l^alpha
        a = self.alpha
        return a * (a - 1.0) / math.gamma(2.0 - a)


JumpSpec = Union[NoJumps, CompoundPoissonExp, StableAlpha]


@dataclass(frozen=True)
class LevyModel:
    d: float = 0.0
    sigma: float = 0.0
    jumps: JumpSpec = field(default_factory=NoJumps)

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    # -- Laplace exponent -------------------------------------------------
    def psi(self, lam):
        """Psi on real or complex arguments (numpy aware)."""
        lam = np.asarray(lam) if not np.isscalar(lam) else lam
        out = self.d * lam + 0.5 * self.sigma ** 2 * lam * lam
        j = self.jumps
        if isinstance(j, CompoundPoissonExp):
            # rate*(scale/(scale+l) - 1) + rate*l/scale without the cancellation
            out = out + j.rate * lam * lam / (j.scale * (j.scale + lam))
        elif isinstance(j, StableAlpha):
            out = out + lam ** j.alpha
        return out

    def psi_mp(self, s):
        """Psi for mpmath numbers."""
        import mpmath as mp

        out = self.d * s + mp.mpf(self.sigma) ** 2 * s * s / 2
        j = self.jumps
        if isinstance(j, CompoundPoissonExp):
            r, t = mp.mpf(j.rate), mp.mpf(j.scale)
            out += r * s * s / (t * (t + s))
        elif isinstance(j, StableAlpha):
            out += mp.power(s, mp.mpf(j.alpha))
        return out

    def dpsi(self, lam):
        lam = np.asarray(lam, dtype=float)
        out = self.d + self.sigma ** 2 * lam
        j = self.jumps
        if isinstance(j, CompoundPoissonExp):
            out = out + j.rate * lam * (lam + 2 * j.scale) / (j.scale * (j.scale + lam) ** 2)
        elif isinstance(j, StableAlpha):
            with np.errstate(divide="ignore"):
                out = out + j.alpha * lam ** (j.alpha - 1.0)
        return out

    @property
    def mean_rate(self) -> float:
        """Psi'(0+) = E[X_1]."""
        return float(self.d)

    # -- Levy measure ---------------------------------------------------
    @property
    def has_jumps(self) -> bool:
        return not isinstance(self.jumps, NoJumps)

    def tail(self, z):
        """Pi(-inf, -z) for z > 0."""
        z = np.asarray(z, dtype=float)
        j = self.jumps
        if isinstance(j, CompoundPoissonExp):
            return j.rate * np.exp(-j.scale * z)
        if isinstance(j, StableAlpha):
            with np.errstate(divide="ignore"):
                return j.density_const / j.alpha * z ** (-j.alpha)
        return np.zeros_like(z)

    def levy_density(self, y):
        """Density of Pi at y < 0 (zero for y >= 0)."""
        y = np.asarray(y, dtype=float)
        j = self.jumps
        neg = y < 0
        out = np.zeros_like(y)
        if isinstance(j, CompoundPoissonExp):
            out = np.where(neg, j.rate * j.scale * np.exp(j.scale * np.minimum(y, 0.0)), 0.0)
        elif isinstance(j, StableAlpha):
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(neg, j.density_const * np.abs(y) ** (-1.0 - j.alpha), 0.0)
        return out

    def jump_variance_rate(self) -> float:
        """int y^2 Pi(dy); infinite for the stable family."""
        j = self.jumps
        if isinstance(j, CompoundPoissonExp):
            return 2.0 * j.rate / j.scale ** 2
        if isinstance(j, StableAlpha):
            return math.inf
        return 0.0

    # -- serialization ----------------------------------------------------
    def card(self) -> dict:
        j = self.jumps
        c = {"family": j.family, "d": float(self.d), "sigma": float(self.sigma)}
        if isinstance(j, CompoundPoissonExp):
            c.update(rho=float(j.rate), theta=float(j.scale))
        elif isinstance(j, StableAlpha):
            c["alpha"] = float(j.alpha)
        return c

    def card_hash(self) -> str:
        import hashlib
        import json

        blob = json.dumps(self.card(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def __str__(self):
        return ",".join(f"{k}={v}" for k, v in self.card().items())


def brownian(sigma=1.0, d=0.0) -> LevyModel:
    return LevyModel(d=d, sigma=sigma)


def model_from_card(card) -> LevyModel:
    """Inverse of ``LevyModel.card``; accepts string values (config files)."""
    fam = str(card.get("family", "bm")).strip().lower()
    d = float(card.get("d", 0.0))
    sigma = float(card.get("sigma", 0.0))
    if fam == "bm":
        jumps = NoJumps()
    elif fam in ("cp_exp", "cp-exp", "cpexp"):
        jumps = CompoundPoissonExp(float(card["rho"]), float(card["theta"]))
    elif fam == "stable":
        jumps = StableAlpha(float(card["alpha"]))
    else:
        raise ValueError(f"unknown jump family {fam!r}")
    return LevyModel(d=d, sigma=sigma, jumps=jumps)


def laplace_exponent(model: LevyModel, lam):
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr < 0):
        raise ValueError("laplace_exponent needs lam >= 0")
    out = model.psi(lam_arr)
    return float(out) if np.ndim(out) == 0 else out


def check_hypotheses(model: LevyModel) -> str:
    """Return "B1" or "B2", raise HypothesisError otherwise."""
    if model.sigma == 0 and not isinstance(model.jumps, StableAlpha):
        raise HypothesisError("A", "paths have bounded variation (sigma = 0 and finite-variation jumps)")
    m = model.mean_rate
    if m < 0:
        raise HypothesisError("B", f"Psi'(0+) = {m} < 0 (killed case not supported)")
    return "B1" if m > 0 else "B2"


def phi_right_inverse(model: LevyModel, q: float, rtol=1e-12, max_iter=200) -> float:
    """Largest root of Psi(l) = q, by Newton safeguarded with bisection."""
    if q < 0:
        raise ValueError("q must be >= 0")
    if q == 0:
        return 0.0
    psi = lambda l: float(model.psi(l)) - q
    lo, hi = 0.0, 1.0
    while psi(hi) <= 0:
        lo, hi = hi, 2 * hi
        if hi > 1e300:
            raise RuntimeError("phi_right_inverse: no bracket")
    if lo == 0.0:
        # tiny q: shrink geometrically so the bracket is [r/2, r] in relative terms
        lo = 0.5 * hi
        while psi(lo) > 0:
            hi, lo = lo, 0.5 * lo
            if lo == 0.0:
                return hi
    j = model.jumps
    if model.sigma > 0:
        x = max(1.0, math.sqrt(q) / model.sigma)
    elif isinstance(j, StableAlpha):
        x = q ** (1.0 / j.alpha)
    else:
        x = 1.0
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(max_iter):
        fx = psi(x)
        if fx > 0:
            hi = x
        else:
            lo = x
        dfx = float(model.dpsi(x))
        nx = x - fx / dfx if dfx > 0 else 0.5 * (lo + hi)
        if not lo < nx < hi:
            nx = 0.5 * (lo + hi)
        if abs(nx - x) <= rtol * max(abs(nx), 1e-300):
            return nx
        x = nx
    raise RuntimeError("phi_right_inverse did not converge")
