"""Scale functions: W^(q), the generalized W_f, the exit functional script-W_f and g_f.

Conventions
-----------
``W^(q)`` is the function on ``[0, inf)`` with Laplace transform
``1/(psi(l) - q)`` for ``l > Phi(q)``, extended by 0 on ``(-inf, 0)``.

``W_f(u, v)`` solves the Volterra equation::

    W_f(u, v) = W(u - v) + int_v^u W(u - z) f(z) W_f(z, v) dz

and ``script_W_f(x) = E_0[exp(-int_0^{tau_x^+} f(X_s) ds)]``, the limit of
``W_f(0, b) / W_f(x, b)`` as ``b -> -inf``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np
from numpy.polynomial import polynomial as P

from .levy_model import (
    CompoundPoissonExp, LevyModel, NoJumps, StableAlpha, check_hypotheses,
    phi_right_inverse,
)
from .talbot import DOUBLE_MAX_NODES, talbot_double, talbot_mp

__all__ = [
    "BinRate", "parse_rate", "ScaleKernel", "ScaleTable", "GeneralizedScaleTable",
    "eval_W", "scale_table", "W_f_table", "eval_W_f", "picard_W_f",
    "script_W_table", "eval_script_W", "script_W_integral_route",
    "script_W_truncated", "exit_functional_table", "eval_g_f",
    "RouteDisagreement", "convolution_series_W", "TALBOT_NODES",
]

TALBOT_NODES = 64          # point evaluations
TABLE_TALBOT_NODES = 24    # vectorized double-precision tables


class RouteDisagreement(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# rate functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinRate:
    """f(z) = const + sum_i beta_i 1{lo_i < z < hi_i}; lo may be -inf, hi +inf.

    At a bin edge the node value is the average of the two one-sided
    limits, which keeps trapezoid rules second order across the jump.
    """

    const: float = 0.0
    bins: tuple = ()

    def __post_init__(self):
        for lo, hi, _ in self.bins:
            if not lo < hi:
                raise ValueError(f"empty bin ({lo}, {hi})")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        out = np.full(z.shape, float(self.const))
        for lo, hi, b in self.bins:
            out += b * ((z > lo) & (z < hi))
        return out

    def node_values(self, z, tol=1e-9):
        z = np.asarray(z, dtype=float)
        out = self(z)
        for lo, hi, b in self.bins:
            for edge in (lo, hi):
                if np.isfinite(edge):
                    at = np.abs(z - edge) <= tol * max(1.0, abs(edge))
                    out = np.where(at, out + 0.5 * b, out)
        return out

    @property
    def is_zero(self) -> bool:
        return self.const == 0 and all(b == 0 for *_, b in self.bins)

    @property
    def at_minus_inf(self) -> float:
        return self.const + sum(b for lo, _, b in self.bins if lo == -np.inf)

    @property
    def at_plus_inf(self) -> float:
        return self.const + sum(b for _, hi, b in self.bins if hi == np.inf)

    def edges(self):
        e = [x for lo, hi, _ in self.bins for x in (lo, hi) if np.isfinite(x)]
        return sorted(set(e))

    def split_tail(self):
        """(q_inf, g, L): f = q_inf + g with g = 0 on (-inf, L)."""
        q_inf = self.at_minus_inf
        g_bins = []
        for lo, hi, b in self.bins:
            if lo == -np.inf:
                if hi != np.inf:
                    g_bins.append((hi, np.inf, -b))
            else:
                g_bins.append((lo, hi, b))
        g = BinRate(self.const + sum(b for lo, _, b in self.bins if lo == -np.inf) - q_inf, tuple(g_bins))
        edges = [lo for lo, _, _ in g_bins]
        L = min(edges) if edges else np.inf
        return q_inf, g, L

    def shift(self, a: float) -> "BinRate":
        """z -> f(z + a)."""
        return BinRate(self.const, tuple((lo - a, hi - a, b) for lo, hi, b in self.bins))

    def reflect(self) -> "BinRate":
        """z -> f(-z)."""
        return BinRate(self.const, tuple((-hi, -lo, b) for lo, hi, b in self.bins))

    def scale(self, c: float) -> "BinRate":
        return BinRate(c * self.const, tuple((lo, hi, c * b) for lo, hi, b in self.bins))

    def restrict(self, lo: float, hi: float) -> "BinRate":
        """Zero outside (lo, hi); the constant becomes a bin."""
        out = []
        if self.const:
            out.append((lo, hi, self.const))
        for a, b_, beta in self.bins:
            a2, b2 = max(a, lo), min(b_, hi)
            if a2 < b2:
                out.append((a2, b2, beta))
        return BinRate(0.0, tuple(out))

    def __add__(self, other: "BinRate") -> "BinRate":
        return BinRate(self.const + other.const, self.bins + other.bins)

    def spec(self) -> str:
        parts = []
        if self.const or not self.bins:
            parts.append(f"const:{self.const:g}")
        for lo, hi, b in self.bins:
            parts.append(f"bin:{lo:g}:{hi:g}:{b:g}")
        return "+".join(parts)


def parse_rate(spec: str) -> BinRate:
    """Parse ``const:2``, ``bin:0.9:1.1:1`` or sums joined by ``+``."""
    f = BinRate()
    for part in spec.replace(" ", "").split("+"):
        if not part:
            continue
        tok = part.split(":")
        if tok[0] == "const" and len(tok) == 2:
            f = f + BinRate(float(tok[1]))
        elif tok[0] == "bin" and len(tok) == 4:
            f = f + BinRate(0.0, ((float(tok[1]), float(tok[2]), float(tok[3])),))
        elif tok[0] == "zero" and len(tok) == 1:
            pass
        else:
            raise ValueError(f"bad rate spec {part!r}")
    return f


def _as_node_values(f, z):
    if isinstance(f, BinRate):
        return f.node_values(z)
    if callable(f):
        return np.asarray(f(z), dtype=float) * np.ones_like(z)
    return np.full_like(z, float(f))


# ---------------------------------------------------------------------------
# W^(q) kernels
# ---------------------------------------------------------------------------

def _phi_fun(z, k):
    """x^k phi_k(beta x) is the k-fold antiderivative of exp(beta s) on [0, x]."""
    z = np.asarray(z, dtype=float)
    if k == 0:
        return np.exp(z)
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    if k == 1:
        big = np.expm1(zs) / zs
        ser = 1 + z / 2 + z ** 2 / 6 + z ** 3 / 24 + z ** 4 / 120
    else:
        big = (np.expm1(zs) - zs) / zs ** 2
        ser = 0.5 + z / 6 + z ** 2 / 24 + z ** 3 / 120 + z ** 4 / 720
    return np.where(small, ser, big)


def _expsum_terms(model: LevyModel, q: float):
    """Partial fractions of 1/(psi - q) for Brownian plus exponential jumps.

    Returns a list of (beta, a, b) meaning (a + b x) exp(beta x).
    """
    s2 = model.sigma ** 2
    base = np.array([0.0, model.d, s2 / 2])          # d l + s^2 l^2 / 2
    j = model.jumps
    if isinstance(j, CompoundPoissonExp):
        th, rho = j.scale, j.rate
        num = np.array([th, 1.0])
        Q = P.polysub(P.polymul(P.polyadd(base, [0.0, rho / th]), num), [0.0, rho])
        Q = P.polysub(Q, q * num)
    else:
        num = np.array([1.0])
        Q = P.polysub(base, [q])
    Q = np.trim_zeros(Q, "b")
    roots = P.polyroots(Q)
    if np.max(np.abs(roots.imag)) > 1e-9 * max(1.0, np.max(np.abs(roots))):
        raise RuntimeError("complex roots in exponential partial fractions")
    roots = np.sort(roots.real)
    dQ = P.polyder(Q)
    zero = np.abs(roots) < 1e-12
    terms = []
    if zero.sum() >= 2:
        # double root at 0 (q = 0, zero mean): Q = l^2 R(l)
        R = P.polydiv(Q, [0.0, 0.0, 1.0])[0]
        N0, N1 = P.polyval(0.0, num), P.polyval(0.0, P.polyder(num))
        R0, R1 = P.polyval(0.0, R), P.polyval(0.0, P.polyder(R))
        terms.append((0.0, N1 / R0 - N0 * R1 / R0 ** 2, N0 / R0))
        roots = roots[~zero]
    elif zero.sum() == 1:
        roots = np.where(zero, 0.0, roots)
    for r in roots:
        terms.append((float(r), float(P.polyval(r, num) / P.polyval(r, dQ)), 0.0))
    return terms


class ScaleKernel:
    """W^(q) on [0, inf) with its first two antiderivatives, zero below 0.

    ``kind`` is "closed-form" (exponential sums for Brownian and CP-Exp
    models, power law for the pure stable case at q = 0) or "inverted".
    """

    def __init__(self, model: LevyModel, q: float = 0.0, nodes: int = TABLE_TALBOT_NODES):
        check_hypotheses(model)
        self.model, self.q = model, float(q)
        self.phi = phi_right_inverse(model, q)
        self.nodes = nodes
        j = model.jumps
        if model.sigma > 0 and isinstance(j, (NoJumps, CompoundPoissonExp)):
            self.kind, self._terms = "closed-form", _expsum_terms(model, q)
        elif isinstance(j, StableAlpha) and model.sigma == 0 and model.d == 0 and q == 0:
            self.kind, self._alpha = "closed-form", j.alpha
            self._terms = None
        else:
            self.kind, self._terms = "inverted", None

    @property
    def start_exponent(self) -> float:
        """b with W(x) ~ x^b as x -> 0."""
        if self.model.sigma > 0:
            return 1.0
        return self.model.jumps.alpha - 1.0

    @property
    def shift(self) -> float:
        return self.phi + 0.5

    def transform(self, s, k=0):
        return 1.0 / ((self.model.psi(s) - self.q) * s ** k)

    def __call__(self, x, k: int = 0):
        x = np.asarray(x, dtype=float)
        xp = np.maximum(x, 0.0)
        if self.kind == "closed-form" and self._terms is not None:
            out = np.zeros_like(xp)
            for beta, a, b in self._terms:
                if beta == 0.0:
                    fac = math.factorial
                    out += a * xp ** k / fac(k) + b * xp ** (k + 1) / fac(k + 1)
                else:
                    out += a * xp ** k * _phi_fun(beta * xp, k)
        elif self.kind == "closed-form":
            a = self._alpha
            out = xp ** (a - 1 + k) / math.gamma(a + k)
        else:
            out = talbot_double(lambda s: self.transform(s, k), xp.ravel(),
                                M=self.nodes, shift=self.shift).reshape(xp.shape)
        return np.where(x > 0, out, 0.0)

    def derivative(self, x, h=None):
        """W^(q)'(x): exact for closed forms, central differences otherwise."""
        x = np.asarray(x, dtype=float)
        if self.kind == "closed-form" and self._terms is not None:
            out = np.zeros_like(x)
            for beta, a, b in self._terms:
                out += (a * beta + b + b * beta * x) * np.exp(beta * x)
            return np.where(x > 0, out, 0.0)
        if self.kind == "closed-form":
            a, xp = self._alpha, np.maximum(x, 1e-300)
            return np.where(x > 0, (a - 1) * xp ** (a - 2) / math.gamma(a), 0.0)
        if h is None:
            h = 1e-5 * np.maximum(1.0, x)
        h = np.minimum(h, 0.5 * x)
        return (self(x + h) - self(x - h)) / (2 * h)

    def second_derivative(self, x, h=None):
        x = np.asarray(x, dtype=float)
        if self.kind == "closed-form" and self._terms is not None:
            out = np.zeros_like(x)
            for beta, a, b in self._terms:
                out += (a * beta ** 2 + 2 * b * beta + b * beta ** 2 * x) * np.exp(beta * x)
            return np.where(x > 0, out, 0.0)
        if self.kind == "closed-form":
            a, xp = self._alpha, np.maximum(x, 1e-300)
            return np.where(x > 0, (a - 1) * (a - 2) * xp ** (a - 3) / math.gamma(a), 0.0)
        if h is None:
            h = 1e-4 * np.maximum(1.0, x)
        h = np.minimum(h, 0.5 * x)
        return (self(x + h) - 2 * self(x) + self(x - h)) / h ** 2


def eval_W(model: LevyModel, x, q: float = 0.0, method: str = "auto", nodes: int = TALBOT_NODES):
    """W^(q)(x).  ``method``: "auto" (closed form if known), "talbot"."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("eval_W needs x >= 0")
    ker = ScaleKernel(model, q)
    if method == "auto" and ker.kind == "closed-form":
        out = ker(xa)
    elif method in ("auto", "talbot"):
        if nodes > DOUBLE_MAX_NODES:
            import mpmath as mp

            qq = mp.mpf(q)
            F = lambda s: 1 / (model.psi_mp(s) - qq)
            flat = [talbot_mp(F, float(t), M=nodes, shift=ker.shift) for t in xa.ravel()]
            out = np.array(flat).reshape(xa.shape)
        else:
            out = talbot_double(ker.transform, xa.ravel(), M=nodes, shift=ker.shift).reshape(xa.shape)
        if not np.all(np.isfinite(out)):
            raise RuntimeError("Laplace inversion returned non-finite values")
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ScaleTable:
    x: np.ndarray
    W: np.ndarray
    Wprime: np.ndarray
    q: float
    provenance: str
    model_hash: str

    def __call__(self, x):
        return np.interp(x, self.x, self.W, left=0.0)

    def to_csv(self, path, meta: Optional[dict] = None):
        _write_csv(path, ["x", "W", "Wprime"], [self.x, self.W, self.Wprime],
                   {"model_hash": self.model_hash, "q": self.q, "provenance": self.provenance, **(meta or {})})


def _central_diff(y, h):
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (2 * h)
    d[0] = (-3 * y[0] + 4 * y[1] - y[2]) / (2 * h)
    d[-1] = (3 * y[-1] - 4 * y[-2] + y[-3]) / (2 * h)
    return d


def scale_table(model: LevyModel, x_max: float, h: float = 1e-3, q: float = 0.0) -> ScaleTable:
    n = int(round(x_max / h))
    x = np.linspace(0.0, n * h, n + 1)
    ker = ScaleKernel(model, q)
    W = ker(x)
    return ScaleTable(x, W, _central_diff(W, h), q,
                      "closed-form" if ker.kind == "closed-form" else "inverted", model.card_hash())


# ---------------------------------------------------------------------------
# Volterra march
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _march(src, g, omega, omega0, wfirst):
    n = src.shape[0]
    y = np.empty(n)
    gy = np.empty(n)
    y[0] = src[0]
    gy[0] = g[0] * y[0]
    for k in range(1, n):
        acc = wfirst[k] * gy[0]
        for j in range(1, k):
            acc += omega[k - j] * gy[j]
        den = 1.0 - omega0 * g[k]
        y[k] = (src[k] + acc) / den
        gy[k] = g[k] * y[k]
    return y


def _weights(kernel: ScaleKernel, n: int, h: float):
    """Product-trapezoid weights for a grid of n+1 nodes (kernel integrated exactly)."""
    m = np.arange(n + 2) * h
    K1 = kernel(m, 1)
    K2 = kernel(m, 2)
    omega = np.zeros(n + 1)
    omega[1:] = (K2[2:n + 2] - 2 * K2[1:n + 1] + K2[0:n]) / h
    omega0 = K2[1] / h
    wfirst = np.zeros(n + 1)
    wfirst[1:] = K1[1:n + 1] - (K2[1:n + 1] - K2[0:n]) / h
    return omega, omega0, wfirst


def volterra_solve(kernel: ScaleKernel, u, src_fn, g_fn, extrapolate: bool = True):
    """y(u) = src(u) + int_{u_0}^u K(u - z) g(z) y(z) dz on the uniform grid ``u``.

    When K(x) ~ x^b near 0 with b < 1 (no Gaussian part) the march error
    is O(h^{1+b}); the h and h/2 solutions are then combined to cancel it.
    """
    u = np.asarray(u, dtype=float)
    n = u.size - 1
    h = (u[-1] - u[0]) / n

    def solve(grid, step):
        src = np.ascontiguousarray(src_fn(grid), dtype=float)
        g = np.ascontiguousarray(_as_node_values(g_fn, grid), dtype=float)
        omega, omega0, wfirst = _weights(kernel, grid.size - 1, step)
        return _march(src, g, omega, omega0, wfirst)

    y = solve(u, h)
    b = kernel.start_exponent
    if not np.any(_as_node_values(g_fn, u)) and not np.any(_as_node_values(g_fn, u[0] + np.arange(2 * n + 1) * (h / 2))):
        # zero rate: the march returns the source untouched, and Richardson would only add rounding
        return y
    if extrapolate and b < 1:
        fine = u[0] + np.arange(2 * n + 1) * (h / 2)
        yf = solve(fine, h / 2)[::2]
        r = 2.0 ** (1 + b)
        y = (r * yf - y) / (r - 1)
    if not np.all(np.isfinite(y)):
        raise RuntimeError("Volterra march diverged")
    return y


@dataclass(frozen=True)
class GeneralizedScaleTable:
    x: np.ndarray
    values: np.ndarray
    kind: str                       # "W_f" or "script_W"
    f: object
    v: Optional[float] = None
    g: Optional[np.ndarray] = None
    model_hash: str = ""
    diagnostics: dict = field(default_factory=dict)

    def __call__(self, x):
        return np.interp(x, self.x, self.values)

    def to_csv(self, path, meta: Optional[dict] = None):
        m = {"model_hash": self.model_hash, "kind": self.kind,
             "f": self.f.spec() if isinstance(self.f, BinRate) else repr(self.f), **(meta or {})}
        if self.kind == "W_f":
            _write_csv(path, ["u", "v", "W_f"], [self.x, np.full_like(self.x, self.v), self.values], m)
        else:
            _write_csv(path, ["x", "scriptW", "g"], [self.x, self.values, self.g], m)


def _grid(lo, hi, h):
    """Uniform grid through multiples of h covering [lo, hi]."""
    i0 = math.floor(lo / h + 1e-9)
    i1 = math.ceil(hi / h - 1e-9)
    return np.arange(i0, i1 + 1) * h


def W_f_table(model: LevyModel, f, v: float, u_max: float, h: float = 1e-3) -> GeneralizedScaleTable:
    """W_f(u, v) for u on [v, u_max] (step adjusted so both ends are nodes)."""
    if u_max < v:
        raise ValueError("need u_max >= v")
    n = max(1, int(math.ceil((u_max - v) / h - 1e-9)))
    hh = (u_max - v) / n if u_max > v else h
    u = v + np.arange(n + 1) * hh
    ker = ScaleKernel(model, 0.0)
    y = volterra_solve(ker, u, lambda z: ker(z - v), f)
    return GeneralizedScaleTable(u, y, "W_f", f, v=v, model_hash=model.card_hash())


def eval_W_f(model: LevyModel, f, u: float, v: float, h: float = 1e-3) -> float:
    if u < v:
        raise ValueError("eval_W_f needs u >= v")
    if u == v:
        return 0.0
    return float(W_f_table(model, f, v, u, h).values[-1])


def picard_W_f(model: LevyModel, f, u: float, v: float, h: float, tol=1e-14, max_iter=500) -> float:
    """Neumann-series solution with plain trapezoid weights (test oracle)."""
    from scipy.signal import fftconvolve

    n = max(1, int(round((u - v) / h)))
    hh = (u - v) / n
    z = v + np.arange(n + 1) * hh
    Wk = ScaleKernel(model, 0.0)(np.arange(n + 1) * hh)
    fz = _as_node_values(f, z)
    y = Wk.copy()
    term = Wk.copy()
    for _ in range(max_iter):
        s = fz * term
        conv = fftconvolve(Wk, s)[: n + 1]
        # trapezoid end corrections: half weight at z_0 and z_k
        conv = hh * (conv - 0.5 * Wk * s[0] - 0.5 * Wk[0] * s)
        term = conv
        y += term
        if np.max(np.abs(term)) <= tol * np.max(np.abs(y)):
            return float(y[-1])
    raise RuntimeError("Picard iteration did not converge")


# ---------------------------------------------------------------------------
# script-W_f and exit functionals
# ---------------------------------------------------------------------------

def _limit_march(model: LevyModel, f: BinRate, lo: float, hi: float, h: float):
    """Z on a grid covering [min(lo, L), hi], normalized so Z(hi) ~ O(1).

    With f = q_inf + g and g = 0 below L, the ratio limit of W_f(., b)
    as b -> -inf is Z solving
        Z(u) = exp(Phi(q_inf) u) + int_L^u W^(q_inf)(u - z) g(z) Z(z) dz.
    """
    if not isinstance(f, BinRate):
        raise TypeError("script-W routes need a BinRate rate function")
    q_inf, g, L = f.split_tail()
    if q_inf < 0:
        raise ValueError("rate function must be >= 0 at -inf")
    ker = ScaleKernel(model, q_inf)
    start = lo if not np.isfinite(L) else min(lo, L)
    u = _grid(start, hi, h)
    src = lambda z: np.exp(ker.phi * (z - hi))
    if g.is_zero:
        return u, src(u)
    return u, volterra_solve(ker, u, src, g)


def exit_functional_table(model: LevyModel, f: BinRate, lo: float, hi: float, h: float = 1e-3):
    """(y, E_y[exp(-int_0^{tau_hi^+} f(X_s) ds)]) for y on a grid over [lo, hi]."""
    u, Z = _limit_march(model, f, lo, hi, h)
    keep = u >= lo - 1e-9 * h
    return u[keep], Z[keep] / Z[-1]


def script_W_table(model: LevyModel, f, x_max: float, h: float = 1e-3,
                   monitor: bool = False) -> GeneralizedScaleTable:
    """script-W_f on [0, x_max] by the exact ratio limit, plus g_f."""
    if isinstance(f, (int, float)):
        f = BinRate(float(f))
    u, Z = _limit_march(model, f, 0.0, x_max, h)
    i0 = int(np.argmin(np.abs(u)))
    x = u[i0:]
    vals = Z[i0] / Z[i0:]
    g = _central_diff(-np.log(vals), h) if vals.size >= 3 else np.zeros_like(vals)
    diag = {}
    if monitor:
        diag = {f"ratio_B{m}": script_W_truncated(model, f, x_max, m * max(x_max, 1.0), h=max(h, 4e-3))
                for m in (5, 10, 20)}
    return GeneralizedScaleTable(x, vals, "script_W", f, g=g, model_hash=model.card_hash(), diagnostics=diag)


def script_W_truncated(model: LevyModel, f, x: float, B: float, h: float = 1e-3) -> float:
    """Finite-b ratio W_f(0, -B) / W_f(x, -B) (tail monitor for the limit)."""
    tab = W_f_table(model, f, -B, x, h=h)
    return float(np.interp(0.0, tab.x, tab.values) / tab.values[-1])


def script_W_integral_route(model: LevyModel, f, x_max: float, h: float = 4e-3,
                            z_max: Optional[float] = None, richardson: bool = True):
    """Nystrom solve of F(x) = 1 - int_0^inf (W(x) - W(x - z)) f(x - z) F(z) dz.

    Returns (x grid on [0, x_max], F).  The z-range is truncated where
    f(x - z) F(z) is negligible; with ``richardson`` the h and 2h solves
    are combined assuming second-order error.
    """
    if isinstance(f, (int, float)):
        f = BinRate(float(f))
    q_inf, _, L = f.split_tail()
    if z_max is None:
        z_max = x_max + (max(0.0, -L) if np.isfinite(L) else 0.0) + 0.5
        if q_inf > 0:
            z_max += 14.0 / phi_right_inverse(model, q_inf)
    ker = ScaleKernel(model, 0.0)

    def solve(step):
        n = int(math.ceil(z_max / step))
        z = np.arange(n + 1) * step
        d = np.arange(-n, n + 1) * step
        Wd = ker(d)
        fd = f.node_values(d)
        i = np.arange(n + 1)
        diff = i[:, None] - i[None, :] + n           # index of x_i - z_j in d
        w = np.full(n + 1, step)
        w[0] = w[-1] = step / 2
        A = (ker(z)[:, None] - Wd[diff]) * fd[diff] * w[None, :]
        A[np.diag_indices_from(A)] += 1.0
        return z, np.linalg.solve(A, np.ones(n + 1))

    z, F = solve(h)
    if richardson:
        _, F2 = solve(2 * h)
        m = min(z[::2].size, F2.size)
        z, F = z[::2][:m], (4 * F[::2][:m] - F2[:m]) / 3
    keep = z <= x_max + 1e-9
    return z[keep], F[keep]


def eval_script_W(model: LevyModel, f, x, route: str = "limit", h: float = 1e-3, rtol: float = 1e-4):
    """script-W_f(x).  ``route``: "limit", "integral", or "both" (checks agreement)."""
    if isinstance(f, (int, float)):
        f = BinRate(float(f))
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa < 0):
        raise ValueError("x must be >= 0")
    x_max = max(float(xa.max()), 4 * h)
    if route in ("limit", "both"):
        tab = script_W_table(model, f, x_max, h)
        out = tab(xa)
    if route in ("integral", "both"):
        zi, Fi = script_W_integral_route(model, f, x_max)
        out2 = np.interp(xa, zi, Fi)
        if route == "integral":
            out = out2
        elif np.any(np.abs(out2 - out) > rtol * np.abs(out)):
            raise RouteDisagreement(
                f"script-W routes disagree: limit {out.tolist()} vs integral {out2.tolist()}")
    if route not in ("limit", "integral", "both"):
        raise ValueError(f"unknown route {route!r}")
    return float(out[0]) if np.ndim(x) == 0 else out


def eval_g_f(model: LevyModel, f, x, h: float = 1e-3):
    if isinstance(f, (int, float)):
        f = BinRate(float(f))
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    tab = script_W_table(model, f, max(float(xa.max()) + 4 * h, 8 * h), h)
    out = np.interp(xa, tab.x, tab.g)
    return float(out[0]) if np.ndim(x) == 0 else out


def convolution_series_W(model: LevyModel, q: float, x_max: float, h: float = 1e-3, tol: float = 1e-8):
    """sum_k q^k W^{*(k+1)} by repeated product-trapezoid convolution.

    Stops once the newest term drops below ``tol`` relative to the sum.
    """
    ker = ScaleKernel(model, 0.0)
    n = int(round(x_max / h))
    x = np.arange(n + 1) * h
    omega, omega0, wfirst = _weights(ker, n, h)
    term = ker(x)
    total = term.copy()
    for k in range(1, 400):
        new = np.empty_like(term)
        for i in range(n + 1):
            new[i] = (wfirst[i] * term[0] + omega[i - 1:0:-1] @ term[1:i] + omega0 * term[i]) if i else 0.0
        term = q * new
        total += term
        if np.max(np.abs(term)) <= tol * np.max(np.abs(total)):
            return x, total, k
    raise RuntimeError("convolution series did not converge")


def _write_csv(path, header: Sequence[str], columns, meta: dict):
    with open(path, "w", newline="") as fh:
        for k in sorted(meta):
            fh.write(f"# {k}={meta[k]}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])
