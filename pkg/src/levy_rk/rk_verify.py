"""Registry of runnable identity checks.

Each ``verify_*`` function simulates paths, builds an analytic target from
scale-function outputs (closed forms or quadrature, never Monte Carlo
unless stated) and returns an :class:`IdentityReport`.

Tolerance rule: every estimate carries its Monte Carlo stderr and a bias
budget taken from the coupled dt/2 path (common random numbers),

    bias = |e_dt - e_dt/2| / (1 - 2^-1/2),

which is the remaining error of e_dt if the discretization error scales
like sqrt(dt).  z = (e_dt - target) / sqrt(se^2 + se_T^2 + bias^2), where
se_T is nonzero only for targets that are themselves estimated, and the verdict
needs |z| <= z_max for every entry, every drift |e_dt - e_dt/2| within the
identity's declared budget, and every extra check passing.
"""

from __future__ import annotations

import json
import math
import multiprocessing as mp
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numba
import numpy as np
from scipy import stats
from scipy.integrate import IntegrationWarning, quad

from .excursion import (E_MINUS, E_MIXED, E_PLUS, excursion_level_local_times,
                        excursions_from_point, excursions_from_supremum, ratio_estimate)
from .levy_model import CompoundPoissonExp, LevyModel, NoJumps, StableAlpha, brownian
from .local_time import integral_f_L, occupation_local_time
from .path_sim import (FirstPassageAbove, FirstPassageBelow, LocalTimeAtZero, MaxTimeExceeded,
                       SimConfig, Window, default_eps, simulate_until)
from .scale_fn import (BinRate, ScaleKernel, W_f_table, eval_script_W, exit_functional_table,
                       parse_rate)

__all__ = [
    "IdentityReport", "CalibrationConstants", "MCSettings", "REGISTRY", "DEFAULT_MODELS",
    "calibrate_constants", "run_identity", "mixed_term", "n0_hat_H_gt", "jump_entry_target",
    "mu_h_target", "tau_a_target", "creeping_mass", "jump_entry_mass",
] + [f"verify_{k}" for k in (
    "rk2_brownian", "rk1_brownian", "tau_c_laplace", "marked_construction",
    "tau_a_levy_measure", "u_y", "exponential_local_time", "branching_identity", "v_xy",
    "first_passage_prelude", "creeping", "mu_c_restriction", "calibration",
    "sup_excursion_functionals", "overshoot_law", "script_W_laplace")]

Z_MAX = 3.0
HALVING = 1.0 - 2.0 ** -0.5
CENSOR_MAX = 1e-3      # largest tolerated fraction of paths cut at max_points

CP_BM = LevyModel(0.0, 1.0, CompoundPoissonExp(1.0, 1.0))
STABLE15 = LevyModel(0.0, 0.0, StableAlpha(1.5))
DEFAULT_MODELS = {"bm": brownian(), "cp_exp_bm": CP_BM, "stable_1.5": STABLE15}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass
class IdentityReport:
    id: str
    model: dict
    params: dict
    estimates: list = field(default_factory=list)    # {name, value, stderr, value_half, bias}
    targets: list = field(default_factory=list)      # {name, value}
    z: list = field(default_factory=list)
    checks: list = field(default_factory=list)       # {name, value, limit, ok}
    verdict: bool = False
    n_paths: int = 0
    dt: float = 0.0
    eps: float = 0.0
    seed: int = 0
    z_max: float = Z_MAX
    drift_budget: float = 0.0

    def add(self, name, value, stderr, target, value_half=None, extra_se=0.0):
        """Record one estimate/target pair and its z-score."""
        bias = abs(value - value_half) / HALVING if value_half is not None else 0.0
        den = math.sqrt(stderr ** 2 + extra_se ** 2 + bias ** 2)
        diff = value - target
        z = diff / den if den > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
        self.estimates.append({"name": name, "value": value, "stderr": stderr,
                               "value_half": value_half, "bias": bias})
        self.targets.append({"name": name, "value": target})
        self.z.append(z)
        if value_half is not None:
            drift = abs(value - value_half)
            self.check(f"drift[{name}]", drift, self.drift_budget, drift <= self.drift_budget)
        return z

    def check(self, name, value, limit, ok):
        self.checks.append({"name": name, "value": value, "limit": limit, "ok": bool(ok)})

    def finish(self):
        done = sum(k for k, _ in _CENSORED)
        if done:
            total = sum(n for _, n in _CENSORED)
            self.params["censored_paths"] = done
            self.check("censored fraction", done / total, CENSOR_MAX, done / total <= CENSOR_MAX)
        self.verdict = bool(all(abs(z) <= self.z_max for z in self.z)
                            and all(c["ok"] for c in self.checks))
        return self

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"

    def summary(self) -> str:
        worst = max((abs(z) for z in self.z), default=0.0)
        return f"{self.id}: {'PASS' if self.verdict else 'FAIL'} (max |z| = {worst:.2f}, n = {self.n_paths})"


@dataclass(frozen=True)
class CalibrationConstants:
    c_plus: float
    c_minus: Optional[float]
    c_plus_se: float = 0.0
    c_minus_se: Optional[float] = 0.0
    method: str = "fixed"
    r2_plus: Optional[float] = None
    r2_minus: Optional[float] = None

    def __post_init__(self):
        if not self.c_plus > 0:
            raise ValueError("c_plus must be > 0")
        if self.c_minus is not None and not self.c_minus > 0:
            raise ValueError("c_minus must be > 0")

    @classmethod
    def fixed(cls):
        """The occupation-density anchors c+ = c- = 1."""
        return cls(1.0, 1.0)


# ---------------------------------------------------------------------------
# Monte Carlo plumbing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MCSettings:
    n_paths: int = 10_000
    dt: float = 1e-4
    seed: int = 0
    workers: int = 1
    halving: bool = True


_JOB = None
_CENSORED: List[tuple] = []       # (censored, attempted) per batch since the last report


def _run_range(bounds):
    model, cfg, stop, stat, strict = _JOB
    out = []
    for i in range(*bounds):
        try:
            r = simulate_until(model, replace(cfg, path_index=i), stop, raise_on_max_time=strict)
        except MaxTimeExceeded:
            out.append(None)
            continue
        out.append((stat(r.path), stat(r.half) if r.half is not None else None))
    return out


def _map_paths(model, stop, stat, mc: MCSettings, start=0, n=None, x0=0.0, window=None,
               halving=None, max_time=None):
    """[(stat(dt path), stat(dt/2 path) or None)] for path indices start..start+n-1.

    Paths depend only on (seed, index); with several workers the index
    range is cut into contiguous chunks and the results are concatenated
    in index order, so the output does not depend on the worker count.
    With ``max_time`` a path is cut there instead of raising.  Paths that
    exhaust max_points are dropped and logged; the report of the running
    identity then carries a censored-fraction check.
    """
    global _JOB
    n = mc.n_paths if n is None else n
    halving = mc.halving if halving is None else halving
    # no time cap by default: stable local-time stops have t^(-1/3) tails
    # and coarse steps make long excursions cheap
    cfg = SimConfig(dt=mc.dt, seed=mc.seed, halving=halving, window=window, x0=x0,
                    max_time=math.inf if max_time is None else float(max_time))
    _JOB = (model, cfg, stop, stat, max_time is None)
    if n <= 0:
        return []
    if mc.workers <= 1 or n < 2 * mc.workers:
        out = _run_range((start, start + n))
    else:
        edges = np.linspace(start, start + n, 4 * mc.workers + 1).astype(int)
        chunks = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        with mp.get_context("fork").Pool(mc.workers) as pool:
            parts = pool.map(_run_range, chunks)
        out = [r for part in parts for r in part]
    kept = [r for r in out if r is not None]
    _CENSORED.append((len(out) - len(kept), len(out)))
    return kept


def _stack(results, which=0):
    return np.array([r[which] for r in results], dtype=float)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    return x.mean(axis=0), x.std(axis=0, ddof=1) / np.sqrt(n)


def _levels_window(levels, sup_depth=-1.0):
    return Window(tuple((float(y), float(y)) for y in levels), float(sup_depth))


def _new_report(ident, model, params, mc, drift_budget, n_paths=None):
    _CENSORED.clear()
    return IdentityReport(ident, model.card(), _clean(params), n_paths=mc.n_paths if n_paths is None else n_paths,
                          dt=mc.dt, eps=default_eps(model, mc.dt), seed=mc.seed,
                          drift_budget=drift_budget)


def _W(model):
    k = ScaleKernel(model, 0.0)
    W = lambda x: float(k(np.array([float(x)]))[0])
    dW = lambda x: float(k.derivative(np.array([float(x)]))[0])
    d2W = lambda x: float(k.second_derivative(np.array([float(x)]))[0])
    return W, dW, d2W


def _laplace_entries(rep, L, Lh, lams, targets, names):
    """E[exp(-lam L)] for each column of L and each lam."""
    for j, name in enumerate(names):
        for lam in lams:
            v = np.exp(-lam * L[:, j])
            m, se = _mean_se(v)
            mh = np.exp(-lam * Lh[:, j]).mean() if Lh is not None else None
            rep.add(f"{name},lam={lam:g}", float(m), float(se), targets(j, lam), mh)


def _trend(rep, L, Lh, points, coords, T, label):
    """At each (coordinate, lam) in ``points``: the dt/2 estimate is no farther
    from the target than the dt one, up to 3 stderr of the paired difference."""
    for u, lam in points:
        j = coords.index(u)
        a, b = np.exp(-lam * L[:, j]), np.exp(-lam * Lh[:, j])
        tv = T(j, lam)
        se_d = float(np.std(a - b, ddof=1) / np.sqrt(a.size))
        gap = abs(b.mean() - tv) - abs(a.mean() - tv)
        rep.check(f"trend[{label}={u:g},lam={lam:g}]", gap, 3 * se_d, gap <= 3 * se_d)


# ---------------------------------------------------------------------------
# analytic targets
# ---------------------------------------------------------------------------

def creeping_mass(model: LevyModel, x: float, c_minus: float = 1.0) -> float:
    """Excursion-from-supremum mass of {first passage above depth x is continuous}.

    (sigma^2 / 2 c-) (W'(x)^2 / W(x) - W''(x)); together with
    :func:`jump_entry_mass` it adds up to W'(x)/W(x).
    """
    W, dW, d2W = _W(model)
    return model.sigma ** 2 / (2 * c_minus) * (dW(x) ** 2 / W(x) - d2W(x))


def _entry_density(model, x):
    W, dW, _ = _W(model)
    r = dW(x) / W(x)
    return lambda l: dW(x - l) - W(x - l) * r


def jump_entry_mass(model: LevyModel, x: float, c_minus: float = 1.0) -> float:
    """Mass of {depth x first exceeded by a jump} under the supremum excursion measure."""
    if not model.has_jumps:
        return 0.0
    g = _entry_density(model, x)
    return quad(lambda l: g(l) * float(model.tail(l)), 0, x, limit=200)[0] / c_minus


def jump_entry_target(model: LevyModel, x: float, f: BinRate, c_minus: float = 1.0,
                      h: float = 1e-3) -> float:
    """Supremum-excursion functional exp(-int f L_{T_x}) on jump entries above depth x.

    (1/c-) int_0^x dl G(l) int_0^inf pi(-(b + l)) A(b) db, with
    G(l) = W'(x - l) - W(x - l) W'(x)/W(x) and A(b) the Laplace functional
    of the path from depth x + b back to depth x.
    """
    if not model.has_jumps:
        return 0.0
    g = _entry_density(model, x)
    k = f.reflect().shift(-x)                 # rate seen by the SNLP from -b up to 0
    top = max([e - x for e in f.edges() if e > x] + [0.0])
    if f.is_zero or top == 0.0:
        inner = lambda l: float(model.tail(l))
    else:
        yb, Ab = exit_functional_table(model, k, -top - 4 * h, 0.0, h)
        A_far = float(Ab[0])
        dens = lambda y: float(model.levy_density(np.array([y]))[0])

        def inner(l):
            near = quad(lambda b: dens(-(b + l)) * np.interp(-b, yb, Ab), 0, top,
                        points=[e - x for e in f.edges() if 0 < e - x < top], limit=200)[0]
            return near + A_far * float(model.tail(top + l))
    return quad(lambda l: g(l) * inner(l), 0, x, limit=200)[0] / c_minus


def n0_hat_H_gt(model: LevyModel, x: float, y: float, c_plus: float = 1.0, c_minus: float = 1.0) -> float:
    """Mass of excursions from 0 that reach x - y without exceeding x."""
    W, dW, _ = _W(model)
    r = y - x
    total = c_minus * model.sigma ** 2 / 2 * dW(r) / W(r) if r > 0 else 0.0
    if model.has_jumps:
        dens = lambda u: float(model.levy_density(np.array([u]))[0])

        def hfun(z):
            inner = quad(lambda u: dens(u) * W(u + z + r) / W(r), -z - r, -z, limit=200)[0]
            return float(model.tail(z)) - inner

        wx = W(x)
        total += quad(lambda z: (1 - c_plus + c_plus * W(x - z) / wx) * hfun(z), 0, x, limit=200)[0]
    return total


def tau_a_target(model: LevyModel, a: float, z: float, lam: float, c_plus: float = 1.0):
    """(quadrature, closed form) of exp(-int_0^{min(z, a)} u_{z-s}(lam) ds)."""
    W, dW, _ = _W(model)
    lo = z - min(z, a)
    u = lambda y: lam * dW(y) / (c_plus + lam * W(y))
    if z <= 0:
        return 1.0, 1.0
    # substitution y = lo + t^2 absorbs the y^(alpha - 2) singularity at 0
    I = quad(lambda t: 2 * t * u(lo + t * t), 0, math.sqrt(z - lo), limit=200)[0]
    closed = (c_plus + lam * W(lo)) / (c_plus + lam * W(z))
    return math.exp(-I), closed


def _exit_tables(model, f: BinRate, h):
    """A(b) for the positive part and B(u) for the negative part of f."""
    fp, fm = f.restrict(0.0, np.inf), f.restrict(-np.inf, 0.0)
    top = max([e for e in fp.edges() if e > 0] + [0.0])
    bot = min([e for e in fm.edges() if e < 0] + [0.0])
    if fp.is_zero or top == 0:
        A = (np.array([-1.0, 0.0]), np.array([1.0, 1.0]), 0.0)
    else:
        yb, Ab = exit_functional_table(model, fp.reflect(), -top - 4 * h, 0.0, h)
        A = (yb, Ab, top)
    if fm.is_zero or bot == 0:
        B = (np.array([-1.0, 0.0]), np.array([1.0, 1.0]), 0.0)
    else:
        yu, Bu = exit_functional_table(model, fm, bot - 4 * h, 0.0, h)
        B = (yu, Bu, -bot)
    return A, B


def mixed_term(model: LevyModel, f: BinRate, h: float = 1e-3) -> float:
    """Mixed-excursion part of N_0(1 - exp(-int f L)).

    int_0^inf db int_{u<0} Pi(du - b) [1 - A(b) B(u)] with A(b) the
    Laplace functional of the reversed pre-jump piece (the SNLP from -b up
    to 0 with rate f(-.)) and B(u) that of the post-jump piece from u up to
    0.  Both are constant beyond the support of f, which gives closed tails.
    """
    if f.at_plus_inf != 0 or f.at_minus_inf != 0:
        raise ValueError("mixed_term needs a rate with compact support")
    if not model.has_jumps:
        return 0.0
    (ya, Aa, R), (yu, Bu, Ru) = _exit_tables(model, f, h)
    A = lambda b: float(np.interp(-b, ya, Aa)) if b < R else float(Aa[0])
    B = lambda u: float(np.interp(u, yu, Bu)) if u > -Ru else float(Bu[0])
    A_R, B_L = float(Aa[0]), float(Bu[0])
    tail = lambda z: float(model.tail(z))
    dens = lambda u: float(model.levy_density(np.array([u]))[0])
    ptsA = sorted(e for e in f.edges() if 0 < e < R)
    ptsB = sorted(e for e in f.edges() if -Ru < e < 0)

    def I(b):
        # int_{u<0} pi(u - b) (1 - B(u)) du
        out = (1 - B_L) * tail(b + Ru)
        if Ru > 0:
            out += quad(lambda u: dens(u - b) * (1 - B(u)), -Ru, 0,
                        points=ptsB or None, limit=200)[0]
        return out

    sq = lambda F, hi: quad(lambda t: 2 * t * F(t * t), 0, math.sqrt(hi), limit=200,
                            points=[math.sqrt(p) for p in ptsA] or None)[0]
    total = 0.0
    if R > 0:
        total += sq(lambda b: (1 - A(b)) * tail(b), R)
        total += sq(lambda b: A(b) * I(b), R)
    total += (1 - A_R) * quad(tail, R, np.inf, limit=200)[0] if R > 0 or A_R != 1 else 0.0
    if Ru > 0:
        # b >= R: A = A_R, swap the order: int_u (1 - B(u)) Pi(-inf, u - R) du
        near = quad(lambda u: (1 - B(u)) * tail(R - u), -Ru, 0, points=ptsB or None, limit=200)[0]
        far = (1 - B_L) * quad(lambda u: tail(R - u), -np.inf, -Ru, limit=200)[0]
        total += A_R * (near + far)
    return total


def mu_h_target(model: LevyModel, f: BinRate, hlev: float, h: float = 5e-4) -> float:
    """int_0^H db Pi(-inf,-b) [W(H - b)/W(H) - W_fhat(-b, -H)/W_fhat(0, -H)]."""
    W, _, _ = _W(model)
    tab = W_f_table(model, f.reflect(), -hlev, 0.0, h)
    r0 = float(np.interp(0.0, tab.x, tab.values))
    WH = W(hlev)
    g = lambda b: float(model.tail(b)) * (W(hlev - b) / WH - float(np.interp(-b, tab.x, tab.values)) / r0)
    pts = [math.sqrt(e) for e in f.edges() if 0 < e < hlev]
    with warnings.catch_warnings():
        # kinks of the interpolated table trip quad's roundoff detector; panel Gauss-Legendre agrees to 1e-7
        warnings.simplefilter("ignore", IntegrationWarning)
        return quad(lambda t: 2 * t * g(t * t), 0, math.sqrt(hlev), points=pts or None, limit=200)[0]


# ---------------------------------------------------------------------------
# identities
# ---------------------------------------------------------------------------

def verify_rk2_brownian(c=1.0, ys=(-1.0, 1.0), lams=(1.0,), mc: MCSettings = MCSettings(),
                        drift_budget=0.02, trend_at=((1.0, 1.0),)) -> IdentityReport:
    """E[exp(-lam L^y_tau(c))] = exp(-lam c / (1 + 2 lam |y|)) for standard BM."""
    model = brownian()
    rep = _new_report("rk2_brownian", model, dict(c=c, ys=list(ys), lams=list(lams)), mc, drift_budget)
    ys = [float(y) for y in ys]
    stat = lambda p: np.array([occupation_local_time(p, y) for y in ys])
    res = _map_paths(model, LocalTimeAtZero(c), stat, mc, window=_levels_window(ys))
    L, Lh = _stack(res, 0), (_stack(res, 1) if mc.halving else None)
    T = lambda j, lam: math.exp(-lam * c / (1 + 2 * lam * abs(ys[j])))
    names = [f"y={y:g}" for y in ys]
    _laplace_entries(rep, L, Lh, lams, T, names)
    if Lh is not None:
        _trend(rep, L, Lh, [p for p in trend_at if p[0] in ys], ys, T, "y")
    for j, y in enumerate(ys):
        if y > 0 and -y in ys:
            k = ys.index(-y)
            r = float(np.corrcoef(L[:, j], L[:, k])[0, 1])
            lim = 3.0 / math.sqrt(L.shape[0])
            rep.check(f"corr[L^{y:g},L^{-y:g}]", r, lim, abs(r) <= lim)
    return rep.finish()


def verify_rk1_brownian(a=1.0, zs=(0.5, 1.0, 1.5), lams=(1.0, 2.0), mc: MCSettings = MCSettings(),
                        drift_budget=0.02, trend_at=((1.0, 1.0),)) -> IdentityReport:
    """E[exp(-lam L^{a-z}_{tau_a^+})]: (1 + 2 lam z)^-1 for z <= a, BESQ0 continuation beyond."""
    model = brownian()
    rep = _new_report("rk1_brownian", model, dict(a=a, zs=list(zs), lams=list(lams)), mc, drift_budget)
    levels = [a - z for z in zs]
    stat = lambda p: np.array([occupation_local_time(p, y) for y in levels])
    res = _map_paths(model, FirstPassageAbove(a), stat, mc, window=_levels_window(levels))
    L, Lh = _stack(res, 0), (_stack(res, 1) if mc.halving else None)

    def T(j, lam):
        z = zs[j]
        if z <= a:
            return 1.0 / (1 + 2 * lam * z)
        lam2 = lam / (1 + 2 * lam * (z - a))
        return 1.0 / (1 + 2 * a * lam2)

    names = [f"z={z:g}" for z in zs]
    _laplace_entries(rep, L, Lh, lams, T, names)
    if Lh is not None:
        _trend(rep, L, Lh, [p for p in trend_at if p[0] in zs], list(zs), T, "z")
    return rep.finish()


def verify_exponential_local_time(model: LevyModel = None, xs=(0.5, 1.0), consts: CalibrationConstants = None,
                                  mc: MCSettings = MCSettings(), drift_budget=0.05,
                                  ks_p=0.01) -> IdentityReport:
    """Local time at the start level -x before first passage above 0 is Exp with mean W(x)/c+."""
    model = model or brownian()
    consts = consts or CalibrationConstants.fixed()
    W, _, _ = _W(model)
    rep = _new_report("exponential_local_time", model, dict(xs=list(xs), c_plus=consts.c_plus), mc, drift_budget)
    for i, x in enumerate(xs):
        stat = lambda p, x=x: np.array([occupation_local_time(p, -x)])
        res = _map_paths(model, FirstPassageAbove(0.0), stat, mc, start=i * mc.n_paths, x0=-x,
                         window=Window())
        L = _stack(res, 0)[:, 0]
        Lh = _stack(res, 1)[:, 0] if mc.halving else None
        mean = W(x) / consts.c_plus
        m, se = _mean_se(L)
        rep.add(f"mean L,x={x:g}", float(m), float(se), mean, float(Lh.mean()) if Lh is not None else None)
        p = float(stats.kstest(L, "expon", args=(0.0, mean)).pvalue)
        rep.check(f"ks_p[x={x:g}]", p, ks_p, p > ks_p)
    return rep.finish()


def _sup_stop(a):
    return FirstPassageAbove(a)


def _extrapolated(res, extrapolate):
    """Per-path rows, sqrt(dt)-extrapolated from the coupled dt/2 run when asked."""
    M0 = _stack(res, 0)
    if not extrapolate:
        return M0, M0
    M1 = _stack(res, 1)
    r = 2.0 ** -0.5
    return (M1 - r * M0) / (1 - r), M0


def _slope(M, w):
    counts, budget = M[:, :-1], M[:, -1]
    rates = counts.sum(0) / budget.sum()
    s, se = ratio_estimate(counts @ w, budget * (w @ w))
    r2 = 1 - np.sum((rates - s * w) ** 2) / np.sum((rates - rates.mean()) ** 2)
    return s, se, float(r2), rates


def calibrate_constants(model: LevyModel = None, n_paths: int = 10_000, xs=(0.25, 0.5, 1.0, 1.5),
                        c=1.0, a=2.0, mc: MCSettings = None, extrapolate: bool = True,
                        return_details=False):
    """Fit c+ (and c- when sigma > 0) from simulated excursion counts.

    c+: N_0(tau_x^+ < tau_0^-) per unit local time at 0 regressed on 1/W(x).
    c-: creeping first passages of the excursions from the supremum per
    unit supremum gain regressed on (sigma^2/2)(W'^2/W - W'').
    Both fits are through the origin.  Grid counts of excursions reaching
    x are low by O(sqrt(dt)/x), so by default every per-path count is
    extrapolated to dt -> 0 from the coupled dt/2 path.
    """
    model = model or brownian()
    mc = mc or MCSettings(n_paths=n_paths)
    W, dW, d2W = _W(model)
    xs = np.asarray(xs, dtype=float)
    w = np.array([1.0 / W(x) for x in xs])
    if np.ptp(w) == 0:
        raise ValueError("degenerate regression: all W(x) equal")

    def stat_plus(p):
        t = excursions_from_point(p, 0.0, include_open=True)
        up = (t.cls == E_PLUS) | (t.cls == E_MIXED)
        return np.concatenate([[np.sum(up & (t.height >= x)) for x in xs], [t.budget]])

    res = _map_paths(model, LocalTimeAtZero(c), stat_plus, mc, window=_levels_window(xs),
                     halving=extrapolate)
    M, M_raw = _extrapolated(res, extrapolate)
    cp, cp_se, r2p, rates = _slope(M, w)
    details = dict(xs=xs.tolist(), rates_plus=rates.tolist(), w_plus=w.tolist(),
                   c_plus_dt=_slope(M_raw, w)[0], extrapolated=extrapolate)
    cm = cm_se = r2m = None
    if model.sigma > 0:
        K = np.array([model.sigma ** 2 / 2 * (dW(x) ** 2 / W(x) - d2W(x)) for x in xs])

        def stat_minus(p):
            t = excursions_from_supremum(p)
            out = np.zeros(xs.size)
            X, pre = p.values, p.pre
            for a0, a1 in zip(t.start, t.end):
                S = X[a0]
                d = S - X[a0 + 1:a1]
                dp = S - pre[a0 + 1:a1]
                for j, x in enumerate(xs):
                    hit = np.flatnonzero(d >= x)
                    if hit.size and dp[hit[0]] >= x:
                        out[j] += 1
            return np.concatenate([out, [t.budget]])

        res = _map_paths(model, FirstPassageAbove(a), stat_minus, mc, start=mc.n_paths,
                         window=Window((), float(xs.max()) + 0.1), halving=extrapolate)
        M, M_raw = _extrapolated(res, extrapolate)
        s, s_se, r2m, rates_m = _slope(M, K)
        cm, cm_se = 1.0 / s, s_se / s ** 2
        details.update(rates_minus=rates_m.tolist(), k_minus=K.tolist(),
                       c_minus_dt=1.0 / _slope(M_raw, K)[0])
    out = CalibrationConstants(float(cp), cm, float(cp_se), cm_se,
                               "fitted, dt->0 extrapolated" if extrapolate else "fitted", r2p, r2m)
    return (out, details) if return_details else out


def verify_calibration(model: LevyModel = None, xs=(0.25, 0.5, 1.0, 1.5), c=1.0,
                       mc: MCSettings = MCSettings(), tol=0.05, r2_min=0.99) -> IdentityReport:
    """c+ (and c-) fitted on BM land at the anchor 1 within tol, with R^2 > r2_min."""
    model = model or brownian()
    rep = _new_report("calibrate_constants", model, dict(xs=list(xs), c=c, tol=tol), mc, 0.0)
    k, det = calibrate_constants(model, xs=xs, c=c, mc=mc, return_details=True)
    rep.add("c_plus", k.c_plus, k.c_plus_se, 1.0)
    rep.check("|c_plus-1|", abs(k.c_plus - 1), tol, abs(k.c_plus - 1) <= tol)
    rep.check("r2_plus", k.r2_plus, r2_min, k.r2_plus > r2_min)
    if k.c_minus is not None:
        rep.add("c_minus", k.c_minus, k.c_minus_se, 1.0)
        rep.check("|c_minus-1|", abs(k.c_minus - 1), tol, abs(k.c_minus - 1) <= tol)
        rep.check("r2_minus", k.r2_minus, r2_min, k.r2_minus > r2_min)
    else:
        rep.check("c_minus", "unavailable (sigma = 0)", None, True)
    rep.params["details"] = _clean(det)
    return rep.finish()


def _sup_tables(model, a, depth, mc, stat, start=0, halving=None):
    return _map_paths(model, FirstPassageAbove(a), stat, mc, start=start,
                      window=Window((), depth), halving=halving)


def verify_sup_excursion_functionals(model: LevyModel = None, a=2.0, y=1.0, q=2.0,
                                     mc: MCSettings = MCSettings(), drift_budget=0.05) -> IdentityReport:
    """N-bar(H > y) = W'(y)/W(y) and N-bar(1 - e^{-q zeta}) = Phi(q) per unit supremum gain."""
    from .levy_model import phi_right_inverse

    model = model or brownian()
    W, dW, _ = _W(model)
    rep = _new_report("sup_excursion_functionals", model, dict(a=a, y=y, q=q), mc, drift_budget)

    def stat(p):
        t = excursions_from_supremum(p)
        return np.array([np.sum(t.height > y), np.sum(1 - np.exp(-q * t.zeta)), t.budget])

    res = _sup_tables(model, a, y + 0.1, mc, stat)
    for k, (name, T) in enumerate([(f"N(H>{y:g})", dW(y) / W(y)),
                                   (f"N(1-exp(-{q:g} zeta))", phi_right_inverse(model, q))]):
        M = _stack(res, 0)
        v, se = ratio_estimate(M[:, k], M[:, 2])
        vh = None
        if mc.halving:
            Mh = _stack(res, 1)
            vh = float(Mh[:, k].sum() / Mh[:, 2].sum())
        rep.add(name, v, se, T, vh)
    return rep.finish()


def verify_u_y(model: LevyModel = None, ys=(0.5, 1.0, 1.5), lams=(0.5, 1.0, 2.0), a=2.0,
               consts: CalibrationConstants = None, mc: MCSettings = MCSettings(),
               drift_budget=0.05, probe=(1.0, 100.0, 0.02)) -> IdentityReport:
    """N-bar(1 - exp(-lam L^y)) = lam W'(y) / (c+ + lam W(y))."""
    model = model or brownian()
    consts = consts or CalibrationConstants.fixed()
    W, dW, _ = _W(model)
    ys = [float(y) for y in ys]
    rep = _new_report("u_y", model, dict(ys=ys, lams=list(lams), a=a, c_plus=consts.c_plus,
                                         probe=list(probe) if probe else None), mc, drift_budget)
    grid = [(y, lam) for y in ys for lam in lams]
    py, plam, ptol = probe if probe else (None, None, None)

    def stat(p):
        t = excursions_from_supremum(p)
        L = excursion_level_local_times(t, ys)
        out = [np.sum(1 - np.exp(-lam * L[:, ys.index(y)])) for y, lam in grid]
        if probe:
            out.append(np.sum(1 - np.exp(-plam * L[:, ys.index(py)])))
        return np.array(out + [t.budget])

    res = _sup_tables(model, a, max(ys) + 0.1, mc, stat)
    M = _stack(res, 0)
    Mh = _stack(res, 1) if mc.halving else None
    for k, (y, lam) in enumerate(grid):
        v, se = ratio_estimate(M[:, k], M[:, -1])
        vh = float(Mh[:, k].sum() / Mh[:, -1].sum()) if Mh is not None else None
        rep.add(f"y={y:g},lam={lam:g}", v, se, lam * dW(y) / (consts.c_plus + lam * W(y)), vh)
    if probe:
        v, _ = ratio_estimate(M[:, len(grid)], M[:, -1])
        lim = dW(py) / W(py)
        rel = abs(v - lim) / lim
        rep.check(f"probe[y={py:g},lam={plam:g}] vs W'/W", rel, ptol, rel <= ptol)
    return rep.finish()


def verify_tau_a_levy_measure(model: LevyModel = None, a=1.0, lam=1.0, zs=(0.5, 1.5),
                              consts: CalibrationConstants = None, mc: MCSettings = MCSettings(),
                              drift_budget=0.03) -> IdentityReport:
    """E[exp(-lam L^{a-z}_{tau_a^+})] = exp(-int_0^{z ^ a} u_{z-s}(lam) ds)."""
    model = model or STABLE15
    consts = consts or CalibrationConstants.fixed()
    rep = _new_report("tau_a_levy_measure", model, dict(a=a, lam=lam, zs=list(zs), c_plus=consts.c_plus),
                      mc, drift_budget)
    levels = [a - z for z in zs]
    stat = lambda p: np.array([occupation_local_time(p, y) for y in levels])
    res = _map_paths(model, FirstPassageAbove(a), stat, mc, window=_levels_window(levels))
    L, Lh = _stack(res, 0), (_stack(res, 1) if mc.halving else None)
    for j, z in enumerate(zs):
        Tq, Tc = tau_a_target(model, a, z, lam, consts.c_plus)
        rep.check(f"quadrature_vs_closed[z={z:g}]", abs(Tq - Tc), 1e-6, abs(Tq - Tc) <= 1e-6)
        v = np.exp(-lam * L[:, j])
        m, se = _mean_se(v)
        rep.add(f"z={z:g}", float(m), float(se), Tq, float(np.exp(-lam * Lh[:, j]).mean()) if Lh is not None else None)
    return rep.finish()


def verify_v_xy(model: LevyModel = None, x=0.5, y=1.0, lam=1.0, c=1.0,
                consts: CalibrationConstants = None, mc: MCSettings = MCSettings(),
                drift_budget=0.02) -> IdentityReport:
    """N_0((1 - exp(-lam L^{x-y})); never above x) = N^0(H > y) lam W(y-x) / (c+ + lam W(y-x))."""
    model = model or CP_BM
    consts = consts or CalibrationConstants.fixed()
    W, _, _ = _W(model)
    rep = _new_report("v_xy", model, dict(x=x, y=y, lam=lam, c=c, c_plus=consts.c_plus,
                                          c_minus=consts.c_minus), mc, drift_budget)
    lev = x - y

    def stat(p):
        t = excursions_from_point(p, 0.0, include_open=True)
        L = excursion_level_local_times(t, [lev])[:, 0]
        ok = (t.cls == E_MINUS) | (t.height < x)
        # reaching is read off the running minimum; L > 0 would also count near misses within eps
        lo = np.array([p.values[a:b + 1].min() for a, b in zip(t.start, t.end)]) if len(t) else np.zeros(0)
        return np.array([np.sum((1 - np.exp(-lam * L)) * ok), np.sum((lo < lev) * ok), t.budget])

    res = _map_paths(model, LocalTimeAtZero(c), stat, mc, window=_levels_window([x, lev]))
    M = _stack(res, 0)
    Mh = _stack(res, 1) if mc.halving else None
    cm = consts.c_minus if consts.c_minus is not None else 1.0
    mass = n0_hat_H_gt(model, x, y, consts.c_plus, cm)
    T = mass * lam * W(y - x) / (consts.c_plus + lam * W(y - x))
    v, se = ratio_estimate(M[:, 0], M[:, 2])
    vh = float(Mh[:, 0].sum() / Mh[:, 2].sum()) if Mh is not None else None
    rep.add(f"v(x={x:g},y={y:g},lam={lam:g})", v, se, T, vh)
    v2, se2 = ratio_estimate(M[:, 1], M[:, 2])
    vh2 = float(Mh[:, 1].sum() / Mh[:, 2].sum()) if Mh is not None else None
    rep.add(f"N0(reach {lev:g}, below {x:g})", v2, se2, mass, vh2)
    return rep.finish()


def verify_creeping(model: LevyModel = None, zs=(0.25, 0.5, 1.0), mc: MCSettings = MCSettings(),
                    drift_budget=0.03) -> IdentityReport:
    """P_z(first passage below 0 is continuous) = (sigma^2/2) W'(z)."""
    model = model or CP_BM
    if not model.sigma > 0:
        raise ValueError("creeping check needs sigma > 0")
    _, dW, _ = _W(model)
    rep = _new_report("creeping", model, dict(zs=list(zs)), mc, drift_budget)
    stat = lambda p: np.array([float(p.pre[-1] <= 0.0)])
    for i, z in enumerate(zs):
        res = _map_paths(model, FirstPassageBelow(0.0), stat, mc, start=i * mc.n_paths, x0=z,
                         window=Window())
        a = _stack(res, 0)[:, 0]
        v, se = _mean_se(a)
        T = model.sigma ** 2 / 2 * dW(z)
        vh = float(_stack(res, 1).mean()) if mc.halving else None
        rep.add(f"z={z:g}", float(v), float(se), T, vh)
        if mc.halving and z == min(zs):
            # near 0 the grid misses most short dips below the level: halving must help
            b = _stack(res, 1)[:, 0]
            se_d = float(np.std(a - b, ddof=1) / np.sqrt(a.size))
            gap = abs(b.mean() - T) - abs(a.mean() - T)
            rep.check(f"trend[z={z:g}]", gap, 3 * se_d, gap <= 3 * se_d)
    return rep.finish()


def _bins_window(f: BinRate, extra=()):
    iv = [(lo, hi) for lo, hi, _ in f.bins] + [(y, y) for y in extra]
    return Window(tuple((float(a), float(b)) for a, b in iv))


def verify_tau_c_laplace(model: LevyModel = None, f="bin:0.2:1:1+bin:-1:-0.2:1", cs=(0.5, 1.0, 2.0),
                         mc: MCSettings = MCSettings(), drift_budget=0.02) -> IdentityReport:
    """E[exp(-int f L_tau(c))] = exp(-c N_0(1 - exp(-int f L))).

    The mixed-excursion part of N_0 is a quadrature; the one-signed parts
    are read from the excursions of the c = max(cs) run (a pool
    independent of the smaller c runs).  Also checks linearity of the
    log-Laplace in c and the two-fold convolution identity.
    """
    model = model or CP_BM
    f = parse_rate(f) if isinstance(f, str) else f
    rep = _new_report("tau_c_laplace", model, dict(f=f.spec(), cs=list(cs)), mc, drift_budget)

    def stat(p):
        t = excursions_from_point(p, 0.0, include_open=True)
        x, hold = p.values, p.hold
        cum = np.concatenate(([0.0], np.cumsum(f(x) * hold)))
        F = 1 - np.exp(-(cum[t.end] - cum[t.start]))
        out = [math.exp(-integral_f_L(p, f))]
        out += [np.sum(F * (t.cls == E_PLUS)), np.sum(F * (t.cls == E_MINUS)), t.budget]
        return np.array(out)

    est = {}
    for i, c in enumerate(cs):
        res = _map_paths(model, LocalTimeAtZero(c), stat, mc, start=i * mc.n_paths,
                         window=_bins_window(f))
        est[c] = (_stack(res, 0), _stack(res, 1) if mc.halving else None)
    cmax = max(cs)
    P = est[cmax][0]
    one, one_se = ratio_estimate(P[:, 1] + P[:, 2], P[:, 3])
    mixed = mixed_term(model, f)
    rep.params["mixed_term"] = mixed
    rep.params["one_signed_term"] = one
    for c in cs:
        M, Mh = est[c]
        m, se = _mean_se(M[:, 0])
        T = math.exp(-c * (one + mixed))
        extra = T * c * one_se if c != cmax else 0.0
        if c == cmax:
            continue          # its own excursions fixed the one-signed part
        rep.add(f"c={c:g}", float(m), float(se), T, float(Mh[:, 0].mean()) if Mh is not None else None,
                extra_se=extra)
    if f.is_zero:
        return rep.finish()
    # log-Laplace linear in c
    ell = np.array([-math.log(est[c][0][:, 0].mean()) for c in cs])
    ell_se = np.array([_mean_se(est[c][0][:, 0])[1] / est[c][0][:, 0].mean() for c in cs])
    cv = np.asarray(cs, dtype=float)
    wts = 1 / ell_se ** 2
    kappa = float(np.sum(wts * cv * ell) / np.sum(wts * cv * cv))
    resid = (ell - kappa * cv) / ell_se
    rep.params["kappa_fit"] = kappa
    rep.check("linear_in_c max|resid/se|", float(np.max(np.abs(resid))), Z_MAX,
              bool(np.all(np.abs(resid) <= Z_MAX)))
    if 1.0 in cs and 0.5 in cs:
        m1, s1 = _mean_se(est[1.0][0][:, 0])
        mh, sh = _mean_se(est[0.5][0][:, 0])
        zc = float((m1 - mh ** 2) / math.sqrt(s1 ** 2 + (2 * mh * sh) ** 2))
        rep.check("convolution z", zc, Z_MAX, abs(zc) <= Z_MAX)
    return rep.finish()


def verify_mu_c_restriction(model: LevyModel = None, c=1.0, hlev=1.0, f="bin:0.3:0.7:2",
                            mc: MCSettings = MCSettings(), drift_budget=0.02) -> IdentityReport:
    """Rate of (1 - exp(-int f L)) over excursions from 0 that stay below hlev (no Gaussian part)."""
    model = model or STABLE15
    f = parse_rate(f) if isinstance(f, str) else f
    rep = _new_report("mu_c_restriction", model, dict(c=c, h=hlev, f=f.spec()), mc, drift_budget)

    def stat(p):
        t = excursions_from_point(p, 0.0, include_open=True)
        cum = np.concatenate(([0.0], np.cumsum(f(p.values) * p.hold)))
        F = 1 - np.exp(-(cum[t.end] - cum[t.start]))
        low = (t.cls == E_MINUS) | (t.height < hlev)
        return np.array([np.sum(F * low), t.budget])

    res = _map_paths(model, LocalTimeAtZero(c), stat, mc, window=_bins_window(f, (hlev,)))
    M = _stack(res, 0)
    v, se = ratio_estimate(M[:, 0], M[:, 1])
    vh = None
    if mc.halving:
        Mh = _stack(res, 1)
        vh = float(Mh[:, 0].sum() / Mh[:, 1].sum())
    rep.add(f"h={hlev:g}", v, se, mu_h_target(model, f, hlev), vh)
    return rep.finish()


def verify_branching_identity(model: LevyModel = None, x=0.5, y=1.0, lam=1.0, beta=1.0, a=2.0,
                              mc: MCSettings = MCSettings(), drift_budget=0.05) -> IdentityReport:
    """N-bar(1 - e^{-lam L^x - beta L^y}) = N-bar(1 - e^{-(lam + u) L^x - beta L^y_{T_x}}).

    u = u_{x;y}(beta) is the rate, per unit local time at depth x, of
    (1 - e^{-beta L^y}) over the excursions away from depth x after T_x.
    Both sides and u come from the same supremum-excursion pool.
    """
    model = model or brownian()
    if not 0 < x < y:
        raise ValueError("need 0 < x < y")
    rep = _new_report("branching_identity", model, dict(x=x, y=y, lam=lam, beta=beta, a=a), mc, drift_budget)

    def stat(p):
        t = excursions_from_supremum(p)
        eps = p.eps
        X, pre, hold = p.values, p.pre, p.hold
        rows = []          # (Lx, Ly, LyTx) per excursion reaching depth x
        u_num = 0.0
        for a0, a1 in zip(t.start, t.end):
            S = X[a0]
            d = S - X[a0 + 1:a1]
            if d.size == 0 or d.max() < x - eps:
                continue
            dpre = S - pre[a0 + 1:a1]
            prev = np.concatenate(([0.0], d[:-1]))
            hd = hold[a0 + 1:a1]
            wx = np.where(np.abs(d - x) < eps, hd, 0.0) / (2 * eps)
            wy = np.where(np.abs(d - y) < eps, hd, 0.0) / (2 * eps)
            # continuous crossings of depth x: from prev to dpre
            cross = (prev - x) * (dpre - x) <= 0
            cross &= ~((prev == x) & (dpre == x))
            ck = np.flatnonzero(cross)
            if ck.size == 0:
                Tx = d.size
            else:
                Tx = int(ck[0])
            seg = np.cumsum(cross)
            after = np.arange(d.size) >= Tx
            Lseg = np.bincount(seg[after], weights=wy[after]) if after.any() else np.zeros(1)
            u_num += float(np.sum(1 - np.exp(-beta * Lseg)))
            rows.append((wx.sum(), wy.sum(), wy[:Tx].sum()))
        R = np.array(rows).reshape(-1, 3)
        return R, u_num, t.budget

    res = _sup_tables(model, a, y + 0.1, mc, stat)

    def assemble(which):
        parts = [r[which] for r in res]
        Lx_tot = np.array([R[:, 0].sum() for R, _, _ in parts])
        u_num = np.array([u for _, u, _ in parts])
        budget = np.array([b for _, _, b in parts])
        u, u_se = ratio_estimate(u_num, Lx_tot) if Lx_tot.sum() > 0 else (0.0, 0.0)
        lhs = np.array([np.sum(1 - np.exp(-lam * R[:, 0] - beta * R[:, 1])) for R, _, _ in parts])
        rhs = np.array([np.sum(1 - np.exp(-(lam + u) * R[:, 0] - beta * R[:, 2])) for R, _, _ in parts])
        dr = np.array([np.sum(R[:, 0] * np.exp(-(lam + u) * R[:, 0] - beta * R[:, 2])) for R, _, _ in parts])
        return lhs, rhs, budget, u, u_se, dr.sum() / budget.sum()

    lhs, rhs, budget, u, u_se, drdu = assemble(0)
    L_, _ = ratio_estimate(lhs, budget)
    R_, _ = ratio_estimate(rhs, budget)
    d_, d_se = ratio_estimate(lhs - rhs, budget)
    vh = None
    if mc.halving:
        lh, rh, bh, *_ = assemble(1)
        vh = float((lh.sum() - rh.sum()) / bh.sum())
    rep.params.update(u=u, u_se=u_se, lhs=L_, rhs=R_)
    rep.add("lhs-rhs", d_, d_se, 0.0, vh, extra_se=drdu * u_se)
    return rep.finish()


def verify_first_passage_prelude(model: LevyModel = None, x=0.5, f="bin:0.6:1.0:2", a=2.0,
                                 consts: CalibrationConstants = None, mc: MCSettings = MCSettings(),
                                 drift_budget=0.02) -> IdentityReport:
    """Jump entries above depth x: N-bar(exp(-int f L_{T_x}); jump entry) vs its quadrature."""
    model = model or CP_BM
    consts = consts or CalibrationConstants.fixed()
    if consts.c_minus is None:
        raise ValueError("c_minus unavailable")
    f = parse_rate(f) if isinstance(f, str) else f
    rep = _new_report("first_passage_prelude", model, dict(x=x, f=f.spec(), a=a,
                                                           c_minus=consts.c_minus), mc, drift_budget)
    depth = max([x] + f.edges()) + 0.1

    def stat(p):
        t = excursions_from_supremum(p)
        X, pre, hold = p.values, p.pre, p.hold
        num0 = num = 0.0
        for a0, a1 in zip(t.start, t.end):
            S = X[a0]
            d = S - X[a0 + 1:a1]
            hit = np.flatnonzero(d >= x)
            if hit.size == 0:
                continue
            i = int(hit[0])
            dp = S - pre[a0 + 1:a1]
            if dp[i] >= x:
                continue               # crept over x
            prev = d[:-1]
            back = np.flatnonzero((prev[i:] > x) & (dp[i + 1:] <= x))
            k = i + 1 + int(back[0]) if back.size else d.size
            seg = slice(i, k)
            num0 += 1.0
            num += math.exp(-float(np.sum(f(d[seg]) * hold[a0 + 1:a1][seg])))
        return np.array([num, num0, t.budget])

    res = _sup_tables(model, a, depth, mc, stat)
    M = _stack(res, 0)
    Mh = _stack(res, 1) if mc.halving else None
    for k, (name, T) in enumerate([(f"f={f.spec()}", jump_entry_target(model, x, f, consts.c_minus)),
                                   ("f=0", jump_entry_target(model, x, BinRate(), consts.c_minus))]):
        v, se = ratio_estimate(M[:, k], M[:, 2])
        vh = float(Mh[:, k].sum() / Mh[:, 2].sum()) if Mh is not None else None
        rep.add(name, v, se, T, vh)
    return rep.finish()


def verify_overshoot_law(model: LevyModel = None, c=2.0, mc: MCSettings = MCSettings(n_paths=6000),
                         p_min=0.01, min_count=10_000, grid=10) -> IdentityReport:
    """Mixed excursions of CP-Exp models: O ~ Exp(theta), -U ~ Exp(theta), independent."""
    model = model or CP_BM
    if not isinstance(model.jumps, CompoundPoissonExp):
        raise ValueError("overshoot law check is for CP-Exp models")
    th = model.jumps.scale
    rep = _new_report("overshoot_law", model, dict(c=c, grid=grid), mc, 0.0)

    def stat(p):
        t = excursions_from_point(p, 0.0, include_open=True)
        m = t.cls == E_MIXED
        return np.stack([t.overshoot[m], t.undershoot[m]], axis=1), t.budget

    res = _map_paths(model, LocalTimeAtZero(c), stat, mc, window=Window(), halving=False)
    OU = np.concatenate([r[0][0] for r in res])
    budget = sum(r[0][1] for r in res)
    O, U = OU[:, 0], OU[:, 1]
    n = O.size
    rep.check("E+- count", n, min_count, n >= min_count)
    rep.check("signs O>0,U<0", int(np.sum((O <= 0) | (U >= 0))), 0, bool(np.all(O > 0) and np.all(U < 0)))
    rate = n / budget
    rep.add("E+- rate", rate, math.sqrt(n) / budget, model.jumps.rate / th)
    pO = float(stats.kstest(O, "expon", args=(0, 1 / th)).pvalue)
    pU = float(stats.kstest(-U, "expon", args=(0, 1 / th)).pvalue)
    rep.check("ks_p[O]", pO, p_min, pO > p_min)
    rep.check("ks_p[U]", pU, p_min, pU > p_min)
    qa = np.clip((1 - np.exp(-th * O)) * grid, 0, grid - 1e-9).astype(int)
    qb = np.clip((1 - np.exp(th * U)) * grid, 0, grid - 1e-9).astype(int)
    obs = np.bincount(qa * grid + qb, minlength=grid * grid)
    chi = stats.chisquare(obs)
    rep.check("chi2_p[O,U]", float(chi.pvalue), p_min, chi.pvalue > p_min)
    rep.n_paths = mc.n_paths
    return rep.finish()


def verify_script_W_laplace(model: LevyModel = None, f="const:2", xs=(0.5, 1.0),
                            mc: MCSettings = MCSettings(), drift_budget=0.02) -> IdentityReport:
    """E_0[exp(-int_0^{tau_x^+} f(X_s) ds)] = script-W_f(x).

    When inf f > 0 paths are cut at time 40 / inf f, where the functional
    is below e^-40.
    """
    model = model or brownian()
    f = parse_rate(f) if isinstance(f, str) else f
    fmin = f.const + sum(min(b, 0.0) for *_, b in f.bins)
    cut = 40.0 / fmin if fmin > 0 and not f.bins else None
    rep = _new_report("script_W_laplace", model, dict(f=f.spec(), xs=list(xs)), mc, drift_budget)
    for i, x in enumerate(xs):
        stat = lambda p: np.array([math.exp(-integral_f_L(p, f))])
        win = _bins_window(f) if f.const == 0 else None
        res = _map_paths(model, FirstPassageAbove(x), stat, mc, start=i * mc.n_paths, window=win,
                         max_time=cut)
        v, se = _mean_se(_stack(res, 0)[:, 0])
        vh = float(_stack(res, 1).mean()) if mc.halving else None
        rep.add(f"x={x:g}", float(v), float(se), float(eval_script_W(model, f, x)), vh)
    return rep.finish()


# ---------------------------------------------------------------------------
# marked construction
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _stream(seed, r, k):
    np.random.seed((seed * 1000003 + r * 7 + k) % 4294967296)


@numba.njit(cache=True)
def _drop(out, r, levels, eps, lev, w):
    for j in range(levels.size):
        if abs(lev - levels[j]) < eps:
            out[r, j] += w / (2 * eps)


@numba.njit(cache=True)
def _ladder(out, r, levels, eps, lo, hi, rate):
    for j in range(levels.size):
        a = max(lo, levels[j] - eps)
        b = min(hi, levels[j] + eps)
        if b > a:
            out[r, j] += rate * (b - a) / (2 * eps)


@numba.njit(cache=True)
def _reconstruct(n_rep, seed, c, r_pm, O_pool, U_pool, r_minus, r_bar, r_lad, dep, hold, off, big,
                 levels, eps):
    """Rebuild L^y at ``levels`` for n_rep copies of tau(c).

    Stream 0 draws the mixed pairs (O, U) and the excursions that start
    below 0; stream 1 fills negative levels, stream 2 positive ones, so
    given the pairs the two sides use disjoint randomness.
    """
    nl = levels.size
    out = np.zeros((n_rep, nl))
    n_pool = off.size - 1
    ylo = min(levels.min(), 0.0) - eps
    yhi = max(levels.max(), 0.0) + eps
    for r in range(n_rep):
        _stream(seed, r, 0)
        npairs = np.random.poisson(c * r_pm)
        pair = np.empty(npairs, np.int64)
        for i in range(npairs):
            pair[i] = np.random.randint(U_pool.size)
        nm = np.random.poisson(c * r_minus)
        below = np.empty(nm, np.int64)
        for i in range(nm):
            below[i] = big[np.random.randint(big.size)]
        if ylo < -eps:
            # post-jump pieces climb from U back to 0
            _stream(seed, r, 1)
            for i in range(npairs):
                U = U_pool[pair[i]]
                _ladder(out, r, levels, eps, U, 0.0, r_lad)
                s_lo = max(U, ylo)
                K = np.random.poisson(r_bar * (-s_lo))
                for _k in range(K):
                    s = s_lo * np.random.random()
                    e = np.random.randint(n_pool)
                    for q in range(off[e], off[e + 1]):
                        _drop(out, r, levels, eps, s - dep[q], hold[q])
            for e in below:
                for q in range(off[e], off[e + 1]):
                    _drop(out, r, levels, eps, -dep[q], hold[q])
        if yhi > eps:
            # pre-jump pieces, reversed: dual paths from O down to 0
            _stream(seed, r, 2)
            for i in range(npairs):
                O = O_pool[pair[i]]
                _ladder(out, r, levels, eps, 0.0, O, r_lad)
                s_hi = min(O, yhi)
                K = np.random.poisson(r_bar * s_hi)
                for _k in range(K):
                    s = s_hi * np.random.random()
                    e = np.random.randint(n_pool)
                    for q in range(off[e], off[e + 1]):
                        _drop(out, r, levels, eps, s + dep[q], hold[q])
    return out


def verify_marked_construction(model: LevyModel = None, c=1.0, levels=(-0.25, -0.5, -1.0),
                               lams=(1.0, 4.0), a=2.0, mc: MCSettings = MCSettings(),
                               n_pool: Optional[int] = None, return_fields=False):
    """Field of L_tau(c) rebuilt from excursion pools vs direct simulation.

    A mixed excursion splits at its crossing jump.  After the jump the
    path climbs from U back to 0: supremum excursions hung at levels s in
    (U, 0) at the pool's rate per unit supremum gain, plus the ladder
    occupation.  Before the jump, read backwards from O, it is the dual
    path, whose supremum excursions at s in (0, O) reach level s + depth.
    Excursions that start below 0 enter as one supremum excursion at s = 0.
    Mixed pairs come from an independent tau(c) run, supremum excursions
    from runs to tau_a^+.  Both sides are Monte Carlo: two-sample z-tests.
    With no Gaussian part, excursions that start above 0 and return
    continuously do not exist, so none are added on the positive side.
    """
    model = model or STABLE15
    levels = np.array(sorted(levels), dtype=float)
    n_pool = mc.n_paths if n_pool is None else n_pool
    eps = default_eps(model, mc.dt)
    rep = _new_report("marked_construction", model, dict(c=c, levels=levels.tolist(), lams=list(lams),
                                                         a=a, n_pool=n_pool), mc, 0.0)
    win = _levels_window(levels)
    direct = _stack(_map_paths(model, LocalTimeAtZero(c),
                               lambda p: np.array([occupation_local_time(p, y) for y in levels]),
                               mc, window=win, halving=False), 0)

    def pm_stat(p):
        t = excursions_from_point(p, 0.0, include_open=True)
        m = t.cls == E_MIXED
        return t.overshoot[m], t.undershoot[m], int(np.sum(t.cls == E_MINUS)), t.budget

    pm = [r[0] for r in _map_paths(model, LocalTimeAtZero(c), pm_stat, mc, start=mc.n_paths,
                                   n=n_pool, window=win, halving=False)]
    O_pool = np.concatenate([q[0] for q in pm])
    U_pool = np.concatenate([q[1] for q in pm])
    B0 = sum(q[3] for q in pm)
    r_pm, r_minus = U_pool.size / B0, sum(q[2] for q in pm) / B0
    dmax = float(np.abs(levels).max()) + 2 * eps
    g = eps / 16

    def sup_stat(p):
        # depths are pooled on a grid of eps/16 (float32) to keep 10^4-path pools in memory
        t = excursions_from_supremum(p)
        X, hold = p.values, p.hold
        deps, holds, sizes, H = [], [], [], []
        ladder = np.ones(X.size, bool)
        for a0, a1 in zip(t.start, t.end):
            ladder[a0 + 1:a1] = False
            d = X[a0] - X[a0 + 1:a1]
            keep = d <= dmax
            cell, inv = np.unique(np.round(d[keep] / g).astype(np.int64), return_inverse=True)
            deps.append((cell * g).astype(np.float32))
            holds.append(np.bincount(inv, weights=hold[a0 + 1:a1][keep], minlength=cell.size).astype(np.float32))
            sizes.append(int(cell.size))
            H.append(float(d.max()))
        lad = float(hold[ladder].sum())
        cat = lambda v: np.concatenate(v) if v else np.zeros(0, np.float32)
        return cat(deps), cat(holds), np.array(sizes, dtype=np.int64), np.array(H), lad, t.budget

    sp = [r[0] for r in _map_paths(model, FirstPassageAbove(a), sup_stat, mc, start=mc.n_paths + n_pool,
                                   n=n_pool, window=Window((), dmax + 0.05), halving=False)]
    dep = np.concatenate([q[0] for q in sp])
    hold = np.concatenate([q[1] for q in sp])
    sizes = np.concatenate([q[2] for q in sp])
    H = np.concatenate([q[3] for q in sp])
    B1 = sum(q[5] for q in sp)
    off = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
    r_bar, r_lad = sizes.size / B1, sum(q[4] for q in sp) / B1
    big = np.flatnonzero(H >= eps).astype(np.int64)
    if U_pool.size == 0 or big.size == 0:
        raise RuntimeError("empty excursion pool; raise n_pool")
    rec = _reconstruct(direct.shape[0], mc.seed + 7919, c, r_pm, O_pool, U_pool, r_minus, r_bar, r_lad,
                       dep, hold, off, big, levels, eps)
    rep.params.update(rate_mixed=r_pm, rate_minus=r_minus, rate_sup=r_bar, ladder_rate=r_lad,
                      pool_mixed=int(U_pool.size), pool_sup=int(sizes.size))
    for j, y in enumerate(levels):
        for name, fn in [("mean", lambda v: v)] + [(f"laplace lam={lam:g}", lambda v, lam=lam: np.exp(-lam * v))
                                                    for lam in lams]:
            md, sd = _mean_se(fn(direct[:, j]))
            mr, sr = _mean_se(fn(rec[:, j]))
            rep.add(f"y={y:g},{name}", float(md), float(sd), float(mr), extra_se=float(sr))
    rep.finish()
    return (rep, direct, rec) if return_fields else rep


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

REGISTRY: Dict[str, Callable[..., IdentityReport]] = {
    "rk2_brownian": verify_rk2_brownian,
    "rk1_brownian": verify_rk1_brownian,
    "tau_c_laplace": verify_tau_c_laplace,
    "marked_construction": verify_marked_construction,
    "tau_a_levy_measure": verify_tau_a_levy_measure,
    "u_y": verify_u_y,
    "exponential_local_time": verify_exponential_local_time,
    "branching_identity": verify_branching_identity,
    "v_xy": verify_v_xy,
    "first_passage_prelude": verify_first_passage_prelude,
    "creeping": verify_creeping,
    "mu_c_restriction": verify_mu_c_restriction,
    "calibrate_constants": verify_calibration,
    "sup_excursion_functionals": verify_sup_excursion_functionals,
    "overshoot_law": verify_overshoot_law,
    "script_W_laplace": verify_script_W_laplace,
}


def run_identity(ident: str, mc: MCSettings = MCSettings(), model: Optional[LevyModel] = None,
                 **params) -> IdentityReport:
    """Run a registered identity; ``model`` is passed only to identities that take one."""
    if ident not in REGISTRY:
        raise KeyError(f"unknown identity {ident!r}")
    fn = REGISTRY[ident]
    if model is not None:
        params["model"] = model
    return fn(mc=mc, **params)
