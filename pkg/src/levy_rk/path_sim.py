"""Euler simulation of spectrally negative Levy paths.

Fine steps add a Gaussian increment and then the jumps that fell in the
step (compound Poisson exponential jumps, or the stable jumps above a
cutoff ``delta`` with the smaller ones replaced by a Gaussian of equal
variance).  Far away from every level the caller cares about (the
"window") the engine takes one large step whose length is tied to the
distance, ending early at the first big jump so that jump times stay exact.

A simulation at step ``dt`` can carry a coupled path at ``dt/2``: the
engine runs at ``dt/2`` and the ``dt`` path is its subsample, so both
share the same random numbers (dt-halving checks with common random
numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

import numba
import numpy as np

from .levy_model import CompoundPoissonExp, LevyModel, StableAlpha, check_hypotheses

__all__ = [
    "SimConfig", "FirstPassageAbove", "FirstPassageBelow", "FirstHit",
    "LocalTimeAtZero", "FixedHorizon", "Window", "SimPath", "SimResult",
    "MaxTimeExceeded", "simulate_until", "batch_simulate", "stable_cutoff",
    "default_eps",
]

FAM_BM, FAM_CP, FAM_ST = 0, 1, 2
STOP_ABOVE, STOP_BELOW, STOP_HIT, STOP_LT, STOP_HORIZON = 0, 1, 2, 3, 4
ST_RUNNING, ST_FIRED, ST_MAXTIME, ST_MAXPOINTS = -1, 0, 1, 2


class MaxTimeExceeded(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# stop rules and configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FirstPassageAbove:
    a: float
    code = STOP_ABOVE

    @property
    def param(self):
        return self.a


@dataclass(frozen=True)
class FirstPassageBelow:
    b: float
    code = STOP_BELOW

    @property
    def param(self):
        return self.b


@dataclass(frozen=True)
class FirstHit:
    x: float
    code = STOP_HIT

    @property
    def param(self):
        return self.x


@dataclass(frozen=True)
class LocalTimeAtZero:
    c: float
    level: float = 0.0
    code = STOP_LT

    @property
    def param(self):
        return self.c


@dataclass(frozen=True)
class FixedHorizon:
    T: float
    code = STOP_HORIZON

    @property
    def param(self):
        return self.T


StopRule = Union[FirstPassageAbove, FirstPassageBelow, FirstHit, LocalTimeAtZero, FixedHorizon]


@dataclass(frozen=True)
class Window:
    """Region where the engine must use fine steps.

    ``intervals``: static (lo, hi) pairs.  ``sup_depth``: also keep fine
    steps while S - X <= sup_depth.  Outside, large steps are allowed.
    """

    intervals: tuple = ()
    sup_depth: float = -1.0


def stable_cutoff(alpha: float) -> float:
    """Small-jump cutoff delta = (0.01 alpha Gamma(2 - alpha))^(1/(2 - alpha))."""
    return (0.01 * alpha * math.gamma(2.0 - alpha)) ** (1.0 / (2.0 - alpha))


def _small_jump_var(model: LevyModel, delta: float) -> float:
    j = model.jumps
    if isinstance(j, StableAlpha):
        return j.density_const * delta ** (2 - j.alpha) / (2 - j.alpha)
    return 0.0


def default_eps(model: LevyModel, dt: float, delta: Optional[float] = None) -> float:
    """eps = 5 sigma_eff sqrt(dt), sigma_eff^2 = sigma^2 + small-jump variance rate."""
    if delta is None and isinstance(model.jumps, StableAlpha):
        delta = stable_cutoff(model.jumps.alpha)
    s2 = model.sigma ** 2 + (_small_jump_var(model, delta) if delta else 0.0)
    return 5.0 * math.sqrt(s2 * dt)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    seed: int = 0
    path_index: int = 0
    max_time: float = 1e10
    stable_cutoff: Optional[float] = None
    halving: bool = False          # also produce the coupled dt/2 path
    window: Optional[Window] = None
    max_points: int = 20_000_000
    x0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.max_time > 0:
            raise ValueError("max_time must be > 0")
        if self.stable_cutoff is not None and not self.stable_cutoff > 0:
            raise ValueError("stable_cutoff must be > 0")

    def delta(self, model: LevyModel) -> float:
        if not isinstance(model.jumps, StableAlpha):
            return 0.0
        return self.stable_cutoff or stable_cutoff(model.jumps.alpha)


# ---------------------------------------------------------------------------
# numba kernel
# ---------------------------------------------------------------------------

RNG_BLOCK = 1 << 16
NEED_N, NEED_U, NEED_SPACE, FINISHED = 1, 2, 3, 0
# state vector slots
S_T, S_X, S_SUP, S_PAR, S_ST0, S_ST1, S_I0, S_I1, S_L0, S_L1, S_T1, S_X1, S_J1, S_N, S_NP, S_UP = range(16)


@numba.njit(cache=True)
def _crossed(a, b, lev):
    return (a - lev) * (b - lev) <= 0.0


CP_FOLD = 100          # max compound-Poisson jumps folded into one far-away step


@numba.njit(cache=True)
def _kernel(st, DT, X, J, V, nb, ub, h, two, fam, d, sigma, rho, theta, alpha, cst, delta,
            stop_code, stop_param, lt_level, eps0, eps1, max_time, max_points, wins, band):
    """Advance one path; returns FINISHED or the resource it ran out of."""
    s2_small = 0.0
    lam_big = 0.0
    drift = d
    if fam == 1:
        lam_big = rho
        drift = d + rho / theta
    elif fam == 2:
        s2_small = cst * delta ** (2.0 - alpha) / (2.0 - alpha)
        lam_big = cst * delta ** (-alpha) / alpha
        drift = d + cst * delta ** (1.0 - alpha) / (alpha - 1.0)
    sd_h = math.sqrt((sigma * sigma + s2_small) * h)
    p0 = math.exp(-lam_big * h)
    inv_a = 1.0 / alpha if fam == 2 else 1.0
    coarse_ok = wins.shape[0] > 0 or band >= 0.0

    t = st[S_T]
    x = st[S_X]
    S = st[S_SUP]
    parity = int(st[S_PAR])
    st0 = int(st[S_ST0])
    st1 = int(st[S_ST1])
    idx0 = int(st[S_I0])
    idx1 = int(st[S_I1])
    L0 = st[S_L0]
    L1 = st[S_L1]
    t1 = st[S_T1]
    x1 = st[S_X1]
    j1 = st[S_J1]
    n = int(st[S_N])
    npos = int(st[S_NP])
    upos = int(st[S_UP])
    code = FINISHED
    nn = nb.size
    nu = ub.size
    cap = X.size

    while True:
        if npos >= nn:
            code = NEED_N
            break
        if fam != 0 and upos + 2 * CP_FOLD + 64 > nu:
            code = NEED_U
            break
        if n >= cap:
            code = NEED_SPACE
            break
        # --- choose the step --------------------------------------------
        coarse = False
        tc = h
        s2c = 0.0
        drc = 0.0
        lamc = 0.0
        dl = 0.0
        if coarse_ok and parity == 0:
            D = 1e300
            for w in range(wins.shape[0]):
                lo = wins[w, 0]
                hi = wins[w, 1]
                dd = 0.0
                if x < lo:
                    dd = lo - x
                elif x > hi:
                    dd = x - hi
                if dd < D:
                    D = dd
            if band >= 0.0:
                dd = S - band - x
                if dd < 0.0:
                    dd = 0.0
                if dd < D:
                    D = dd
            if D > 0.0 and D < 1e299:
                if fam == 2:
                    dl = max(delta, 0.25 * D)
                    s2c = sigma * sigma + cst * dl ** (2.0 - alpha) / (2.0 - alpha)
                    drc = d + cst * dl ** (1.0 - alpha) / (alpha - 1.0)
                    lamc = cst * dl ** (-alpha) / alpha
                else:
                    s2c = sigma * sigma
                    drc = drift
                    lamc = lam_big
                tc = (D / 8.0) ** 2 / s2c
                if drc != 0.0:
                    tc = min(tc, D / 8.0 / abs(drc))
                coarse = tc >= 8.0 * h
        # --- draw the increment -----------------------------------------
        jump = 0.0
        if coarse:
            tau = tc
            folded = 0.0
            if fam == 2:
                e = -math.log(1.0 - ub[upos]) / lamc
                upos += 1
                if e < tc:
                    tau = e
                    jump = -dl * (1.0 - ub[upos]) ** (-inv_a)
                    upos += 1
            elif fam == 1:
                # up to CP_FOLD jumps per far step; the step ends at the jump
                # that would take the running total past D/2, which stays the
                # recorded jump, the earlier ones join the continuous part
                e = 0.0
                for _ in range(CP_FOLD):
                    e += -math.log(1.0 - ub[upos]) / lamc
                    upos += 1
                    if e >= tc:
                        tau = tc
                        break
                    jj = math.log(1.0 - ub[upos]) / theta
                    upos += 1
                    if folded + jj < -0.5 * D:
                        tau = e
                        jump = jj
                        break
                    folded += jj
                    tau = e
            xp = x + drc * tau + math.sqrt(s2c * tau) * nb[npos] + folded
            npos += 1
        else:
            tau = h
            xp = x + drift * h + sd_h * nb[npos]
            npos += 1
            if fam != 0:
                u = ub[upos]
                upos += 1
                if u > p0:
                    # Poisson count by inversion
                    k = 1
                    p = p0 * lam_big * h
                    c = p0 + p
                    while u > c and k < 50:
                        k += 1
                        p *= lam_big * h / k
                        c += p
                    for _ in range(k):
                        if fam == 1:
                            jump += math.log(1.0 - ub[upos]) / theta
                        else:
                            jump -= delta * (1.0 - ub[upos]) ** (-inv_a)
                        upos += 1
        xn = xp + jump
        if st0 < 0 and stop_code == 3:
            if abs(x - lt_level) < eps0:
                L0 += tau / (2.0 * eps0)
        if coarse:
            parity = 0
        elif two:
            parity = 1 - parity
        member = (not two) or coarse or parity == 0
        DT[n] = tau
        X[n] = xn
        J[n] = jump
        V[n] = (1 if member else 0) | (2 if coarse else 0)
        tn = t + tau
        if st0 < 0:
            if stop_code == 0:
                fired = xn >= stop_param
            elif stop_code == 1:
                fired = xn <= stop_param
            elif stop_code == 2:
                fired = _crossed(x, xp, stop_param)
            elif stop_code == 3:
                fired = L0 >= stop_param
            else:
                fired = tn >= stop_param * (1.0 - 1e-12)
            if fired:
                st0 = 0
                idx0 = n
        j1 += jump
        if two and member:
            if st1 < 0:
                if stop_code == 3:
                    if abs(x1 - lt_level) < eps1:
                        L1 += (tn - t1) / (2.0 * eps1)
                if stop_code == 0:
                    fired = xn >= stop_param
                elif stop_code == 1:
                    fired = xn <= stop_param
                elif stop_code == 2:
                    fired = _crossed(x1, xn - j1, stop_param)
                elif stop_code == 3:
                    fired = L1 >= stop_param
                else:
                    fired = tn >= stop_param * (1.0 - 1e-12)
                if fired:
                    st1 = 0
                    idx1 = n
            t1 = tn
            x1 = xn
            j1 = 0.0
        elif not two:
            j1 = 0.0
        n += 1
        t = tn
        x = xn
        if xn > S:
            S = xn
        if st0 >= 0 and (st1 >= 0 or not two):
            break
        if t >= max_time or n >= max_points:
            status = 1 if t >= max_time else 2
            if st0 < 0:
                st0 = status
                idx0 = n - 1
            if two and st1 < 0:
                st1 = status
                idx1 = n - 1
            break

    st[S_T] = t
    st[S_X] = x
    st[S_SUP] = S
    st[S_PAR] = parity
    st[S_ST0] = st0
    st[S_ST1] = st1
    st[S_I0] = idx0
    st[S_I1] = idx1
    st[S_L0] = L0
    st[S_L1] = L1
    st[S_T1] = t1
    st[S_X1] = x1
    st[S_J1] = j1
    st[S_N] = n
    st[S_NP] = npos
    st[S_UP] = upos
    return code


class _Workspace:
    """Output buffers reused across paths (grown on demand, never shrunk)."""

    def __init__(self):
        self.resize(1 << 16)

    def resize(self, cap):
        old = getattr(self, "DT", None)
        self.DT, self.X, self.J = np.zeros(cap), np.zeros(cap), np.zeros(cap)
        self.V = np.zeros(cap, np.uint8)
        if old is not None:
            n = old.size
            self.DT[:n], self.X[:n], self.J[:n], self.V[:n] = old, self._X, self._J, self._V
        self._X, self._J, self._V = self.X, self.J, self.V


_WS = _Workspace()


def _run_kernel(seed, path_index, x0, *params):
    """Drive the resumable kernel, feeding it Philox blocks and memory."""
    gen = np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(path_index)]))
    ws = _WS
    st = np.zeros(16)
    st[[S_X, S_SUP, S_X1]] = x0
    st[[S_ST0, S_ST1, S_I0, S_I1]] = -1
    st[S_N] = 1
    ws.DT[0], ws.X[0], ws.J[0], ws.V[0] = 0.0, x0, 0.0, 1
    block = 4096
    nb = gen.standard_normal(block)
    ub = gen.random(block)
    while True:
        code = _kernel(st, ws.DT, ws.X, ws.J, ws.V, nb, ub, *params)
        if code == FINISHED:
            break
        if code == NEED_N:
            block = min(2 * block, 1 << 20)
            nb = gen.standard_normal(block)
            st[S_NP] = 0
        elif code == NEED_U:
            block = min(2 * block, 1 << 20)
            ub = np.concatenate((ub[int(st[S_UP]):], gen.random(block)))
            st[S_UP] = 0
        else:
            ws.resize(2 * ws.X.size)
    n = int(st[S_N])
    return (ws.DT[:n].copy(), ws.X[:n].copy(), ws.J[:n].copy(), ws.V[:n].copy(),
            int(st[S_ST0]), int(st[S_I0]), st[S_L0], int(st[S_ST1]), int(st[S_I1]), st[S_L1])


@numba.njit(cache=True)
def _subsample(DT, X, J, V, last):
    """dt path from the dt/2 path: members only, steps and jumps aggregated."""
    m = 0
    for i in range(last + 1):
        if V[i] & 1:
            m += 1
    steps = np.zeros(m)
    vals = np.empty(m)
    jumps = np.zeros(m)
    coarse = np.zeros(m, np.bool_)
    k = -1
    acc_t = 0.0
    acc_j = 0.0
    for i in range(last + 1):
        acc_t += DT[i]
        acc_j += J[i]
        if V[i] & 1:
            k += 1
            steps[k] = acc_t
            jumps[k] = acc_j
            vals[k] = X[i]
            coarse[k] = (V[i] & 2) != 0
            acc_t = 0.0
            acc_j = 0.0
    return steps, vals, jumps, coarse


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------

@dataclass
class SimPath:
    """One trajectory on its (possibly irregular) time grid.

    ``steps[k]`` is the length of the step ending at point k (steps[0] = 0),
    ``jumps[k]`` the total jump applied at the end of that step, so the
    pre-jump value is ``values[k] - jumps[k]``.  Large steps are flagged
    in ``coarse``.
    """

    steps: np.ndarray
    values: np.ndarray
    jumps: np.ndarray
    coarse: np.ndarray
    dt: float
    eps: float
    stop_rule: object
    stop_index: int
    stop_status: int
    online_lt: float = 0.0
    path_index: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.cumsum(self.steps)

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def pre(self) -> np.ndarray:
        return self.values - self.jumps

    @property
    def sup(self) -> np.ndarray:
        return np.maximum.accumulate(self.values)

    @property
    def inf(self) -> np.ndarray:
        return np.minimum.accumulate(self.values)

    @property
    def duration(self) -> float:
        return float(self.steps.sum())

    @property
    def stop_time(self) -> float:
        return self.duration

    @property
    def jump_marks(self):
        """List of (index, size) for recorded jumps (all sizes < 0)."""
        k = np.flatnonzero(self.jumps)
        return list(zip(k.tolist(), self.jumps[k].tolist()))

    @property
    def fired(self) -> bool:
        return self.stop_status == ST_FIRED

    @property
    def hold(self) -> np.ndarray:
        """Length of the step starting at each point (left-point weights)."""
        out = np.zeros_like(self.steps)
        out[:-1] = self.steps[1:]
        return out

    def to_csv(self, path, meta: Optional[dict] = None):
        import csv

        with open(path, "w", newline="") as fh:
            for k, v in sorted((meta or {}).items()):
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["t", "x", "s", "is_jump"])
            for t, x, s, j in zip(self.times, self.values, self.sup, self.jumps != 0):
                w.writerow([repr(float(t)), repr(float(x)), repr(float(s)), int(j)])


@dataclass
class SimResult:
    """Output of one simulation: the dt path and, with halving, the dt/2 path."""

    path: SimPath
    half: Optional[SimPath] = None


def _model_params(model: LevyModel, delta: float):
    j = model.jumps
    if isinstance(j, CompoundPoissonExp):
        return FAM_CP, j.rate, j.scale, 0.0, 0.0
    if isinstance(j, StableAlpha):
        return FAM_ST, 0.0, 0.0, j.alpha, j.density_const
    return FAM_BM, 0.0, 0.0, 0.0, 0.0


def _window_arrays(window: Optional[Window], stop_rule, x0):
    if window is None:
        return np.zeros((0, 2)), -1.0
    iv = [tuple(map(float, w)) for w in window.intervals]
    iv.append((x0, x0))
    if isinstance(stop_rule, (FirstPassageBelow, FirstHit)):
        iv.append((stop_rule.param, stop_rule.param))
    if isinstance(stop_rule, FirstPassageAbove) and window.sup_depth < 0:
        iv.append((stop_rule.a, stop_rule.a))
    if isinstance(stop_rule, LocalTimeAtZero):
        iv.append((stop_rule.level, stop_rule.level))
    return np.array(iv, dtype=float).reshape(-1, 2), float(window.sup_depth)


def simulate_until(model: LevyModel, cfg: SimConfig, stop_rule: StopRule,
                   raise_on_max_time: bool = True) -> SimResult:
    """Simulate one path until ``stop_rule`` fires on every produced path."""
    check_hypotheses(model)
    delta = cfg.delta(model)
    fam, rho, theta, alpha, cst = _model_params(model, delta)
    two = bool(cfg.halving)
    h = cfg.dt / 2 if two else cfg.dt
    eps_dt = default_eps(model, cfg.dt, delta or None)
    eps_h = default_eps(model, h, delta or None)
    wins, band = _window_arrays(cfg.window, stop_rule, cfg.x0)
    lt_level = stop_rule.level if isinstance(stop_rule, LocalTimeAtZero) else 0.0
    DT, X, J, V, st0, i0, L0, st1, i1, L1 = _run_kernel(
        cfg.seed, cfg.path_index, float(cfg.x0), float(h), two, fam,
        float(model.d), float(model.sigma), rho, theta, alpha, cst, float(delta),
        stop_rule.code, float(stop_rule.param), float(lt_level), eps_h, eps_dt,
        float(cfg.max_time), int(cfg.max_points), wins, band)
    for st in (st0, st1) if two else (st0,):
        if st != ST_FIRED and raise_on_max_time:
            what = "max_time" if st == ST_MAXTIME else "max_points"
            raise MaxTimeExceeded(f"path {cfg.path_index}: {what} reached before {stop_rule}")
    coarse = (V & 2) != 0
    if not two:
        p = SimPath(DT[: i0 + 1], X[: i0 + 1], J[: i0 + 1], coarse[: i0 + 1], cfg.dt, eps_dt,
                    stop_rule, i0, st0, L0, cfg.path_index)
        return SimResult(p)
    half = SimPath(DT[: i0 + 1], X[: i0 + 1], J[: i0 + 1], coarse[: i0 + 1], h, eps_h,
                   stop_rule, i0, st0, L0, cfg.path_index)
    steps, vals, jumps, cz = _subsample(DT, X, J, V, i1)
    full = SimPath(steps, vals, jumps, cz, cfg.dt, eps_dt, stop_rule,
                   vals.size - 1, st1, L1, cfg.path_index)
    return SimResult(full, half)


def batch_simulate(model: LevyModel, cfg: SimConfig, stop_rule: StopRule, n_paths: int,
                   start_index: int = 0, errors: Optional[list] = None) -> Iterator[SimResult]:
    """Stream of SimResults for path indices start_index .. start_index + n_paths - 1.

    Each path depends only on (seed, path_index), so splitting the index
    range over workers reproduces the same stream.  Paths that hit
    max_time are appended to ``errors`` (if given) and skipped.
    """
    from dataclasses import replace

    for i in range(start_index, start_index + n_paths):
        try:
            yield simulate_until(model, replace(cfg, path_index=i), stop_rule)
        except MaxTimeExceeded as exc:
            if errors is None:
                raise
            errors.append((i, str(exc)))
