"""Occupation-density local times of simulated paths.

Everything uses the left-point rule: point k carries the length of the
step that starts there, ``hold[k]``, and

    L^x ~ (1/2eps) sum_k hold[k] 1{|X_k - x| < eps}.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .path_sim import SimPath

__all__ = [
    "LocalTimeField", "occupation_local_time", "local_time_field",
    "occupation_check", "online_local_time", "integral_f_L", "levels_grid",
]


@dataclass(frozen=True)
class LocalTimeField:
    levels: np.ndarray
    values: np.ndarray
    eps: float

    @property
    def step(self) -> float:
        return float(self.levels[1] - self.levels[0]) if self.levels.size > 1 else 2 * self.eps

    def at(self, level: float) -> float:
        i = int(np.argmin(np.abs(self.levels - level)))
        if abs(self.levels[i] - level) > 1e-9 * max(1.0, abs(level)):
            raise KeyError(f"level {level} not on the field grid")
        return float(self.values[i])

    def to_csv(self, path, meta: Optional[dict] = None):
        import csv

        with open(path, "w", newline="") as fh:
            for k, v in sorted({"eps": self.eps, **(meta or {})}.items()):
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["level", "local_time"])
            for a, b in zip(self.levels, self.values):
                w.writerow([repr(float(a)), repr(float(b))])


def _hold(path):
    if isinstance(path, SimPath):
        return path.values, path.hold
    values, steps = path
    values = np.asarray(values, dtype=float)
    hold = np.zeros_like(values)
    hold[:-1] = np.asarray(steps, dtype=float)[1:]
    return values, hold


def occupation_local_time(path, level: float, eps: Optional[float] = None) -> float:
    """Left-point occupation estimate of L^level at the end of ``path``.

    ``path`` is a SimPath or a pair (values, steps) with steps[0] unused.
    """
    if eps is None:
        eps = path.eps
    if not eps > 0:
        raise ValueError("eps must be > 0")
    x, hold = _hold(path)
    return float(hold[np.abs(x - level) < eps].sum() / (2 * eps))


def levels_grid(lo: float, hi: float, step: float) -> np.ndarray:
    """Uniform grid through multiples of ``step`` covering [lo, hi]."""
    i0 = int(np.floor(lo / step + 1e-9))
    i1 = int(np.ceil(hi / step - 1e-9))
    return np.arange(i0, i1 + 1) * step


def local_time_field(path, levels, eps: Optional[float] = None) -> LocalTimeField:
    """L at every level of a uniform grid in one histogram pass.

    The grid step must be at least 2 eps so that windows do not overlap;
    each sample then feeds at most one level.
    """
    if eps is None:
        eps = path.eps
    levels = np.asarray(levels, dtype=float)
    x, hold = _hold(path)
    if levels.size == 1:
        val = hold[np.abs(x - levels[0]) < eps].sum() / (2 * eps)
        return LocalTimeField(levels, np.array([val]), eps)
    step = levels[1] - levels[0]
    if not np.allclose(np.diff(levels), step, rtol=1e-9, atol=1e-12):
        raise ValueError("levels must be uniform")
    if step < 2 * eps * (1 - 1e-12):
        raise ValueError("level step must be >= 2 eps")
    idx = np.rint((x - levels[0]) / step).astype(np.int64)
    ok = (idx >= 0) & (idx < levels.size)
    ok[ok] &= np.abs(x[ok] - levels[idx[ok]]) < eps
    vals = np.bincount(idx[ok], weights=hold[ok], minlength=levels.size) / (2 * eps)
    return LocalTimeField(levels, vals, eps)


def occupation_check(path, f, field: LocalTimeField):
    """(sum f(X_k) hold_k, sum f(level) L(level) step, relative error)."""
    x, hold = _hold(path)
    lhs = float(np.sum(f(x) * hold))
    rhs = float(np.sum(f(field.levels) * field.values) * field.step)
    rel = abs(lhs - rhs) / abs(lhs) if lhs != 0 else abs(rhs)
    return lhs, rhs, rel


def online_local_time(path, level: float, eps: Optional[float] = None) -> np.ndarray:
    """Running estimate L_{t_k} at each grid time (the stop rule's accumulator)."""
    if eps is None:
        eps = path.eps
    x, hold = _hold(path)
    inc = np.where(np.abs(x - level) < eps, hold, 0.0) / (2 * eps)
    return np.concatenate(([0.0], np.cumsum(inc[:-1])))


def integral_f_L(path, f) -> float:
    """int f(x) L^x dx computed as sum_k f(X_k) hold_k (occupation formula)."""
    x, hold = _hold(path)
    return float(np.sum(f(x) * hold))
