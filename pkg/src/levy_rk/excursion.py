"""Excursions of simulated paths away from the running supremum and away from a level.

Both decompositions return an :class:`ExcursionTable` (one row per
excursion, numpy columns) that keeps a reference to its path so sub-paths
can be materialized as :class:`Excursion` objects on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional

import numba
import numpy as np

from .path_sim import SimPath

__all__ = [
    "Excursion", "ExcursionTable", "excursions_from_supremum", "excursions_from_point",
    "split_at_first_passage", "estimate_excursion_functional", "ratio_estimate",
    "excursion_level_local_times", "E_PLUS", "E_MINUS", "E_MIXED",
]

E_PLUS, E_MINUS, E_MIXED = 1, -1, 0
CLASS_NAMES = {E_PLUS: "E+", E_MINUS: "E-", E_MIXED: "E+-"}


@dataclass
class Excursion:
    kind: str                 # "sup" or "point"
    s: float                  # local-time coordinate at the start
    zeta: float
    height: float
    cls: Optional[str] = None
    overshoot: Optional[float] = None
    undershoot: Optional[float] = None
    samples: Optional[np.ndarray] = None     # shifted post-jump values
    pre: Optional[np.ndarray] = None         # shifted pre-jump values
    level: float = 0.0


@dataclass
class ExcursionTable:
    """Columns: start, end (path indices), s, zeta, height, cls, overshoot,
    undershoot, jump (index of the crossing jump or -1)."""

    kind: str
    level: float
    path: SimPath
    start: np.ndarray
    end: np.ndarray
    s: np.ndarray
    zeta: np.ndarray
    height: np.ndarray
    cls: np.ndarray
    overshoot: np.ndarray
    undershoot: np.ndarray
    jump: np.ndarray
    budget: float
    dead_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.start.size

    def select(self, mask) -> "ExcursionTable":
        mask = np.asarray(mask, dtype=bool)
        cols = {k: getattr(self, k)[mask] for k in
                ("start", "end", "s", "zeta", "height", "cls", "overshoot", "undershoot", "jump")}
        return ExcursionTable(self.kind, self.level, self.path, budget=self.budget,
                              dead_time=self.dead_time, extra=self.extra, **cols)

    def samples(self, i):
        """(post, pre) values of excursion i on [start, end], shifted."""
        a, b = int(self.start[i]), int(self.end[i])
        p = self.path
        if self.kind == "sup":
            S = p.values[a]
            return S - p.values[a:b + 1], S - p.pre[a:b + 1]
        return p.values[a:b + 1] - self.level, p.pre[a:b + 1] - self.level

    def to_list(self) -> List[Excursion]:
        out = []
        for i in range(len(self)):
            post, pre = self.samples(i)
            c = int(self.cls[i])
            mixed = self.kind == "point" and c == E_MIXED
            out.append(Excursion(
                self.kind, float(self.s[i]), float(self.zeta[i]), float(self.height[i]),
                CLASS_NAMES.get(c) if self.kind == "point" else None,
                float(self.overshoot[i]) if mixed else None,
                float(self.undershoot[i]) if mixed else None,
                post, pre, self.level))
        return out

    def to_csv(self, path, meta: Optional[dict] = None):
        import csv

        with open(path, "w", newline="") as fh:
            for k, v in sorted((meta or {}).items()):
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh)
            w.writerow(["kind", "s", "zeta", "height", "class", "overshoot", "undershoot"])
            for i in range(len(self)):
                c = int(self.cls[i])
                mixed = self.kind == "point" and c == E_MIXED
                w.writerow([self.kind, repr(float(self.s[i])), repr(float(self.zeta[i])),
                            repr(float(self.height[i])),
                            CLASS_NAMES[c] if self.kind == "point" else "",
                            repr(float(self.overshoot[i])) if mixed else "",
                            repr(float(self.undershoot[i])) if mixed else ""])


# ---------------------------------------------------------------------------
# away from the supremum
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _sup_scan(X, steps):
    n = X.size
    starts = np.empty(n, np.int64)
    ends = np.empty(n, np.int64)
    zeta = np.empty(n)
    H = np.empty(n)
    m = 0
    S = X[0]
    last = 0
    for k in range(1, n):
        if X[k] > S:
            if k - last >= 2:
                starts[m] = last
                ends[m] = k
                z = 0.0
                h = 0.0
                for i in range(last + 1, k + 1):
                    z += steps[i]
                for i in range(last + 1, k):
                    if S - X[i] > h:
                        h = S - X[i]
                zeta[m] = z
                H[m] = h
                m += 1
            S = X[k]
            last = k
    return starts[:m], ends[:m], zeta[:m], H[:m], last


def excursions_from_supremum(path: SimPath, include_open: bool = False) -> ExcursionTable:
    """Excursions of S - X between consecutive new maxima.

    The gap between two ladder epochs is one excursion with lifetime equal
    to the full gap; back-to-back ladder steps (lifetime dt) carry no
    excursion and are skipped.  The budget is S(stop) - S(0).  The
    unfinished excursion after the last maximum is kept only with
    ``include_open``.
    """
    X = path.values
    st, en, zeta, H, last = _sup_scan(X, path.steps)
    if include_open and last < X.size - 1:
        S = X[last]
        st = np.append(st, last)
        en = np.append(en, X.size - 1)
        zeta = np.append(zeta, path.steps[last + 1:].sum())
        H = np.append(H, np.max(S - X[last + 1:]))
    s = X[st] - X[0]
    k = st.size
    return ExcursionTable("sup", 0.0, path, st, en, s, zeta, H,
                          np.zeros(k, np.int64), np.full(k, np.nan), np.full(k, np.nan),
                          np.full(k, -1, np.int64), budget=float(X.max() - X[0]))


def excursion_level_local_times(table: ExcursionTable, depths, eps: Optional[float] = None):
    """L^y(e) for each excursion (rows) and depth/offset y (columns).

    For "sup" excursions y is a depth below the supremum, for "point"
    excursions an offset from the reference level.  Interior points only.
    """
    p = table.path
    eps = p.eps if eps is None else eps
    depths = np.atleast_1d(np.asarray(depths, dtype=float))
    out = np.zeros((len(table), depths.size))
    if len(table) == 0:
        return out
    hold = p.hold
    n = p.n
    owner = np.full(n, -1, np.int64)
    _mark_owner(owner, table.start, table.end)
    sel = owner >= 0
    idx = owner[sel]
    if table.kind == "sup":
        ref = p.values[table.start][idx]
        off = ref - p.values[sel]
    else:
        off = p.values[sel] - table.level
    w = hold[sel] / (2 * eps)
    for j, y in enumerate(depths):
        hit = np.abs(off - y) < eps
        out[:, j] = np.bincount(idx[hit], weights=w[hit], minlength=len(table))
    return out


@numba.njit(cache=True)
def _mark_owner(owner, starts, ends):
    for e in range(starts.size):
        for i in range(starts[e] + 1, ends[e]):
            owner[i] = e


# ---------------------------------------------------------------------------
# away from a level
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _point_scan(X, J, steps, y, band, dt, include_open):
    n = X.size
    # continuous crossings: step k from X[k-1] to pre[k]
    bnd = np.empty(n, np.int64)
    nb = 0
    for k in range(1, n):
        a = X[k - 1] - y
        b = X[k] - J[k] - y
        if a * b <= 0.0 and not (a == 0.0 and b == 0.0):
            bnd[nb] = k
            nb += 1
    last = bnd[nb - 1] if nb > 0 else n - 1
    if include_open and nb > 0 and bnd[nb - 1] < n - 1:
        # open segment up to the stop, closed by a virtual boundary at n
        bnd = np.append(bnd[:nb], n)
        nb += 1
    m = max(nb - 1, 0)
    starts = np.empty(m, np.int64)
    ends = np.empty(m, np.int64)
    zeta = np.empty(m)
    H = np.empty(m)
    cls = np.empty(m, np.int64)
    O = np.full(m, np.nan)
    U = np.full(m, np.nan)
    jk = np.full(m, -1, np.int64)
    keep = np.zeros(m, np.bool_)
    for e in range(m):
        a0 = bnd[e]
        a1 = bnd[e + 1]
        starts[e] = a0
        ends[e] = a1
        z = 0.0
        for i in range(a0 + 1, min(a1 + 1, n)):
            z += steps[i]
        zeta[e] = z
        side = X[a0] - J[a0] - y       # the continuous part ends on the new side
        far = 0.0
        if side > 0.0:
            c = 1
            h = side
            for i in range(a0, a1):
                pre = X[i] - J[i] - y
                if i > a0 and pre > h:
                    h = pre
                if X[i] - y < 0.0:
                    # crossed below by the jump at step i
                    c = 0
                    O[e] = pre
                    U[e] = X[i] - y
                    jk[e] = i
                    break
                if X[i] - y > h:
                    h = X[i] - y
            H[e] = h
            far = h
            cls[e] = c
        else:
            cls[e] = -1
            h = -side
            for i in range(a0, a1):
                if y - X[i] > h:
                    h = y - X[i]
            H[e] = h
            far = h
        if cls[e] == 0:
            keep[e] = True
        else:
            keep[e] = far >= band and z > dt * (1.0 + 1e-9)
    first = bnd[0] if nb > 0 else n - 1
    return starts, ends, zeta, H, cls, O, U, jk, keep, first, last


def excursions_from_point(path: SimPath, y: float = 0.0, band: Optional[float] = None,
                          include_open: bool = False) -> ExcursionTable:
    """Excursions of X away from level y.

    Boundaries are the steps whose continuous (pre-jump) part crosses y.
    An excursion that starts above y and is ended by a recorded jump to
    below y is mixed (E+-), with overshoot O = pre-jump value - y > 0 and
    undershoot U = post-jump value - y < 0.  Other excursions are E+ or
    E- and are dropped when they never leave the band |X - y| < band or
    last no more than one step.  ``dead_time`` collects the path time not
    covered by a kept excursion.

    ``include_open`` keeps the segment after the last crossing as one more
    excursion (end index n).  Use it for local-time stops: they fire within
    eps of y, so that segment is complete up to an O(eps) remainder, and
    dropping it loses about one excursion per path.
    """
    band = path.eps if band is None else band
    X, J, steps = path.values, path.jumps, path.steps
    st, en, zeta, H, cls, O, U, jk, keep, first, last = _point_scan(X, J, steps, float(y), float(band), float(path.dt), include_open)
    hold = path.hold
    inc = np.where(np.abs(X - y) < path.eps, hold, 0.0) / (2 * path.eps)
    Lcum = np.concatenate(([0.0], np.cumsum(inc)))
    s = Lcum[st]
    total = float(steps.sum())
    tab = ExcursionTable("point", float(y), path, st, en, s, zeta, H, cls, O, U, jk,
                         budget=float(Lcum[-1]))
    tab = tab.select(keep)
    tab.dead_time = total - float(tab.zeta.sum())
    return tab


def split_at_first_passage(e: Excursion, level: float = 0.0):
    """(reversed piece, forward piece) at the first passage of e below ``level``.

    The reversed piece runs backwards from the pre-crossing value (first
    element, the overshoot when the crossing is a jump across 0) to the
    start of e; the forward piece starts at the first value below the
    level (the undershoot for a jump crossing).
    """
    post = np.asarray(e.samples, dtype=float)
    pre = np.asarray(e.pre if e.pre is not None else e.samples, dtype=float)
    below = np.flatnonzero(post < level)
    if below.size == 0:
        raise ValueError("excursion never passes below the level")
    k = int(below[0])
    back = np.concatenate(([pre[k]], post[:k][::-1]))
    fwd = post[k:].copy()
    return back, fwd


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

def ratio_estimate(num, den):
    """sum(num)/sum(den) with a delta-method stderr over i.i.d. blocks."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    D = den.sum()
    if not D > 0:
        raise ZeroDivisionError("zero local-time budget")
    r = num.sum() / D
    n = num.size
    if n < 2:
        return float(r), float("nan")
    resid = num - r * den
    se = np.sqrt(np.sum(resid ** 2) * n / (n - 1)) / D
    return float(r), float(se)


def estimate_excursion_functional(tables: Iterable[ExcursionTable], F: Callable,
                                  restriction: Optional[Callable] = None):
    """Estimate N(F; restriction) per unit local time from per-path tables.

    ``F`` and ``restriction`` take an ExcursionTable and return one value
    (or boolean) per row.  Each table is one i.i.d. block.
    """
    num, den = [], []
    for t in tables:
        if len(t):
            v = np.asarray(F(t), dtype=float) * np.ones(len(t))
            if restriction is not None:
                v = v * np.asarray(restriction(t), dtype=bool)
            num.append(v.sum())
        else:
            num.append(0.0)
        den.append(t.budget)
    if np.all(np.asarray(num) == 0) and sum(den) > 0:
        return 0.0, 0.0
    return ratio_estimate(num, den)
