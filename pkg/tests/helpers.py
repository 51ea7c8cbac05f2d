"""Hand-built paths for exact checks."""

import numpy as np

from levy_rk.path_sim import FixedHorizon, SimPath


def make_path(values, steps=None, jumps=None, dt=0.01, eps=0.05):
    values = np.asarray(values, dtype=float)
    if steps is None:
        steps = np.full(values.size, dt)
        steps[0] = 0.0
    steps = np.asarray(steps, dtype=float)
    jumps = np.zeros_like(values) if jumps is None else np.asarray(jumps, dtype=float)
    return SimPath(steps, values, jumps, np.zeros(values.size, bool), dt, eps,
                   FixedHorizon(float(steps.sum())), values.size - 1, 0)
