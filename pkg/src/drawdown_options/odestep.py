"""Fixed-step RK4 with a halved-step Richardson error check.

Shared by the boundary integrators.  Works elementwise on scalars or numpy
arrays, so a stack of independent slices can advance in lockstep.
"""

from __future__ import annotations

import numpy as np


def rk4_step(f, t, x, h):
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def checked_step(f, t, x, h, scale_floor=1e-300):
    """Advance one step, returning the two-half-step value and error estimate.

    The estimate is the classic |fine - full| / 15 for a fourth-order scheme,
    reported relative to max(|fine|, scale_floor).  The more accurate
    two-half-step result is what gets propagated.
    """
    full = rk4_step(f, t, x, h)
    mid = rk4_step(f, t, x, 0.5 * h)
    fine = rk4_step(f, t + 0.5 * h, mid, 0.5 * h)
    err = np.abs(fine - full) / 15.0
    rel = err / np.maximum(np.abs(fine), scale_floor)
    return fine, rel
