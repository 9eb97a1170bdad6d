"""Boundary surfaces and values with both running maximum and drawdown active.

Each x-line carries the two-power value C1 x**g1 + C2 x**g2 with roots taken
at that line's (s, y).  The stopping boundary solves a slice ODE: for calls,
in y at fixed s, seeded next to the diagonal where the drawdown floor is
slack; for puts, in s at fixed y, seeded next to the corner s = y from the
matching diagonal-restricted curve.  Slices advance in lockstep across the
grid so the right-hand side stays vectorized; a slice that fails its step
check or a constraint keeps its partial history and is flagged instead of
aborting the whole surface.

Per node the barrier sorts the line into one of three branches: stopped
(payoff), direct (barrier reachable, two-power value pinned at the barrier),
or reflected (barrier out of reach; coefficients come from the reflection
system solved over the whole reflected component).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline

from .coefficients import ModelSpec, roots_arrays
from .errors import (
    DomainError,
    ResolutionWarning,
    SingularDenominator,
    StepError,
    UnderdeterminedRegion,
)
from .odestep import checked_step
from .reflection_pde import (
    ColumnClosure,
    RegionSpec,
    RowClosure,
    _fill_inactive,
    solve_reflection_region,
)
from .solver2d import (
    EDGE_FRACTION,
    STEP_REL_TOL,
    PutSolution2D,
    _ode_terms,
    detect_switch_points,
)

MAX_SWITCH_PAIRS = 16


def call_slice_rhs(spec: ModelSpec, s, y, b):
    """db/dy on a fixed-s slice; also returns the shared denominator."""
    g1, g2, _, _, dg1, dg2 = roots_arrays(spec, s, y)
    return _ode_terms(g1, g2, dg1, dg2, b, s - y, spec.strike)


def put_slice_rhs(spec: ModelSpec, s, y, a):
    """da/ds on a fixed-y slice; also returns the shared denominator."""
    g1, g2, dg1, dg2, _, _ = roots_arrays(spec, s, y)
    return _ode_terms(g1, g2, dg1, dg2, a, s, spec.strike)


def _call_constraint_floor(spec: ModelSpec, s, y):
    d = spec.delta_field.value(s, y)
    return np.maximum(spec.strike, spec.r * spec.strike / d)


def _put_constraint_cap(spec: ModelSpec, s, y):
    d = spec.delta_field.value(s, y)
    return np.minimum(spec.strike, spec.r * spec.strike / d)


@dataclass
class BoundarySurface:
    """One stopping boundary sampled over an (s, y) lattice.

    values holds NaN off the state space and past a flagged slice;
    slice_status records, per integration slice, "ok" or the failure kind
    and the position where integration was cut.
    """

    s_grid: np.ndarray
    y_grid: np.ndarray
    values: np.ndarray
    kind: str
    slice_status: list = field(default_factory=list)
    labels: np.ndarray | None = None
    slice_switches: list | None = None
    cap_curve: np.ndarray | None = None

    def __post_init__(self):
        self._filled = None
        self._row_fits = {}

    def filled_values(self):
        if self._filled is None:
            self._filled = _fill_inactive(self.values, np.isfinite(self.values))
        return self._filled

    def level_at(self, s, y):
        """Bilinear barrier level, clamped to the lattice box.

        The fast vectorized route for simulation and classification; value
        assembly goes through level_smooth instead, since the O(spacing^2)
        bilinear error gets amplified by the two-power pair construction.
        """
        filled = self.filled_values()
        s = np.clip(np.asarray(s, dtype=float), self.s_grid[0], self.s_grid[-1])
        y = np.clip(np.asarray(y, dtype=float), self.y_grid[0], self.y_grid[-1])
        i = np.clip(np.searchsorted(self.s_grid, s) - 1, 0, self.s_grid.size - 2)
        j = np.clip(np.searchsorted(self.y_grid, y) - 1, 0, self.y_grid.size - 2)
        ts = (s - self.s_grid[i]) / (self.s_grid[i + 1] - self.s_grid[i])
        ty = (y - self.y_grid[j]) / (self.y_grid[j + 1] - self.y_grid[j])
        return (
            (1 - ts) * (1 - ty) * filled[i, j]
            + ts * (1 - ty) * filled[i + 1, j]
            + (1 - ts) * ty * filled[i, j + 1]
            + ts * ty * filled[i + 1, j + 1]
        )

    def _row_fit(self, j):
        """Cubic fits of row j over its contiguous finite runs."""
        fit = self._row_fits.get(j)
        if fit is None:
            fit = []
            row = self.values[:, j]
            finite = np.isfinite(row)
            # blend queries sit up to one y-cell below this row's diagonal, so
            # a run may be probed that far (plus node alignment) past its ends
            dy = float(
                self.y_grid[j] - self.y_grid[j - 1]
                if j > 0
                else self.y_grid[min(j + 1, self.y_grid.size - 1)] - self.y_grid[j]
            )
            k = 0
            n = row.size
            while k < n:
                if not finite[k]:
                    k += 1
                    continue
                k2 = k
                while k2 + 1 < n and finite[k2 + 1]:
                    k2 += 1
                xs = self.s_grid[k : k2 + 1]
                vs = row[k : k2 + 1]
                if xs.size >= 4:
                    fit.append(
                        (
                            xs[0],
                            xs[-1],
                            xs[0] - (xs[1] - xs[0]) - dy,
                            xs[-1] + (xs[-1] - xs[-2]) + dy,
                            CubicSpline(xs, vs),
                        )
                    )
                elif xs.size >= 2:
                    fit.append(
                        (
                            xs[0],
                            xs[-1],
                            xs[0],
                            xs[-1],
                            lambda q, xs=xs, vs=vs: np.interp(q, xs, vs),
                        )
                    )
                else:
                    fit.append((xs[0], xs[0], xs[0], xs[0], lambda q, v=vs[0]: v))
                k = k2 + 1
            self._row_fits[j] = fit
        return fit

    def _row_level(self, j, s):
        fit = self._row_fit(j)
        if not fit:
            return None
        best = None
        for lo, hi, elo, ehi, fn in fit:
            d = max(lo - s, 0.0, s - hi)
            if best is None or d < best[0]:
                best = (d, elo, ehi, fn)
        _, elo, ehi, fn = best
        return float(fn(min(max(s, elo), ehi)))

    def level_smooth(self, s, y):
        """Scalar barrier level: cubic across s within a row, linear across y.

        Row data are the marched node values themselves, so the only error
        between nodes is the interpolant's; queries within one cell past a
        run's end extrapolate the cubic (the slice extends to the diagonal
        even when no node landed on the stub), further ones clamp, and a row
        with no finite nodes defers to its partner or the bilinear fallback.
        """
        s = min(max(float(s), self.s_grid[0]), self.s_grid[-1])
        y = min(max(float(y), self.y_grid[0]), self.y_grid[-1])
        j = min(
            max(int(np.searchsorted(self.y_grid, y) - 1), 0), self.y_grid.size - 2
        )
        ty = (y - self.y_grid[j]) / (self.y_grid[j + 1] - self.y_grid[j])
        v0 = self._row_level(j, s)
        v1 = self._row_level(j + 1, s)
        if v0 is None and v1 is None:
            return float(self.level_at(s, y))
        if v0 is None:
            return v1
        if v1 is None:
            return v0
        return (1.0 - ty) * v0 + ty * v1


def _march_surface(
    spec,
    fixed_grid,
    move_grid,
    starts,
    seeds,
    entry_index,
    rhs,
    constraint_ok,
    forward,
    step_rel_tol,
):
    """Advance all slices through move_grid in lockstep.

    starts and seeds give each slice its own entry coordinate and value;
    entry_index[i] is the first move_grid node the slice lands on.  The rhs
    callback takes (fixed_value_array, coord_array, state_array) and returns
    (derivative, denominator); slices whose denominator changes sign, whose
    step check fails, or whose state leaves the allowed band are flagged and
    carry NaN from there on.
    """
    n_fix = fixed_grid.size
    n_mov = move_grid.size
    values = np.full((n_fix, n_mov), np.nan)
    status = [("ok", np.nan)] * n_fix
    state = np.full(n_fix, np.nan)
    alive = np.zeros(n_fix, dtype=bool)
    den_sign = np.zeros(n_fix)
    scale = spec.strike

    levels = range(n_mov) if forward else range(n_mov - 1, -1, -1)
    # lattice gaps are too coarse for single steps at the target accuracy
    target_h = abs(float(move_grid[-1]) - float(move_grid[0])) / 1024.0

    def advance(sel, t_from, t_to):
        """Substepped checked advance for the selected slices; returns ok mask."""
        fx = fixed_grid[sel]

        def f(t, g):
            d, _ = rhs(fx, t, g)
            return d

        t_from = np.broadcast_to(np.asarray(t_from, dtype=float), fx.shape)
        diff = t_to - t_from
        span = float(np.max(np.abs(diff))) if fx.size else 0.0
        n_sub = max(1, int(np.ceil(span / target_h)))
        g_new = state[sel].copy()
        rel = np.zeros(fx.shape)
        t_cur = t_from
        for k in range(n_sub):
            # land the last substep exactly on the node
            t_nxt = (
                np.broadcast_to(t_to, fx.shape)
                if k == n_sub - 1
                else t_from + diff * ((k + 1.0) / n_sub)
            )
            g_new, rel_k = checked_step(
                f, t_cur, g_new, t_nxt - t_cur, scale_floor=1e-12 * scale
            )
            rel = np.maximum(rel, rel_k)
            t_cur = t_nxt
        _, den = rhs(fx, np.broadcast_to(t_to, fx.shape), g_new)
        ok = np.isfinite(g_new) & (rel <= step_rel_tol)
        kind = np.where(rel <= step_rel_tol, "ok", "step")
        sign = np.sign(den)
        fresh = den_sign[sel] == 0.0
        den_sign[sel] = np.where(fresh, sign, den_sign[sel])
        den_bad = (~fresh) & (
            (sign != den_sign[sel]) | (np.abs(den) < 1e-12 * scale)
        )
        kind = np.where(ok & den_bad, "singular", kind)
        ok &= ~den_bad
        con = constraint_ok(fx, np.broadcast_to(t_to, fx.shape), g_new)
        kind = np.where(ok & ~con, "constraint", kind)
        ok &= con
        return g_new, ok, kind

    for lv in levels:
        t_node = move_grid[lv]
        entering = np.flatnonzero((entry_index == lv) & np.isfinite(seeds))
        if entering.size:
            state[entering] = seeds[entering]
            cx = constraint_ok(
                fixed_grid[entering],
                starts[entering],
                seeds[entering],
            )
            for k, i in enumerate(entering):
                if cx[k]:
                    alive[i] = True
                else:
                    status[i] = ("constraint", float(starts[i]))
            sel = entering[cx]
            if sel.size:
                g_new, ok, kind = advance(sel, starts[sel], t_node)
                for k, i in enumerate(sel):
                    if ok[k]:
                        values[i, lv] = g_new[k]
                        state[i] = g_new[k]
                    else:
                        alive[i] = False
                        status[i] = (str(kind[k]), float(t_node))
        stepping = np.flatnonzero(
            alive
            & (entry_index != lv)
            & ((entry_index < lv) if forward else (entry_index > lv))
        )
        if stepping.size:
            prev = move_grid[lv - 1] if forward else move_grid[lv + 1]
            g_new, ok, kind = advance(stepping, prev, t_node)
            for k, i in enumerate(stepping):
                if ok[k]:
                    values[i, lv] = g_new[k]
                    state[i] = g_new[k]
                else:
                    alive[i] = False
                    status[i] = (str(kind[k]), float(t_node))
    return values, status


def build_call_surface(
    spec: ModelSpec, s_grid, y_grid, step_rel_tol=STEP_REL_TOL
) -> BoundarySurface:
    """Integrate the call barrier down each fixed-s slice from the diagonal.

    The seed sits at y = s - eps where the drawdown floor is slack and the
    barrier matches the reachable-maximum form for the diagonal coefficients.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)
    eps = EDGE_FRACTION * spec.strike
    if s_grid[0] <= eps:
        raise DomainError("s_grid must start above the edge offset")
    starts = s_grid - eps
    entry = np.searchsorted(y_grid, starts, side="right") - 1
    entry = np.where(entry < 0, -1, entry)
    g1 = roots_arrays(spec, s_grid, starts)[0]
    seeds = g1 * spec.strike / (g1 - 1.0)
    seeds = np.where(entry >= 0, seeds, np.nan)

    def rhs(fx, t, g):
        return call_slice_rhs(spec, fx, t, g)

    def con(fx, t, g):
        return g > _call_constraint_floor(spec, fx, t)

    values, status = _march_surface(
        spec, s_grid, y_grid, starts, seeds, entry, rhs, con,
        forward=False, step_rel_tol=step_rel_tol,
    )
    for i in np.flatnonzero(entry < 0):
        status[i] = ("outside", np.nan)
    surf = BoundarySurface(s_grid, y_grid, values, "call", status)
    return detect_regions_3d(spec, surf)


def build_put_surface(
    spec: ModelSpec,
    s_grid,
    y_grid,
    step_rel_tol=STEP_REL_TOL,
    diag_curve=None,
) -> BoundarySurface:
    """Integrate the put barrier up each fixed-y slice from the corner s = y.

    Next to the corner the drawdown floor sits at the bottom of the x-line,
    so the slice starts from the diagonal-restricted maximum-only curve,
    which is integrated once and shared by every slice.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)
    eps = EDGE_FRACTION * spec.strike
    if diag_curve is None:
        diag_curve = diagonal_put_curve(spec)
    starts = y_grid + eps
    entry = np.searchsorted(s_grid, starts, side="left")
    inside = entry < s_grid.size
    entry = np.where(inside, entry, -1)
    seeds = np.full(y_grid.shape, np.nan)
    seeds[inside] = diag_curve(starts[inside])

    def rhs(fx, t, g):
        d, den = put_slice_rhs(spec, t, fx, g)
        return d, den

    def con(fx, t, g):
        return (g > 0.0) & (g < _put_constraint_cap(spec, t, fx))

    values, status = _march_surface(
        spec, y_grid, s_grid, starts, seeds, entry, rhs, con,
        forward=True, step_rel_tol=step_rel_tol,
    )
    for j in np.flatnonzero(entry < 0):
        status[j] = ("outside", np.nan)
    surf = BoundarySurface(s_grid, y_grid, values.T, "put", status)
    return detect_regions_3d(spec, surf)


@lru_cache(maxsize=8)
def diagonal_put_curve(spec: ModelSpec):
    """Maximum-only put curve for the diagonal-restricted coefficients."""
    dspec = spec.diagonal_spec()
    return PutSolution2D(dspec).curve


def _march_slice(f, t0, g0, nodes, step_rel_tol, what):
    """Strict single-slice march used by the per-slice entry points.

    Raises on a failed step check; the caller's rhs closure raises on a
    denominator sign change.  A constraint breach (signalled by the closure
    returning None) ends the slice: remaining nodes stay NaN.
    """
    vals = np.full(len(nodes), np.nan)
    t, g = float(t0), float(g0)
    for k, t_next in enumerate(nodes):
        g_new, rel = checked_step(f, t, g, float(t_next) - t)
        if not np.isfinite(g_new):
            break
        if float(rel) > step_rel_tol:
            raise StepError(
                f"{what} step from {t:g} failed its error check "
                f"(relative estimate {float(rel):.3e}); use a finer grid"
            )
        t, g = float(t_next), float(g_new)
        vals[k] = g
    return vals


def call_boundary_slice(spec: ModelSpec, s, y_grid, step_rel_tol=STEP_REL_TOL):
    """Call barrier on the fixed-s slice at the given descending y nodes.

    Seeded at y = s - eps from the reachable-maximum form and integrated
    downward in y.  Nodes past a constraint breach (barrier at or below the
    reachable-maximum floor) are returned as NaN.
    """
    s = float(s)
    y_grid = np.asarray(y_grid, dtype=float)
    eps = EDGE_FRACTION * spec.strike
    if s <= eps:
        raise DomainError(f"slice level s={s} must exceed the edge offset")
    if y_grid.size and (np.any(np.diff(y_grid) >= 0) or y_grid[0] > s - eps):
        raise DomainError("y_grid must descend strictly from below s")
    start = s - eps
    g1 = float(roots_arrays(spec, s, start)[0])
    seed = g1 * spec.strike / (g1 - 1.0)
    den_sign = 0.0

    def f(y, b):
        nonlocal den_sign
        d, den = call_slice_rhs(spec, s, y, b)
        den = float(den)
        if den_sign == 0.0:
            den_sign = np.sign(den)
        if den * den_sign <= 1e-12 * spec.strike:
            raise SingularDenominator(
                f"slice denominator vanished near y={float(y):g} on slice s={s:g}"
            )
        if not b > _call_constraint_floor(spec, s, y):
            return np.nan
        return d

    return _march_slice(f, start, seed, y_grid, step_rel_tol, f"slice s={s:g}")


def put_boundary_slice(spec: ModelSpec, y, s_grid, step_rel_tol=STEP_REL_TOL):
    """Put barrier on the fixed-y slice at the given ascending s nodes.

    Seeded at s = y + eps from the diagonal-restricted maximum-only curve and
    integrated upward in s.  Nodes past a constraint breach (barrier leaving
    (0, min(strike, r strike / delta))) are returned as NaN.
    """
    y = float(y)
    s_grid = np.asarray(s_grid, dtype=float)
    eps = EDGE_FRACTION * spec.strike
    if s_grid.size and (np.any(np.diff(s_grid) <= 0) or s_grid[0] < y + eps):
        raise DomainError("s_grid must ascend strictly from above y")
    start = y + eps
    seed = float(diagonal_put_curve(spec)(start))
    den_sign = 0.0

    def f(s, a):
        nonlocal den_sign
        d, den = put_slice_rhs(spec, s, y, a)
        den = float(den)
        if den_sign == 0.0:
            den_sign = np.sign(den)
        if den * den_sign <= 1e-12 * spec.strike:
            raise SingularDenominator(
                f"slice denominator vanished near s={float(s):g} on slice y={y:g}"
            )
        if not (0.0 < a < _put_constraint_cap(spec, s, y)):
            return np.nan
        return d

    return _march_slice(f, start, seed, s_grid, step_rel_tol, f"slice y={y:g}")


def detect_regions_3d(
    spec: ModelSpec, surface: BoundarySurface, max_pairs=MAX_SWITCH_PAIRS
) -> BoundarySurface:
    """Label every lattice node and trace the region-splitting curves.

    Nodes sort into "stop", "direct", "reflect" (empty string off the state
    space or past a flagged slice).  Each integration slice is scanned for
    crossings against both reference lines; runs of more than max_pairs
    crossing pairs are truncated with a warning.  The cap curve collects,
    for the call, the last reflect-to-direct crossing in s per y-row and,
    for the put, the first floor crossing in y per s-column.
    """
    s_grid, y_grid, v = surface.s_grid, surface.y_grid, surface.values
    n_s, n_y = v.shape
    valid = np.isfinite(v) & (y_grid[None, :] < s_grid[:, None])
    labels = np.full(v.shape, "", dtype="<U8")
    ss = np.broadcast_to(s_grid[:, None], v.shape)
    floor = ss - np.broadcast_to(y_grid[None, :], v.shape)
    if surface.kind == "call":
        labels[valid & (v > ss)] = "reflect"
        labels[valid & (v < floor)] = "stop"
        labels[valid & (v >= floor) & (v <= ss)] = "direct"
    else:
        labels[valid & (v > ss)] = "stop"
        labels[valid & (v < floor)] = "reflect"
        labels[valid & (v >= floor) & (v <= ss)] = "direct"
    surface.labels = labels

    switches = []
    if surface.kind == "call":
        for i in range(n_s):
            ok = valid[i]
            rec = {"reflect": [], "stop": []}
            if ok.sum() >= 2:
                yy = y_grid[ok]
                bb = v[i, ok]
                rec["reflect"] = _capped(
                    detect_switch_points(yy, bb, np.full(yy.shape, s_grid[i])),
                    max_pairs, f"slice s={s_grid[i]:g} vs reachable-max line",
                )
                rec["stop"] = _capped(
                    detect_switch_points(yy, bb, s_grid[i] - yy),
                    max_pairs, f"slice s={s_grid[i]:g} vs floor line",
                )
            switches.append(rec)
        cap = np.full(n_y, np.nan)
        for j in range(n_y):
            ok = valid[:, j]
            if ok.sum() >= 2:
                pts = detect_switch_points(
                    s_grid[ok], v[ok, j], s_grid[ok]
                )
                enters = [p for p, d in pts if d == "enter"]
                if enters:
                    cap[j] = enters[-1]
    else:
        for j in range(n_y):
            ok = valid[:, j]
            rec = {"reflect": [], "stop": []}
            if ok.sum() >= 2:
                ssl = s_grid[ok]
                aa = v[ok, j]
                rec["stop"] = _capped(
                    detect_switch_points(ssl, aa, ssl),
                    max_pairs, f"slice y={y_grid[j]:g} vs reachable-max line",
                )
                rec["reflect"] = _capped(
                    detect_switch_points(ssl, aa, ssl - y_grid[j]),
                    max_pairs, f"slice y={y_grid[j]:g} vs floor line",
                )
            switches.append(rec)
        cap = np.full(n_s, np.nan)
        for i in range(n_s):
            ok = valid[i]
            if ok.sum() >= 2:
                pts = detect_switch_points(
                    y_grid[ok], v[i, ok], s_grid[i] - y_grid[ok]
                )
                exits = [p for p, d in pts if d == "exit"]
                if exits:
                    cap[i] = exits[0]
    finite_cap = cap[np.isfinite(cap)]
    if finite_cap.size >= 2:
        d = np.diff(finite_cap)
        if np.any(d > 0) and np.any(d < 0):
            warnings.warn(
                "region cap curve is not monotone; treat region ordering "
                "with care or refine the lattice",
                ResolutionWarning,
                stacklevel=2,
            )
    surface.slice_switches = switches
    surface.cap_curve = cap
    return surface


def _capped(points, max_pairs, what):
    if len(points) > 2 * max_pairs:
        warnings.warn(
            f"more than {max_pairs} switch pairs on {what}; keeping the first "
            f"{2 * max_pairs}",
            ResolutionWarning,
            stacklevel=3,
        )
        return points[: 2 * max_pairs]
    return points


def _cell_crossing(p0, p1, d0, d1):
    """Linear zero of d between positions p0 and p1."""
    return p0 + (p1 - p0) * d0 / (d0 - d1)


def _quad_zero(ps, ds, lo, hi, lin):
    """Zero of the parabola through three samples, kept inside [lo, hi].

    Newton iteration started from the linear estimate; any failure to land
    in the bracket falls back to that estimate, clipped.  Curvature of the
    stopping curve otherwise leaves an O(step^2) bias in closure positions,
    which the amplifying power of a long x-line turns into visible value
    error near junctions.
    """
    start = min(max(float(lin), lo), hi)
    pa, pb, pc = (float(p) for p in ps)
    da, db, dc = (float(d) for d in ds)
    f01 = (db - da) / (pb - pa)
    f12 = (dc - db) / (pc - pb)
    f012 = (f12 - f01) / (pc - pa)
    z = start
    for _ in range(12):
        val = da + (z - pa) * (f01 + f012 * (z - pb))
        der = f01 + f012 * ((z - pa) + (z - pb))
        if der == 0.0 or not np.isfinite(der):
            return start
        step = val / der
        z -= step
        if abs(step) <= 1e-15 * max(abs(lo), abs(hi), 1.0):
            break
    if not np.isfinite(z) or z < lo or z > hi:
        return start
    return z


def _extra_node(valid, a, b):
    """Index of a third sample adjacent to the bracket [a, b], if any."""
    if valid(a - 1):
        return a - 1
    if valid(b + 1):
        return b + 1
    return None


def build_reflection_regions(spec: ModelSpec, surface: BoundarySurface):
    """Solve the coefficient system on every connected reflected component.

    Closures are read off the lattice: a column that runs into the diagonal
    pins the extrapolated C2 to zero there; a line that runs into a stopping
    curve pins the two-power combination to the payoff at the located
    crossing, refined through three lattice samples where the stopping curve
    is curved (imposed through a virtual node so the pin costs no
    extrapolation error); a put row that reaches the far truncation edge pins
    C1 to zero.  A component cut off by a flagged slice or by the lattice
    edge cannot be closed and raises UnderdeterminedRegion.
    """
    if surface.labels is None:
        detect_regions_3d(spec, surface)
    s_grid, y_grid, v = surface.s_grid, surface.y_grid, surface.values
    n_s, n_y = v.shape
    L = spec.strike
    mask = surface.labels == "reflect"
    comp, n_comp = ndimage.label(mask)
    grids = []
    for c in range(1, n_comp + 1):
        active = comp == c
        col_cl = []
        row_cl = []
        for i in range(n_s):
            idx = np.flatnonzero(active[i])
            if not idx.size:
                continue
            j2 = idx[-1]
            above = j2 + 1

            def dcol(k, i=i):
                return v[i, k] - (s_grid[i] - y_grid[k])

            if above >= n_y or y_grid[above] >= s_grid[i]:
                if surface.kind == "call":
                    col_cl.append(ColumnClosure(i, "c2_zero", y_pos=s_grid[i]))
                else:
                    # floor crossing sits between the last node and the
                    # diagonal; extrapolate the barrier through the top
                    # column samples (flat only when the column is too short)
                    if j2 >= 1 and np.isfinite(v[i, j2 - 1]):
                        lin = _cell_crossing(
                            y_grid[j2 - 1], y_grid[j2], dcol(j2 - 1), dcol(j2)
                        )
                        if j2 >= 2 and np.isfinite(v[i, j2 - 2]):
                            y_star = _quad_zero(
                                (y_grid[j2 - 2], y_grid[j2 - 1], y_grid[j2]),
                                (dcol(j2 - 2), dcol(j2 - 1), dcol(j2)),
                                y_grid[j2], s_grid[i], lin,
                            )
                        else:
                            y_star = min(max(lin, y_grid[j2]), s_grid[i])
                    else:
                        y_star = min(s_grid[i] - v[i, j2], s_grid[i])
                    x_base = s_grid[i] - y_star
                    col_cl.append(
                        ColumnClosure(
                            i, "combo", y_pos=y_star, x_base=x_base, target=L - x_base
                        )
                    )
                continue
            lab = surface.labels[i, above]
            if lab == "":
                raise UnderdeterminedRegion(
                    f"reflected column at s={s_grid[i]:g} is cut by a flagged "
                    "slice; refine the lattice or the step tolerance"
                )
            def col_valid(k, i=i):
                return 0 <= k < n_y and np.isfinite(v[i, k]) and y_grid[k] < s_grid[i]

            if surface.kind == "call":
                def dcall(k, i=i):
                    return v[i, k] - s_grid[i]

                lin = _cell_crossing(
                    y_grid[j2], y_grid[above], dcall(j2), dcall(above)
                )
                k3 = _extra_node(col_valid, j2, above)
                if k3 is not None:
                    y_star = _quad_zero(
                        (y_grid[k3], y_grid[j2], y_grid[above]),
                        (dcall(k3), dcall(j2), dcall(above)),
                        y_grid[j2], y_grid[above], lin,
                    )
                else:
                    y_star = lin
                col_cl.append(
                    ColumnClosure(
                        i, "combo", y_pos=y_star,
                        x_base=s_grid[i], target=s_grid[i] - L,
                    )
                )
            else:
                lin = _cell_crossing(
                    y_grid[j2], y_grid[above], dcol(j2), dcol(above)
                )
                k3 = _extra_node(col_valid, j2, above)
                if k3 is not None:
                    y_star = _quad_zero(
                        (y_grid[k3], y_grid[j2], y_grid[above]),
                        (dcol(k3), dcol(j2), dcol(above)),
                        y_grid[j2], y_grid[above], lin,
                    )
                else:
                    y_star = lin
                x_base = s_grid[i] - y_star
                col_cl.append(
                    ColumnClosure(
                        i, "combo", y_pos=y_star, x_base=x_base, target=L - x_base
                    )
                )
        for j in range(n_y):
            idx = np.flatnonzero(active[:, j])
            if not idx.size:
                continue
            i2 = idx[-1]
            right = i2 + 1
            if right >= n_s:
                if surface.kind == "put":
                    row_cl.append(RowClosure(j, "c1_zero"))
                else:
                    raise UnderdeterminedRegion(
                        f"reflected row at y={y_grid[j]:g} reaches the lattice "
                        "edge; enlarge the s-range"
                    )
                continue
            lab = surface.labels[right, j]
            if lab == "":
                raise UnderdeterminedRegion(
                    f"reflected row at y={y_grid[j]:g} is cut by a flagged "
                    "slice; refine the lattice or the step tolerance"
                )
            def row_valid(k, j=j):
                return 0 <= k < n_s and np.isfinite(v[k, j]) and s_grid[k] > y_grid[j]

            if surface.kind == "call" or lab == "stop":
                def drow(k, j=j):
                    return v[k, j] - s_grid[k]
            else:
                def drow(k, j=j):
                    return v[k, j] - (s_grid[k] - y_grid[j])

            lin = _cell_crossing(s_grid[i2], s_grid[right], drow(i2), drow(right))
            k3 = _extra_node(row_valid, i2, right)
            if k3 is not None:
                s_star = _quad_zero(
                    (s_grid[k3], s_grid[i2], s_grid[right]),
                    (drow(k3), drow(i2), drow(right)),
                    s_grid[i2], s_grid[right], lin,
                )
            else:
                s_star = lin
            if surface.kind == "call":
                row_cl.append(
                    RowClosure(
                        j, "combo", s_pos=s_star, x_base=s_star, target=s_star - L
                    )
                )
            else:
                x_base = s_star if lab == "stop" else s_star - y_grid[j]
                row_cl.append(
                    RowClosure(
                        j, "combo", s_pos=s_star, x_base=x_base, target=L - x_base
                    )
                )
        region = RegionSpec(s_grid, y_grid, active, col_cl, row_cl)
        grids.append(solve_reflection_region(spec, region))
    return grids


def _direct_coeffs(kind, g1, g2, level, strike, x_end=None):
    """Two-power coefficients pinned by value match and smooth fit at level.

    x_end is the exposed far end of the x-line (its top for puts, its floor
    for calls).  A level on the wrong side of g1 K/(g1-1) (calls) or
    g2 K/(g2-1) (puts) makes the complementary power's coefficient negative;
    that is harmless on a short line but on a long one the value dips below
    the payoff at the far end, which happens whenever integration noise tips
    a near-critical level across.  Past the tangency such a value is monotone
    toward the far end, and with both coefficients positive the value-payoff
    gap is convex with minimum zero at the level, so checking the far end
    alone decides dominance.  When it fails, the level is moved to the
    critical point; the matching conditions there are off by O(shift^2) only.
    """

    def pair(lv):
        if kind == "call":
            c1 = ((g2 - 1.0) * lv - g2 * strike) / ((g2 - g1) * lv**g1)
            c2 = ((g1 - 1.0) * lv - g1 * strike) / ((g1 - g2) * lv**g2)
        else:
            c1 = ((g2 - 1.0) * lv - g2 * strike) / ((g1 - g2) * lv**g1)
            c2 = ((g1 - 1.0) * lv - g1 * strike) / ((g2 - g1) * lv**g2)
        return c1, c2

    c1, c2 = pair(level)
    if x_end is not None and x_end > 0.0:
        val = c1 * x_end**g1 + c2 * x_end**g2
        gain = x_end - strike if kind == "call" else strike - x_end
        if val < max(gain, 0.0):
            crit = (
                g1 * strike / (g1 - 1.0)
                if kind == "call"
                else g2 * strike / (g2 - 1.0)
            )
            c1, c2 = pair(crit)
    return c1, c2


class _Solution3D:
    """Shared query machinery for the assembled three-dimensional solutions."""

    kind = ""

    def __init__(self, spec, surface, regions):
        self.spec = spec
        self.surface = surface
        self.regions = regions
        self._levels = {}
        self._boxes = []
        for g in regions:
            si = np.flatnonzero(g.active.any(axis=1))
            yi = np.flatnonzero(g.active.any(axis=0))
            self._boxes.append(
                (
                    g.s_grid[si[0]], g.s_grid[si[-1]],
                    g.y_grid[yi[0]], g.y_grid[yi[-1]],
                )
            )

    def _hop(self, fixed, t0, v0, t1):
        """Short checked march of the slice state from t0 to t1."""
        spec = self.spec
        if self.kind == "call":
            def f(t, g):
                return call_slice_rhs(spec, fixed, t, g)[0]
        else:
            def f(t, g):
                return put_slice_rhs(spec, t, fixed, g)[0]
        h = spec.strike / 64.0
        n = max(1, int(np.ceil(abs(t1 - t0) / h)))
        t, v = float(t0), float(v0)
        for k in range(n):
            t_next = t0 + (t1 - t0) * ((k + 1.0) / n)
            v, rel = checked_step(
                f, t, v, t_next - t, scale_floor=1e-12 * spec.strike
            )
            if not np.isfinite(v) or float(rel) > STEP_REL_TOL:
                raise StepError("refinement hop failed its error check")
            t = t_next
        return float(v)

    def boundary(self, s, y):
        """Barrier level of the x-line at (s, y).

        Lines whose interpolated level lies inside the line (the branch
        whose value assembly is pinned to the level) are re-marched from
        their diagonal seed to the query point, so the returned level
        carries integration accuracy rather than lattice interpolation
        accuracy.  Other lines, and lines the march cannot reach, return
        the interpolated surface level.
        """
        s = float(s)
        y = float(y)
        hit = self._levels.get((s, y))
        if hit is not None:
            return hit
        spec = self.spec
        eps = EDGE_FRACTION * spec.strike
        out = cheap = float(self.surface.level_smooth(s, y))
        if 0.0 <= y < s and s - y <= cheap <= s and s - y - eps <= 8.0 * spec.strike:
            try:
                if self.kind == "call":
                    g1 = float(roots_arrays(spec, s, s - eps)[0])
                    seed = g1 * spec.strike / (g1 - 1.0)
                    out = seed if y >= s - eps else self._hop(s, s - eps, seed, y)
                else:
                    seed = float(diagonal_put_curve(spec)(y + eps))
                    out = seed if s <= y + eps else self._hop(y, y + eps, seed, s)
            except (StepError, SingularDenominator, DomainError):
                out = cheap
        if len(self._levels) > 4096:
            self._levels.clear()
        self._levels[(s, y)] = out
        return out

    def _region_coeffs(self, s, y):
        if not self.regions:
            raise DomainError(
                "query falls in a reflected band but no reflected component "
                "was solved; enlarge the lattice"
            )
        best = None
        for g, (s0, s1, y0, y1) in zip(self.regions, self._boxes):
            d = max(s0 - s, 0.0, s - s1) ** 2 + max(y0 - y, 0.0, y - y1) ** 2
            if best is None or d < best[0]:
                best = (d, g)
        return best[1].coeffs_at(s, y)

    def branch(self, s, y):
        """Which branch the x-line at (s, y) takes: stop, direct, or reflect."""
        level = float(self.boundary(s, y))
        if self.kind == "call":
            if level > s:
                return "reflect"
            if level < s - y:
                return "stop"
            return "direct"
        if level > s:
            return "stop"
        if level < s - y:
            return "reflect"
        return "direct"

    def coefficients(self, s, y):
        """Branch tag and two-power coefficients for the x-line at (s, y)."""
        br = self.branch(s, y)
        if br == "stop":
            return br, 0.0, 0.0
        g1, g2, *_ = (float(v) for v in roots_arrays(self.spec, s, y))
        if br == "reflect":
            c1, c2 = self._region_coeffs(s, y)
        else:
            c1, c2 = _direct_coeffs(
                self.kind, g1, g2, float(self.boundary(s, y)), self.spec.strike,
                x_end=s - y if self.kind == "call" else s,
            )
        return br, float(c1), float(c2)

    def value_line(self, x, s, y):
        """Value along one x-line; x may be an array within [s - y, s]."""
        s = float(s)
        y = float(y)
        x = np.asarray(x, dtype=float)
        slack = 1e-9 * self.spec.strike
        if not (0.0 <= y < s):
            raise DomainError(f"need 0 <= y < s, got s={s}, y={y}")
        if np.any(x < s - y - slack) or np.any(x > s + slack):
            raise DomainError("x outside [s - y, s]")
        x = np.clip(x, s - y, s)
        payoff = self.spec.payoff(x)
        br = self.branch(s, y)
        if br == "stop":
            return payoff
        g1, g2, *_ = (float(v) for v in roots_arrays(self.spec, s, y))
        if br == "reflect":
            c1, c2 = self._region_coeffs(s, y)
        else:
            level = float(self.boundary(s, y))
            c1, c2 = _direct_coeffs(
                self.kind, g1, g2, level, self.spec.strike,
                x_end=s - y if self.kind == "call" else s,
            )
            on_stop_side = x >= level if self.kind == "call" else x <= level
            cont = c1 * x**g1 + c2 * x**g2
            return np.where(on_stop_side, payoff, cont)
        return c1 * x**g1 + c2 * x**g2

    def value(self, x, s, y):
        return float(self.value_line(np.asarray([x], dtype=float), s, y)[0])


class CallSolution3D(_Solution3D):
    """Assembled perpetual call solution over the (x, s, y) state space."""

    kind = "call"

    def __init__(
        self,
        spec: ModelSpec,
        n_s: int = 193,
        n_y: int = 129,
        s_lo=None,
        s_hi=None,
        y_hi=None,
        step_rel_tol=STEP_REL_TOL,
    ):
        if spec.payoff_kind != "call":
            raise DomainError("spec is not a call model")
        eps = EDGE_FRACTION * spec.strike
        s_hi = float(s_hi) if s_hi is not None else spec.domain_s_max
        s_lo = float(s_lo) if s_lo is not None else 1e-2 * spec.strike
        y_hi = (
            float(y_hi)
            if y_hi is not None
            else min(spec.domain_y_max, s_hi - 2.0 * eps)
        )
        s_grid = np.linspace(s_lo, s_hi, int(n_s))
        y_grid = np.linspace(0.0, y_hi, int(n_y))
        surface = build_call_surface(spec, s_grid, y_grid, step_rel_tol)
        regions = build_reflection_regions(spec, surface)
        super().__init__(spec, surface, regions)


class PutSolution3D(_Solution3D):
    """Assembled perpetual put solution over the (x, s, y) state space."""

    kind = "put"

    def __init__(
        self,
        spec: ModelSpec,
        n_s: int = 193,
        n_y: int = 129,
        s_lo=None,
        s_hi=None,
        y_hi=None,
        step_rel_tol=STEP_REL_TOL,
    ):
        if spec.payoff_kind != "put":
            raise DomainError("spec is not a put model")
        eps = EDGE_FRACTION * spec.strike
        s_hi = float(s_hi) if s_hi is not None else spec.domain_s_max
        s_lo = float(s_lo) if s_lo is not None else 1e-2 * spec.strike
        y_hi = (
            float(y_hi)
            if y_hi is not None
            else min(spec.domain_y_max, s_hi - 2.0 * eps)
        )
        s_grid = np.linspace(s_lo, s_hi, int(n_s))
        y_grid = np.linspace(0.0, y_hi, int(n_y))
        surface = build_put_surface(spec, s_grid, y_grid, step_rel_tol)
        regions = build_reflection_regions(spec, surface)
        super().__init__(spec, surface, regions)


@lru_cache(maxsize=4)
def _default_solution_3d(spec: ModelSpec):
    cls = CallSolution3D if spec.payoff_kind == "call" else PutSolution3D
    return cls(spec)


def call_value_3d(spec: ModelSpec, x, s, y):
    if spec.payoff_kind != "call":
        raise DomainError("spec is not a call model")
    return _default_solution_3d(spec).value(x, s, y)


def put_value_3d(spec: ModelSpec, x, s, y):
    if spec.payoff_kind != "put":
        raise DomainError("spec is not a put model")
    return _default_solution_3d(spec).value(x, s, y)
