"""Transport with stretching, dy/dt + v dy/dx = -2 y dv/dx, by backward characteristics.

Each node at the target time is traced back along dphi/ds = v(s, phi) until it
reaches the start of the velocity history (origin in the initial data) or an
endpoint (origin in the boundary data).  Along the way the stretch
S = int dv/dx(s, phi(s)) ds is accumulated, and the momentum is the origin
value times exp(-2 S).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .core import Grid, ScalarField, TimeSampler, derivative_array, interpolate_many

INTERIOR, LEFT, RIGHT = 0, 1, 2
ORIGIN_NAMES = {INTERIOR: "interior", LEFT: "left", RIGHT: "right"}
BOUND_SLACK = 1.0 + 1e-6
BISECTION_REL_TOL = 1e-12
TOUCH_TOL = 1e-10


class TransportError(RuntimeError):
    """Characteristic integration failed or violated the L-infinity bound."""


def default_eps_v(v_sup: float) -> float:
    return 1e-8 * max(1.0, v_sup)


@dataclass(frozen=True, eq=False)
class VelocityHistory:
    """Velocity snapshots on one grid, linear in time between snapshots."""

    times: np.ndarray
    fields: tuple

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise ValueError("need at least one snapshot")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")
        fields = tuple(self.fields)
        if len(fields) != times.size:
            raise ValueError("one field per snapshot time")
        grid = fields[0].grid
        if any(f.grid != grid for f in fields):
            raise ValueError("all snapshots must share a grid")
        values = np.stack([f.values for f in fields])
        if not np.all(np.isfinite(values)):
            raise TransportError("non-finite velocity field")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "_v", values)
        object.__setattr__(self, "_vx", np.stack([derivative_array(v, 1) for v in values]))

    @classmethod
    def frozen(cls, v: ScalarField, t0: float, t1: float) -> "VelocityHistory":
        return cls(np.array([t0, t1]), (v, v))

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def span(self) -> float:
        return self.t_end - self.t_start

    def sup_v(self) -> float:
        return float(np.abs(self._v).max())

    def sup_vx(self) -> float:
        return float(np.abs(self._vx).max())

    def _weights(self, s):
        s = np.asarray(s, dtype=float)
        if self.times.size == 1:
            z = np.zeros(s.shape, dtype=np.int64)
            return z, z, np.zeros(s.shape)
        k = np.clip(np.searchsorted(self.times, s, side="right") - 1, 0, self.times.size - 2)
        lam = (s - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, k + 1, np.clip(lam, 0.0, 1.0)

    def _eval(self, table, s, x, limit):
        x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        s = np.broadcast_to(np.asarray(s, dtype=float), x.shape)
        k0, k1, lam = self._weights(s)
        out = np.zeros(x.shape)
        for k in np.unique(k0):
            m = k0 == k
            a = interpolate_many(table[k], x[m], limit=limit)
            b = interpolate_many(table[k + 1], x[m], limit=limit) if table.shape[0] > 1 else a
            out[m] = (1 - lam[m]) * a + lam[m] * b
        return out

    def velocity(self, s, x) -> np.ndarray:
        return self._eval(self._v, s, x, limit=False)

    def dvdx(self, s, x) -> np.ndarray:
        # limited so that |dv/dx| along paths never exceeds the nodal maximum
        return self._eval(self._vx, s, x, limit=True)

    def boundary_velocity(self, s, endpoint: str) -> np.ndarray:
        j = 0 if endpoint == "left" else -1
        k0, k1, lam = self._weights(s)
        return (1 - lam) * self._v[k0, j] + lam * self._v[k1, j]


@dataclass(frozen=True)
class CharacteristicTrace:
    origin: str
    entry_time: float
    entry_point: float
    stretch: float
    singular: bool = False

    def __post_init__(self):
        if self.origin not in ("interior", "left", "right"):
            raise ValueError(f"bad origin {self.origin!r}")


@dataclass
class TraceBatch:
    """Characteristics of many points sharing one target time."""

    origin: np.ndarray
    entry_time: np.ndarray
    entry_point: np.ndarray
    stretch: np.ndarray
    singular: np.ndarray
    outflow_crossing: np.ndarray

    def item(self, i: int) -> CharacteristicTrace:
        return CharacteristicTrace(ORIGIN_NAMES[int(self.origin[i])], float(self.entry_time[i]),
                                   float(self.entry_point[i]), float(self.stretch[i]),
                                   bool(self.singular[i]))


def _rk4(vh: VelocityHistory, t: float, tau: float, dtau, p, s_acc=None):
    """One backward RK4 step in tau = t - s for (position, stretch).

    With ``s_acc=None`` only the position is advanced.
    """
    def rhs(tt, pp):
        v = -vh.velocity(t - tt, pp)
        return v, (None if s_acc is None else vh.dvdx(t - tt, pp))

    k1p, k1s = rhs(tau, p)
    k2p, k2s = rhs(tau + dtau / 2, p + dtau / 2 * k1p)
    k3p, k3s = rhs(tau + dtau / 2, p + dtau / 2 * k2p)
    k4p, k4s = rhs(tau + dtau, p + dtau * k3p)
    p_new = p + dtau / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
    if s_acc is None:
        return p_new, None
    return p_new, s_acc + dtau / 6 * (k1s + 2 * k2s + 2 * k3s + k4s)


def _crossing_fraction(vh, t, tau, dtau, p0, target, tol_frac, max_iter):
    """Fraction of the step at which the RK4 path reaches ``target``.

    Bracketed Illinois false position; every third iterate is a bisection so
    the bracket halves at least that often.
    """
    sign = np.where(target == 0.0, 1.0, -1.0)
    lo, hi = np.zeros(p0.size), np.ones(p0.size)
    g_lo = sign * (p0 - target)
    g_hi = sign * (_rk4(vh, t, tau, dtau, p0)[0] - target)
    root = np.full(p0.size, np.nan)
    side_prev = np.zeros(p0.size)
    for k in range(max_iter):
        open_ = np.isnan(root) & (hi - lo > tol_frac)
        if not np.any(open_):
            break
        denom = g_lo - g_hi
        th = np.where((k % 3 == 2) | (denom <= 0), 0.5 * (lo + hi),
                      lo + (hi - lo) * g_lo / np.where(denom > 0, denom, 1.0))
        th = np.clip(th, lo, hi)
        g = np.full(p0.size, np.nan)
        g[open_] = sign[open_] * (_rk4(vh, t, tau, th[open_] * dtau, p0[open_])[0] - target[open_])
        hit = open_ & (np.abs(g) <= 1e-15)
        root[hit] = th[hit]
        inside = open_ & ~hit & (g > 0)
        outside = open_ & ~hit & (g <= 0)
        # Illinois: halve the stale end's value when the same end survives twice
        g_hi = np.where(inside & (side_prev == 1), 0.5 * g_hi, g_hi)
        g_lo = np.where(outside & (side_prev == -1), 0.5 * g_lo, g_lo)
        lo, g_lo = np.where(inside, th, lo), np.where(inside, g, g_lo)
        hi, g_hi = np.where(outside, th, hi), np.where(outside, g, g_hi)
        side_prev = np.where(inside, 1, np.where(outside, -1, side_prev))
    return np.where(np.isnan(root), hi, root)


def _hermite_extremes(p0, p1, d0, d1, dtau):
    """Min and max over one step of the cubic Hermite path through (p0, d0), (p1, d1).

    Catches paths that graze an endpoint between two RK4 nodes without
    crossing it (the boundary velocity then vanishes at the touch).
    """
    a = 2 * (p0 - p1) + dtau * (d0 + d1)
    b = 3 * (p1 - p0) - dtau * (2 * d0 + d1)
    c = dtau * d0
    # the start point was already checked as the end of the previous step
    lo, hi = p1.copy(), p1.copy()
    disc = b * b - 3 * a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    # stable roots of 3a th^2 + 2b th + c: q/(3a) and c/q
    q = -(b + np.copysign(sq, b))
    with np.errstate(divide="ignore", invalid="ignore"):
        roots = (q / (3 * a), c / q)
    for th in roots:
        inside = ok & np.isfinite(th) & (th > 0) & (th < 1)
        th = np.where(inside, th, 0.0)
        val = ((a * th + b) * th + c) * th + p0
        lo = np.where(inside, np.minimum(lo, val), lo)
        hi = np.where(inside, np.maximum(hi, val), hi)
    return lo, hi


def trace_many(vhist: VelocityHistory, t: float, xs, eps_v: float | None = None) -> TraceBatch:
    """Backward characteristics from (t, x) for every x in ``xs``."""
    xs = np.asarray(xs, dtype=float)
    if np.any(xs < 0) or np.any(xs > 1):
        raise ValueError("points must lie in [0, 1]")
    t0 = vhist.t_start
    if not t0 <= t <= vhist.t_end + 1e-14 * max(1.0, abs(t)):
        raise ValueError("target time outside the velocity history")
    if eps_v is None:
        eps_v = default_eps_v(vhist.sup_v())
    m = xs.size
    p = xs.copy()
    stretch = np.zeros(m)
    origin = np.full(m, INTERIOR)
    entry_time = np.full(m, t0)
    entry_point = xs.copy()
    active = np.ones(m, dtype=bool)
    touched = np.zeros(m, dtype=bool)

    total = t - t0
    h = vhist.grid.h
    sup = vhist.sup_v()
    max_dt = h / (2 * sup) if sup > 0 else np.inf
    if vhist.times.size > 1:
        max_dt = min(max_dt, float(np.diff(vhist.times).min()))
    n_steps = int(np.ceil(total / max_dt)) if total > 0 else 0
    dtau = total / n_steps if n_steps else 0.0
    tol = BISECTION_REL_TOL * max(vhist.span, 1e-300)
    n_bisect = int(np.ceil(np.log2(max(dtau, tol) / tol))) + 1 if n_steps else 0

    for step in range(n_steps):
        tau = step * dtau
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        p_old = p[idx]
        p_new, s_new = _rk4(vhist, t, tau, dtau, p_old, stretch[idx])
        out = (p_new < 0.0) | (p_new > 1.0)
        near = ~out & ((np.minimum(p_old, p_new) < 2 * dtau * sup)
                       | (np.maximum(p_old, p_new) > 1 - 2 * dtau * sup))
        if np.any(near):
            sel = idx[near]
            lo_p, hi_p = _hermite_extremes(
                p_old[near], p_new[near], -vhist.velocity(t - tau, p_old[near]),
                -vhist.velocity(t - tau - dtau, p_new[near]), dtau)
            touched[sel] |= (lo_p <= TOUCH_TOL) | (hi_p >= 1 - TOUCH_TOL)
        keep = idx[~out]
        p[keep], stretch[keep] = p_new[~out], s_new[~out]
        if np.any(out):
            cross = idx[out]
            side = np.where(p_new[out] < 0.0, LEFT, RIGHT)
            target = np.where(side == LEFT, 0.0, 1.0)
            frac = _crossing_fraction(vhist, t, tau, dtau, p[cross], target,
                                      tol / dtau, 3 * n_bisect)
            _, s_cross = _rk4(vhist, t, tau, frac * dtau, p[cross], stretch[cross])
            origin[cross] = side
            entry_time[cross] = t - (tau + frac * dtau)
            entry_point[cross] = target
            p[cross] = target
            stretch[cross] = s_cross
            active[cross] = False
    entry_point[active] = p[active]

    singular = np.zeros(m, dtype=bool)
    outflow = np.zeros(m, dtype=bool)
    for side, name in ((LEFT, "left"), (RIGHT, "right")):
        sel = origin == side
        if np.any(sel):
            vb = vhist.boundary_velocity(entry_time[sel], name)
            inflow = vb if side == LEFT else -vb
            singular[sel] = inflow <= eps_v
            outflow[sel] = inflow < -eps_v
    # paths issued from an endpoint at the initial time
    corner = (origin == INTERIOR) & ((entry_point <= 1e-12) | (entry_point >= 1 - 1e-12))
    singular |= corner | ((origin == INTERIOR) & touched)
    # boundary points at an instant of vanishing boundary velocity
    for end, name in ((0.0, "left"), (1.0, "right")):
        at_end = xs == end
        if np.any(at_end):
            singular[at_end] |= np.abs(vhist.boundary_velocity(np.array([t]), name)[0]) <= eps_v
    return TraceBatch(origin, entry_time, entry_point, stretch, singular, outflow)


def integrate_characteristic(vhist: VelocityHistory, t: float, x: float) -> CharacteristicTrace:
    return trace_many(vhist, t, np.array([x])).item(0)


def classify_singular(trace: CharacteristicTrace, vhist: VelocityHistory,
                      eps_v: float | None = None) -> str:
    """'singular' if the path meets an endpoint with boundary velocity below eps_v."""
    if eps_v is None:
        eps_v = default_eps_v(vhist.sup_v())
    if trace.singular:
        return "singular"
    if trace.origin == "interior":
        near_end = trace.entry_point <= 1e-12 or trace.entry_point >= 1 - 1e-12
        return "singular" if near_end else "regular"
    vb = float(vhist.boundary_velocity(np.array([trace.entry_time]), trace.origin)[0])
    inflow = vb if trace.origin == "left" else -vb
    return "singular" if inflow <= eps_v else "regular"


@dataclass(frozen=True)
class BoundaryMomentum:
    """Prescribed momentum entering at the left (ylc) and right (yrc) ends."""

    ylc: TimeSampler = field(default_factory=lambda: TimeSampler.constant(0.0))
    yrc: TimeSampler = field(default_factory=lambda: TimeSampler.constant(0.0))


def _origin_values(batch: TraceBatch, y_in: np.ndarray, bdata: BoundaryMomentum) -> np.ndarray:
    vals = np.zeros(batch.origin.size)
    inner = batch.origin == INTERIOR
    if np.any(inner):
        vals[inner] = interpolate_many(y_in, np.clip(batch.entry_point[inner], 0, 1), limit=True)
    for side, sampler in ((LEFT, bdata.ylc), (RIGHT, bdata.yrc)):
        sel = (batch.origin == side) & ~batch.singular
        if np.any(sel):
            vals[sel] = np.asarray(sampler(batch.entry_time[sel]), dtype=float)
    return vals


def evaluate_momentum(t: float, x: float, vhist: VelocityHistory, y0: ScalarField,
                      ylc: TimeSampler, yrc: TimeSampler) -> float:
    """Momentum at a single point (t, x); singular points are not filled here."""
    batch = trace_many(vhist, t, np.array([x]))
    val = _origin_values(batch, y0.values, BoundaryMomentum(ylc, yrc))
    return float(val[0] * np.exp(-2.0 * batch.stretch[0]))


@dataclass
class TransportResult:
    y: ScalarField
    batch: TraceBatch
    singular_nodes: np.ndarray
    bound: float


def _fill_singular(values: np.ndarray, singular: np.ndarray) -> np.ndarray:
    """Copy the nearest regular node into each singular node (ties go left)."""
    if not np.any(singular):
        return values
    regular = np.flatnonzero(~singular)
    if regular.size == 0:
        raise TransportError("every node lies on the singular set")
    out = values.copy()
    for j in np.flatnonzero(singular):
        out[j] = values[regular[np.argmin(np.abs(regular - j))]]
    return out


def transport_nodes(t_from: float, t_to: float, vhist: VelocityHistory, state_y: ScalarField,
                    bdata: BoundaryMomentum, eps_v: float | None = None) -> TransportResult:
    """Momentum at every node at ``t_to`` from ``state_y`` given at ``t_from``."""
    if not t_from < t_to:
        raise ValueError("need t_from < t_to")
    if abs(vhist.t_start - t_from) > 1e-12 * max(1.0, abs(t_from)):
        raise ValueError("velocity history must start at t_from")
    grid = state_y.grid
    batch = trace_many(vhist, t_to, grid.nodes, eps_v)
    raw = _origin_values(batch, state_y.values, bdata) * np.exp(-2.0 * batch.stretch)
    values = _fill_singular(raw, batch.singular)
    inflow_sup = 0.0
    if np.any((batch.origin == LEFT) & ~batch.singular):
        inflow_sup = max(inflow_sup, bdata.ylc.sup_norm(t_from, t_to))
    if np.any((batch.origin == RIGHT) & ~batch.singular):
        inflow_sup = max(inflow_sup, bdata.yrc.sup_norm(t_from, t_to))
    ref = max(state_y.max_abs(), inflow_sup)
    bound = ref * np.exp(2 * (t_to - t_from) * vhist.sup_vx())
    peak = float(np.abs(values).max())
    if not np.isfinite(peak) or peak > bound * BOUND_SLACK:
        raise TransportError(f"momentum {peak:.6g} exceeds the transport bound {bound:.6g}")
    return TransportResult(state_y.with_values(values, time_tag=t_to), batch,
                           np.flatnonzero(batch.singular), bound)


def transport_field(t_from: float, t_to: float, vhist: VelocityHistory, state_y: ScalarField,
                    bdata: BoundaryMomentum, eps_v: float | None = None) -> ScalarField:
    return transport_nodes(t_from, t_to, vhist, state_y, bdata, eps_v).y
