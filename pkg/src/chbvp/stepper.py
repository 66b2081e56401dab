"""Slab-by-slab Picard integration of the coupled transport-elliptic system.

On a slab [t_a, t_b] the map F takes a guessed velocity, transports the
momentum across the slab under it, and solves the elliptic problem at t_b.
Its fixed point is the coupled solution; the iteration is relaxed and the
slab is halved when it fails to converge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import Grid, ScalarField, TimeSampler, derivative_array, trapezoid_weights
from .elliptic import check_order, green_solve_ch, solve_an
from .transport import (
    BoundaryMomentum, TransportError, VelocityHistory, default_eps_v, transport_nodes,
)

log = logging.getLogger(__name__)

GUESS_STRATEGIES = ("previous", "zero", "extrapolate")
MIN_SLAB_FRACTION = 2.0 ** -10
TRACE_MATCH_TOL = 1e-12
SIGN_SAMPLES = 4097
ZERO_BAND_MERGE = 1e-6


class AdmissibilityError(ValueError):
    """Boundary data violates an admissibility condition."""


class NonConvergenceError(RuntimeError):
    """Picard iteration failed even on the smallest allowed slab."""


@dataclass(frozen=True, eq=False)
class Scenario:
    n: int
    T: float
    y0: ScalarField
    v_l: TimeSampler
    v_r: TimeSampler
    trace_l: tuple = ()
    trace_r: tuple = ()
    ylc: TimeSampler = field(default_factory=lambda: TimeSampler.constant(0.0))
    yrc: TimeSampler = field(default_factory=lambda: TimeSampler.constant(0.0))
    kappa: float = 0.0
    slab_dt: float = 0.01
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    relax: float = 1.0
    sign_change_cap: int = 64
    eps_v: float | None = None
    initial_guess: str = "previous"

    def __post_init__(self):
        check_order(self.n)
        if not self.trace_l:
            object.__setattr__(self, "trace_l", _default_traces(self.v_l, self.n))
        if not self.trace_r:
            object.__setattr__(self, "trace_r", _default_traces(self.v_r, self.n))
        for name in ("trace_l", "trace_r"):
            if len(getattr(self, name)) != self.n:
                raise ValueError(f"{name} must have n={self.n} components")
        if not self.T > 0 or not self.slab_dt > 0:
            raise ValueError("T and slab_dt must be positive")
        if not 0 < self.relax <= 1:
            raise ValueError("relax must lie in (0, 1]")
        if self.initial_guess not in GUESS_STRATEGIES:
            raise ValueError(f"initial_guess must be one of {GUESS_STRATEGIES}")
        if self.n > 1 and self.kappa != 0.0:
            raise ValueError("kappa is only used for n=1")

    @property
    def grid(self) -> Grid:
        return self.y0.grid

    def traces_at(self, t: float) -> tuple[tuple, tuple]:
        return (tuple(float(s(t)) for s in self.trace_l),
                tuple(float(s(t)) for s in self.trace_r))

    def elliptic_solve(self, y: ScalarField, t: float) -> ScalarField:
        bl, br = self.traces_at(t)
        if self.n == 1:
            v = green_solve_ch(y, self.kappa, bl[0], br[0])
        else:
            v = solve_an(self.n, y, bl, br)
        return v.with_values(v.values, time_tag=t)

    def boundary_momentum(self) -> BoundaryMomentum:
        return BoundaryMomentum(self.ylc, self.yrc)

    def with_(self, **changes) -> "Scenario":
        """Copy with changes; default traces follow a replaced v_l / v_r."""
        for side in ("l", "r"):
            v_old, tr = getattr(self, f"v_{side}"), getattr(self, f"trace_{side}")
            if f"v_{side}" in changes and f"trace_{side}" not in changes and tr[0] is v_old:
                changes[f"trace_{side}"] = (changes[f"v_{side}"],) + tuple(tr[1:])
        return replace(self, **changes)


def _default_traces(v: TimeSampler, n: int) -> tuple:
    return (v,) + tuple(TimeSampler.constant(0.0) for _ in range(n - 1))


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignInterval:
    t0: float
    t1: float
    sign_l: int
    sign_r: int

    @property
    def gamma_l(self) -> bool:
        """Left inflow: v_l > 0."""
        return self.sign_l > 0

    @property
    def gamma_r(self) -> bool:
        """Right inflow: v_r < 0."""
        return self.sign_r < 0


def _sign(values, eps):
    values = np.asarray(values, dtype=float)
    return np.where(values > eps, 1, np.where(values < -eps, -1, 0))


def _switch_times(sampler: TimeSampler, T: float, eps: float, tol: float) -> list[float]:
    ts = np.linspace(0.0, T, SIGN_SAMPLES)
    codes = _sign(sampler(ts), eps)
    out = []
    for k in np.flatnonzero(codes[1:] != codes[:-1]):
        a, b = ts[k], ts[k + 1]
        ca = codes[k]
        while b - a > tol:
            m = 0.5 * (a + b)
            if _sign(sampler(m), eps) == ca:
                a = m
            else:
                b = m
        out.append(0.5 * (a + b))
    # a transversal crossing passes through the zero band in two nearby switches
    merged: list[list[float]] = []
    for t in out:
        if merged and t - merged[-1][-1] <= ZERO_BAND_MERGE * T:
            merged[-1].append(t)
        else:
            merged.append([t])
    return [float(np.mean(group)) for group in merged]


def check_admissible(scenario: Scenario) -> list[SignInterval]:
    """Split [0, T] where v_l or v_r changes sign; validate the trace data.

    Values with |v| <= eps (the zero band) count as their own sign class.
    """
    T = scenario.T
    ts = np.linspace(0.0, T, SIGN_SAMPLES)
    for name, v, traces in (("left", scenario.v_l, scenario.trace_l),
                            ("right", scenario.v_r, scenario.trace_r)):
        gap = np.abs(np.asarray(traces[0](ts), float) - np.asarray(v(ts), float))
        if np.any(~np.isfinite(gap)) or gap.max() > TRACE_MATCH_TOL:
            k = int(np.argmax(gap))
            raise AdmissibilityError(
                f"{name} trace: first component differs from v_{name[0]} by {gap[k]:.3g} "
                f"at t={ts[k]:.6g} (must match within {TRACE_MATCH_TOL:g})")
        for extra, sampler in (("ylc", scenario.ylc), ("yrc", scenario.yrc)):
            if not np.all(np.isfinite(sampler(ts))):
                raise AdmissibilityError(f"{extra} is not finite on [0, T]")
    sup = max(scenario.v_l.sup_norm(0, T), scenario.v_r.sup_norm(0, T))
    eps = scenario.eps_v if scenario.eps_v is not None else default_eps_v(sup)
    tol = 1e-12 * T
    cuts = []
    for name, v in (("v_l", scenario.v_l), ("v_r", scenario.v_r)):
        sw = _switch_times(v, T, eps, tol)
        if len(sw) > scenario.sign_change_cap:
            raise AdmissibilityError(
                f"{name} changes sign {len(sw)} times, more than the cap {scenario.sign_change_cap}")
        cuts.extend(sw)
    edges = sorted({0.0, T, *cuts})
    intervals = []
    for a, b in zip(edges[:-1], edges[1:]):
        m = 0.5 * (a + b)
        intervals.append(SignInterval(a, b, int(_sign(scenario.v_l(m), eps)),
                                      int(_sign(scenario.v_r(m), eps))))
    return intervals


# ---------------------------------------------------------------------------
# Picard map and slabs
# ---------------------------------------------------------------------------

EllipticSolver = Callable[[Scenario, ScalarField, float], ScalarField]


def _default_elliptic(scenario: Scenario, y: ScalarField, t: float) -> ScalarField:
    return scenario.elliptic_solve(y, t)


def w1inf(values: np.ndarray) -> float:
    """Discrete W^{1,inf} norm: max|f| + max|f'|."""
    return float(np.abs(values).max() + np.abs(derivative_array(values, 1)).max())


@dataclass
class PicardResult:
    u: VelocityHistory
    residual: float
    y_b: ScalarField
    singular_nodes: np.ndarray
    transport_bound: float


def picard_map(v_guess: VelocityHistory, scenario: Scenario, slab: tuple[float, float],
               y_in: ScalarField, elliptic: EllipticSolver = _default_elliptic) -> PicardResult:
    """F(v_guess): transport y_in across the slab, then solve for the velocity at t_b."""
    t_a, t_b = slab
    res = transport_nodes(t_a, t_b, v_guess, y_in, scenario.boundary_momentum(), scenario.eps_v)
    u_b = elliptic(scenario, res.y, t_b)
    g_b = v_guess.fields[-1]
    u = VelocityHistory(np.array([t_a, t_b]), (v_guess.fields[0], u_b))
    return PicardResult(u, w1inf(u_b.values - g_b.values), res.y, res.singular_nodes, res.bound)


@dataclass
class State:
    t: float
    y: ScalarField
    v: ScalarField


@dataclass
class SlabReport:
    t_a: float
    t_b: float
    iterations: int
    residual: float
    halvings: int = 0
    singular_nodes: int = 0
    residual_trace: list = field(default_factory=list)
    transport_bound: float = float("nan")
    y_sup: float = float("nan")


def _initial_guess(scenario: Scenario, state: State, prev: State | None, t_b: float) -> ScalarField:
    kind = scenario.initial_guess
    if kind == "zero":
        return ScalarField.zeros(scenario.grid, time_tag=t_b)
    if kind == "extrapolate" and prev is not None and state.t > prev.t:
        lam = (t_b - state.t) / (state.t - prev.t)
        return state.v.with_values(state.v.values + lam * (state.v.values - prev.v.values), t_b)
    return state.v.with_values(state.v.values, t_b)


def _iterate(state: State, scenario: Scenario, t_b: float, guess: ScalarField,
             elliptic: EllipticSolver) -> tuple[State, SlabReport] | None:
    g = guess
    trace = []
    for it in range(1, scenario.picard_max_iter + 1):
        vh = VelocityHistory(np.array([state.t, t_b]), (state.v, g))
        try:
            pr = picard_map(vh, scenario, (state.t, t_b), state.y, elliptic)
        except TransportError as exc:
            log.debug("transport failure on slab [%g, %g]: %s", state.t, t_b, exc)
            return None
        trace.append(pr.residual)
        u_b = pr.u.fields[-1]
        if pr.residual < scenario.picard_tol:
            rep = SlabReport(state.t, t_b, it, pr.residual, 0, int(pr.singular_nodes.size), trace,
                             float(pr.transport_bound), pr.y_b.max_abs())
            return State(t_b, pr.y_b, u_b), rep
        if not np.isfinite(pr.residual):
            return None
        r = scenario.relax
        g = u_b if r == 1.0 else g.with_values((1 - r) * g.values + r * u_b.values)
    return None


def solve_slab(state: State, scenario: Scenario, t_b: float, prev: State | None = None,
               elliptic: EllipticSolver = _default_elliptic, _depth: int = 0
               ) -> tuple[State, list[SlabReport]]:
    """Advance ``state`` to ``t_b``, halving the slab when Picard stalls."""
    out = _iterate(state, scenario, t_b, _initial_guess(scenario, state, prev, t_b), elliptic)
    if out is not None:
        new, rep = out
        rep.halvings = _depth
        return new, [rep]
    length = t_b - state.t
    if length / 2 < MIN_SLAB_FRACTION * scenario.slab_dt:
        raise NonConvergenceError(
            f"Picard iteration did not converge on [{state.t:.6g}, {t_b:.6g}] after "
            f"{scenario.picard_max_iter} iterations, even at slab length {length:.3g}; "
            "existence is only guaranteed on a short enough time interval")
    mid = state.t + 0.5 * length
    s1, r1 = solve_slab(state, scenario, mid, prev, elliptic, _depth + 1)
    s2, r2 = solve_slab(s1, scenario, t_b, state, elliptic, _depth + 1)
    return s2, r1 + r2


@dataclass
class SolutionHistory:
    scenario: Scenario
    states: list
    reports: list
    intervals: list

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def y_array(self) -> np.ndarray:
        return np.stack([s.y.values for s in self.states])

    def v_array(self) -> np.ndarray:
        return np.stack([s.v.values for s in self.states])

    def max_iterations(self) -> int:
        return max((r.iterations for r in self.reports), default=0)

    def max_residual(self) -> float:
        return max((r.residual for r in self.reports), default=0.0)


def slab_edges(T: float, slab_dt: float) -> np.ndarray:
    k = int(np.ceil(T / slab_dt - 1e-9))
    edges = np.minimum(np.arange(k + 1) * slab_dt, T)
    edges[-1] = T
    return edges


def run(scenario: Scenario, elliptic: EllipticSolver = _default_elliptic) -> SolutionHistory:
    """March to T; states are stored at the nominal slab ends only."""
    intervals = check_admissible(scenario)
    y0 = scenario.y0.with_values(scenario.y0.values, time_tag=0.0)
    state = State(0.0, y0, elliptic(scenario, y0, 0.0))
    states, reports = [state], []
    prev = None
    for t_b in slab_edges(scenario.T, scenario.slab_dt)[1:]:
        new, reps = solve_slab(state, scenario, float(t_b), prev, elliptic)
        reports.extend(reps)
        prev, state = state, new
        states.append(state)
    return SolutionHistory(scenario, states, reports, intervals)


# ---------------------------------------------------------------------------
# Weak formulation check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """phi(t, x) = P(x) (a + b t) with P given by polynomial coefficients."""

    coefficients: tuple
    a: float = 1.0
    b: float = 0.0

    def space(self, x):
        return np.polynomial.polynomial.polyval(x, self.coefficients)

    def space_dx(self, x):
        return np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(self.coefficients))

    def time(self, t):
        return self.a + self.b * t


def default_test_functions(vanish_at_ends: bool) -> list[TestFunction]:
    base = [(1.0,), (0.0, 1.0), (1.0, -2.0, 1.0), (0.2, 0.0, 0.0, 1.0)]
    if vanish_at_ends:
        # multiply by x(1 - x)
        base = [tuple(np.polynomial.polynomial.polymul(c, (0.0, 1.0, -1.0))) for c in base]
    out = []
    for c in base:
        out.append(TestFunction(tuple(c), 1.0, 0.0))
        out.append(TestFunction(tuple(c), 0.5, 1.0))
    return out


def weak_form_residual(history: SolutionHistory, tests: Sequence[TestFunction] | None = None) -> float:
    """Max over test functions of |LHS - RHS| in the weak transport formulation.

    int int (y phi_t + y v phi_x - y v_x phi)
        = int (y_r v_r phi(., 1) - y_l v_l phi(., 0)) + [int phi y dx]_{t0}^{t1},
    with trapezoid rules in x and t over the stored states.
    """
    sc = history.scenario
    if tests is None:
        tests = default_test_functions(sc.n > 1)
    grid = sc.grid
    x = grid.nodes
    w = trapezoid_weights(grid)
    ts = history.times
    ys, vs = history.y_array(), history.v_array()
    vxs = np.stack([derivative_array(v, 1) for v in vs])
    worst = 0.0
    for phi in tests:
        px, pdx = phi.space(x), phi.space_dx(x)
        pt = phi.time(ts)
        inner = (ys * vs * pdx - ys * vxs * px) @ w * pt + (ys * px) @ w * phi.b
        lhs = np.trapezoid(inner, ts)
        flux = ys[:, -1] * vs[:, -1] * phi.space(1.0) - ys[:, 0] * vs[:, 0] * phi.space(0.0)
        rhs = (np.trapezoid(flux * pt, ts)
               + float((ys[-1] * px) @ w) * pt[-1] - float((ys[0] * px) @ w) * pt[0])
        worst = max(worst, abs(lhs - rhs))
    return worst
