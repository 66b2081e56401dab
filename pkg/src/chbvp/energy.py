"""Relative-energy ledgers and stability certificates for pairs of runs.

For two runs with the same boundary fluxes, the difference of velocities
v~ = v1 - v2 drives E = ||v~||^2_{H^n}, E_l = |d^n v~(0)|^2 and
E_r = |d^n v~(1)|^2.  The functions here evaluate the energy identity, the
energy and auxiliary inequalities with explicit constants, and per-interval
Gronwall certificates over the sign partition of the fluxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

import numpy as np

from .core import Grid, ScalarField, derivative_array, endpoint_derivative, trapezoid_weights
from .elliptic import RELLICH_C, boundary_B, homogeneous_ul_ur, solve_zaremba
from .stepper import SignInterval, SolutionHistory

FLOOR = 1e-30
DEFAULT_C_MAX = 100.0
ZERO_TOL = 1e-20
# The auxiliary norms carry high derivatives of v~ and amplify Picard-level noise.
LEDGER_ZERO_TOL = 1e-16
RELLICH_SLACK = 1.05
SIDES = ("left", "right")


@lru_cache(maxsize=1)
def calibration() -> dict:
    """Constants fixed by the one-time calibration run (see scripts/calibrate.py)."""
    text = resources.files("chbvp").joinpath("data/calibration.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# Norms and pair data
# ---------------------------------------------------------------------------

def _sobolev_rows(values: np.ndarray, n: int, grid: Grid) -> np.ndarray:
    w = trapezoid_weights(grid)
    return sum((derivative_array(values, k) ** 2) @ w for k in range(n + 1))


def sobolev_norm_sq(f: ScalarField, n: int) -> float:
    """Sum over k <= n of the trapezoid integral of (d^k f)^2."""
    return float(_sobolev_rows(f.values[None, :], n, f.grid)[0])


def _deriv_rows(values: np.ndarray, order: int) -> np.ndarray:
    """Row-wise derivative of a (times, nodes) array."""
    return derivative_array(values, order)


def _endpoint_rows(values: np.ndarray, order: int, endpoint: str) -> np.ndarray:
    return np.array([endpoint_derivative(row, order, endpoint) for row in values])


@dataclass(frozen=True)
class RunPair:
    """Sum/difference fields of two runs on a shared discretization."""

    n: int
    kappa: float
    grid: Grid
    times: np.ndarray
    v_tilde: np.ndarray
    v_hat: np.ndarray
    y_tilde: np.ndarray
    y_hat: np.ndarray
    v_l: np.ndarray
    v_r: np.ndarray
    intervals: tuple
    same_momentum: bool
    momentum_differs: tuple = ()


def pair_runs(run1: SolutionHistory, run2: SolutionHistory) -> RunPair:
    s1, s2 = run1.scenario, run2.scenario
    if s1.n != s2.n or s1.kappa != s2.kappa:
        raise ValueError("runs must share order n and kappa")
    if s1.grid != s2.grid:
        raise ValueError("runs must share the spatial grid")
    t1, t2 = run1.times, run2.times
    if t1.shape != t2.shape or not np.array_equal(t1, t2):
        raise ValueError("runs must share the stored time points")
    if s1.v_l != s2.v_l or s1.v_r != s2.v_r or s1.trace_l != s2.trace_l or s1.trace_r != s2.trace_r:
        raise ValueError("runs must share the flux traces (v_l, v_r and higher traces)")
    v1, v2 = run1.v_array(), run2.v_array()
    y1, y2 = run1.y_array(), run2.y_array()
    return RunPair(
        n=s1.n, kappa=s1.kappa, grid=s1.grid, times=t1,
        v_tilde=v1 - v2, v_hat=0.5 * (v1 + v2), y_tilde=y1 - y2, y_hat=0.5 * (y1 + y2),
        v_l=np.asarray(s1.v_l(t1), float) * np.ones_like(t1),
        v_r=np.asarray(s1.v_r(t1), float) * np.ones_like(t1),
        intervals=tuple(run1.intervals),
        same_momentum=(s1.ylc == s2.ylc and s1.yrc == s2.yrc),
        momentum_differs=tuple(side for side, a, b in (("left", s1.ylc, s2.ylc),
                                                       ("right", s1.yrc, s2.yrc)) if a != b),
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class IntervalCertificate:
    interval: SignInterval
    case: str
    components: tuple
    c_hat: float
    passed: bool
    final_bound_ok: bool
    blow_up: tuple = ()
    applicable: bool = True


@dataclass
class Certificate:
    intervals: list
    chaining_ok: bool
    chaining: str
    c_max: float

    @property
    def passed(self) -> bool:
        """Every interval where the homogeneous estimate applies passes."""
        return all(c.passed for c in self.intervals if c.applicable)

    def to_dict(self) -> dict:
        return {
            "c_max": self.c_max,
            "passed": self.passed,
            "chaining_ok": self.chaining_ok,
            "chaining": self.chaining,
            "intervals": [{
                "t0": c.interval.t0, "t1": c.interval.t1,
                "sign_l": c.interval.sign_l, "sign_r": c.interval.sign_r,
                "case": c.case, "lyapunov": "+".join(c.components),
                "c_hat": c.c_hat, "passed": c.passed, "final_bound_ok": c.final_bound_ok,
                "blow_up": list(c.blow_up), "applicable": c.applicable,
            } for c in self.intervals],
        }


@dataclass
class EnergyReport:
    times: np.ndarray
    E: np.ndarray
    E_l: np.ndarray
    E_r: np.ndarray
    v_l: np.ndarray
    v_r: np.ndarray
    n: int = 1
    intervals: tuple = ()
    identity_residual: np.ndarray | None = None
    certificates: Certificate | None = None
    aux_norms: dict = field(default_factory=dict)
    momentum_differs: tuple = ()

    @property
    def scale(self) -> float:
        """Energy scale used to make margins dimensionless."""
        s = float(np.max(self.E + self.E_l + self.E_r, initial=0.0))
        return s if s > FLOOR else 1.0

    def component(self, name: str) -> np.ndarray:
        return {"E": self.E, "E_l": self.E_l, "E_r": self.E_r}[name]


@dataclass
class MarginSeries:
    """margin(t) = bound - observed; the proven continuum statement is margin >= 0."""

    times: np.ndarray
    margin: np.ndarray
    scale: float
    constant: float
    constant_kind: str

    @property
    def normalized(self) -> np.ndarray:
        return self.margin / self.scale

    @property
    def flagged(self) -> np.ndarray:
        return self.margin < 0

    def min_normalized(self) -> float:
        """Worst normalized margin; +inf for an empty series (nothing to check)."""
        return float(self.normalized.min()) if self.margin.size else float("inf")


def relative_energy(run1: SolutionHistory, run2: SolutionHistory) -> EnergyReport:
    """E, E_l, E_r series; for n = 1 also the energy identity residual."""
    p = pair_runs(run1, run2)
    rep = _report_from_pair(p)
    if p.n == 1:
        rep.identity_residual = _identity_terms(p).residual
    return rep


def _report_from_pair(p: RunPair) -> EnergyReport:
    E = _sobolev_rows(p.v_tilde, p.n, p.grid)
    E_l = _endpoint_rows(p.v_tilde, p.n, "left") ** 2
    E_r = _endpoint_rows(p.v_tilde, p.n, "right") ** 2
    return EnergyReport(p.times, E, E_l, E_r, p.v_l, p.v_r, p.n, p.intervals,
                        momentum_differs=p.momentum_differs)


# ---------------------------------------------------------------------------
# Energy identity (n = 1)
# ---------------------------------------------------------------------------

@dataclass
class IdentityTerms:
    """Per consecutive state pair: the six terms of the identity and their sum."""

    times: np.ndarray
    energy_jump: np.ndarray
    flux_right: np.ndarray
    flux_left: np.ndarray
    stretch: np.ndarray
    transport: np.ndarray

    @property
    def residual(self) -> np.ndarray:
        return self.energy_jump + self.flux_right - self.flux_left + self.stretch + self.transport

    @property
    def cumulative(self) -> np.ndarray:
        """Signed residual of the identity on [t_0, t_k] for k = 1, 2, ..."""
        return np.cumsum(self.residual)


def _pairwise_trapezoid(f: np.ndarray, t: np.ndarray) -> np.ndarray:
    return 0.5 * (f[1:] + f[:-1]) * np.diff(t)


def _identity_terms(p: RunPair) -> IdentityTerms:
    if p.n != 1:
        raise ValueError("the energy identity is stated for n = 1")
    w = trapezoid_weights(p.grid)
    vt, vh = p.v_tilde, p.v_hat
    vtx, vhx = _deriv_rows(vt, 1), _deriv_rows(vh, 1)
    E = _sobolev_rows(vt, 1, p.grid)
    E_l = _endpoint_rows(vt, 1, "left") ** 2
    E_r = _endpoint_rows(vt, 1, "right") ** 2
    stretch = ((3 * vt**2 + vtx**2) * vhx) @ w
    transport = (2 * vt * vtx * (vh - p.y_hat + p.kappa)) @ w
    t = p.times
    return IdentityTerms(
        times=t,
        energy_jump=np.diff(E),
        flux_right=_pairwise_trapezoid(E_r * p.v_r, t),
        flux_left=_pairwise_trapezoid(E_l * p.v_l, t),
        stretch=_pairwise_trapezoid(stretch, t),
        transport=_pairwise_trapezoid(transport, t),
    )


def energy_identity_terms(run1: SolutionHistory, run2: SolutionHistory) -> IdentityTerms:
    return _identity_terms(pair_runs(run1, run2))


def energy_identity_residual(run1: SolutionHistory, run2: SolutionHistory) -> np.ndarray:
    """Signed sum of the identity terms over each consecutive pair of states."""
    return energy_identity_terms(run1, run2).residual


# ---------------------------------------------------------------------------
# Energy inequality (n = 1)
# ---------------------------------------------------------------------------

def _sup_norms(p: RunPair) -> dict:
    vhx = _deriv_rows(p.v_hat, 1)
    return {"v": float(np.abs(p.v_hat).max()), "vx": float(np.abs(vhx).max()),
            "y": float(np.abs(p.y_hat).max())}


def explicit_energy_constant(p: RunPair) -> float:
    """4 ||v^||_{L^inf W^{1,inf}} + ||v^||_inf + ||y^||_inf + |kappa|."""
    s = _sup_norms(p)
    return 4 * max(s["v"], s["vx"]) + s["v"] + s["y"] + abs(p.kappa)


def time_derivative(f: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Central-difference d/dt of a sampled energy.

    Where the stencil is strictly positive the derivative is taken as
    f (log f)', which is exact for exponential growth and keeps the
    difference error relative to f when an inflow drives fast growth.
    """
    f = np.asarray(f, float)
    if t.size < 2:
        return np.zeros_like(f)
    plain = np.gradient(f, t)
    pos = f > FLOOR
    stencil = pos.copy()
    stencil[1:] &= pos[:-1]
    stencil[:-1] &= pos[1:]
    logd = f * np.gradient(np.log(np.where(pos, f, 1.0)), t)
    return np.where(stencil, logd, plain)


def energy_inequality_check(report: EnergyReport, runs: Sequence[SolutionHistory]) -> MarginSeries:
    """margin = C E - (E' + E_r v_r - E_l v_l) with the explicit constant C."""
    if report.n != 1:
        raise ValueError("energy_inequality_check is stated for n = 1")
    p = pair_runs(*runs)
    c = explicit_energy_constant(p)
    dE = time_derivative(report.E, report.times)
    margin = c * report.E - (dE + report.E_r * report.v_r - report.E_l * report.v_l)
    return MarginSeries(report.times, margin, report.scale, c, "explicit")


# ---------------------------------------------------------------------------
# Auxiliary inequality (n = 1)
# ---------------------------------------------------------------------------

def _reflect(p: RunPair) -> RunPair:
    """x -> 1 - x: v(x) -> -v(1 - x), y -> -y(1 - x), kappa -> -kappa; swaps the ends."""
    flip = lambda a: -a[:, ::-1]
    return RunPair(p.n, -p.kappa, p.grid, p.times, flip(p.v_tilde), flip(p.v_hat),
                   flip(p.y_tilde), flip(p.y_hat), -p.v_r, -p.v_l,
                   tuple(SignInterval(iv.t0, iv.t1, -iv.sign_r, -iv.sign_l) for iv in p.intervals),
                   p.same_momentum)


def _l2(values: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt((values**2) @ trapezoid_weights(grid)))


def explicit_aux_constant(p: RunPair) -> float:
    """Constant C with E_l' <= C (E + E_l) + |v_r| E_r / 2 on the left inflow set.

    Testing the difference equation with u_l gives the exact relation
    tanh(1) E_l' = 2 a (int v~ g + int v~_x (y^ - kappa) u_l + int y^ (v~ u_l' - v~_x u_l))
                   + 2 a (v~_x(1) v_r / cosh 1 - a v_l - tanh(1) a v^_x(0)),
    with a = v~_x(0) and g = v^ u_l' - v^_x u_l; Cauchy-Schwarz and Young bound it.
    """
    ul, _ = homogeneous_ul_ur(p.grid)
    u = ul.values
    du = -np.cosh(p.grid.nodes) + np.sinh(p.grid.nodes) * np.tanh(1.0)
    s = _sup_norms(p)
    n_u, n_du = _l2(u, p.grid), _l2(du, p.grid)
    x_bound = (s["v"] * n_du + s["vx"] * n_u
               + (s["y"] + abs(p.kappa)) * n_u
               + s["y"] * (n_du + n_u))
    th = np.tanh(1.0)
    young = 2.0 / (th * np.cosh(1.0))
    return x_bound / th + 2 * s["vx"] + 0.5 * young**2 * float(np.abs(p.v_r).max())


def _inflow_mask(times: np.ndarray, intervals: Sequence[SignInterval], side: str) -> np.ndarray:
    """Times in the inflow set of ``side``; endpoints go to the interval on their left."""
    mask = np.zeros(times.size, bool)
    for k, t in enumerate(times):
        for iv in intervals:
            if iv.t0 < t <= iv.t1 or (t == iv.t0 == intervals[0].t0):
                mask[k] = iv.gamma_l if side == "left" else iv.gamma_r
                break
    return mask


def aux_inequality_check(runs: Sequence[SolutionHistory], side: str,
                         times: Sequence[float] | None = None) -> MarginSeries:
    """margin = C (E + E_side) + |v_other| E_other / 2 - E_side' on the inflow set of ``side``."""
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}")
    p = pair_runs(*runs)
    if p.n != 1:
        raise ValueError("aux_inequality_check is stated for n = 1")
    if not p.same_momentum:
        raise ValueError("the runs must share the boundary momentum data")
    rep = _report_from_pair(p)
    mask = _inflow_mask(p.times, p.intervals, side)
    if times is not None:
        want = np.isin(p.times, np.asarray(times, float))
        if np.any(want & ~mask) or want.sum() != len(times):
            raise ValueError(f"requested times lie outside the {side} inflow set")
        mask = want
    q = p if side == "left" else _reflect(p)
    c = explicit_aux_constant(q)
    own, other = (rep.E_l, rep.E_r) if side == "left" else (rep.E_r, rep.E_l)
    v_other = p.v_r if side == "left" else p.v_l
    d_own = time_derivative(own, p.times)
    margin = c * (rep.E + own) + 0.5 * np.abs(v_other) * other - d_own
    return MarginSeries(p.times[mask], margin[mask], rep.scale, c, "explicit")


# ---------------------------------------------------------------------------
# Gronwall certificate
# ---------------------------------------------------------------------------

def lyapunov_components(iv: SignInterval) -> tuple[str, tuple]:
    if iv.gamma_l and iv.gamma_r:
        return "inflow both", ("E", "E_l", "E_r")
    if iv.gamma_l:
        return "inflow left", ("E", "E_l")
    if iv.gamma_r:
        return "inflow right", ("E", "E_r")
    return "no inflow", ("E",)


def _window(times: np.ndarray, iv: SignInterval, tol: float) -> np.ndarray:
    return np.flatnonzero((times >= iv.t0 - tol) & (times <= iv.t1 + tol))


def _growth_rate(L: np.ndarray, t: np.ndarray) -> float:
    """Smallest C >= 0 with L(t) <= exp(C (t - t0)) L(t0) on the samples."""
    if L.size < 2:
        return 0.0
    base = max(L[0], FLOOR)
    ratio = np.log(np.maximum(L[1:], FLOOR) / base)
    dt = t[1:] - t[0]
    ok = dt > 0
    return float(max(0.0, np.max(ratio[ok] / dt[ok], initial=0.0)))


def _blows_up(X: np.ndarray, t: np.ndarray, c_max: float) -> bool:
    """Logarithmic growth rate over the last sample step exceeds c_max."""
    if X.size < 2 or X[-1] <= FLOOR or t[-1] <= t[-2]:
        return False
    rate = np.log(X[-1] / max(X[-2], FLOOR)) / (t[-1] - t[-2])
    return bool(rate > c_max)


def gronwall_certificate(report: EnergyReport, partition: Sequence[SignInterval] | None = None,
                         c_max: float = DEFAULT_C_MAX, zero_tol: float = ZERO_TOL) -> Certificate:
    """Per sign-constant interval, fit the growth rate of the Lyapunov combination.

    An interval passes when the fitted rate is finite and at most ``c_max``.
    Chaining to the next interval requires every component that enters the
    next combination but is not controlled on the current one to vanish
    (<= ``zero_tol``), and no uncontrolled component may blow up.  Where the
    two runs enter different boundary momenta on an inflow side, the
    homogeneous estimate does not apply: the interval is marked not
    applicable and chaining across a sign change is refused.
    """
    partition = list(partition if partition is not None else report.intervals)
    if not partition:
        raise ValueError("empty sign partition")
    t = report.times
    tol = 1e-12 * max(1.0, float(np.abs(t).max()))
    certs, problems, open_regime = [], [], []
    for k, iv in enumerate(partition):
        idx = _window(t, iv, tol)
        case, comps = lyapunov_components(iv)
        if idx.size == 0:
            certs.append(IntervalCertificate(iv, case, comps, 0.0, True, True))
            continue
        tt = t[idx]
        L = sum(report.component(c)[idx] for c in comps)
        c_hat = _growth_rate(L, tt)
        total0 = (report.E + report.E_l + report.E_r)[idx[0]]
        final_ok = bool(report.E[idx[-1]] <= np.exp(c_hat * (tt[-1] - tt[0])) * max(total0, FLOOR)
                        * (1 + 1e-12))
        blow = tuple(c for c in ("E_l", "E_r") if c not in comps
                     and _blows_up(report.component(c)[idx], tt, c_max))
        forced = [side for side in report.momentum_differs
                  if (iv.gamma_l if side == "left" else iv.gamma_r)]
        certs.append(IntervalCertificate(iv, case, comps, c_hat,
                                         bool(np.isfinite(c_hat) and c_hat <= c_max), final_ok, blow,
                                         applicable=not forced))
        if forced and len(partition) > 1:
            open_regime.append(f"{'/'.join(forced)} boundary momentum differs between the runs on "
                            f"[{iv.t0:.6g}, {iv.t1:.6g}] (no stability estimate in this regime)")
        for c in blow:
            problems.append(f"{c} blows up at the end of [{iv.t0:.6g}, {iv.t1:.6g}]")
        if k + 1 < len(partition):
            _, nxt = lyapunov_components(partition[k + 1])
            for c in nxt:
                if c not in comps:
                    val = float(report.component(c)[idx[-1]])
                    if val > zero_tol:
                        problems.append(f"{c}={val:.3g} at t={iv.t1:.6g} is not controlled on "
                                        f"[{iv.t0:.6g}, {iv.t1:.6g}]")
    if open_regime:
        return Certificate(certs, False, "no chaining across sign change: "
                           + "; ".join(open_regime + problems), c_max)
    if problems:
        return Certificate(certs, False, "no continuation across sign change: " + "; ".join(problems),
                           c_max)
    return Certificate(certs, True, "continues", c_max)


def gronwall_system_margins(report: EnergyReport, partition: Sequence[SignInterval],
                            C: float) -> MarginSeries:
    """Pointwise margins of the four-case differential system with constant C."""
    t = report.times
    dE, dl, dr = (time_derivative(x, t) for x in (report.E, report.E_l, report.E_r))
    tol = 1e-12 * max(1.0, float(np.abs(t).max()))
    times, margins = [], []
    for iv in partition:
        idx = _window(t, iv, tol)
        _, comps = lyapunov_components(iv)
        d = {"E": dE, "E_l": dl, "E_r": dr}
        lhs = sum(d[c][idx] for c in comps)
        if "E_l" not in comps:
            lhs = lhs + 0.5 * report.E_l[idx] * np.abs(report.v_l[idx])
        if "E_r" not in comps:
            lhs = lhs + 0.5 * report.E_r[idx] * np.abs(report.v_r[idx])
        rhs = C * sum(report.component(c)[idx] for c in comps)
        times.append(t[idx])
        margins.append(rhs - lhs)
    return MarginSeries(np.concatenate(times), np.concatenate(margins), report.scale, C, "given")


def counterexample_report(t_end: float = 1 - 1e-3, samples: int = 4001) -> EnergyReport:
    """E = (e^t + 1)/2, E_l = 1/(2(1 - t)), E_r = 0 with v_l = t - 1, v_r = 1.

    The triple satisfies the outflow-case system with C = 1 pointwise, yet
    E_l is unbounded as t -> 1 where v_l turns into an inflow.  Samples
    cluster geometrically towards ``t_end``.
    """
    t = 1.0 - np.geomspace(1.0, 1.0 - t_end, samples)
    t[0] = 0.0
    iv = SignInterval(0.0, float(t[-1]), -1, 1)
    return EnergyReport(t, (np.exp(t) + 1) / 2, 1 / (2 * (1 - t)), np.zeros_like(t),
                        t - 1, np.ones_like(t), intervals=(iv,))


# ---------------------------------------------------------------------------
# Higher order ledger (n >= 2)
# ---------------------------------------------------------------------------

@dataclass
class HigherOrderLedger:
    report: EnergyReport
    E_rel: np.ndarray
    margins: MarginSeries
    rellich_ratio: np.ndarray
    zero_propagation: bool | None
    observed: np.ndarray = field(default_factory=lambda: np.zeros(0))
    base: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def required_c_fit(self) -> float:
        """Smallest c_fit making every margin non-negative on these samples."""
        ok = self.base > FLOOR * self.margins.scale
        if not np.any(ok):
            return 0.0
        return float(max(0.0, np.max(self.observed[ok] / self.base[ok])))

    @property
    def rellich_ok(self) -> bool:
        return bool(np.all(self.rellich_ratio <= RELLICH_SLACK * RELLICH_C[self.report.n]))


def _aux_left_norms(vt: np.ndarray, n: int, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """H^n norm squared of the Zaremba auxiliary function and its Rellich ratio per time."""
    norms, ratios = np.zeros(len(vt)), np.zeros(len(vt))
    for k, row in enumerate(vt):
        f = ScalarField(grid, row)
        data = tuple(-boundary_B(i, n, f, "left") for i in range(n))
        if not any(data):
            continue
        w = solve_zaremba(n, data, grid)
        norms[k] = sobolev_norm_sq(w, n)
        if norms[k] > FLOOR:
            ratios[k] = abs(endpoint_derivative(w.values, n, "right")) / np.sqrt(norms[k])
    return norms, ratios


def higher_order_constant(p: RunPair, c_fit: float) -> float:
    """c_fit (1 + ||v^||_{W^{n+1,inf}} + ||y^||_inf)."""
    w = max(float(np.abs(_deriv_rows(p.v_hat, k)).max()) for k in range(p.n + 2))
    return c_fit * (1 + w + float(np.abs(p.y_hat).max()))


def higher_order_ledger(run1: SolutionHistory, run2: SolutionHistory,
                        c_fit: float | None = None, zero_tol: float = LEDGER_ZERO_TOL) -> HigherOrderLedger:
    """E_rel per sign interval and margins of E_rel' + (E_l|v_l| + E_r|v_r|)/2 <= C E_rel."""
    p = pair_runs(run1, run2)
    if p.n < 2:
        raise ValueError("higher_order_ledger needs n >= 2")
    if c_fit is None:
        c_fit = calibration()["c_fit"]
    rep = _report_from_pair(p)
    aux_l, ratio_l = _aux_left_norms(p.v_tilde, p.n, p.grid)
    aux_r, ratio_r = _aux_left_norms(-p.v_tilde[:, ::-1], p.n, p.grid)
    rep.aux_norms = {"left": aux_l, "right": aux_r}
    k = higher_order_constant(p, 1.0)
    c = c_fit * k
    t = p.times
    tol = 1e-12 * max(1.0, float(t.max()))
    E_rel = np.array(rep.E, copy=True)
    times, observed, base = [], [], []
    for iv in p.intervals:
        idx = _window(t, iv, tol)
        if idx.size == 0:
            continue
        e = rep.E[idx].copy()
        if iv.gamma_l:
            e += aux_l[idx]
        if iv.gamma_r:
            e += aux_r[idx]
        E_rel[idx] = e
        de = time_derivative(e, t[idx])
        flux = 0.5 * (rep.E_l[idx] * np.abs(p.v_l[idx]) + rep.E_r[idx] * np.abs(p.v_r[idx]))
        times.append(t[idx])
        observed.append(de + flux)
        base.append(k * e)
    scale = float(np.max(E_rel + rep.E_l + rep.E_r, initial=0.0))
    obs, bas = np.concatenate(observed), np.concatenate(base)
    ms = MarginSeries(np.concatenate(times), c_fit * bas - obs,
                      scale if scale > FLOOR else 1.0, c, "fitted")
    zero_prop = bool(np.all(E_rel <= zero_tol)) if E_rel[0] <= zero_tol else None
    return HigherOrderLedger(rep, E_rel, ms, np.maximum(ratio_l, ratio_r), zero_prop, obs, bas)
