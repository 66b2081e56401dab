"""Grids, nodal fields, time samplers and the discrete calculus shared by all solvers.

Everything lives on the unit segment [0, 1] with a uniform node set
``x_j = j / n_cells``.  Fields are immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial
from typing import Callable, Sequence

import numpy as np

MAX_DERIVATIVE_ORDER = 6


class GridError(ValueError):
    """Raised when a grid is too coarse or an index/point is out of range."""


@dataclass(frozen=True)
class Grid:
    n_cells: int

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < 1:
            raise GridError(f"n_cells must be a positive integer, got {self.n_cells!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def size(self) -> int:
        return self.n_cells + 1

    @property
    def nodes(self) -> np.ndarray:
        # j / N rather than j * h so that x_N == 1 exactly
        return np.arange(self.n_cells + 1) / self.n_cells


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values at the nodes of ``grid``, tagged with a model time."""

    grid: Grid
    values: np.ndarray
    time_tag: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.size,):
            raise GridError(
                f"expected {self.grid.size} nodal values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray], np.ndarray],
                      time_tag: float = 0.0) -> "ScalarField":
        x = grid.nodes
        return cls(grid, np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape), time_tag)

    @classmethod
    def zeros(cls, grid: Grid, time_tag: float = 0.0) -> "ScalarField":
        return cls(grid, np.zeros(grid.size), time_tag)

    def with_values(self, values, time_tag: float | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.time_tag if time_tag is None else time_tag)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> "ScalarField":
        return self.with_values(self.values * c)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# Time samplers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeSampler:
    """A real function of time on [0, T].

    ``kind`` is one of ``constant``, ``linear``, ``polynomial``, ``sine``,
    ``table`` or ``sum`` (of other samplers); ``params`` carries the parameters
    of that closed form.  Tables interpolate linearly (``order=1``) or with a
    cubic spline (``order=3``).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        _SAMPLER_KINDS[self.kind](self.params)  # validates

    def __call__(self, t):
        return _SAMPLER_KINDS[self.kind](self.params)(t)

    def __hash__(self):
        return hash((self.kind, repr(sorted(self.params.items()))))

    @classmethod
    def constant(cls, value: float) -> "TimeSampler":
        return cls("constant", {"value": float(value)})

    @classmethod
    def linear(cls, a: float, b: float) -> "TimeSampler":
        """``a + b t``."""
        return cls("linear", {"a": float(a), "b": float(b)})

    def sup_norm(self, t0: float, t1: float, samples: int = 2049) -> float:
        ts = np.linspace(t0, t1, samples)
        return float(np.max(np.abs(self(ts))))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}

    def __add__(self, other: "TimeSampler") -> "TimeSampler":
        return TimeSampler("sum", {"terms": [self.to_dict(), other.to_dict()]})


def _constant(p):
    c = float(p["value"])
    return lambda t: c + 0.0 * np.asarray(t, dtype=float)


def _linear(p):
    a, b = float(p["a"]), float(p["b"])
    return lambda t: a + b * np.asarray(t, dtype=float)


def _polynomial(p):
    coeffs = np.asarray(p["coefficients"], dtype=float)
    return lambda t: np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), coeffs)


def _sine(p):
    off = float(p.get("offset", 0.0))
    amp = float(p["amplitude"])
    freq = float(p["frequency"])
    phase = float(p.get("phase", 0.0))
    return lambda t: off + amp * np.sin(2 * np.pi * freq * np.asarray(t, dtype=float) + phase)


def _table(p):
    ts = np.asarray(p["t"], dtype=float)
    vals = np.asarray(p["values"], dtype=float)
    order = int(p.get("order", 1))
    if ts.ndim != 1 or ts.shape != vals.shape or ts.size < 2:
        raise ValueError("table sampler needs matching 1-d 't' and 'values' of length >= 2")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("table times must be strictly increasing")
    if order == 1:
        return lambda t: np.interp(t, ts, vals)
    if order == 3:
        from scipy.interpolate import CubicSpline
        spline = CubicSpline(ts, vals)
        return lambda t: spline(np.clip(t, ts[0], ts[-1]))
    raise ValueError("table interpolation order must be 1 or 3")


def _sum(p):
    terms = [_SAMPLER_KINDS[d["kind"]]({k: v for k, v in d.items() if k != "kind"})
             for d in p["terms"]]
    if not terms:
        raise ValueError("sum sampler needs at least one term")
    return lambda t: sum(f(t) for f in terms)


_SAMPLER_KINDS = {
    "constant": _constant,
    "linear": _linear,
    "polynomial": _polynomial,
    "sine": _sine,
    "table": _table,
    "sum": _sum,
}


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def trapezoid_integrate(f: ScalarField, a: int = 0, b: int | None = None) -> float:
    """Composite trapezoid rule for the integral of ``f`` over ``[x_a, x_b]``."""
    n = f.grid.n_cells
    if b is None:
        b = n
    if not (0 <= a <= b <= n):
        raise GridError(f"need 0 <= a <= b <= {n}, got a={a}, b={b}")
    v = f.values[a:b + 1]
    if b == a:
        return 0.0
    return float(f.grid.h * (0.5 * v[0] + v[1:-1].sum() + 0.5 * v[-1]))


def trapezoid_weights(grid: Grid) -> np.ndarray:
    w = np.full(grid.size, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return w


def cumulative_trapezoid(values: np.ndarray, h: float) -> np.ndarray:
    """Running trapezoid integral from node 0, same length as ``values``."""
    out = np.zeros_like(values, dtype=float)
    out[1:] = np.cumsum(0.5 * h * (values[1:] + values[:-1]))
    return out


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def stencil_weights(offsets: tuple[int, ...], order: int) -> np.ndarray:
    """Weights ``w`` with ``sum w_k f(x + o_k h) = h**order f^(order)(x) + ...``.

    Solves the moment conditions on the integer offsets, so the stencil is exact
    on polynomials of degree ``len(offsets) - 1``.
    """
    o = np.asarray(offsets, dtype=float)
    m = len(o)
    vander = np.vander(o, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = factorial(order)
    w = np.linalg.solve(vander, rhs)
    w.setflags(write=False)
    return w


def centered_offsets(order: int) -> tuple[int, ...]:
    """Second-order centered stencil for the ``order``-th derivative."""
    half = order // 2 if order % 2 == 0 else (order + 1) // 2
    return tuple(range(-half, half + 1))


def node_stencil(order: int, j: int, n_cells: int) -> tuple[tuple[int, ...], np.ndarray]:
    """Offsets and weights used by :func:`fd_derivative` at node ``j``.

    Centered where it fits, otherwise a one-sided window of ``order + 2`` points
    pushed against the nearest endpoint.
    """
    offs = centered_offsets(order)
    if j + offs[0] >= 0 and j + offs[-1] <= n_cells:
        return offs, stencil_weights(offs, order)
    width = order + 2
    start = 0 if j + offs[0] < 0 else n_cells - width + 1
    offs = tuple(range(start - j, start - j + width))
    return offs, stencil_weights(offs, order)


@lru_cache(maxsize=64)
def _derivative_matrix(order: int, n_cells: int):
    from scipy import sparse

    rows, cols, vals = [], [], []
    for j in range(n_cells + 1):
        offs, w = node_stencil(order, j, n_cells)
        rows.extend([j] * len(offs))
        cols.extend(j + o for o in offs)
        vals.extend(w)
    h = 1.0 / n_cells
    mat = sparse.csr_matrix((np.asarray(vals) / h**order, (rows, cols)),
                            shape=(n_cells + 1, n_cells + 1))
    return mat


def fd_derivative(f: ScalarField, order: int) -> ScalarField:
    """``order``-th derivative of ``f`` with second-order stencils at every node."""
    if order < 0 or order > MAX_DERIVATIVE_ORDER:
        raise ValueError(f"derivative order must lie in 0..{MAX_DERIVATIVE_ORDER}")
    if order == 0:
        return f
    n = f.grid.n_cells
    if n < order + 2:
        raise GridError(f"grid with {n} cells too coarse for derivative order {order}")
    return f.with_values(_derivative_matrix(order, n) @ f.values)


def derivative_array(values: np.ndarray, order: int) -> np.ndarray:
    """Array version of :func:`fd_derivative`; 2-D input is differentiated row-wise."""
    if order == 0:
        return values
    n = values.shape[-1] - 1
    if n < order + 2:
        raise GridError(f"grid with {n} cells too coarse for derivative order {order}")
    mat = _derivative_matrix(order, n)
    if np.ndim(values) == 2:
        return np.asarray((mat @ values.T).T)
    return mat @ values


def endpoint_derivative(values: np.ndarray, order: int, endpoint: str) -> float:
    """One-sided second-order derivative of nodal data at ``left`` or ``right``."""
    n = values.shape[-1] - 1
    if n < order + 2:
        raise GridError(f"grid with {n} cells too coarse for derivative order {order}")
    j = {"left": 0, "right": n}[endpoint]
    offs, w = node_stencil(order, j, n)
    return float(np.dot(w, values[[j + o for o in offs]]) * n**order)


# ---------------------------------------------------------------------------
# Interpolation
# ---------------------------------------------------------------------------

def _locate(n_cells: int, x: np.ndarray):
    s = np.asarray(x, dtype=float) * n_cells
    snap = np.abs(s - np.rint(s)) < 1e-12 * max(1, n_cells)
    s = np.where(snap, np.rint(s), s)
    j = np.clip(np.floor(s).astype(np.int64), 0, n_cells - 1)
    return j, s - j, snap


def interpolate_many(values: np.ndarray, x, limit: bool = False) -> np.ndarray:
    """Evaluate nodal data at the points ``x``.

    Four-point Lagrange cubic in cells with two neighbours on each side, linear
    in the first and last cell.  With ``limit=True`` the result is clipped to
    the range of the two bracketing nodes (quasi-monotone, sign preserving).
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0] - 1
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise GridError("interpolation point outside [0, 1]")
    j, t, snap = _locate(n, x)
    f0 = values[j]
    f1 = values[j + 1]
    out = f0 + t * (f1 - f0)
    lo, hi = np.minimum(f0, f1), np.maximum(f0, f1)
    if n >= 3:
        cubic = (j >= 1) & (j <= n - 2)
        jc = j[cubic]
        tc = t[cubic]
        fm, a, b, fp = values[jc - 1], values[jc], values[jc + 1], values[jc + 2]
        out = out.copy()
        lo, hi = lo.copy(), hi.copy()
        lo[cubic] = np.minimum(lo[cubic], np.minimum(fm, fp))
        hi[cubic] = np.maximum(hi[cubic], np.maximum(fm, fp))
        out[cubic] = (-tc * (tc - 1) * (tc - 2) / 6 * fm
                      + (tc + 1) * (tc - 1) * (tc - 2) / 2 * a
                      - (tc + 1) * tc * (tc - 2) / 2 * b
                      + (tc + 1) * tc * (tc - 1) / 6 * fp)
    if limit:
        out = np.clip(out, lo, hi)
    jn = np.rint(x * n).astype(np.int64)
    out = np.where(snap, values[np.clip(jn, 0, n)], out)
    return out


def interpolate(f: ScalarField, x: float) -> float:
    """Value of ``f`` at a point of [0, 1]; exact at nodes and on cubics away from the ends."""
    if not 0.0 <= x <= 1.0:
        raise GridError(f"x={x} outside [0, 1]")
    return float(interpolate_many(f.values, np.array([x]))[0])


def sup_norm(values: np.ndarray) -> float:
    return float(np.max(np.abs(values))) if np.size(values) else 0.0


def l2_inner(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    return float(np.dot(trapezoid_weights(grid), a * b))


def as_samples(sampler: TimeSampler | Callable | float, ts: Sequence[float]) -> np.ndarray:
    if callable(sampler):
        return np.asarray(sampler(np.asarray(ts, dtype=float)), dtype=float) + 0.0 * np.asarray(ts)
    return np.full(len(ts), float(sampler))
