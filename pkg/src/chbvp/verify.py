"""Built-in oracle battery: algebraic identities, elliptic closed forms, transport.

Each check yields a residual and a threshold; the battery passes when every
residual is within its threshold.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np
from numpy.polynomial import Polynomial

from .core import Grid, ScalarField, TimeSampler
from .elliptic import green_solve_ch, homogeneous_ul_ur, solve_an, solve_zaremba
from .identities import verify_ipp, verify_lambs
from .transport import BoundaryMomentum, VelocityHistory, transport_field, transport_nodes

IDENTITY_TOL = 1e-10
IPP_MAX_DEGREE = 6
LAMBS_MAX_DEGREE = 4


@dataclass
class Check:
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.threshold)

    def to_dict(self) -> dict:
        return {**asdict(self), "passed": self.passed}


def _monomial(k: int) -> Polynomial:
    return Polynomial([0.0] * k + [1.0])


def _polynomial_set(max_degree: int, seed: int, extra: int) -> list[Polynomial]:
    rng = np.random.default_rng(seed)
    polys = [_monomial(k) for k in range(max_degree + 1)]
    polys += [Polynomial(rng.uniform(-1, 1, max_degree + 1)) for _ in range(extra)]
    return polys


def identity_checks() -> list[Check]:
    out = []
    ipp_set = _polynomial_set(IPP_MAX_DEGREE, 0, 4)
    for n in (1, 2, 3):
        worst = max(verify_ipp(f, g, n) for f, g in itertools.product(ipp_set, repeat=2))
        out.append(Check(f"verify_ipp n={n}", worst, IDENTITY_TOL))
    lambs_set = _polynomial_set(LAMBS_MAX_DEGREE, 1, 2)
    for n in (1, 2):
        worst = max(verify_lambs(f, g, w, n).residual
                    for f, g, w in itertools.product(lambs_set, repeat=3))
        out.append(Check(f"verify_lambs n={n}", worst, IDENTITY_TOL))
    return out


def elliptic_checks() -> list[Check]:
    out = []
    for cells in (128, 256, 512):
        g = Grid(cells)
        ul, ur = homogeneous_ul_ur(g)
        w = solve_zaremba(1, (1.0,), g)
        out.append(Check(f"u_l zaremba N={cells}", float(np.abs(w.values - ul.values).max()),
                         10 * g.h**2))
        # u_r(x) = -u_l(1 - x)
        out.append(Check(f"u_r reflected zaremba N={cells}",
                         float(np.abs(-w.values[::-1] - ur.values).max()), 10 * g.h**2))
    ul0 = float(homogeneous_ul_ur(Grid(8))[0].values[0])
    out.append(Check("u_l(0) vs tanh(1) = 0.7615941560", abs(ul0 - 0.7615941560), 5e-11))
    for cells in (64, 256):
        g = Grid(cells)
        one = ScalarField(g, np.ones(g.size))
        exact = 1.0 - np.cosh(g.nodes - 0.5) / np.cosh(0.5)
        green = green_solve_ch(one, 0.0, 0.0, 0.0).values
        banded = solve_an(1, one, (0.0,), (0.0,)).values
        out.append(Check(f"green constant forcing N={cells}",
                         float(np.abs(green - exact).max()), 5 * g.h**2))
        out.append(Check(f"green vs solve_an N={cells}",
                         float(np.abs(green - banded).max()), 10 * g.h**2))
    # A_2 sin(pi x) = (1 + pi^2 + pi^4) sin(pi x)
    errs = []
    for cells in (32, 64, 128):
        g = Grid(cells)
        x = g.nodes
        y = ScalarField(g, (1 + np.pi**2 + np.pi**4) * np.sin(np.pi * x))
        v = solve_an(2, y, (0.0, np.pi), (0.0, -np.pi))
        errs.append(float(np.abs(v.values - np.sin(np.pi * x)).max()))
    out.append(Check("manufactured A_2 observed order (2 - order)",
                     max(0.0, 2.0 - np.log2(errs[1] / errs[2])), 0.2))
    return out


def transport_checks() -> list[Check]:
    out = []
    fn = lambda x: np.exp(np.sin(3 * x))
    c, t = 0.4, 0.5
    for cells in (64, 256):
        g = Grid(cells)
        x = g.nodes
        vh = VelocityHistory.frozen(ScalarField(g, np.full(g.size, c)), 0.0, t)
        res = transport_field(0.0, t, vh, ScalarField(g, fn(x)),
                              BoundaryMomentum(TimeSampler.constant(fn(0.0))))
        exact = np.where(x < c * t, fn(0.0), fn(x - c * t))
        # max |(exp sin 3x)''| / 8 + 1 bounds the limited-cubic constant
        out.append(Check(f"frozen translate N={cells}", float(np.abs(res.values - exact).max()),
                         (25 / 8 + 1) * g.h**2))
    alpha = 1.3
    for cells in (64, 256):
        g = Grid(cells)
        x = g.nodes
        vh = VelocityHistory.frozen(ScalarField(g, alpha * x), 0.0, t)
        res = transport_nodes(0.0, t, vh, ScalarField(g, fn(x)), BoundaryMomentum())
        exact = fn(x * np.exp(-alpha * t)) * np.exp(-2 * alpha * t)
        regular = np.ones(g.size, bool)
        regular[res.singular_nodes] = False
        out.append(Check(f"frozen stretching N={cells}",
                         float(np.abs(res.y.values - exact)[regular].max()), g.h**2))
        out.append(Check(f"transport L-inf bound N={cells}",
                         max(0.0, res.y.max_abs() - res.bound * (1 + 1e-6)), 0.0))
    return out


def run_battery() -> dict:
    checks = identity_checks() + elliptic_checks() + transport_checks()
    ul0 = float(homogeneous_ul_ur(Grid(8))[0].values[0])
    return {
        "passed": all(ch.passed for ch in checks),
        "u_l(0)": ul0,
        "checks": [ch.to_dict() for ch in checks],
        "failed": [ch.name for ch in checks if not ch.passed],
    }
