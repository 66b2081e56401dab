"""Exact checks of the integration-by-parts identities behind A_n.

Inputs are polynomials, either as ``numpy.polynomial.Polynomial`` or as nodal
data that is recovered exactly by a least-squares fit.  Derivatives are taken
on coefficient arrays and integrals use Gauss-Legendre rules with enough
points to be exact for the integrand degree, so the residuals measure only
algebra errors plus rounding.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .core import ScalarField
from .elliptic import an_terms, b_terms, check_order

MAX_FIT_DEGREE = 6


class NonPolynomialError(ValueError):
    """Nodal data is not a polynomial of the admissible degree."""


def as_polynomial(f, max_degree: int = MAX_FIT_DEGREE) -> Polynomial:
    if isinstance(f, Polynomial):
        return f
    if isinstance(f, ScalarField):
        x, vals = f.grid.nodes, f.values
    else:
        vals = np.asarray(f, float)
        x = np.linspace(0.0, 1.0, vals.size)
    deg = min(max_degree, x.size - 1)
    p = Polynomial.fit(x, vals, deg).convert()
    scale = max(1.0, float(np.abs(vals).max()))
    if np.abs(p(x) - vals).max() > 1e-9 * scale:
        raise NonPolynomialError(f"nodal data is not a polynomial of degree <= {deg}")
    return p.trim(1e-14 * scale)


def integrate(p: Polynomial) -> float:
    """Exact integral over [0, 1] by a Gauss-Legendre rule sized to the degree."""
    m = max(1, p.degree() // 2 + 1)
    t, w = np.polynomial.legendre.leggauss(m)
    return float(0.5 * np.dot(w, p(0.5 * (t + 1.0))))


def jump(p: Polynomial) -> float:
    return float(p(1.0) - p(0.0))


def lam(p: Polynomial, n: int) -> list[Polynomial]:
    """Lambda_n p = (p, p', ..., p^(n))."""
    return [p.deriv(k) if k else p for k in range(n + 1)]


def inner_lam(a: Sequence[Polynomial], b: Sequence[Polynomial]) -> float:
    return sum(integrate(x * y) for x, y in zip(a, b))


def an_poly(p: Polynomial, n: int) -> Polynomial:
    out = Polynomial([0.0])
    for sign, order in an_terms(n):
        out = out + sign * (p.deriv(order) if order else p)
    return out


def b_poly(i: int, n: int, p: Polynomial) -> Polynomial:
    out = Polynomial([0.0])
    for sign, order in b_terms(i, n):
        out = out + sign * p.deriv(order)
    return out


def s_poly(i: int, p: Polynomial) -> Polynomial:
    return p.deriv(i) if i else p


def boundary_sum(f: Polynomial, g: Polynomial, n: int) -> float:
    """sum_i [B_i(f) S_i(g)]_0^1."""
    return sum(jump(b_poly(i, n, f) * s_poly(i, g)) for i in range(n))


def verify_ipp(f, g, n: int) -> float:
    """|int A_n f g - int Lambda f . Lambda g - sum_i [B_i(f) S_i(g)]_0^1|."""
    n = check_order(n)
    f, g = as_polynomial(f), as_polynomial(g)
    lhs = integrate(an_poly(f, n) * g)
    rhs = inner_lam(lam(f, n), lam(g, n)) + boundary_sum(f, g, n)
    return abs(lhs - rhs)


class LambsResult(NamedTuple):
    residual: float
    commutator_ratio: float


def _commutator_ratio(w: Polynomial, g: Polynomial, n: int) -> float:
    """||[w, Lambda_n] g||_2 / (||w||_{W^{n,inf}} ||g||_{H^{n-1}})."""
    comm = [w * a - b for a, b in zip(lam(g, n), lam(w * g, n))]
    num = np.sqrt(sum(integrate(c * c) for c in comm))
    xs = np.linspace(0.0, 1.0, 2049)
    w_norm = sum(np.abs(d(xs)).max() for d in lam(w, n))
    g_norm = np.sqrt(sum(integrate(d * d) for d in lam(g, n - 1)))
    if w_norm == 0.0 or g_norm == 0.0:
        return 0.0
    return float(num / (w_norm * g_norm))


def verify_lambs(f, g, w, n: int) -> LambsResult:
    """Residual of the weighted identity pairing A_n f with g' and A_n g with (wf)'.

    With [P, Q] = PQ - QP the identity reads

        int w A_n(f) g' + int (wf)' A_n(g)
          + int [d(w .), Lambda](f) . Lambda g - int Lambda f . [Lambda, w d](g)
        = sum_i [B_i(g) S_i((wf)')]_0^1 + sum_i [B_i(f) S_i(w g')]_0^1
          + [w Lambda f . Lambda g]_0^1.
    """
    n = check_order(n)
    f, g, w = as_polynomial(f), as_polynomial(g), as_polynomial(w)
    wf_d = (w * f).deriv()
    wg_d = w * g.deriv()
    lf, lg = lam(f, n), lam(g, n)
    comm_left = [(w * a).deriv() - b for a, b in zip(lf, lam(wf_d, n))]
    comm_right = [a - w * b.deriv() for a, b in zip(lam(wg_d, n), lg)]
    lhs = (integrate(w * an_poly(f, n) * g.deriv())
           + integrate(wf_d * an_poly(g, n))
           + inner_lam(comm_left, lg)
           - inner_lam(lf, comm_right))
    rhs = (sum(jump(b_poly(i, n, g) * s_poly(i, wf_d)) for i in range(n))
           + sum(jump(b_poly(i, n, f) * s_poly(i, wg_d)) for i in range(n))
           + sum(jump(w * a * b) for a, b in zip(lf, lg)))
    return LambsResult(abs(lhs - rhs), _commutator_ratio(w, g, n))
