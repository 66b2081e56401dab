import numpy as np
import pytest
import sympy as sp

from chbvp.core import Grid, GridError, ScalarField, derivative_array, endpoint_derivative
from chbvp.elliptic import (
    ELLIPTIC_LINF_C, RELLICH_C, TraceVector, apply_an, assemble_an, boundary_B,
    elliptic_linf_constant, green_solve_ch, homogeneous_ul_ur, rellich_constant,
    solve_an, solve_zaremba, sobolev_gram,
)


def exact_constant_forcing(x):
    return 1.0 - np.cosh(x - 0.5) / np.cosh(0.5)


def dense_oracle_constant_forcing(n_cells=10_000):
    """Plain tridiagonal solve of (1 - D2) v = 1 with zero Dirichlet data."""
    from scipy.linalg import solve_banded
    h = 1.0 / n_cells
    m = n_cells - 1
    ab = np.zeros((3, m))
    ab[0, 1:] = -1 / h**2
    ab[1, :] = 1 + 2 / h**2
    ab[2, :-1] = -1 / h**2
    v = solve_banded((1, 1), ab, np.ones(m))
    return np.concatenate([[0.0], v, [0.0]])


class TestGreen:
    def test_zero_data(self):
        g = Grid(32)
        v = green_solve_ch(ScalarField.zeros(g), 0.0, 0.0, 0.0)
        assert np.all(v.values == 0.0)

    @pytest.mark.parametrize("kappa", [-1.5, 0.3, 2.0])
    def test_y_equal_kappa_gives_zero(self, kappa):
        g = Grid(40)
        v = green_solve_ch(ScalarField(g, np.full(g.size, kappa)), kappa, 0.0, 0.0)
        assert v.max_abs() < 1e-14

    def test_constant_forcing_midpoint(self):
        assert exact_constant_forcing(0.5) == pytest.approx(0.1131811, abs=5e-8)
        oracle = dense_oracle_constant_forcing()
        assert oracle[5000] == pytest.approx(0.1131811, abs=5e-8)

    @pytest.mark.parametrize("n", [32, 64, 128, 256])
    def test_constant_forcing_quadrature_error(self, n):
        g = Grid(n)
        v = green_solve_ch(ScalarField(g, np.ones(g.size)), 0.0, 0.0, 0.0)
        assert np.abs(v.values - exact_constant_forcing(g.nodes)).max() <= 5 * g.h**2

    def test_boundary_values_exact(self):
        g = Grid(50)
        y = ScalarField.from_function(g, lambda x: np.sin(4 * x))
        v = green_solve_ch(y, 0.7, 0.3, -1.2)
        assert v.values[0] == 0.3
        assert v.values[-1] == pytest.approx(-1.2, abs=1e-14)

    def test_residual_second_order(self):
        errs = []
        for n in (32, 64, 128):
            g = Grid(n)
            y = ScalarField.from_function(g, lambda x: np.exp(x) * np.cos(3 * x))
            v = green_solve_ch(y, 0.4, 0.2, 0.1)
            res = apply_an(1, v).values - (y.values - 0.4)
            errs.append(np.abs(res[2:-2]).max())
        assert errs[2] < errs[0] / 10


class TestAssembly:
    def test_n1_structure(self):
        op = assemble_an(1, Grid(10))
        m = op.matrix.toarray()
        assert op.size == 11
        assert np.array_equal(m[0], np.eye(11)[0]) and np.array_equal(m[-1], np.eye(11)[-1])
        assert op.bandwidths == (1, 1)
        for r in range(1, 10):
            np.testing.assert_allclose(m[r, r - 1:r + 2], Grid(10).h**2 * np.array([0, 1, 0]) +
                                       np.array([-1, 2, -1]))

    def test_sizes_with_ghosts(self):
        for n in (1, 2, 3):
            g = Grid(4 * n + 4)
            assert assemble_an(n, g).size == g.size + 2 * (n - 1)
            assert assemble_an(n, g, "zaremba_left_neumann").size == g.size + 2 * n - 1

    def test_too_coarse_and_bad_order(self):
        with pytest.raises(GridError):
            assemble_an(2, Grid(11))
        with pytest.raises(ValueError):
            assemble_an(4, Grid(40))
        with pytest.raises(ValueError):
            assemble_an(1, Grid(40), "robin")

    def test_apply_n1(self):
        g = Grid(64)
        f = ScalarField.from_function(g, lambda x: x - x**2)
        out = apply_an(1, f).values
        np.testing.assert_allclose(out, g.nodes - g.nodes**2 + 2, atol=1e-8)

    def test_apply_n2(self):
        for n in (32, 64):
            g = Grid(n)
            x = g.nodes
            out = apply_an(2, ScalarField(g, x**4)).values
            assert np.abs(out - (x**4 - 12 * x**2 + 24)).max() <= 50 * g.h**2


class TestSolveAn:
    def test_zero(self):
        v = solve_an(1, ScalarField.zeros(Grid(20)), (0.0,), (0.0,))
        assert np.all(v.values == 0.0)

    @pytest.mark.parametrize("n", [32, 64, 128, 256])
    def test_matches_green(self, n):
        g = Grid(n)
        y = ScalarField(g, np.ones(g.size))
        a = solve_an(1, y, (0.0,), (0.0,)).values
        b = green_solve_ch(y, 0.0, 0.0, 0.0).values
        assert np.abs(a - b).max() <= 10 * g.h**2

    def test_green_battery_constant(self):
        """C with |green - solve_an| <= C h^2, fixed from the coarsest run."""
        cases = [(lambda x: np.ones_like(x), 0.0, 0.0, 0.0),
                 (lambda x: np.sin(3 * x), 0.5, 0.2, -0.4),
                 (lambda x: np.exp(-20 * (x - 0.4) ** 2), -0.3, 1.0, 0.5)]

        def gap(n):
            g = Grid(n)
            out = 0.0
            for fn, kappa, vl, vr in cases:
                y = ScalarField(g, fn(g.nodes))
                a = solve_an(1, y.with_values(y.values - kappa), (vl,), (vr,)).values
                b = green_solve_ch(y, kappa, vl, vr).values
                out = max(out, np.abs(a - b).max())
            return out

        c = gap(32) * 32**2
        for n in (64, 128, 256):
            assert gap(n) <= 1.2 * c / n**2

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_traces_exact(self, n):
        g = Grid(40)
        rng = np.random.default_rng(n)
        bl, br = rng.normal(size=n), rng.normal(size=n)
        v = solve_an(n, ScalarField.from_function(g, np.cos), TraceVector(bl), TraceVector(br, "right"))
        assert v.values[0] == bl[0] and v.values[-1] == br[0]

    def test_manufactured_n2(self):
        xs = sp.symbols("x")
        v_sym = sp.sin(sp.pi * xs) * xs**2 * (1 - xs) ** 2
        y_sym = v_sym - sp.diff(v_sym, xs, 2) + sp.diff(v_sym, xs, 4)
        v_fn = sp.lambdify(xs, v_sym, "numpy")
        y_fn = sp.lambdify(xs, y_sym, "numpy")
        dv = sp.lambdify(xs, sp.diff(v_sym, xs), "numpy")
        errs = []
        for n in (32, 64, 128):
            g = Grid(n)
            y = ScalarField(g, y_fn(g.nodes))
            v = solve_an(2, y, (v_fn(0.0), dv(0.0)), (v_fn(1.0), dv(1.0)))
            errs.append(np.abs(v.values - v_fn(g.nodes)).max())
        assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5
        assert errs[2] < 1e-4

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_linf_bound(self, n):
        g = Grid(64)
        rng = np.random.default_rng(10 + n)
        for _ in range(5):
            y = ScalarField(g, rng.normal(size=g.size))
            bl, br = rng.normal(size=n), rng.normal(size=n)
            v = solve_an(n, y, bl, br)
            bound = ELLIPTIC_LINF_C[n] * (y.max_abs() + np.linalg.norm(bl) + np.linalg.norm(br))
            assert v.max_abs() <= bound

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_linf_constant_stable(self, n):
        for cells in (32, 128):
            assert elliptic_linf_constant(n, cells) <= ELLIPTIC_LINF_C[n]


class TestBoundaryB:
    def test_n1_linear(self):
        f = ScalarField.from_function(Grid(16), lambda x: x)
        assert boundary_B(0, 1, f, "left") == pytest.approx(-1.0, abs=1e-12)

    def test_n2_cubic(self):
        # one-sided first-derivative stencil carries an O(h^2) error on cubics
        for cells in (32, 256):
            f = ScalarField.from_function(Grid(cells), lambda x: x**3)
            assert boundary_B(0, 2, f, "left") == pytest.approx(6.0, abs=3 / cells**2)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_top_index_is_minus_nth_derivative(self, n):
        f = ScalarField.from_function(Grid(40), lambda x: np.exp(np.sin(2 * x)))
        for end in ("left", "right"):
            assert boundary_B(n - 1, n, f, end) == -endpoint_derivative(f.values, n, end)

    def test_index_range(self):
        with pytest.raises(ValueError):
            boundary_B(2, 2, ScalarField.zeros(Grid(20)), "left")


class TestZaremba:
    def test_profiles_closed_form(self):
        ul, ur = homogeneous_ul_ur(Grid(100))
        assert ul.values[0] == pytest.approx(0.7615941560, abs=1e-10)
        assert abs(ul.values[-1]) < 1e-15 and ur.values[0] == 0.0
        # -u_l'(0) = 1 by the closed form: u_l' = -cosh x + sinh x tanh 1
        assert -(-np.cosh(0.0) + np.sinh(0.0) * np.tanh(1.0)) == 1.0

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_zero_data(self, n):
        w = solve_zaremba(n, (0.0,) * n, Grid(40))
        assert np.all(w.values == 0.0)

    @pytest.mark.parametrize("cells", [128, 256, 512])
    def test_matches_ul(self, cells):
        g = Grid(cells)
        w = solve_zaremba(1, (1.0,), g)
        ul, _ = homogeneous_ul_ur(g)
        assert np.abs(w.values - ul.values).max() <= 10 * g.h**2

    def test_n2_residual_and_rellich(self):
        for cells in (64, 128):
            g = Grid(cells)
            w = solve_zaremba(2, (1.0, 0.0), g)
            a2 = apply_an(2, w).values
            # interior rows are the collocation rows themselves: zero up to rounding
            assert np.abs(a2[4:-4]).max() <= 1e-12 * cells**4
            gram = sobolev_gram([w.values], 2, g)[0, 0]
            assert abs(endpoint_derivative(w.values, 2, "right")) <= RELLICH_C[2] * np.sqrt(gram)

    def test_n2_against_dense_oracle(self):
        """Fine grid reference (N=10^4) vs coarse solve, O(h^2) agreement."""
        fine = solve_zaremba(2, (1.0, 0.0), Grid(10_000))
        errs = []
        for cells in (50, 100, 200):
            w = solve_zaremba(2, (1.0, 0.0), Grid(cells))
            errs.append(np.abs(w.values - fine.values[::10_000 // cells]).max())
        assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_rellich_constant_stable(self, n):
        fitted = RELLICH_C[n]
        assert rellich_constant(n, 512) == pytest.approx(fitted, rel=1e-3)
        for cells in (1024, 4096):
            assert abs(rellich_constant(n, cells) / fitted - 1) <= 0.2


def test_derivative_array_consistency():
    g = Grid(30)
    v = np.sin(g.nodes)
    assert np.allclose(derivative_array(v, 1), np.cos(g.nodes), atol=5e-3)
