import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chbvp.core import Grid, ScalarField, TimeSampler
from chbvp.transport import (
    BoundaryMomentum, VelocityHistory, classify_singular,
    evaluate_momentum, integrate_characteristic, trace_many, transport_field, transport_nodes,
)


def const_field(g, c):
    return ScalarField(g, np.full(g.size, float(c)))


def frozen(g, fn, t0=0.0, t1=1.0):
    return VelocityHistory.frozen(ScalarField.from_function(g, fn), t0, t1)


class TestCharacteristics:
    def test_stationary(self):
        g = Grid(16)
        vh = VelocityHistory.frozen(const_field(g, 0.0), 0.0, 1.0)
        tr = integrate_characteristic(vh, 0.7, 0.3)
        assert (tr.origin, tr.entry_point, tr.stretch, tr.entry_time) == ("interior", 0.3, 0.0, 0.0)

    def test_constant_speed_left_entry(self):
        g = Grid(32)
        vh = VelocityHistory.frozen(const_field(g, 0.5), 0.0, 1.0)
        tr = integrate_characteristic(vh, 0.6, 0.2)
        assert tr.origin == "left" and tr.entry_point == 0.0
        assert tr.entry_time == pytest.approx(0.6 - 0.2 / 0.5, abs=1e-11)
        assert abs(tr.stretch) < 1e-14

    def test_constant_speed_right_entry(self):
        g = Grid(32)
        vh = VelocityHistory.frozen(const_field(g, -0.5), 0.0, 1.0)
        tr = integrate_characteristic(vh, 0.6, 0.9)
        assert tr.origin == "right" and tr.entry_point == 1.0
        assert tr.entry_time == pytest.approx(0.6 - 0.1 / 0.5, abs=1e-11)

    @pytest.mark.parametrize("alpha", [-0.5, 0.7, 1.5])
    def test_linear_field(self, alpha):
        g = Grid(64)
        vh = frozen(g, lambda x: alpha * x)
        tr = integrate_characteristic(vh, 0.8, 0.6)
        assert tr.origin == "interior"
        assert tr.entry_point == pytest.approx(0.6 * np.exp(-alpha * 0.8), rel=1e-9)
        assert tr.stretch == pytest.approx(alpha * 0.8, rel=1e-12)

    def test_semigroup(self):
        g = Grid(64)
        fn = lambda x: 0.3 * np.sin(np.pi * x) + 0.1 * x
        direct = integrate_characteristic(frozen(g, fn), 0.8, 0.7)
        mid = integrate_characteristic(frozen(g, fn, 0.4, 1.0), 0.8, 0.7)
        rest = integrate_characteristic(frozen(g, fn), 0.4, mid.entry_point)
        assert rest.entry_point == pytest.approx(direct.entry_point, abs=1e-9)
        assert mid.stretch + rest.stretch == pytest.approx(direct.stretch, abs=1e-9)

    def test_history_validation(self):
        g = Grid(8)
        with pytest.raises(ValueError):
            VelocityHistory(np.array([0.5, 0.1]), (const_field(g, 0), const_field(g, 0)))
        with pytest.raises(ValueError):
            VelocityHistory(np.array([0.0, 1.0]), (const_field(g, 0), const_field(Grid(9), 0)))
        with pytest.raises(ValueError):
            integrate_characteristic(VelocityHistory.frozen(const_field(g, 0), 0, 1), 1.5, 0.5)


class TestSingular:
    def test_regular(self):
        g = Grid(32)
        vh = VelocityHistory.frozen(const_field(g, 1.0), 0.0, 1.0)
        assert classify_singular(integrate_characteristic(vh, 0.5, 0.9), vh) == "regular"

    def test_touch_with_vanishing_boundary_velocity(self):
        # v(s) = s - 0.3: the path through (0.7, 0.08) grazes x=0 at s=0.3
        g = Grid(32)
        vh = VelocityHistory(np.array([0.0, 1.0]), (const_field(g, -0.3), const_field(g, 0.7)))
        tr = integrate_characteristic(vh, 0.7, 0.08)
        assert classify_singular(tr, vh) == "singular"
        assert classify_singular(integrate_characteristic(vh, 0.7, 0.1), vh) == "regular"

    def test_corner_origin(self):
        g = Grid(32)
        vh = frozen(g, lambda x: x)
        tr = integrate_characteristic(vh, 0.5, 0.0)
        assert classify_singular(tr, vh) == "singular"

    def test_singular_node_filled_from_neighbor(self):
        g = Grid(32)
        vh = frozen(g, lambda x: x)
        y0 = ScalarField.from_function(g, lambda x: 1 + x)
        res = transport_nodes(0.0, 0.5, vh, y0, BoundaryMomentum())
        assert list(res.singular_nodes) == [0]
        assert res.y.values[0] == res.y.values[1]


class TestMomentum:
    def test_no_motion(self):
        g = Grid(20)
        vh = VelocityHistory.frozen(const_field(g, 0.0), 0.0, 1.0)
        y0 = ScalarField.from_function(g, np.cos)
        assert evaluate_momentum(0.5, 0.35, vh, y0, TimeSampler.constant(0), TimeSampler.constant(0)) \
            == pytest.approx(np.cos(0.35), abs=1e-4)
        out = transport_field(0.0, 0.5, vh, y0, BoundaryMomentum())
        np.testing.assert_array_equal(out.values[1:-1], y0.values[1:-1])

    def test_left_inflow_value(self):
        g = Grid(32)
        vh = VelocityHistory.frozen(const_field(g, 0.5), 0.0, 1.0)
        ylc = TimeSampler.linear(1.0, 2.0)
        val = evaluate_momentum(0.6, 0.2, vh, ScalarField.zeros(g), ylc, TimeSampler.constant(0))
        assert val == pytest.approx(1.0 + 2.0 * 0.2, abs=1e-10)

    def test_stretching_formula(self):
        g = Grid(128)
        alpha = 0.9
        vh = frozen(g, lambda x: alpha * x)
        y0 = ScalarField.from_function(g, lambda x: 2 + np.sin(4 * x))
        val = evaluate_momentum(0.5, 0.6, vh, y0, TimeSampler.constant(0), TimeSampler.constant(0))
        exact = (2 + np.sin(4 * 0.6 * np.exp(-alpha * 0.5))) * np.exp(-2 * alpha * 0.5)
        assert val == pytest.approx(exact, abs=1e-5)

    def test_zero_stays_zero(self):
        g = Grid(16)
        vh = frozen(g, lambda x: np.sin(3 * x))
        assert np.all(transport_field(0, 0.3, vh, ScalarField.zeros(g), BoundaryMomentum()).values == 0)

    def test_translate_second_order(self):
        """Frozen v = c: exact shift; limited cubic gives <= (max|y0''|/8 + 1) h^2."""
        c, t = 0.4, 0.5
        fn = lambda x: np.exp(np.sin(3 * x))
        c2 = 25.0 / 8 + 1  # max |(exp sin 3x)''| <= 9e < 25
        for n in (32, 64, 128, 256):
            g = Grid(n)
            x = g.nodes
            vh = VelocityHistory.frozen(const_field(g, c), 0.0, t)
            out = transport_field(0.0, t, vh, ScalarField(g, fn(x)),
                                  BoundaryMomentum(TimeSampler.constant(fn(0.0))))
            exact = np.where(x < c * t, fn(0.0), fn(x - c * t))
            assert np.abs(out.values - exact).max() <= c2 * g.h**2

    def test_stretching_second_order(self):
        alpha, t = 1.3, 0.5
        fn = lambda x: np.exp(np.sin(3 * x))
        errs = []
        for n in (32, 64, 128, 256):
            g = Grid(n)
            x = g.nodes
            res = transport_nodes(0.0, t, frozen(g, lambda z: alpha * z, 0.0, t),
                                  ScalarField(g, fn(x)), BoundaryMomentum())
            exact = fn(x * np.exp(-alpha * t)) * np.exp(-2 * alpha * t)
            regular = np.ones(g.size, bool)
            regular[res.singular_nodes] = False
            errs.append(np.abs(res.y.values - exact)[regular].max() / g.h**2)
        assert max(errs) <= 1.0


class TestInvariants:
    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0, 3), min_size=17, max_size=17),
           st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 2), st.floats(0, 2))
    def test_sign_and_bound(self, y0, a, b, yl, yr):
        g = Grid(16)
        vh = VelocityHistory(np.array([0.0, 0.25, 0.5]),
                             (ScalarField.from_function(g, lambda x: a * np.cos(3 * x) + b * x),
                              ScalarField.from_function(g, lambda x: b * np.sin(2 * x) + a),
                              ScalarField.from_function(g, lambda x: a - b * x ** 2)))
        res = transport_nodes(0.0, 0.5, vh, ScalarField(g, y0),
                              BoundaryMomentum(TimeSampler.constant(yl), TimeSampler.constant(yr)))
        assert res.y.values.min() >= 0.0
        assert res.y.max_abs() <= res.bound * (1 + 1e-6)

    def test_sign_negative_data(self):
        g = Grid(32)
        vh = frozen(g, lambda x: 0.5 - x, 0.0, 0.6)
        y0 = ScalarField.from_function(g, lambda x: -1 - np.sin(7 * x) ** 2)
        res = transport_nodes(0.0, 0.6, vh, y0, BoundaryMomentum(TimeSampler.constant(-1.0),
                                                                 TimeSampler.constant(-2.0)))
        assert res.y.values.max() < 0.0

    def test_trace_many_matches_single(self):
        g = Grid(32)
        vh = frozen(g, lambda x: 0.2 + 0.3 * np.sin(5 * x))
        batch = trace_many(vh, 0.9, g.nodes)
        for j in (0, 5, 17, 32):
            single = integrate_characteristic(vh, 0.9, g.nodes[j])
            assert batch.item(j) == single
