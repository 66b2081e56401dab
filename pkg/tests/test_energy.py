import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chbvp import energy
from chbvp.battery import bump_perturbation, run_pair, smooth_document, tolerance, pair_margins
from chbvp.core import Grid, ScalarField
from chbvp.stepper import SignInterval, run
from chbvp.scenario import scenario_from_dict

FAST = dict(n_cells=32, slab_dt=0.02, T=0.2)


def pair(delta=1e-3, n=1, v_l=0.3, v_r=-0.2, n_cells=32, slab_dt=0.02, T=0.2):
    doc = smooth_document(n, n_cells, slab_dt, T, v_l, v_r)
    return run_pair(doc, bump_perturbation(delta))


@pytest.fixture(scope="module")
def bump_pair():
    return pair()


class TestSobolevNorm:
    @pytest.mark.parametrize("n,exact", [(1, 0.5 * (1 + np.pi**2)),
                                         (2, 0.5 * (1 + np.pi**2 + np.pi**4))])
    def test_sine(self, n, exact):
        f = ScalarField.from_function(Grid(256), lambda x: np.sin(np.pi * x))
        assert energy.sobolev_norm_sq(f, n) == pytest.approx(exact, rel=1e-3)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-10, 10, allow_nan=False), st.integers(1, 3))
    def test_quadratic_scaling(self, c, n):
        f = ScalarField.from_function(Grid(64), lambda x: np.cos(2 * x) + x**3)
        g = ScalarField(f.grid, c * f.values)
        assert energy.sobolev_norm_sq(g, n) == pytest.approx(c * c * energy.sobolev_norm_sq(f, n),
                                                             rel=1e-12, abs=1e-300)


class TestTimeDerivative:
    def test_exponential_exact(self):
        t = np.linspace(0, 1, 11)
        f = 3 * np.exp(5 * t)
        assert np.allclose(energy.time_derivative(f, t), 15 * np.exp(5 * t), rtol=1e-12)

    def test_zero_series(self):
        t = np.linspace(0, 1, 5)
        assert np.all(energy.time_derivative(np.zeros(5), t) == 0)


class TestRelativeEnergy:
    def test_identical_runs_zero(self):
        a = run(scenario_from_dict(smooth_document(1, **FAST)))
        rep = energy.relative_energy(a, a)
        for s in (rep.E, rep.E_l, rep.E_r):
            assert np.all(s == 0)
        cert = energy.gronwall_certificate(rep)
        assert cert.passed and cert.chaining_ok

    def test_symmetric(self, bump_pair):
        a, b = bump_pair
        ab, ba = energy.relative_energy(a, b), energy.relative_energy(b, a)
        for x, y in ((ab.E, ba.E), (ab.E_l, ba.E_l), (ab.E_r, ba.E_r)):
            assert np.array_equal(x, y)

    def test_quadratic_in_perturbation(self, bump_pair):
        a, b = bump_pair
        _, c = pair(5e-4)
        E1 = energy.relative_energy(a, b).E
        E2 = energy.relative_energy(a, c).E
        ratio = E1[1:] / E2[1:]
        assert np.all(np.abs(ratio / 4 - 1) < 0.2)

    def test_mismatched_pairs_rejected(self, bump_pair):
        a, _ = bump_pair
        other = run(scenario_from_dict(smooth_document(1, n_cells=64, slab_dt=0.02, T=0.2)))
        with pytest.raises(ValueError):
            energy.relative_energy(a, other)


class TestIdentity:
    def test_residual_decays(self):
        res = []
        for n_cells, dt in ((32, 0.02), (64, 0.01)):
            a, b = pair(n_cells=n_cells, slab_dt=dt)
            rep = energy.relative_energy(a, b)
            res.append(np.abs(energy.energy_identity_terms(a, b).cumulative).max() / rep.scale)
        assert res[1] < res[0] / 1.8

    def test_zero_flux_terms_vanish(self):
        a, b = pair(v_l=0.0, v_r=0.0)
        terms = energy.energy_identity_terms(a, b)
        assert np.all(terms.flux_left == 0) and np.all(terms.flux_right == 0)

    def test_identity_needs_n1(self):
        a, b = pair(n=2, T=0.04)
        with pytest.raises(ValueError):
            energy.energy_identity_terms(a, b)


class TestInequalities:
    def test_energy_margin(self, bump_pair):
        m = pair_margins(*bump_pair)
        assert m.energy >= tolerance(m)

    def test_aux_margins(self, bump_pair):
        for side in energy.SIDES:
            ms = energy.aux_inequality_check(bump_pair, side)
            assert ms.times.size > 0
            assert ms.min_normalized() >= -0.1 * (1 / 32 + 0.02)

    def test_aux_empty_without_inflow(self):
        runs = pair(v_l=-0.3, v_r=-0.2)
        ms = energy.aux_inequality_check(runs, "left")
        assert ms.times.size == 0 and ms.min_normalized() == np.inf
        with pytest.raises(ValueError, match="outside"):
            energy.aux_inequality_check(runs, "left", times=[0.1])

    def test_aux_rejects_bad_side(self, bump_pair):
        with pytest.raises(ValueError):
            energy.aux_inequality_check(bump_pair, "middle")


class TestCertificate:
    def test_growth_rate(self):
        t = np.linspace(0, 1, 21)
        iv = SignInterval(0.0, 1.0, 1, -1)
        rep = energy.EnergyReport(t, np.exp(2 * t), 0 * t, 0 * t, 0 * t + 1, 0 * t - 1,
                                  intervals=(iv,))
        cert = energy.gronwall_certificate(rep)
        assert cert.intervals[0].c_hat == pytest.approx(2.0, rel=1e-9)
        assert cert.passed

    def test_exceeds_cmax(self):
        t = np.linspace(0, 1, 21)
        iv = SignInterval(0.0, 1.0, -1, 1)
        rep = energy.EnergyReport(t, np.exp(5 * t), 0 * t, 0 * t, 0 * t - 1, 0 * t + 1,
                                  intervals=(iv,))
        assert not energy.gronwall_certificate(rep, c_max=4.0).passed

    @pytest.mark.parametrize("sl,sr,case", [(1, -1, "inflow both"), (1, 1, "inflow left"),
                                            (-1, -1, "inflow right"), (-1, 1, "no inflow")])
    def test_cases(self, sl, sr, case):
        assert energy.lyapunov_components(SignInterval(0, 1, sl, sr))[0] == case

    def test_counterexample(self):
        rep = energy.counterexample_report()
        margins = energy.gronwall_system_margins(rep, rep.intervals, 1.0)
        assert margins.margin.min() > 0
        cert = energy.gronwall_certificate(rep)
        assert not cert.chaining_ok
        assert cert.chaining.startswith("no continuation across sign change")
        assert "E_l" in cert.intervals[0].blow_up

    def test_uncontrolled_component_blocks_chaining(self):
        t = np.linspace(0, 1, 11)
        ivs = (SignInterval(0.0, 0.5, -1, 1), SignInterval(0.5, 1.0, 1, 1))
        rep = energy.EnergyReport(t, 1 + t, 0 * t + 0.5, 0 * t, t - 0.5, 0 * t + 1, intervals=ivs)
        cert = energy.gronwall_certificate(rep)
        assert not cert.chaining_ok and "E_l" in cert.chaining

    def test_differing_momentum_is_open_regime(self):
        t = np.linspace(0, 1, 11)
        ivs = (SignInterval(0.0, 0.5, -1, 1), SignInterval(0.5, 1.0, 1, 1))
        rep = energy.EnergyReport(t, 0 * t, 0 * t, 0 * t, t - 0.5, 0 * t + 1, intervals=ivs,
                                  momentum_differs=("left",))
        cert = energy.gronwall_certificate(rep)
        assert cert.chaining.startswith("no chaining across sign change")
        assert [c.applicable for c in cert.intervals] == [True, False]


class TestHigherOrder:
    def test_identical_runs_propagate_zero(self):
        a = run(scenario_from_dict(smooth_document(2, n_cells=32, slab_dt=0.02, T=0.06)))
        led = energy.higher_order_ledger(a, a)
        assert led.zero_propagation is True

    def test_ledger_margins(self):
        a, b = pair(n=2, T=0.1)
        led = energy.higher_order_ledger(a, b)
        assert led.rellich_ok
        assert led.margins.min_normalized() >= -0.1 * (1 / 32 + 0.02)
        assert led.required_c_fit() <= energy.calibration()["c_fit"]

    def test_needs_n2(self, bump_pair):
        with pytest.raises(ValueError):
            energy.higher_order_ledger(*bump_pair)
