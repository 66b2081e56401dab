import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chbvp.scenario import (
    ScenarioError, load_document, load_scenario, parse_sampler, perturb_document,
    profile_values, scenario_from_dict,
)


def base_doc():
    return {
        "order": {"n": 1, "kappa": 0.5},
        "domain": {"T": 0.1, "n_cells": 16, "slab_dt": 0.05},
        "initial": {"y0": {"kind": "constant", "value": 1.0}},
        "boundary": {"v_l": 0.3, "v_r": -0.2, "ylc": 1.0, "yrc": 1.0},
    }


class TestValidation:
    def test_minimal(self):
        sc = scenario_from_dict(base_doc())
        assert sc.n == 1 and sc.kappa == 0.5 and sc.grid.n_cells == 16

    @pytest.mark.parametrize("path", [("extra",), ("domain", "dx"), ("boundary", "v_m"),
                                      ("solver", "tolerance")])
    def test_unknown_keys(self, path):
        doc = base_doc()
        target = doc
        for key in path[:-1]:
            target = target.setdefault(key, {})
        target[path[-1]] = 1
        with pytest.raises(ScenarioError, match="unknown key"):
            scenario_from_dict(doc)

    def test_missing_required(self):
        doc = base_doc()
        del doc["boundary"]["v_r"]
        with pytest.raises(ScenarioError, match="missing"):
            scenario_from_dict(doc)

    @pytest.mark.parametrize("n", [0, 9, 1.5, True])
    def test_bad_order(self, n):
        doc = base_doc()
        doc["order"]["n"] = n
        with pytest.raises(ScenarioError, match="order.n"):
            scenario_from_dict(doc)

    def test_too_few_cells(self):
        doc = base_doc()
        doc["order"] = {"n": 3}
        doc["domain"]["n_cells"] = 4
        with pytest.raises(ScenarioError, match="at least"):
            scenario_from_dict(doc)

    def test_unknown_profile_kind(self):
        doc = base_doc()
        doc["initial"]["y0"] = {"kind": "spline"}
        with pytest.raises(ScenarioError, match="unknown kind"):
            scenario_from_dict(doc)

    def test_unknown_sampler_param(self):
        with pytest.raises(ScenarioError, match="unknown key"):
            parse_sampler({"kind": "linear", "a": 1, "c": 2}, "v_l")

    def test_bad_solver_value(self):
        doc = base_doc()
        doc["solver"] = {"initial_guess": "random"}
        with pytest.raises(ScenarioError):
            scenario_from_dict(doc)

    def test_overrides(self):
        sc = scenario_from_dict(base_doc(), n_cells=32, slab_dt=0.01)
        assert sc.grid.n_cells == 32 and sc.slab_dt == 0.01


class TestProfiles:
    def test_gaussian(self):
        x = np.linspace(0, 1, 5)
        got = profile_values({"kind": "gaussian_bump", "base": 1, "amplitude": 2,
                              "center": 0.5, "sharpness": 10}, x)
        assert np.allclose(got, 1 + 2 * np.exp(-10 * (x - 0.5) ** 2))

    def test_table_interpolates(self):
        x = np.linspace(0, 1, 5)
        got = profile_values({"kind": "table", "x": [0, 1], "values": [0, 2]}, x)
        assert np.allclose(got, 2 * x)

    def test_table_must_cover(self):
        with pytest.raises(ScenarioError, match="cover"):
            profile_values({"kind": "table", "x": [0.1, 1], "values": [0, 2]}, np.zeros(3))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=5),
           st.floats(-5, 5, allow_nan=False))
    def test_sum_is_additive(self, coeffs, c):
        x = np.linspace(0, 1, 9)
        p = {"kind": "polynomial", "coefficients": coeffs}
        s = {"kind": "sum", "terms": [p, {"kind": "constant", "value": c}]}
        assert np.allclose(profile_values(s, x), profile_values(p, x) + c, atol=1e-12)


class TestPerturbation:
    def test_y0_and_momentum(self):
        doc = base_doc()
        pert = {"y0": {"kind": "constant", "value": 0.1}, "ylc": 0.01}
        sc = scenario_from_dict(perturb_document(doc, pert))
        assert np.allclose(sc.y0.values, 1.1)
        assert sc.ylc(0.3) == pytest.approx(1.01)
        assert doc == base_doc()

    def test_unknown_perturbation_key(self):
        with pytest.raises(ScenarioError, match="unknown key"):
            perturb_document(base_doc(), {"v_l": 1.0})


class TestFiles:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(base_doc()))
        assert load_scenario(p).T == 0.1

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text("{not json")
        with pytest.raises(ScenarioError, match="invalid JSON"):
            load_document(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_document(tmp_path / "absent.json")
