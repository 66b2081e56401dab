"""JSON scenario files: parsing, validation and perturbation.

A scenario document has the sections ``order``, ``domain``, ``initial``,
``boundary`` and ``solver``; unknown keys anywhere are rejected.  Time
dependent data uses the closed-form sampler tags of :class:`TimeSampler`;
the initial momentum uses the profile tags below.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

import numpy as np

from .core import Grid, ScalarField, TimeSampler
from .elliptic import MAX_ORDER, min_cells
from .stepper import Scenario

SECTIONS = {
    "order": {"n", "kappa"},
    "domain": {"T", "n_cells", "slab_dt"},
    "initial": {"y0"},
    "boundary": {"v_l", "v_r", "trace_l", "trace_r", "ylc", "yrc"},
    "solver": {"picard_tol", "picard_max_iter", "relax", "sign_change_cap", "eps_v", "initial_guess"},
}
REQUIRED = {"domain": {"T", "n_cells"}, "initial": {"y0"}, "boundary": {"v_l", "v_r"}}
PROFILE_KEYS = {
    "constant": {"value"},
    "gaussian_bump": {"base", "amplitude", "center", "sharpness"},
    "polynomial": {"coefficients"},
    "table": {"x", "values"},
    "sum": {"terms"},
}
SAMPLER_KEYS = {
    "constant": {"value"},
    "linear": {"a", "b"},
    "polynomial": {"coefficients"},
    "sine": {"amplitude", "frequency", "phase", "offset"},
    "table": {"t", "values", "order"},
    "sum": {"terms"},
}
PERTURBATION_KEYS = {"y0", "ylc", "yrc"}


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario document."""


def _check_keys(obj: Any, allowed: set, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object, got {type(obj).__name__}")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ScenarioError(f"{where}: unknown key(s) {', '.join(extra)}")
    return obj


def _tagged(obj: Any, table: dict, where: str) -> tuple[str, dict]:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ScenarioError(f"{where}: expected an object with a 'kind' tag")
    kind = obj["kind"]
    if kind not in table:
        raise ScenarioError(f"{where}: unknown kind {kind!r} (allowed: {', '.join(table)})")
    params = {k: v for k, v in obj.items() if k != "kind"}
    _check_keys(params, table[kind], where)
    return kind, params


def parse_sampler(obj: Any, where: str) -> TimeSampler:
    """A number is a constant; otherwise a tagged sampler object."""
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return TimeSampler.constant(float(obj))
    kind, params = _tagged(obj, SAMPLER_KEYS, where)
    if kind == "sum":
        for i, term in enumerate(params.get("terms", [])):
            parse_sampler(term, f"{where}.terms[{i}]")
    try:
        return TimeSampler(kind, params)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def profile_values(obj: Any, x: np.ndarray, where: str = "initial.y0") -> np.ndarray:
    """Evaluate a profile tag at arbitrary points ``x``."""
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return np.full(x.size, float(obj))
    kind, p = _tagged(obj, PROFILE_KEYS, where)
    try:
        if kind == "constant":
            return np.full(x.size, float(p["value"]))
        if kind == "gaussian_bump":
            return (float(p.get("base", 0.0)) + float(p["amplitude"])
                    * np.exp(-float(p["sharpness"]) * (x - float(p["center"])) ** 2))
        if kind == "polynomial":
            return np.polynomial.polynomial.polyval(x, np.asarray(p["coefficients"], float))
        if kind == "table":
            vals = np.asarray(p["values"], float)
            if "x" not in p:
                if vals.shape != x.shape:
                    raise ScenarioError(f"{where}: table without 'x' needs n_cells+1 = {x.size} values")
                return vals
            xs = np.asarray(p["x"], float)
            if xs.shape != vals.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
                raise ScenarioError(f"{where}: table 'x' must be increasing and match 'values'")
            if xs[0] > 0 or xs[-1] < 1:
                raise ScenarioError(f"{where}: table 'x' must cover [0, 1]")
            return np.interp(x, xs, vals)
        terms = p["terms"]
        if not terms:
            raise ScenarioError(f"{where}: sum needs at least one term")
        return sum(profile_values(t, x, f"{where}.terms[{i}]") for i, t in enumerate(terms))
    except KeyError as exc:
        raise ScenarioError(f"{where}: missing parameter {exc}") from exc


def parse_profile(obj: Any, grid: Grid, where: str = "initial.y0") -> ScalarField:
    values = profile_values(obj, grid.nodes, where)
    if not np.all(np.isfinite(values)):
        raise ScenarioError(f"{where}: profile is not finite")
    return ScalarField(grid, values)


def scenario_from_dict(doc: dict, n_cells: int | None = None, slab_dt: float | None = None) -> Scenario:
    """Build a :class:`Scenario`; ``n_cells`` / ``slab_dt`` override the domain section."""
    _check_keys(doc, set(SECTIONS), "scenario")
    for sec, keys in SECTIONS.items():
        _check_keys(doc.get(sec, {}), keys, sec)
    for sec, keys in REQUIRED.items():
        missing = sorted(keys - set(doc.get(sec, {})))
        if missing:
            raise ScenarioError(f"{sec}: missing key(s) {', '.join(missing)}")
    order, dom, bnd, sol = (doc.get(k, {}) for k in ("order", "domain", "boundary", "solver"))
    n = order.get("n", 1)
    if not isinstance(n, int) or isinstance(n, bool) or not 1 <= n <= MAX_ORDER:
        raise ScenarioError(f"order.n: must be an integer in 1..{MAX_ORDER}")
    try:
        cells = int(n_cells if n_cells is not None else dom["n_cells"])
        grid = Grid(cells)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"domain.n_cells: {exc}") from exc
    if cells < min_cells(n):
        raise ScenarioError(f"domain.n_cells: order n={n} needs at least {min_cells(n)} cells")
    try:
        kw: dict = {
            "n": n,
            "kappa": float(order.get("kappa", 0.0)),
            "T": float(dom["T"]),
            "slab_dt": float(slab_dt if slab_dt is not None else dom.get("slab_dt", 0.01)),
            "y0": parse_profile(doc["initial"]["y0"], grid),
            "v_l": parse_sampler(bnd["v_l"], "boundary.v_l"),
            "v_r": parse_sampler(bnd["v_r"], "boundary.v_r"),
        }
        for name in ("ylc", "yrc"):
            if name in bnd:
                kw[name] = parse_sampler(bnd[name], f"boundary.{name}")
        for name in ("trace_l", "trace_r"):
            if name in bnd:
                seq = bnd[name]
                if not isinstance(seq, list):
                    raise ScenarioError(f"boundary.{name}: expected a list of samplers")
                kw[name] = tuple(parse_sampler(s, f"boundary.{name}[{i}]") for i, s in enumerate(seq))
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"scenario: {exc}") from exc
    kw.update(sol)
    try:
        return Scenario(**kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


def load_document(path: str | Path) -> dict:
    """Read a JSON document; I/O errors propagate as OSError, syntax errors as ScenarioError."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from exc


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(load_document(path))


def perturb_document(doc: dict, perturbation: dict) -> dict:
    """Add the perturbation's y0 / ylc / yrc deltas to a scenario document."""
    _check_keys(perturbation, PERTURBATION_KEYS, "perturbation")
    out = copy.deepcopy(doc)
    if "y0" in perturbation:
        base = out["initial"]["y0"]
        out["initial"]["y0"] = {"kind": "sum", "terms": [base, perturbation["y0"]]}
    for name in ("ylc", "yrc"):
        if name in perturbation:
            bnd = out.setdefault("boundary", {})
            base = parse_sampler(bnd.get(name, 0.0), f"boundary.{name}").to_dict()
            delta = parse_sampler(perturbation[name], f"perturbation.{name}").to_dict()
            bnd[name] = {"kind": "sum", "terms": [base, delta]}
    return out
