"""Smooth-scenario battery shared by calibration, acceptance and the CLI defaults.

Every entry is a scenario document plus a y0 bump perturbation; the battery
covers the four inflow cases (left, right, both, none) for n = 1 and n = 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import energy
from .scenario import perturb_document, scenario_from_dict
from .stepper import SolutionHistory, run

BUMP = {"kind": "gaussian_bump", "amplitude": 1.0, "center": 0.6, "sharpness": 40.0}
DEFAULT_DELTA = 1e-3
FLUX_CASES = {"both": (0.3, -0.2), "left": (0.3, 0.2), "right": (-0.3, -0.2), "none": (-0.3, 0.2)}
LEVELS = ((32, 0.02), (64, 0.01))


def smooth_document(n: int = 1, n_cells: int = 64, slab_dt: float = 0.02, T: float = 0.5,
                    v_l: float = 0.3, v_r: float = -0.2) -> dict:
    """y0 = 1 + exp(-30 (x - 0.4)^2) / 2 with constant fluxes and momentum 1 at inflow."""
    doc = {
        "order": {"n": n},
        "domain": {"T": T, "n_cells": n_cells, "slab_dt": slab_dt},
        "initial": {"y0": {"kind": "gaussian_bump", "base": 1.0, "amplitude": 0.5,
                           "center": 0.4, "sharpness": 30.0}},
        "boundary": {"v_l": v_l, "v_r": v_r, "ylc": 1.0, "yrc": 1.0},
        "solver": {"picard_tol": 1e-10},
    }
    if n == 1:
        doc["order"]["kappa"] = 0.5
    return doc


def bump_perturbation(delta: float = DEFAULT_DELTA) -> dict:
    return {"y0": {**BUMP, "amplitude": BUMP["amplitude"] * delta}}


@dataclass(frozen=True)
class BatteryEntry:
    name: str
    n: int
    v_l: float
    v_r: float
    T: float

    def document(self, n_cells: int, slab_dt: float) -> dict:
        return smooth_document(self.n, n_cells, slab_dt, self.T, self.v_l, self.v_r)


def smooth_battery() -> list[BatteryEntry]:
    out = []
    for n, T in ((1, 0.5), (2, 0.2)):
        for case, (vl, vr) in FLUX_CASES.items():
            out.append(BatteryEntry(f"n={n} inflow {case}", n, vl, vr, T))
    return out


def run_pair(doc: dict, perturbation: dict, n_cells: int | None = None,
             slab_dt: float | None = None) -> tuple[SolutionHistory, SolutionHistory]:
    a = run(scenario_from_dict(doc, n_cells, slab_dt))
    b = run(scenario_from_dict(perturb_document(doc, perturbation), n_cells, slab_dt))
    return a, b


@dataclass
class PairMargins:
    """Worst normalized margins of every inequality check for one run pair."""

    h: float
    slab_dt: float
    energy: float | None = None
    aux_left: float | None = None
    aux_right: float | None = None
    ledger: float | None = None
    required_c_fit: float | None = None

    def worst(self) -> float:
        vals = [v for v in (self.energy, self.aux_left, self.aux_right, self.ledger)
                if v is not None and np.isfinite(v)]
        return min(vals) if vals else float("inf")


def pair_margins(a: SolutionHistory, b: SolutionHistory, c_fit: float | None = None) -> PairMargins:
    sc = a.scenario
    out = PairMargins(sc.grid.h, sc.slab_dt)
    if sc.n == 1:
        rep = energy.relative_energy(a, b)
        out.energy = energy.energy_inequality_check(rep, (a, b)).min_normalized()
        out.aux_left = energy.aux_inequality_check((a, b), "left").min_normalized()
        out.aux_right = energy.aux_inequality_check((a, b), "right").min_normalized()
    else:
        led = energy.higher_order_ledger(a, b, c_fit=c_fit)
        out.ledger = led.margins.min_normalized()
        out.required_c_fit = led.required_c_fit()
    return out


def tolerance(m: PairMargins, kappa_d: float | None = None) -> float:
    if kappa_d is None:
        kappa_d = energy.calibration()["kappa_d"]
    return -kappa_d * (m.h + m.slab_dt)


def battery_margins(levels=LEVELS, c_fit: float | None = None, delta: float = DEFAULT_DELTA):
    """Yield (entry, n_cells, slab_dt, PairMargins) over the battery."""
    pert = bump_perturbation(delta)
    for entry in smooth_battery():
        for n_cells, dt in levels:
            a, b = run_pair(entry.document(n_cells, dt), pert)
            yield entry, n_cells, dt, pair_margins(a, b, c_fit)


def max_abs(values) -> float:
    arr = np.asarray(values, float)
    return float(np.abs(arr).max()) if arr.size else 0.0
