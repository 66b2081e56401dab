"""Command line interface: solve, compare, convergence, verify.

Exit codes: 0 success, 1 verification failure, 2 admissibility failure,
3 non-convergence, 4 parse error, 5 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import energy
from .battery import bump_perturbation, tolerance, PairMargins
from .core import ScalarField
from .scenario import (
    ScenarioError, load_document, profile_values, parse_sampler, perturb_document,
    scenario_from_dict,
)
from .stepper import AdmissibilityError, NonConvergenceError, Scenario, SolutionHistory, run
from .verify import run_battery

EXIT_OK, EXIT_VERIFY, EXIT_ADMISSIBLE, EXIT_NONCONV, EXIT_PARSE, EXIT_IO = 0, 1, 2, 3, 4, 5
THREADS_ENV = "CHBVP_THREADS"
FMT = "%.17g"

log = logging.getLogger("chbvp")


class CliIOError(OSError):
    """Output could not be written."""


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return FMT % x


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliIOError(f"cannot create output directory {out}: {exc}") from exc
    return out


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _states_rows(history: SolutionHistory):
    x = history.scenario.grid.nodes
    for st in history.states:
        for xi, yi, vi in zip(x, st.y.values, st.v.values):
            yield (st.t, xi, yi, vi)


def _meta(history: SolutionHistory) -> dict:
    reps = history.reports
    return {
        "n": history.scenario.n,
        "n_cells": history.scenario.grid.n_cells,
        "slab_dt": history.scenario.slab_dt,
        "T": history.scenario.T,
        "sign_intervals": [[iv.t0, iv.t1, iv.sign_l, iv.sign_r] for iv in history.intervals],
        "slabs": [{
            "t_a": r.t_a, "t_b": r.t_b, "iterations": r.iterations, "residual": r.residual,
            "halvings": r.halvings, "singular_nodes": r.singular_nodes,
            "linf_bound": r.transport_bound, "linf_bound_margin": r.transport_bound - r.y_sup,
        } for r in reps],
        "max_iterations": history.max_iterations(),
        "max_residual": history.max_residual(),
    }


def cmd_solve(scenario_path: str, out_dir: str) -> int:
    sc = scenario_from_dict(load_document(scenario_path))
    hist = run(sc)
    out = _out_dir(out_dir)
    write_csv(out / "states.csv", ("t", "x", "y", "v"), _states_rows(hist))
    write_json(out / "meta.json", _meta(hist))
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def _load_perturbation(spec: str) -> dict:
    """A JSON file path, or an inline JSON object."""
    if spec.lstrip().startswith("{"):
        try:
            return json.loads(spec)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"inline perturbation: invalid JSON: {exc}") from exc
    return load_document(spec)


def _series(ms: energy.MarginSeries, times: np.ndarray) -> list:
    lookup = dict(zip(ms.times.tolist(), ms.normalized.tolist()))
    return [lookup.get(t) for t in times.tolist()]


def compare_runs(a: SolutionHistory, b: SolutionHistory, c_max: float = energy.DEFAULT_C_MAX):
    """Energy report rows and certificate document for a run pair."""
    sc = a.scenario
    rep = energy.relative_energy(a, b)
    t = rep.times
    margins = PairMargins(sc.grid.h, sc.slab_dt)
    cols: dict[str, list] = {}
    if sc.n == 1:
        cum = np.concatenate([[0.0], np.cumsum(rep.identity_residual)]) / rep.scale
        cols["identity_residual"] = cum.tolist()
        em = energy.energy_inequality_check(rep, (a, b))
        cols["energy_margin"] = _series(em, t)
        margins.energy = em.min_normalized()
        if sc.ylc == b.scenario.ylc and sc.yrc == b.scenario.yrc:
            al = energy.aux_inequality_check((a, b), "left")
            ar = energy.aux_inequality_check((a, b), "right")
            cols["aux_left_margin"] = _series(al, t)
            cols["aux_right_margin"] = _series(ar, t)
            margins.aux_left, margins.aux_right = al.min_normalized(), ar.min_normalized()
        constants = {"energy": em.constant}
    else:
        led = energy.higher_order_ledger(a, b)
        cols["E_rel"] = led.E_rel.tolist()
        cols["ledger_margin"] = _series(led.margins, t)
        margins.ledger = led.margins.min_normalized()
        constants = {"ledger": led.margins.constant, "c_fit": energy.calibration()["c_fit"],
                     "rellich_ok": led.rellich_ok}
    cert = energy.gronwall_certificate(rep, c_max=c_max)
    header = ["t", "E", "E_l", "E_r", *cols]
    rows = [(t[k], rep.E[k], rep.E_l[k], rep.E_r[k], *(cols[c][k] for c in cols))
            for k in range(t.size)]
    tol = tolerance(margins)
    doc = {
        "certificate": cert.to_dict(),
        "constants": constants,
        "margin_tolerance": tol,
        "worst_normalized_margin": margins.worst(),
        "margins_ok": margins.worst() >= tol,
        "max_E": float(rep.E.max()),
        "max_L": float((rep.E + rep.E_l + rep.E_r).max()),
    }
    return header, rows, doc


def cmd_compare(scenario_path: str, perturbation_spec: str, out_dir: str,
                c_max: float = energy.DEFAULT_C_MAX) -> int:
    doc = load_document(scenario_path)
    pert = _load_perturbation(perturbation_spec)
    perturbed = perturb_document(doc, pert)
    sa, sb = scenario_from_dict(doc), scenario_from_dict(perturbed)
    a, b = run(sa), run(sb)
    header, rows, cert = compare_runs(a, b, c_max)
    out = _out_dir(out_dir)
    write_csv(out / "energy_report.csv", header, rows)
    write_json(out / "certificate.json", cert)
    if not cert["certificate"]["passed"] or not cert["margins_ok"]:
        print("verification failed: " + json.dumps(_jsonable(
            {"passed": cert["certificate"]["passed"], "margins_ok": cert["margins_ok"]})),
            file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------

def _frozen_stub(c: float):
    def elliptic(scenario: Scenario, y: ScalarField, t: float) -> ScalarField:
        return ScalarField(scenario.grid, np.full(scenario.grid.size, c), t)
    return elliptic


def _translate_exact(doc: dict, c: float, x: np.ndarray, T: float) -> np.ndarray:
    """y(T, x) under the frozen field v = c, which carries no stretching."""
    y0 = doc["initial"]["y0"]
    if c == 0:
        return profile_values(y0, x)
    bnd = doc.get("boundary", {})
    if c > 0:
        entered = x < c * T
        inflow = parse_sampler(bnd.get("ylc", 0.0), "boundary.ylc")
        back = inflow(T - x / c)
    else:
        entered = 1 - x < -c * T
        inflow = parse_sampler(bnd.get("yrc", 0.0), "boundary.yrc")
        back = inflow(T + (1 - x) / c)
    shifted = profile_values(y0, np.clip(x - c * T, 0.0, 1.0))
    return np.where(entered, np.asarray(back, float), shifted)


def _orders(errors: Sequence[float]) -> list:
    out = [None]
    for e0, e1 in zip(errors[:-1], errors[1:]):
        if e0 == 0.0 and e1 == 0.0:
            out.append("exact")
        elif e1 == 0.0 or e0 == 0.0:
            out.append("inf" if e1 == 0.0 else "-inf")
        else:
            out.append(float(np.log2(e0 / e1)))
    return out


def cmd_convergence(scenario_path: str, levels: int, out_dir: str,
                    reference_factor: int = 8, frozen_velocity: float | None = None,
                    perturbation_spec: str | None = None) -> int:
    if levels < 3:
        raise ScenarioError("convergence needs at least 3 levels")
    if reference_factor < 2 or reference_factor & (reference_factor - 1):
        raise ScenarioError("reference factor must be a power of two >= 2")
    doc = load_document(scenario_path)
    base = scenario_from_dict(doc)
    n0, dt0 = base.grid.n_cells, base.slab_dt
    cfg = [(n0 * 2**j, dt0 / 2**j) for j in range(levels)]
    elliptic = {} if frozen_velocity is None else {"elliptic": _frozen_stub(frozen_velocity)}
    pert = _load_perturbation(perturbation_spec) if perturbation_spec else bump_perturbation(1e-2)
    with_identity = base.n == 1 and frozen_velocity is None

    def level(nc_dt):
        nc, dt = nc_dt
        h = run(scenario_from_dict(doc, nc, dt), **elliptic)
        ident = None
        if with_identity:
            h2 = run(scenario_from_dict(perturb_document(doc, pert), nc, dt))
            terms = energy.energy_identity_terms(h, h2)
            scale = energy.relative_energy(h, h2).scale
            ident = float(np.abs(terms.cumulative).max()) / scale
        return h, ident

    jobs = list(cfg)
    if frozen_velocity is None:
        jobs.append((cfg[-1][0] * reference_factor, cfg[-1][1] / reference_factor))
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        results = list(pool.map(level, jobs))
    if frozen_velocity is None:
        ref = results[-1][0]
        ref_v, ref_y = ref.states[-1].v.values, ref.states[-1].y.values
        ref_n = jobs[-1][0]
    rows_err_v, rows_err_y, idents = [], [], []
    for (nc, dt), (h, ident) in zip(cfg, results):
        last = h.states[-1]
        if frozen_velocity is None:
            stride = ref_n // nc
            ev = float(np.abs(last.v.values - ref_v[::stride]).max())
            ey = float(np.abs(last.y.values - ref_y[::stride]).max())
        else:
            ev = 0.0
            exact = _translate_exact(doc, frozen_velocity, h.scenario.grid.nodes, last.t)
            ey = float(np.abs(last.y.values - exact).max())
        rows_err_v.append(ev)
        rows_err_y.append(ey)
        idents.append(ident)
    ov, oy = _orders(rows_err_v), _orders(rows_err_y)
    oi = _orders(idents) if with_identity else [None] * len(cfg)
    rows = [(j, nc, dt, rows_err_v[j], rows_err_y[j], idents[j], ov[j], oy[j], oi[j])
            for j, (nc, dt) in enumerate(cfg)]
    out = _out_dir(out_dir)
    write_csv(out / "orders.csv", ("level", "n_cells", "slab_dt", "err_v", "err_y",
                                   "identity_residual", "order_v", "order_y", "order_identity"),
              rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(out_dir: str) -> int:
    result = run_battery()
    out = _out_dir(out_dir)
    write_json(out / "verify.json", result)
    if not result["passed"]:
        print("verification failed: " + ", ".join(result["failed"]), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chbvp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="integrate one scenario")
    s.add_argument("scenario")
    s.add_argument("-o", "--out", required=True)
    c = sub.add_parser("compare", help="energy certificate for a perturbed pair")
    c.add_argument("scenario")
    c.add_argument("--perturb", required=True, help="JSON file or inline JSON object")
    c.add_argument("--c-max", type=float, default=energy.DEFAULT_C_MAX)
    c.add_argument("-o", "--out", required=True)
    v = sub.add_parser("convergence", help="self-convergence orders")
    v.add_argument("scenario")
    v.add_argument("--levels", type=int, default=3)
    v.add_argument("--reference-factor", type=int, default=8)
    v.add_argument("--frozen-velocity", type=float, default=None,
                   help="replace the elliptic step by v = c and compare with the exact translate")
    v.add_argument("--perturb", default=None, help="perturbation for the identity residual")
    v.add_argument("-o", "--out", required=True)
    f = sub.add_parser("verify", help="run the built-in oracle battery")
    f.add_argument("-o", "--out", required=True)
    return p


def _dispatch(args) -> int:
    if args.command == "solve":
        return cmd_solve(args.scenario, args.out)
    if args.command == "compare":
        return cmd_compare(args.scenario, args.perturb, args.out, args.c_max)
    if args.command == "convergence":
        return cmd_convergence(args.scenario, args.levels, args.out, args.reference_factor,
                               args.frozen_velocity, args.perturb)
    return cmd_verify(args.out)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_PARSE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ScenarioError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except AdmissibilityError as exc:
        print(f"admissibility: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBLE
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
