"""One-time calibration of the inequality-check constants.

c_fit: the higher-order constant C = c_fit (1 + ||v^||_{W^{n+1,inf}} + ||y^||_inf)
is set to SAFETY times the smallest value that makes every n >= 2 margin
non-negative on the battery.

kappa_d: with c_fit fixed, SAFETY times the worst negative normalized margin
per unit (h + slab_dt), floored at KAPPA_D_FLOOR.

Writes src/chbvp/data/calibration.json.  Re-running overwrites the constants
that the acceptance tests rely on, so do it only on purpose.
"""

import json
from pathlib import Path

from chbvp.battery import LEVELS, battery_margins

SAFETY = 2.0
KAPPA_D_FLOOR = 0.1
OUT = Path(__file__).resolve().parents[1] / "src" / "chbvp" / "data" / "calibration.json"


def main():
    required = [m.required_c_fit for _, _, _, m in battery_margins(c_fit=1.0)
                if m.required_c_fit is not None]
    c_fit = float(f"{SAFETY * max(required):.3g}")
    worst = 0.0
    rows = []
    for entry, n_cells, dt, m in battery_margins(c_fit=c_fit):
        worst = max(worst, -m.worst() / (m.h + m.slab_dt))
        rows.append({"scenario": entry.name, "n_cells": n_cells, "slab_dt": dt,
                     "worst_normalized_margin": m.worst()})
    kappa_d = float(f"{max(KAPPA_D_FLOOR, SAFETY * worst):.3g}")
    doc = {
        "kappa_d": kappa_d,
        "c_fit": c_fit,
        "provenance": {
            "script": "scripts/calibrate.py",
            "levels": [list(lv) for lv in LEVELS],
            "safety": SAFETY,
            "kappa_d_floor": KAPPA_D_FLOOR,
            "max_required_c_fit": max(required),
            "worst_negative_margin_per_h_plus_dt": worst,
            "runs": rows,
        },
    }
    OUT.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"kappa_d": kappa_d, "c_fit": c_fit}))


if __name__ == "__main__":
    main()
