"""Per-figure CSV exports from evaluation reports."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import EvaluationReport

FIGURES = ("trajectory", "velocity_error_sleeve", "velocity_std", "positions_ne")


def _write(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def export_plot_data(reports: Sequence[EvaluationReport], directory) -> list[Path]:
    """Write one CSV per figure, long format with trajectory/pattern/strategy keys.

    - ``trajectory.csv``: truth track in the North-East plane.
    - ``velocity_error_sleeve.csv``: velocity error and its 1-sigma bound.
    - ``velocity_std.csv``: root of the velocity covariance trace.
    - ``positions_ne.csv``: estimated North-East position per strategy.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    traj, sleeve, std, pos = [], [], [], []
    for r in reports:
        key = (r.trajectory_id, r.pattern)
        for t, (n, e) in zip(r.truth.get("t", []), r.truth.get("pos_ne", [])):
            traj.append([*key, t, n, e])
        for strategy, tr in r.traces.items():
            for t, err, var, cov, ne in zip(tr["t"], tr["vel_error"], tr["vel_var"], tr["cov_trace"], tr["pos_ne"]):
                sig = np.sqrt(np.maximum(var, 0.0))
                sleeve.append([*key, strategy, t, *err, *sig])
                std.append([*key, strategy, t, float(np.sqrt(max(cov, 0.0)))])
                pos.append([*key, strategy, t, *ne])
    keys = ["trajectory", "pattern"]
    return [
        _write(d / "trajectory.csv", [*keys, "t", "pN", "pE"], traj),
        _write(
            d / "velocity_error_sleeve.csv",
            [*keys, "strategy", "t", "dvN", "dvE", "dvD", "sigN", "sigE", "sigD"],
            sleeve,
        ),
        _write(d / "velocity_std.csv", [*keys, "strategy", "t", "vel_std"], std),
        _write(d / "positions_ne.csv", [*keys, "strategy", "t", "pN", "pE"], pos),
    ]
