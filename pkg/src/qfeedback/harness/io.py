"""Result files: per-trajectory CSVs, ensemble summary JSON, config echo.

Floats are written with ``repr`` so a re-read reproduces them exactly; NaN
is written as ``nan`` in CSV and ``null`` in JSON.
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from qfeedback.harness.config import SimulationConfig, matrix_to_json, write_config
from qfeedback.harness.runner import (
    EVENT_COLUMNS,
    SAMPLE_COLUMNS,
    SUMMARY_COLUMNS,
    EnsembleStats,
    TrajectoryRecord,
)

OUT_ENV = "QFEEDBACK_OUT"


def default_out_dir() -> Path:
    """Output directory from ``$QFEEDBACK_OUT``, else ``./qfeedback_out``."""
    return Path(os.environ.get(OUT_ENV, "qfeedback_out"))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_rows(path: Path, header, rows, int_cols=()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(int(v)) if j in int_cols else _fmt(v) for j, v in enumerate(row)])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    return obj


def _dump_json(obj, path: Path):
    path.write_text(json.dumps(_json_safe(obj), indent=2, allow_nan=False) + "\n")


def write_trajectory(record: TrajectoryRecord, out_dir) -> None:
    """``trajectory_<i>.csv``, ``switches_<i>.csv`` and ``final_<i>.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    i = record.seed_index
    _write_rows(out / f"trajectory_{i}.csv", SAMPLE_COLUMNS, record.samples, int_cols=(6,))
    _write_rows(out / f"switches_{i}.csv", EVENT_COLUMNS, record.switch_events, int_cols=(1, 2))
    _dump_json({
        "index": i,
        "converged": record.converged,
        "failed": record.failed,
        "fail_reason": record.fail_reason,
        "final_V": record.final_V,
        "final_v": record.final_v,
        "min_fidelity": record.min_fidelity,
        "n_switches": record.n_switches,
        "final_rho": matrix_to_json(record.final_rho),
    }, out / f"final_{i}.json")


def write_outputs(records, stats: EnsembleStats | None, out_dir, config: SimulationConfig | None = None) -> Path:
    """Write records, ensemble statistics and the effective config to `out_dir`.

    Ensemble files: ``summary.json``, ``trajectories.csv`` (one row per
    trajectory) and ``mean_fidelity.csv`` (``t,mean,stderr``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records or ():
        write_trajectory(rec, out)
    if stats is not None:
        _dump_json(stats.to_dict(), out / "summary.json")
        rows = [[getattr(r, c) for c in SUMMARY_COLUMNS] for r in stats.trajectories]
        int_cols = tuple(j for j, c in enumerate(SUMMARY_COLUMNS)
                         if c in ("index", "failed", "converged", "n_switches", "n_exits", "collapse_class"))
        _write_rows(out / "trajectories.csv", SUMMARY_COLUMNS, rows, int_cols=int_cols)
        _write_rows(out / "mean_fidelity.csv", ("t", "mean", "stderr"), stats.mean_fidelity_path)
    if config is not None:
        write_config(config, out / "config.json")
    return out


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and float array of a CSV written by this module."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(x) for x in row] for row in r]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def read_summary(path) -> dict:
    return json.loads(Path(path).read_text())
