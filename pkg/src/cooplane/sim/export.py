"""Run-log CSV and figure export.

Each table of a :class:`RunLog` is written to ``<name>.csv``; floats use
``repr`` so a re-import is bit-exact. Time-indexed tables carry an extra
``t_rel`` column, time relative to the crossing moment (negative values are
before the lane change); it is derived and dropped on import. Events and the
config go to ``run.json``.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..scene import ROLES  # noqa: E402
from .runner import RunLog  # noqa: E402

CROSSING_GID = "crossing-line"
PREDICTION_GID = "prediction-marker"


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    if v is None:
        return "None"
    return str(v)


def _parse(s: str):
    if s == "None":
        return None
    if s in ("True", "False"):
        return s == "True"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def _json_safe(v):
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def _json_restore(v):
    if isinstance(v, dict):
        return {k: _json_restore(x) for k, x in v.items()}
    if v in ("inf", "-inf", "nan"):
        return float(v)
    return v


def reference_time(log: RunLog) -> float:
    t0 = log.events.get("t0")
    return 0.0 if t0 is None else float(t0)


def write_log_csv(log: RunLog, directory) -> list:
    """Write every table plus ``run.json``; returns the written paths."""
    if not log.states:
        raise ValueError("empty run log")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    t0 = reference_time(log)
    paths = []
    for name in RunLog.TABLES:
        rows = getattr(log, name)
        path = out / f"{name}.csv"
        cols = list(rows[0]) if rows else []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols + (["t_rel"] if "t" in cols else []))
            for r in rows:
                cells = [_cell(r[c]) for c in cols]
                if "t" in cols:
                    cells.append(repr(r["t"] - t0))
                w.writerow(cells)
        paths.append(path)
    meta = out / "run.json"
    meta.write_text(json.dumps({"config": log.config,
                                "events": _json_safe(log.events)},
                               indent=2, sort_keys=True))
    paths.append(meta)
    return paths


def read_log_csv(directory) -> RunLog:
    src = Path(directory)
    meta = json.loads((src / "run.json").read_text())
    events = _json_restore(meta["events"])
    log = RunLog(config=meta["config"], events=events)
    for name in RunLog.TABLES:
        with open(src / f"{name}.csv", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, [])
            keep = [i for i, c in enumerate(header) if c != "t_rel"]
            rows = [{header[i]: _parse(rec[i]) for i in keep} for rec in reader]
        setattr(log, name, rows)
    return log


def vehicle_series(log: RunLog, role: str, column: str):
    """(t - t0, values) for one vehicle."""
    t0 = reference_time(log)
    rows = [r for r in log.states if r["vehicle"] == role]
    return [r["t"] - t0 for r in rows], [r[column] for r in rows]


def _mark(ax, log: RunLog):
    ax.axvline(0.0, color="0.5", linestyle="--", linewidth=1.0, gid=CROSSING_GID)
    tp = log.events.get("prediction_time")
    if tp is not None and math.isfinite(tp):
        ax.axvline(tp - reference_time(log), color="tab:red", linestyle=":", linewidth=1.0, gid=PREDICTION_GID)


def plot_log(log: RunLog, path, roles=ROLES):
    """Acceleration and velocity against time relative to the crossing moment."""
    fig, (ax_a, ax_v) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    for role in roles:
        t, a = vehicle_series(log, role, "accel")
        ax_a.plot(t, a, label=role)
        t, v = vehicle_series(log, role, "speed")
        ax_v.plot(t, v, label=role)
    for ax in (ax_a, ax_v):
        _mark(ax, log)
        ax.grid(alpha=0.3)
    ax_a.set_ylabel("acceleration [m/s²]")
    ax_v.set_ylabel("velocity [m/s]")
    ax_v.set_xlabel("time relative to crossing [s]")
    ax_a.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def export(log: RunLog, directory, formats=("csv", "svg")) -> list:
    """Write the requested formats (csv, svg, png) into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        if fmt == "csv":
            paths += write_log_csv(log, out)
        elif fmt in ("svg", "png"):
            paths.append(plot_log(log, out / f"profiles.{fmt}"))
        else:
            raise ValueError(f"unknown export format {fmt!r}")
    return paths
