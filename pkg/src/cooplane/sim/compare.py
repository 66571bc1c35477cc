"""Side-by-side comparison of a prediction-ON and a prediction-OFF run."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..errors import InputError  # noqa: E402
from ..scene import ROLES  # noqa: E402
from .export import CROSSING_GID, PREDICTION_GID, reference_time, vehicle_series  # noqa: E402
from .runner import RunLog, RunMetrics  # noqa: E402

IGNORED_KEYS = ("prediction_enabled",)


@dataclass
class ComparisonReport:
    """Series are keyed by (role, quantity, run) with quantity in {accel, speed} and run in {on, off}."""

    series: dict = field(default_factory=dict)
    prediction_marker: float = math.nan
    metrics_on: dict = field(default_factory=dict)
    metrics_off: dict = field(default_factory=dict)
    deltas: dict = field(default_factory=dict)

    def series_for(self, role: str, quantity: str) -> list:
        return [v for (r, q, _), v in self.series.items() if r == role and q == quantity]

    def delta_rows(self) -> list:
        return [{"metric": k, "on": self.metrics_on[k], "off": self.metrics_off[k], "delta": d}
                for k, d in self.deltas.items()]


def _delta(a, b):
    if isinstance(a, bool):
        return int(a) - int(b)
    if math.isnan(a) and math.isnan(b):
        return 0.0
    if a == b:
        return 0.0
    return a - b


def _base(config: dict) -> dict:
    return {k: v for k, v in config.items() if k not in IGNORED_KEYS}


def compare_runs(log_on: RunLog, log_off: RunLog) -> ComparisonReport:
    """Profiles re-referenced to each run's t=0, the prediction marker and a metric delta table."""
    if _base(log_on.config) != _base(log_off.config):
        diff = sorted(k for k in set(log_on.config) | set(log_off.config)
                      if k not in IGNORED_KEYS and log_on.config.get(k) != log_off.config.get(k))
        raise InputError(f"runs come from different base configs: {diff}")
    rep = ComparisonReport()
    for role in ROLES:
        for q in ("accel", "speed"):
            rep.series[(role, q, "on")] = vehicle_series(log_on, role, q)
            rep.series[(role, q, "off")] = vehicle_series(log_off, role, q)
    tp = log_on.events.get("prediction_time")
    if tp is not None:
        rep.prediction_marker = tp - reference_time(log_on)
    rep.metrics_on = RunMetrics.from_log(log_on).as_dict()
    rep.metrics_off = RunMetrics.from_log(log_off).as_dict()
    rep.deltas = {k: _delta(rep.metrics_on[k], rep.metrics_off[k]) for k in rep.metrics_on}
    return rep


def write_report(rep: ComparisonReport, directory, formats=("svg",)) -> list:
    """Metric delta CSV plus one acceleration/velocity figure per requested format."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "metrics_delta.csv"
    with open(table, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["metric", "on", "off", "delta"])
        w.writeheader()
        for row in rep.delta_rows():
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    paths = [table]
    for fmt in formats:
        paths.append(plot_comparison(rep, out / f"comparison.{fmt}"))
    return paths


def plot_comparison(rep: ComparisonReport, path, roles=("TV", "EV")):
    fig, axes = plt.subplots(2, len(roles), sharex=True, figsize=(5 * len(roles), 5), squeeze=False)
    styles = {"on": "-", "off": "--"}
    for j, role in enumerate(roles):
        for i, (q, label) in enumerate((("accel", "acceleration [m/s²]"), ("speed", "velocity [m/s]"))):
            ax = axes[i][j]
            for run in ("on", "off"):
                t, v = rep.series[(role, q, run)]
                ax.plot(t, v, styles[run], label=f"prediction {run.upper()}")
            ax.axvline(0.0, color="0.5", linestyle="--", linewidth=1.0, gid=CROSSING_GID)
            if math.isfinite(rep.prediction_marker):
                ax.axvline(rep.prediction_marker, color="tab:red", linestyle=":", linewidth=1.0, gid=PREDICTION_GID)
            ax.set_ylabel(label)
            ax.grid(alpha=0.3)
            if i == 0:
                ax.set_title(role)
                ax.legend(fontsize=8, loc="lower left")
            else:
                ax.set_xlabel("time relative to t=0 [s]")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)
