"""Scenario runner, driver models, run comparison and export."""

from .compare import ComparisonReport, compare_runs, write_report
from .export import export, read_log_csv, write_log_csv
from .runner import RunLog, RunMetrics, run_scenario

__all__ = ["RunLog", "RunMetrics", "run_scenario", "ComparisonReport", "compare_runs", "write_report",
           "export", "read_log_csv", "write_log_csv"]
