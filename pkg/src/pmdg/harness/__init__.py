"""Experiment configs, execution, run records and reports."""

from pmdg.harness.config import ExperimentConfig, apply_overrides, build_dataset, digest
from pmdg.harness.records import RecordSink, RunRecord, read_records
from pmdg.harness.report import (
    REPORT_KINDS,
    aggregate,
    correlation_report,
    format_cell,
    gain,
    gain_matrix,
    render_report,
    summarize,
)
from pmdg.harness.runner import (
    equal_data_protocol,
    equal_split,
    expand_grid,
    load_sweep,
    run_experiment,
    run_sweep,
)

__all__ = [
    "ExperimentConfig", "apply_overrides", "build_dataset", "digest",
    "RecordSink", "RunRecord", "read_records",
    "REPORT_KINDS", "aggregate", "correlation_report", "format_cell", "gain", "gain_matrix",
    "render_report", "summarize",
    "equal_data_protocol", "equal_split", "expand_grid", "load_sweep", "run_experiment",
    "run_sweep",
]
