"""Benchmark sets, repeated evaluation and reporting."""

from .data import (
    BUILTIN_SETS, Benchmark, BenchmarkFormatError, builtin_path, format_ranges, load_benchmarks,
    load_builtin, load_reference_results, parse_benchmarks, parse_ranges, resolve_benchmarks,
    sample_dataset, serialize_benchmarks,
)
from .harness import (
    REPORT_COLUMNS, MatrixSource, Metrics, RunOutcome, RunRecord, aggregate_metrics, binned_variance,
    emit_report, length_bins, recorded_r2, run_benchmark, run_once, run_seed, run_suite,
)

__all__ = [
    "BUILTIN_SETS", "Benchmark", "BenchmarkFormatError", "builtin_path", "format_ranges", "load_benchmarks",
    "load_builtin", "load_reference_results", "parse_benchmarks", "parse_ranges", "resolve_benchmarks",
    "sample_dataset", "serialize_benchmarks", "REPORT_COLUMNS", "MatrixSource", "Metrics", "RunOutcome",
    "RunRecord", "aggregate_metrics", "binned_variance", "emit_report", "length_bins", "recorded_r2",
    "run_benchmark", "run_once", "run_seed", "run_suite",
]
