"""Metrics, brute-force metric oracles, experiment harness and report writers."""

from . import oracles
from .harness import (
    ComparisonTable,
    Improvement,
    OracleModel,
    PretrainCache,
    TrainedPredictor,
    end_to_end_improvement,
    evaluate,
    lambda_sweep,
    run_variant,
    run_variants,
)
from .metrics import (
    MetricsReport,
    compute_report,
    kendall_tau,
    mc_acc,
    mse_with_std,
    tau_b,
    top1_acc,
    top1_ir,
    v_acc,
    valid_ranking,
)
from .reports import bar_chart_svg, render_table, rows_to_csv, write_comparison, write_metrics, write_sweep

__all__ = [
    "ComparisonTable", "Improvement", "MetricsReport", "OracleModel", "PretrainCache", "TrainedPredictor",
    "bar_chart_svg", "compute_report", "end_to_end_improvement", "evaluate", "kendall_tau", "lambda_sweep",
    "mc_acc", "mse_with_std", "oracles", "render_table", "rows_to_csv", "run_variant", "run_variants",
    "tau_b", "top1_acc", "top1_ir", "v_acc", "valid_ranking", "write_comparison", "write_metrics", "write_sweep",
]
