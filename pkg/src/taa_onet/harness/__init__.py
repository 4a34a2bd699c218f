"""Experiment orchestration: configuration, cases, pipeline stages, reports, CLI."""
from .cases import ARCHS, CASES, ExperimentCase, analytic_shapes, get_case, plan_case
from .config import DEFAULTS, RunConfig
from .report import render_table, sort_rows, write_report

__all__ = [
    "ARCHS", "CASES", "DEFAULTS", "ExperimentCase", "RunConfig", "analytic_shapes", "get_case",
    "plan_case", "render_table", "sort_rows", "write_report",
]
