"""Synthetic slow-query workloads with exact impact labels."""

from .render import render_kpis, render_log, render_plan, render_sql
from .schema import CATALOG_5, CATALOG_10, SCHEMA, DbState, QuerySpec, Table, catalog_for, make_db
from .simulator import (
    MULTIPLIERS,
    clean_operators,
    compute_impact,
    impact_from_runtimes,
    impact_vector,
    operator_costs,
    revise,
    simulate_runtime,
)
from .workload import GenConfig, draw_query, gen_config_from_kv, generate_workload, parse_kv, sample_spec

__all__ = [
    "CATALOG_5",
    "CATALOG_10",
    "SCHEMA",
    "DbState",
    "GenConfig",
    "MULTIPLIERS",
    "QuerySpec",
    "Table",
    "catalog_for",
    "clean_operators",
    "compute_impact",
    "draw_query",
    "gen_config_from_kv",
    "generate_workload",
    "impact_from_runtimes",
    "impact_vector",
    "make_db",
    "operator_costs",
    "parse_kv",
    "render_kpis",
    "render_log",
    "render_plan",
    "render_sql",
    "revise",
    "sample_spec",
    "simulate_runtime",
]
