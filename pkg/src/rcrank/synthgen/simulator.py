"""Toy cost model: operator costs, defect multipliers, runtime and impact labels.

The defect-free query is a list of operators with base costs. Each planted
defect multiplies the cost of the operators it touches by ``1 + coef * s``
where ``s`` is its severity, so a zero severity is a no-op and runtime grows
monotonically with every severity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import DegenerateSpec, InvalidSpec

SCAN_COST = 4e-8  # seconds per row
FILTER_COST = 1e-8
JOIN_COST = 3e-8  # per input row
EXCHANGE_COST = 2e-8
AGG_COST = 2e-8
SORT_COST = 3e-9  # times n log2 n
PROJECT_COST = 1e-3
UPDATE_COST = 2e-7
INSERT_COST = 1e-7
INDEX_FRACTION = 0.15  # indexed access relative to a full scan

# root cause -> {operator tag: coefficient}; "*" touches every operator
MULTIPLIERS = {
    "statistics": {"join": 2.0, "aggregate": 1.0, "scan": 0.2, "index_target": 0.2},
    "join_order": {"join": 4.0},
    "index": {"index_target": 10.0},
    "distribution_key": {"exchange": 6.0, "join": 1.0},
    "query_rewrite": {"*": 1.2},
    "redundant_index": {"update": 3.0, "insert": 3.0},
    "repeated_subquery": {"filter": 8.0},
    "complex_join": {"join": 2.5},
    "full_table_update": {"update": 6.0},
    "large_insert": {"insert": 5.0},
}

DEFAULT_NOISE_SIGMA = 0.1


@dataclass(frozen=True)
class Operator:
    tag: str
    key: tuple  # stable identity used to attach costs to plan nodes
    base: float
    rows_in: float
    rows_out: float
    table: str | None = None


def table_selectivity(spec, table):
    sel = 1.0
    for t, _, s in spec.predicates:
        if t == table:
            sel *= s
    return sel


def clean_operators(spec, db):
    """Operators of the defect-free execution, in execution order."""
    spec.validate(db)
    ops = []
    if spec.kind in ("update", "insert"):
        src = spec.tables[0]
        n = float(db.table(src).row_count)
        sel = table_selectivity(spec, src)
        ops.append(Operator("scan", ("scan", src), n * SCAN_COST, n, n, src))
        if sel < 1.0:
            ops.append(Operator("filter", ("filter", src), n * FILTER_COST, n, n * sel, src))
        rows = max(n * sel, 1.0)
        if spec.kind == "update":
            ops.append(Operator("update", ("update", src), rows * UPDATE_COST, rows, rows, src))
        else:
            target = spec.extra.get("target", src)
            ops.append(Operator("insert", ("insert", target), rows * INSERT_COST, rows, rows, target))
        ops.append(Operator("project", ("project",), PROJECT_COST, rows, rows))
        return ops

    inter = None
    for i, t in enumerate(spec.tables):
        n = float(db.table(t).row_count)
        sel = table_selectivity(spec, t)
        out = max(n * sel, 1.0)
        if t == spec.index_table:
            ops.append(Operator("index_target", ("scan", t), n * SCAN_COST * INDEX_FRACTION, n, out, t))
            ops.append(Operator("filter", ("filter", t), out * FILTER_COST, out, out, t))
        else:
            ops.append(Operator("scan", ("scan", t), n * SCAN_COST, n, n, t))
            if sel < 1.0:
                ops.append(Operator("filter", ("filter", t), n * FILTER_COST, n, out, t))
        if inter is None:
            inter = out
            continue
        ops.append(Operator("exchange", ("exchange", t), out * EXCHANGE_COST, out, out, t))
        ops.append(Operator("join", ("join", i), (inter + out) * JOIN_COST, inter + out, max(inter, out)))
        inter = max(inter, out)
    if spec.group_by:
        ops.append(Operator("aggregate", ("aggregate",), inter * AGG_COST, inter, max(inter / 20.0, 1.0)))
        inter = max(inter / 20.0, 1.0)
    if spec.order_by:
        ops.append(Operator("sort", ("sort",), SORT_COST * inter * math.log2(inter + 2.0), inter, inter))
    ops.append(Operator("project", ("project",), PROJECT_COST, inter, inter))
    return ops


def multiplier(tag, defects):
    m = 1.0
    for rc, s in defects.items():
        coefs = MULTIPLIERS.get(rc)
        if not coefs or s <= 0.0:
            continue
        c = coefs.get(tag, coefs.get("*", 0.0))
        m *= 1.0 + c * s
    return m


def operator_costs(spec, db):
    """(operator, cost with defects applied) for every operator."""
    return [(op, op.base * multiplier(op.tag, spec.defects)) for op in clean_operators(spec, db)]


def noise_factor(spec, sigma=DEFAULT_NOISE_SIGMA):
    if sigma <= 0:
        return 1.0
    z = np.random.default_rng([spec.noise_seed, 0x5EED]).standard_normal()
    return float(math.exp(sigma * z))


def simulate_runtime(spec, db, noiseless=True, sigma=DEFAULT_NOISE_SIGMA):
    total = math.fsum(c for _, c in operator_costs(spec, db))
    if not noiseless:
        total *= noise_factor(spec, sigma)
    return total


def _rc_name(spec, rc, catalog):
    if isinstance(rc, str):
        return rc
    names = list(catalog) if catalog is not None else list(spec.defects)
    if not 0 <= rc < len(names):
        raise InvalidSpec(f"root-cause index {rc} out of range for {len(names)} causes")
    return names[rc]


def revise(spec, rc, catalog=None):
    """Copy of ``spec`` with root cause ``rc`` (name or index) fixed."""
    name = _rc_name(spec, rc, catalog)
    defects = dict(spec.defects)
    if name in defects:
        defects[name] = 0.0
    return replace(spec, defects=defects)


def impact_from_runtimes(before, after):
    if not before > 0:
        raise DegenerateSpec(f"runtime must be positive to define an impact, got {before}")
    return (before - after) / before


def compute_impact(spec, rc, db, catalog=None):
    before = simulate_runtime(spec, db)
    after = simulate_runtime(revise(spec, rc, catalog), db)
    return impact_from_runtimes(before, after)


def impact_vector(spec, db, catalog):
    before = simulate_runtime(spec, db)
    return np.array(
        [impact_from_runtimes(before, simulate_runtime(revise(spec, name), db)) for name in catalog],
        dtype=np.float64,
    )
