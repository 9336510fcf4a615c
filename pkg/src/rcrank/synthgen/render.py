"""Turn a query spec into SQL text, a plan DAG, a log vector and a KPI matrix.

Every defect leaves a trace in at least one modality so that its impact is
learnable: rewrites nest subqueries in the text, stale statistics shrink plan
row estimates, a bad join order flips the plan and inflates memory, a missing
index turns an index scan into scan + filter, skew shows up as shuffle volume.
"""

from __future__ import annotations

import math

import numpy as np

from ..domain.plan import OpKind, PlanNode, build_plan
from ..domain.records import DEFAULT_T, KPI_CHANNELS
from .schema import SCHEMA
from .simulator import operator_costs, simulate_runtime

BUMP_WINDOW = 20


def _non_key_columns(table):
    cols, keys = SCHEMA[table]
    return [c for c in cols if c not in keys] or list(cols)


def rewrite_depth(spec):
    s = spec.severity("query_rewrite")
    return 0 if s <= 0 else 1 + min(2, int(s * 3.0))


def join_reversed(spec):
    return spec.severity("join_order") > 0.35


def join_operator(spec):
    if spec.severity("join_order") > 0.7:
        return OpKind.NESTED_LOOP_JOIN
    if spec.order_by and len(spec.tables) == 2 and spec.severity("join_order") == 0:
        return OpKind.MERGE_JOIN
    return OpKind.HASH_JOIN


def _predicate_sql(spec):
    out = []
    for t, col, sel in spec.predicates:
        out.append(f"{t}.{col} < {int(round(sel * 1000))}")
    return out


def render_sql(spec, db):
    if spec.kind == "update":
        t = spec.tables[0]
        col = _non_key_columns(t)[-1]
        text = f"UPDATE {t} SET {col} = {col} + 1"
        if spec.severity("full_table_update") <= 0 and spec.predicates:
            text += " WHERE " + " AND ".join(_predicate_sql(spec))
        return text
    if spec.kind == "insert":
        src = spec.tables[0]
        target = spec.extra.get("target", src)
        cols = ", ".join(f"{src}.{c}" for c in _non_key_columns(src)[:2])
        text = f"INSERT INTO {target} SELECT {cols} FROM {src}"
        if spec.predicates:
            text += " WHERE " + " AND ".join(_predicate_sql(spec))
        return text

    first = spec.tables[0]
    group_col = f"{first}.{_non_key_columns(first)[0]}"
    if spec.group_by:
        last = spec.tables[-1]
        select = f"{group_col}, COUNT(*), SUM({last}.{_non_key_columns(last)[-1]})"
    else:
        select = ", ".join(f"{t}.{_non_key_columns(t)[0]}" for t in spec.tables[:3])
    text = f"SELECT {select} FROM {first}"
    extra_conds = 1 + int(2.0 * spec.severity("complex_join")) if spec.severity("complex_join") > 0 else 0
    for a, b, key in spec.join_keys:
        text += f" JOIN {b} ON {a}.{key} = {b}.{key}"
        text += f" AND {b}.{key} = {a}.{key}" * extra_conds
    conds = _predicate_sql(spec)
    if spec.severity("repeated_subquery") > 0 and spec.predicates:
        t = spec.predicates[0][0]
        key = SCHEMA[t][1][0]
        conds.append(f"{t}.{key} IN (SELECT {t}.{key} FROM {t} WHERE {t}.{key} = {t}.{key})")
    if conds:
        text += " WHERE " + " AND ".join(conds)
    if spec.group_by:
        text += f" GROUP BY {group_col}"
    if spec.order_by:
        text += f" ORDER BY {group_col} DESC" if spec.group_by else f" ORDER BY {select.split(',')[0]}"
    for _ in range(rewrite_depth(spec)):
        text = f"SELECT * FROM ({text}) AS wrapped"
    return text


class _PlanBuilder:
    def __init__(self, cost_of, row_scale, rng):
        self.nodes, self.edges, self.cum = [], [], []
        self.cost_of = cost_of
        self.row_scale = row_scale
        self.rng = rng

    def add(self, op, rows, key=None, table=None, columns=(), children=()):
        own = self.cost_of.get(key, 0.0) if key is not None else 0.0
        cum = own + sum(self.cum[c] for c in children)
        idx = len(self.nodes)
        noise = math.exp(0.1 * self.rng.standard_normal())
        self.nodes.append(
            PlanNode(op, round(rows * self.row_scale, 3), round(cum * 1000.0 * noise, 6), table, tuple(columns))
        )
        self.cum.append(cum)
        self.edges.extend((c, idx) for c in children)
        return idx


def render_plan(spec, db, rng):
    costs = operator_costs(spec, db)
    cost_of = {op.key: c for op, c in costs}
    ops = {op.key: op for op, _ in costs}
    pb = _PlanBuilder(cost_of, math.exp(-3.0 * spec.severity("statistics")), rng)

    def leaf(t):
        op = ops[("scan", t)]
        pcols = [c for tt, c, _ in spec.predicates if tt == t]
        if t == spec.index_table and spec.severity("index") <= 0:
            return pb.add(OpKind.INDEX_SCAN, op.rows_out, ("scan", t), t, pcols)
        node = pb.add(OpKind.SCAN, op.rows_out if op.tag == "scan" else op.rows_in, ("scan", t), t, SCHEMA[t][1])
        if ("filter", t) in ops:
            node = pb.add(OpKind.FILTER, ops[("filter", t)].rows_out, ("filter", t), t, pcols, [node])
        return node

    if spec.kind in ("update", "insert"):
        src = spec.tables[0]
        child = leaf(src)
        rows = ops[("project",)].rows_in
        if spec.kind == "update":
            if spec.severity("full_table_update") > 0:
                rows = float(db.table(src).row_count)
            pb.add(OpKind.UPDATE, rows, ("update", src), src, (_non_key_columns(src)[-1],), [child])
        else:
            target = spec.extra.get("target", src)
            rows *= 1.0 + 5.0 * spec.severity("large_insert")
            proj = pb.add(OpKind.PROJECT, rows, None, None, (), [child])
            pb.add(OpKind.INSERT, rows, ("insert", target), target, (), [proj])
        return build_plan(pb.nodes, pb.edges)

    order = list(spec.tables)
    if join_reversed(spec):
        order.reverse()
    jop = join_operator(spec)

    def side(t):
        node = leaf(t)
        if ("exchange", t) in ops:
            node = pb.add(OpKind.EXCHANGE, ops[("exchange", t)].rows_out, ("exchange", t), t, (), [node])
        return node

    cur = side(order[0])
    inter = ops[("filter", order[0])].rows_out if ("filter", order[0]) in ops else ops[("scan", order[0])].rows_out
    for pos, t in enumerate(order[1:], start=1):
        right = side(t)
        out = ops[("join", pos)].rows_out
        cur = pb.add(jop, out, ("join", pos), None, (spec.join_keys[pos - 1][2],), [cur, right])
        inter = out
    if spec.severity("repeated_subquery") > 0 and spec.predicates:
        t = spec.predicates[0][0]
        n = float(db.table(t).row_count)
        inner = pb.add(OpKind.SCAN, n, None, t, SCHEMA[t][1])
        sub = pb.add(OpKind.SUBQUERY_SCAN, n, None, t, (), [inner])
        cur = pb.add(OpKind.FILTER, inter, None, t, (SCHEMA[t][1][0],), [cur, sub])
    if spec.group_by:
        agg = ops[("aggregate",)]
        cur = pb.add(OpKind.AGGREGATE, agg.rows_out, ("aggregate",), None, (_non_key_columns(spec.tables[0])[0],), [cur])
    if spec.order_by:
        cur = pb.add(OpKind.SORT, ops[("sort",)].rows_out, ("sort",), None, (), [cur])
    for _ in range(rewrite_depth(spec)):
        cur = pb.add(OpKind.SUBQUERY_SCAN, ops[("project",)].rows_in, None, None, (), [cur])
    pb.add(OpKind.PROJECT, ops[("project",)].rows_out, ("project",), None, (), [cur])
    return build_plan(pb.nodes, pb.edges)


def render_log(spec, db, plan_nodes):
    costs = operator_costs(spec, db)
    runtime = simulate_runtime(spec, db)
    s_join = spec.severity("join_order")
    s_dist = spec.severity("distribution_key")
    rows_read = bytes_scanned = shuffle = build = cpu = written = 0.0
    for op, c in costs:
        width = db.table(op.table).row_width if op.table else 64
        if op.tag in ("scan", "index_target"):
            read = op.rows_in if (op.tag == "scan" or spec.severity("index") > 0) else op.rows_out
            rows_read += read
            bytes_scanned += read * width
        elif op.tag == "exchange":
            skew = db.table(op.table).distribution_skew if op.table == spec.skew_table else 0.0
            shuffle += op.rows_in * width * (1.0 + 4.0 * s_dist * (0.5 + skew))
        elif op.tag == "join":
            build += op.rows_in * 0.5
        if op.tag in ("update", "insert"):
            written += op.rows_out * (1.0 + 3.0 * spec.severity("redundant_index"))
            if op.tag == "insert":
                written *= 1.0 + 5.0 * spec.severity("large_insert")
        if op.tag not in ("scan", "index_target"):
            cpu += c
    memory_kb = 1024.0 + build * 64.0 / 1024.0 * (1.0 + 3.0 * s_join)
    spill = memory_kb * 1024.0 * 0.5 * s_join
    rows_returned = costs[-1][0].rows_out
    log = {
        "duration_ms": runtime * 1000.0,
        "rows_read": rows_read,
        "rows_returned": rows_returned,
        "bytes_scanned": bytes_scanned,
        "memory_peak_kb": memory_kb,
        "cpu_ms": cpu * 1000.0,
        "io_reads": bytes_scanned / 8192.0,
        "io_writes": spill / 8192.0 + written,
        "shuffle_bytes": shuffle,
        "spill_bytes": spill,
        "queue_wait_ms": 2.0 + 150.0 * s_dist,
        "plan_node_count": float(plan_nodes),
        "retries": 1.0 if runtime > 8.0 else 0.0,
    }
    return {k: round(float(v), 3) for k, v in log.items()}


# channel -> (root cause, additive amount) ; net_bytes is multiplicative
_KPI_BUMPS = {
    "cpu_pct": (("query_rewrite", 15.0), ("repeated_subquery", 10.0)),
    "mem_pct": (("join_order", 20.0), ("complex_join", 10.0)),
    "io_count": (("index", 400.0), ("full_table_update", 300.0), ("large_insert", 300.0), ("redundant_index", 200.0)),
    "cache_hit_pct": (("statistics", -15.0),),
}


def render_kpis(spec, db, rng, t=DEFAULT_T):
    base = db.kpi_baseline
    mean = np.asarray(base["mean"], dtype=np.float64)
    std = np.asarray(base["std"], dtype=np.float64)
    q = len(KPI_CHANNELS)
    kpis = mean[:, None] + std[:, None] * rng.standard_normal((q, t))
    w = min(BUMP_WINDOW, t)
    ramp = np.zeros(t)
    ramp[t - w :] = np.linspace(1.0 / w, 1.0, w)
    for ci, name in enumerate(KPI_CHANNELS):
        for rc, amount in _KPI_BUMPS.get(name, ()):
            kpis[ci] += amount * spec.severity(rc) * ramp
    net = KPI_CHANNELS.index("net_bytes")
    kpis[net] *= 1.0 + 3.0 * spec.severity("distribution_key") * ramp
    for ci in (0, 1, 5):
        np.clip(kpis[ci], 0.0, 100.0, out=kpis[ci])
    np.maximum(kpis, 0.0, out=kpis)
    return np.round(kpis, 3)
