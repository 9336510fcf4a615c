"""Execution-plan DAG: parsing, validation, serialization, tree distances.

Edges point from a node to the operator that consumes its output, so the root
(the final operator) is the only node without an outgoing edge.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidPlan


class OpKind(str, enum.Enum):
    SCAN = "Scan"
    INDEX_SCAN = "IndexScan"
    FILTER = "Filter"
    HASH_JOIN = "HashJoin"
    NESTED_LOOP_JOIN = "NestedLoopJoin"
    MERGE_JOIN = "MergeJoin"
    SORT = "Sort"
    AGGREGATE = "Aggregate"
    PROJECT = "Project"
    EXCHANGE = "Exchange"
    INSERT = "Insert"
    UPDATE = "Update"
    SUBQUERY_SCAN = "SubqueryScan"


OP_KINDS = tuple(OpKind)
OP_INDEX = {op: i for i, op in enumerate(OP_KINDS)}
JOIN_OPS = frozenset({OpKind.HASH_JOIN, OpKind.NESTED_LOOP_JOIN, OpKind.MERGE_JOIN})
SCAN_OPS = frozenset({OpKind.SCAN, OpKind.INDEX_SCAN})


@dataclass(frozen=True)
class PlanNode:
    op: OpKind
    est_rows: float
    est_cost: float
    table: str | None = None
    columns: tuple = ()


@dataclass(frozen=True)
class PlanDag:
    nodes: tuple
    edges: tuple
    root: int
    topo: tuple = field(default=(), compare=False)

    def __len__(self):
        return len(self.nodes)

    def children(self, i):
        return [a for a, b in self.edges if b == i]

    def parents(self, i):
        return [b for a, b in self.edges if a == i]

    def distances(self):
        """All-pairs undirected hop distance; unreachable pairs get a large value."""
        n = len(self.nodes)
        adj = [[] for _ in range(n)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        dist = np.full((n, n), 10**6, dtype=np.int64)
        for s in range(n):
            dist[s, s] = 0
            queue = deque([s])
            while queue:
                u = queue.popleft()
                for v in adj[u]:
                    if dist[s, v] > dist[s, u] + 1:
                        dist[s, v] = dist[s, u] + 1
                        queue.append(v)
        return dist


def _node_from_doc(doc):
    try:
        op = OpKind(doc["op"])
    except (KeyError, ValueError):
        raise InvalidPlan(f"unknown operator kind {doc.get('op')!r}") from None
    try:
        rows = float(doc["est_rows"])
        cost = float(doc["est_cost"])
    except (KeyError, TypeError, ValueError):
        raise InvalidPlan(f"node {doc.get('op')} needs numeric est_rows and est_cost") from None
    if not (math.isfinite(rows) and math.isfinite(cost)) or rows < 0 or cost < 0:
        raise InvalidPlan(f"node {op.value}: est_rows/est_cost must be finite and >= 0")
    table = doc.get("table")
    columns = tuple(doc.get("columns", ()))
    return PlanNode(op, rows, cost, table, columns)


def parse_plan(doc):
    """Build a validated :class:`PlanDag` from a nested node document.

    Each node is ``{op, est_rows, est_cost, children: [...]}`` with optional
    ``table``/``columns`` annotations. A child may be an inline node or the
    ``id`` of a node declared elsewhere, which is how shared sub-plans (and
    cycles, which are rejected) are expressed. A ``{"nodes": [...]}`` list whose
    children are all ids is accepted too.
    """
    nodes, edges, by_id, pending = [], [], {}, []

    def visit(d):
        if not isinstance(d, dict):
            raise InvalidPlan(f"plan node must be an object, got {type(d).__name__}")
        idx = len(nodes)
        nodes.append(_node_from_doc(d))
        if "id" in d:
            if d["id"] in by_id:
                raise InvalidPlan(f"duplicate node id {d['id']!r}")
            by_id[d["id"]] = idx
        for child in d.get("children", ()):
            if isinstance(child, dict):
                edges.append((visit(child), idx))
            else:
                pending.append((child, idx))
        return idx

    if isinstance(doc, dict) and "nodes" in doc and "op" not in doc:
        for d in doc["nodes"]:
            visit(d)
    else:
        visit(doc)
    for ref, parent in pending:
        if ref not in by_id:
            raise InvalidPlan(f"child reference {ref!r} names no node")
        edges.append((by_id[ref], parent))
    return build_plan(nodes, edges)


def build_plan(nodes, edges):
    n = len(nodes)
    if n == 0:
        raise InvalidPlan("plan has no nodes")
    edges = tuple((int(a), int(b)) for a, b in edges)
    for a, b in edges:
        if not (0 <= a < n and 0 <= b < n):
            raise InvalidPlan(f"edge ({a}, {b}) references a missing node")
    out_deg = [0] * n
    in_deg = [0] * n
    for a, b in edges:
        out_deg[a] += 1
        in_deg[b] += 1
    roots = [i for i in range(n) if out_deg[i] == 0]
    # Kahn's algorithm from the leaves; leftovers mean a cycle
    queue = deque(i for i in range(n) if in_deg[i] == 0)
    deg = list(in_deg)
    topo = []
    while queue:
        u = queue.popleft()
        topo.append(u)
        for a, b in edges:
            if a == u:
                deg[b] -= 1
                if deg[b] == 0:
                    queue.append(b)
    if len(topo) != n:
        raise InvalidPlan("plan graph contains a cycle")
    if len(roots) != 1:
        raise InvalidPlan(f"plan must have exactly one root, found {len(roots)}")
    return PlanDag(tuple(nodes), edges, roots[0], tuple(topo))


def _node_doc(node):
    d = {"op": node.op.value, "est_rows": node.est_rows, "est_cost": node.est_cost}
    if node.table is not None:
        d["table"] = node.table
    if node.columns:
        d["columns"] = list(node.columns)
    return d


def plan_to_doc(plan):
    """Inverse of :func:`parse_plan` (nested form; shared nodes emitted once with an id)."""
    shared = {i for i in range(len(plan.nodes)) if len(plan.parents(i)) > 1}
    emitted = set()

    def emit(i):
        if i in shared and i in emitted:
            return f"n{i}"
        emitted.add(i)
        d = _node_doc(plan.nodes[i])
        if i in shared:
            d = {"id": f"n{i}", **d}
        d["children"] = [emit(c) for c in plan.children(i)]
        return d

    return emit(plan.root)
