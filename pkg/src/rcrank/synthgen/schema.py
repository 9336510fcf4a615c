"""Root-cause catalogs, the simulated database, and query specifications."""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfig, InvalidSpec

CATALOG_5 = ("statistics", "join_order", "index", "distribution_key", "query_rewrite")
CATALOG_10 = CATALOG_5 + ("redundant_index", "repeated_subquery", "complex_join", "full_table_update", "large_insert")


def catalog_for(size):
    if int(size) == 5:
        return CATALOG_5
    if int(size) == 10:
        return CATALOG_10
    raise InvalidConfig(f"catalog size must be 5 or 10, got {size}")


# name -> (columns, join keys). Join keys shared between tables define the join graph.
SCHEMA = {
    "orders": (("order_id", "customer_id", "order_date", "total_price", "order_status"), ("order_id", "customer_id")),
    "customers": (("customer_id", "region_id", "market_segment", "signup_date", "credit_limit"), ("customer_id", "region_id")),
    "line_items": (("order_id", "part_id", "supplier_id", "quantity", "ship_date", "discount"), ("order_id", "part_id", "supplier_id")),
    "parts": (("part_id", "brand", "category", "retail_price", "part_size"), ("part_id",)),
    "suppliers": (("supplier_id", "nation_id", "account_balance", "supplier_rating"), ("supplier_id", "nation_id")),
    "nations": (("nation_id", "region_id", "nation_name"), ("nation_id", "region_id")),
    "regions": (("region_id", "region_name"), ("region_id",)),
    "page_views": (("user_id", "page_id", "view_time", "dwell_ms"), ("user_id", "page_id")),
    "users": (("user_id", "country_code", "age_group", "created_at"), ("user_id",)),
    "web_pages": (("page_id", "page_type", "load_ms"), ("page_id",)),
    "sessions": (("session_id", "user_id", "device_type", "start_time"), ("session_id", "user_id")),
    "click_events": (("event_id", "session_id", "event_type", "event_ts"), ("session_id",)),
    "inventory": (("part_id", "warehouse_id", "qty_on_hand"), ("part_id", "warehouse_id")),
    "warehouses": (("warehouse_id", "city_name", "capacity"), ("warehouse_id",)),
    "payments": (("payment_id", "order_id", "amount", "pay_method"), ("order_id",)),
    "shipments": (("shipment_id", "order_id", "carrier", "shipped_at"), ("order_id",)),
}


@functools.lru_cache(maxsize=1)
def join_graph():
    names = sorted(SCHEMA)
    adj = {n: [] for n in names}
    for a in names:
        for b in names:
            if a < b:
                shared = sorted(set(SCHEMA[a][1]) & set(SCHEMA[b][1]))
                if shared:
                    adj[a].append((b, shared[0]))
                    adj[b].append((a, shared[0]))
    return adj


@dataclass
class Table:
    name: str
    row_count: int
    indexed_columns: tuple
    stats_staleness: float
    distribution_skew: float
    row_width: int

    @property
    def columns(self):
        return SCHEMA[self.name][0]


@dataclass
class DbState:
    tables: dict
    kpi_baseline: dict
    seed: int

    def table(self, name):
        try:
            return self.tables[name]
        except KeyError:
            raise InvalidSpec(f"unknown table {name!r}") from None

    def to_dict(self):
        return {
            "seed": self.seed,
            "kpi_baseline": self.kpi_baseline,
            "tables": [
                {
                    "name": t.name,
                    "row_count": t.row_count,
                    "indexed_columns": list(t.indexed_columns),
                    "stats_staleness": t.stats_staleness,
                    "distribution_skew": t.distribution_skew,
                    "row_width": t.row_width,
                }
                for t in self.tables.values()
            ],
        }

    @classmethod
    def from_dict(cls, d):
        tables = {}
        for t in d["tables"]:
            tables[t["name"]] = Table(
                t["name"], int(t["row_count"]), tuple(t["indexed_columns"]),
                float(t["stats_staleness"]), float(t["distribution_skew"]), int(t["row_width"]),
            )
        return cls(tables, d["kpi_baseline"], int(d["seed"]))


def make_db(seed):
    rng = np.random.default_rng([seed, 0xDB])
    tables = {}
    for name in sorted(SCHEMA):
        cols, keys = SCHEMA[name]
        rows = int(10 ** rng.uniform(4.0, 7.6))
        tables[name] = Table(
            name=name,
            row_count=max(rows, 1),
            indexed_columns=tuple(keys),
            stats_staleness=round(float(rng.uniform(0, 1)), 4),
            distribution_skew=round(float(rng.uniform(0, 1)), 4),
            row_width=int(rng.integers(40, 320)),
        )
    baseline = {
        "mean": [35.0, 55.0, 120.0, 2.0e5, 24.0, 94.0],
        "std": [4.0, 3.0, 25.0, 3.0e4, 4.0, 1.5],
    }
    return DbState(tables, baseline, int(seed))


@dataclass
class QuerySpec:
    """Everything needed to render and cost one query.

    ``defects`` maps every catalog name to a severity in [0, 1]; a revision for
    a root cause zeroes its entry.
    """

    template: str
    kind: str
    tables: tuple
    join_keys: tuple  # (left table, right table, key column) per join
    predicates: tuple  # (table, column, selectivity)
    group_by: bool
    order_by: bool
    defects: dict
    index_table: str | None = None
    skew_table: str | None = None
    noise_seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def join_count(self):
        return max(len(self.tables) - 1, 0)

    @property
    def join_order_quality(self):
        return 1.0 - self.defects.get("join_order", 0.0)

    @property
    def rewrite_waste(self):
        return self.defects.get("query_rewrite", 0.0)

    def severity(self, rc):
        return self.defects.get(rc, 0.0)

    def validate(self, db):
        for t in self.tables:
            db.table(t)
        for name, s in self.defects.items():
            if not 0.0 <= s <= 1.0:
                raise InvalidSpec(f"severity of {name} outside [0, 1]: {s}")

    def to_dict(self):
        return {
            "template": self.template,
            "kind": self.kind,
            "tables": list(self.tables),
            "join_keys": [list(j) for j in self.join_keys],
            "join_count": self.join_count,
            "predicates": [list(p) for p in self.predicates],
            "group_by": self.group_by,
            "order_by": self.order_by,
            "defects": dict(self.defects),
            "join_order_quality": self.join_order_quality,
            "rewrite_waste": self.rewrite_waste,
            "index_table": self.index_table,
            "skew_table": self.skew_table,
            "noise_seed": self.noise_seed,
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            template=d["template"],
            kind=d["kind"],
            tables=tuple(d["tables"]),
            join_keys=tuple(tuple(j) for j in d["join_keys"]),
            predicates=tuple((p[0], p[1], float(p[2])) for p in d["predicates"]),
            group_by=bool(d["group_by"]),
            order_by=bool(d["order_by"]),
            defects={k: float(v) for k, v in d["defects"].items()},
            index_table=d.get("index_table"),
            skew_table=d.get("skew_table"),
            noise_seed=int(d.get("noise_seed", 0)),
            extra=dict(d.get("extra", {})),
        )
