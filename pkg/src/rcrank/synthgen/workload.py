"""Workload generation: sample query specs, render them, label the slow ones."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..domain.dataset import DEFAULT_RATIOS, Dataset, assign_splits
from ..domain.records import DEFAULT_T, QueryRecord, compute_norm
from ..errors import InvalidConfig
from .render import render_kpis, render_log, render_plan, render_sql
from .schema import SCHEMA, QuerySpec, catalog_for, join_graph, make_db
from .simulator import DEFAULT_NOISE_SIGMA, impact_vector, simulate_runtime

SLOW_DEFECT_COUNTS = (0.06, 0.44, 0.35, 0.15)
FAST_DEFECT_COUNTS = (0.40, 0.40, 0.15, 0.05)
MIN_TOP_GAP = 0.02


@dataclass
class GenConfig:
    total: int = 12000
    labeled: int = 2000
    catalog_size: int = 5
    delta: float = 1.0
    epsilon: float = 0.10
    eta: float = 0.02
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    t: int = DEFAULT_T
    ratios: tuple = DEFAULT_RATIOS
    max_attempts: int = 2000
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.total < 1 or self.labeled < 0:
            raise InvalidConfig("total must be >= 1 and labeled >= 0")
        if self.labeled > self.total:
            raise InvalidConfig(f"labeled count {self.labeled} exceeds total {self.total}")
        catalog_for(self.catalog_size)
        if not (self.delta > 0 and 0 < self.epsilon < 1 and self.eta >= 0 and self.noise_sigma >= 0):
            raise InvalidConfig("need delta > 0, 0 < epsilon < 1, eta >= 0, noise_sigma >= 0")
        if self.t < 8:
            raise InvalidConfig("t must be at least 8 samples")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["ratios"] = list(self.ratios)
        d.pop("workers")
        d.pop("extra")
        return d


_INT_KEYS = {"total", "labeled", "catalog_size", "t", "max_attempts", "workers", "seed"}
_FLOAT_KEYS = {"delta", "epsilon", "eta", "noise_sigma"}


def parse_kv(text):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"config line {n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise InvalidConfig(f"config line {n}: empty key")
        out[k] = v
    return out


def gen_config_from_kv(kv):
    """Build a :class:`GenConfig` (and seed, if given) from string pairs."""
    kwargs, seed = {}, None
    for k, v in kv.items():
        try:
            if k == "seed":
                seed = int(v)
            elif k == "catalog":
                kwargs["catalog_size"] = int(v)
            elif k in _INT_KEYS:
                kwargs[k] = int(v)
            elif k in _FLOAT_KEYS:
                kwargs[k] = float(v)
            elif k == "ratios":
                kwargs[k] = tuple(float(x) for x in v.replace(":", ",").split(","))
            else:
                raise InvalidConfig(f"unknown generator key {k!r}")
        except ValueError:
            raise InvalidConfig(f"bad value for {k!r}: {v!r}") from None
    return GenConfig(**kwargs).validate(), seed


def _pick_tables(rng, db, k, slow):
    names = sorted(SCHEMA)
    logs = np.array([math.log10(db.table(n).row_count) for n in names])
    w = np.exp(2.0 * (logs - logs.max())) if slow else np.exp(-1.0 * (logs - logs.min()))
    start = names[rng.choice(len(names), p=w / w.sum())]
    graph = join_graph()
    tables, joins = [start], []
    while len(tables) < k:
        frontier = [(a, b, key) for a in tables for b, key in graph[a] if b not in tables]
        if not frontier:
            break
        a, b, key = frontier[rng.integers(len(frontier))]
        tables.append(b)
        joins.append((a, b, key))
    return tuple(tables), tuple(joins)


def _applicable(rc, kind, n_tables, has_pred):
    if rc in ("join_order", "distribution_key", "complex_join"):
        return kind == "select" and n_tables >= 2
    if rc in ("index", "repeated_subquery"):
        return kind == "select" and has_pred
    if rc == "redundant_index":
        return kind in ("update", "insert")
    if rc == "full_table_update":
        return kind == "update"
    if rc == "large_insert":
        return kind == "insert"
    return True  # statistics, query_rewrite


def sample_spec(rng, db, catalog, slow):
    if len(catalog) > 5:
        kind = ("select", "update", "insert")[rng.choice(3, p=(0.7, 0.15, 0.15))]
    else:
        kind = "select"
    if kind == "select":
        p = (0.15, 0.35, 0.3, 0.2) if slow else (0.4, 0.35, 0.2, 0.05)
        k = 1 + int(rng.choice(4, p=p))
    else:
        k = 1
    tables, joins = _pick_tables(rng, db, k, slow)
    n_pred = int(rng.choice(3, p=(0.2, 0.5, 0.3)))
    if kind == "update":
        n_pred = max(n_pred, 1)
    preds = []
    for _ in range(n_pred):
        t = tables[rng.integers(len(tables))]
        cols, keys = SCHEMA[t]
        free = [c for c in cols if c not in keys and all(c != pc for pt, pc, _ in preds if pt == t)]
        if not free:
            continue
        preds.append([t, free[rng.integers(len(free))], round(float(rng.uniform(0.01, 0.5)), 4)])
    group_by = kind == "select" and bool(rng.random() < 0.5)
    order_by = kind == "select" and bool(rng.random() < 0.4)

    counts = SLOW_DEFECT_COUNTS if slow else FAST_DEFECT_COUNTS
    eligible = [rc for rc in catalog if _applicable(rc, kind, len(tables), bool(preds))]
    n_def = min(int(rng.choice(len(counts), p=counts)), len(eligible))
    chosen = set(rng.choice(eligible, size=n_def, replace=False).tolist()) if n_def else set()
    defects = {rc: (round(float(rng.uniform(0.1, 1.0)), 4) if rc in chosen else 0.0) for rc in catalog}

    index_table = preds[0][0] if kind == "select" and preds else None
    if defects.get("index", 0.0) > 0:
        # a missing index hurts most on the biggest table, so plant it there
        big = max(tables, key=lambda t: db.table(t).row_count)
        if big != index_table:
            cols, keys = SCHEMA[big]
            free = [c for c in cols if c not in keys and all(c != pc for pt, pc, _ in preds if pt == big)]
            if free:
                preds[0] = [big, free[rng.integers(len(free))], preds[0][2]]
                index_table = big
        preds[0][2] = round(0.3 * (1.0 - defects["index"]) + 0.002, 4)
    skew_table = max(tables[1:], key=lambda t: db.table(t).row_count) if len(tables) > 1 else None
    extra = {}
    if kind == "insert":
        others = [t for t in sorted(SCHEMA) if t != tables[0]]
        extra["target"] = others[rng.integers(len(others))]
    return QuerySpec(
        template=f"{kind}_{len(tables)}t",
        kind=kind,
        tables=tables,
        join_keys=joins,
        predicates=tuple(tuple(p) for p in preds),
        group_by=group_by,
        order_by=order_by,
        defects=defects,
        index_table=index_table,
        skew_table=skew_table,
        noise_seed=int(rng.integers(2**31 - 1)),
        extra=extra,
    )


def _well_separated(y, cfg):
    if np.any(np.abs(y - cfg.epsilon) < cfg.eta):
        return False
    top = np.sort(y)[::-1]
    if top[0] >= cfg.epsilon and len(top) > 1 and top[0] - top[1] < MIN_TOP_GAP:
        return False
    return True


def draw_query(rng, db, catalog, slow, cfg):
    """Rejection-sample a spec of the requested class; returns (spec, runtime, impacts)."""
    for _ in range(cfg.max_attempts):
        spec = sample_spec(rng, db, catalog, slow)
        clean = simulate_runtime(spec, db)
        observed = simulate_runtime(spec, db, noiseless=False, sigma=cfg.noise_sigma)
        if not slow:
            if clean <= cfg.delta:
                return spec, observed, None
            continue
        if clean <= cfg.delta or observed <= cfg.delta:
            continue
        y = impact_vector(spec, db, catalog)
        if _well_separated(y, cfg):
            return spec, observed, y
    kind = "slow" if slow else "fast"
    raise InvalidConfig(f"could not sample a {kind} query in {cfg.max_attempts} attempts; relax delta/eta")


def make_record(i, slow, split, cfg, db, catalog, seed):
    rng = np.random.default_rng([seed, i])
    spec, runtime, y = draw_query(rng, db, catalog, slow, cfg)
    plan = render_plan(spec, db, rng)
    return QueryRecord(
        id=f"q{i:06d}",
        sql=render_sql(spec, db),
        plan=plan,
        log=render_log(spec, db, len(plan.nodes)),
        kpis=render_kpis(spec, db, rng, cfg.t),
        runtime_s=round(runtime, 9),
        split=split,
        impacts=None if y is None else np.round(y, 12),
        spec=spec.to_dict(),
    )


def _make_chunk(args):
    items, cfg, db, catalog, seed = args
    return [make_record(i, slow, split, cfg, db, catalog, seed) for i, slow, split in items]


def generate_workload(cfg, seed=0):
    """Deterministic dataset: ``cfg.labeled`` slow labeled queries among ``cfg.total``.

    Each record draws from its own stream seeded by (seed, index), so the
    output does not depend on ``cfg.workers``.
    """
    cfg.validate()
    catalog = catalog_for(cfg.catalog_size)
    db = make_db(seed)
    slow_slots = np.sort(np.random.default_rng([seed, 1]).permutation(cfg.total)[: cfg.labeled])
    splits = dict(zip(slow_slots.tolist(), assign_splits(cfg.labeled, cfg.ratios, seed))) if cfg.labeled >= 3 else {
        int(i): "train" for i in slow_slots
    }
    items = [(i, i in splits, splits.get(i, "pretrain")) for i in range(cfg.total)]
    if cfg.workers > 1:
        size = max(1, len(items) // (cfg.workers * 4))
        chunks = [(items[k : k + size], cfg, db, catalog, seed) for k in range(0, len(items), size)]
        with ProcessPoolExecutor(cfg.workers) as pool:
            records = [rec for part in pool.map(_make_chunk, chunks) for rec in part]
    else:
        records = _make_chunk((items, cfg, db, catalog, seed))
    header = {
        "catalog": list(catalog),
        "generator": cfg.to_dict(),
        "seed": int(seed),
        "db": db.to_dict(),
        "q": 6,
        "t": cfg.t,
    }
    train = [r for r in records if r.split == "train"]
    norm = compute_norm(train) if train else None
    return Dataset(tuple(catalog), records, norm, header)
