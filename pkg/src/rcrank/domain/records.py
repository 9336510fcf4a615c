"""Query records and per-modality normalization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInput, MissingLogField, SchemaError

LOG_FIELDS = (
    "duration_ms",
    "rows_read",
    "rows_returned",
    "bytes_scanned",
    "memory_peak_kb",
    "cpu_ms",
    "io_reads",
    "io_writes",
    "shuffle_bytes",
    "spill_bytes",
    "queue_wait_ms",
    "plan_node_count",
    "retries",
)
LOG_INDEX = {name: i for i, name in enumerate(LOG_FIELDS)}

KPI_CHANNELS = ("cpu_pct", "mem_pct", "io_count", "net_bytes", "active_connections", "cache_hit_pct")
PERCENT_CHANNELS = (0, 1, 5)
DEFAULT_Q = len(KPI_CHANNELS)
DEFAULT_T = 60

STD_FLOOR = 1e-6
SPLITS = ("train", "val", "test", "pretrain")


@dataclass
class NormStats:
    """Training-split statistics. ``transform`` is applied before standardizing."""

    log_mean: np.ndarray
    log_std: np.ndarray
    kpi_mean: np.ndarray
    kpi_std: np.ndarray
    transform: str = "log1p"

    def to_dict(self):
        return {
            "log_mean": self.log_mean.tolist(),
            "log_std": self.log_std.tolist(),
            "kpi_mean": self.kpi_mean.tolist(),
            "kpi_std": self.kpi_std.tolist(),
            "transform": self.transform,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["log_mean"], dtype=np.float64),
            np.asarray(d["log_std"], dtype=np.float64),
            np.asarray(d["kpi_mean"], dtype=np.float64),
            np.asarray(d["kpi_std"], dtype=np.float64),
            d.get("transform", "log1p"),
        )


def _transform(x, kind):
    if kind == "log1p":
        return np.log1p(x)
    if kind == "identity":
        return x
    raise InvalidInput(f"unknown transform {kind!r}")


def log_array(raw):
    """Ordered raw 13-vector from a name->number mapping, validated."""
    out = np.empty(len(LOG_FIELDS), dtype=np.float64)
    for i, name in enumerate(LOG_FIELDS):
        if name not in raw:
            raise MissingLogField(name)
        v = raw[name]
        try:
            v = float(v)
        except (TypeError, ValueError):
            raise InvalidInput(f"log field {name} is not a number: {v!r}") from None
        if not math.isfinite(v):
            raise InvalidInput(f"log field {name} is not finite")
        out[i] = v
    return out


def vectorize_log(raw, norm):
    x = _transform(log_array(raw), norm.transform)
    return (x - norm.log_mean) / np.maximum(norm.log_std, STD_FLOOR)


def normalize_kpis(kpis, norm):
    kpis = np.asarray(kpis, dtype=np.float64)
    if kpis.shape[0] != norm.kpi_mean.shape[0]:
        raise SchemaError(f"KPI matrix has {kpis.shape[0]} channels, expected {norm.kpi_mean.shape[0]}")
    x = _transform(kpis, norm.transform)
    return (x - norm.kpi_mean[:, None]) / np.maximum(norm.kpi_std[:, None], STD_FLOOR)


def compute_norm(records, transform="log1p"):
    if not records:
        raise InvalidInput("cannot compute normalization from zero records")
    logs = _transform(np.stack([log_array(r.log) for r in records]), transform)
    kpis = _transform(np.stack([r.kpis for r in records]), transform)
    return NormStats(
        logs.mean(axis=0),
        logs.std(axis=0),
        kpis.mean(axis=(0, 2)),
        kpis.std(axis=(0, 2)),
        transform,
    )


@dataclass
class QueryRecord:
    """One observed query. ``sql`` is raw text; tokenization needs a vocabulary."""

    id: str
    sql: str
    plan: object
    log: dict
    kpis: np.ndarray
    runtime_s: float
    split: str = "pretrain"
    impacts: np.ndarray | None = None
    spec: dict | None = field(default=None, repr=False)

    @property
    def labeled(self):
        return self.impacts is not None


def validate_record(rec, r=None):
    if not rec.sql or not rec.sql.strip():
        raise InvalidInput(f"record {rec.id}: empty sql")
    raw = log_array(rec.log)
    if len(rec.log) != len(LOG_FIELDS):
        extra = sorted(set(rec.log) - set(LOG_FIELDS))
        raise SchemaError(f"record {rec.id}: unexpected log fields {extra}")
    if np.any(raw < 0):
        raise InvalidInput(f"record {rec.id}: negative log value")
    k = rec.kpis
    if k.ndim != 2 or not np.all(np.isfinite(k)):
        raise InvalidInput(f"record {rec.id}: KPI matrix must be a finite 2-d array")
    if k.shape[0] == DEFAULT_Q:
        pct = k[list(PERCENT_CHANNELS)]
        if np.any(pct < 0) or np.any(pct > 100):
            raise InvalidInput(f"record {rec.id}: percentage KPI outside [0, 100]")
    if not (math.isfinite(rec.runtime_s) and rec.runtime_s > 0):
        raise InvalidInput(f"record {rec.id}: runtime_s must be positive")
    if rec.split not in SPLITS:
        raise SchemaError(f"record {rec.id}: unknown split {rec.split!r}")
    if rec.impacts is not None:
        y = rec.impacts
        if r is not None and y.shape != (r,):
            raise SchemaError(f"record {rec.id}: impacts length {y.shape[0]} but catalog has {r}")
        if not np.all(np.isfinite(y)) or np.any(y > 1.0):
            raise InvalidInput(f"record {rec.id}: impacts must be finite and <= 1")
