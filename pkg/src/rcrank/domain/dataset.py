"""JSON-lines dataset files and train/val/test partitioning.

First line is a header object with a ``catalog`` key (root-cause names in
order); every following line is one query record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import InsufficientData, InvalidInput, ParseError, SchemaError
from .plan import parse_plan, plan_to_doc
from .records import LOG_FIELDS, NormStats, QueryRecord, compute_norm, validate_record

DEFAULT_RATIOS = (0.8, 0.1, 0.1)


@dataclass
class Dataset:
    catalog: tuple
    records: list
    norm: NormStats | None = None
    header: dict = field(default_factory=dict)

    @property
    def r(self):
        return len(self.catalog)

    def __len__(self):
        return len(self.records)

    def labeled(self):
        return [rec for rec in self.records if rec.labeled]

    def by_split(self, split):
        return [rec for rec in self.records if rec.split == split]

    def subset(self, records):
        return Dataset(self.catalog, list(records), self.norm, self.header)

    def impacts(self):
        return np.stack([rec.impacts for rec in self.records]) if self.records else np.zeros((0, self.r))


def record_to_doc(rec):
    d = {
        "id": rec.id,
        "sql": rec.sql,
        "plan": plan_to_doc(rec.plan),
        "log": {k: rec.log[k] for k in LOG_FIELDS},
        "kpis": rec.kpis.tolist(),
        "runtime_s": rec.runtime_s,
        "split": rec.split,
    }
    if rec.impacts is not None:
        d["impacts"] = rec.impacts.tolist()
    if rec.spec is not None:
        d["spec"] = rec.spec
    return d


def record_from_doc(d, r=None):
    try:
        rec = QueryRecord(
            id=str(d["id"]),
            sql=d["sql"],
            plan=parse_plan(d["plan"]),
            log={k: float(v) for k, v in d["log"].items()},
            kpis=np.asarray(d["kpis"], dtype=np.float64),
            runtime_s=float(d["runtime_s"]),
            split=d.get("split", "pretrain"),
            impacts=None if d.get("impacts") is None else np.asarray(d["impacts"], dtype=np.float64),
            spec=d.get("spec"),
        )
    except KeyError as exc:
        raise SchemaError(f"record missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"malformed record: {exc}") from None
    validate_record(rec, r)
    return rec


def _dump(obj):
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def dumps_record(rec):
    return _dump(record_to_doc(rec))


def load_dataset(path, norm_transform="log1p"):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(1, "empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(1, f"invalid JSON: {exc.msg}") from None
    if not isinstance(header, dict) or "catalog" not in header:
        raise ParseError(1, "first line must be a header object with a 'catalog' key")
    catalog = tuple(header["catalog"])
    if len(set(catalog)) != len(catalog):
        raise SchemaError("root-cause names in catalog must be unique")
    records, q_t = [], None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None
        try:
            rec = record_from_doc(doc, len(catalog))
        except InvalidInput as exc:
            exc.args = (f"line {lineno}: {exc}",)
            exc.line = lineno
            raise
        if q_t is None:
            q_t = rec.kpis.shape
        elif rec.kpis.shape != q_t:
            raise SchemaError(f"line {lineno}: KPI shape {rec.kpis.shape} differs from {q_t}")
        records.append(rec)
    train = [rec for rec in records if rec.split == "train"]
    norm = compute_norm(train, norm_transform) if train else None
    return Dataset(catalog, records, norm, header)


def save_dataset(dataset, path):
    header = dict(dataset.header)
    header["catalog"] = list(dataset.catalog)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dump(header) + "\n")
        for rec in dataset.records:
            fh.write(dumps_record(rec) + "\n")


def partition_sizes(n, ratios=DEFAULT_RATIOS):
    if any(x <= 0 for x in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidInput(f"split ratios must be positive and sum to 1, got {ratios}")
    if n < 3:
        raise InsufficientData(f"need at least 3 labeled records to split, got {n}")
    n_val = max(1, int(round(n * ratios[1])))
    n_test = max(1, int(round(n * ratios[2])))
    return n - n_val - n_test, n_val, n_test


def assign_splits(n, ratios=DEFAULT_RATIOS, seed=0):
    """Split labels ('train'/'val'/'test') for ``n`` labeled items, shuffled by seed."""
    n_train, n_val, _ = partition_sizes(n, ratios)
    order = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=object)
    labels[order[:n_train]] = "train"
    labels[order[n_train : n_train + n_val]] = "val"
    labels[order[n_train + n_val :]] = "test"
    return list(labels)


def split_dataset(dataset, ratios=DEFAULT_RATIOS, seed=0):
    """Deterministic (train, val, test) partition of the labeled records.

    Normalization is recomputed from the new training part and shared by all
    three. Unlabeled records belong to none of them; see :func:`pretrain_pool`.
    """
    labeled = dataset.labeled()
    labels = assign_splits(len(labeled), ratios, seed)
    parts = {"train": [], "val": [], "test": []}
    for rec, lab in zip(labeled, labels):
        parts[lab].append(replace(rec, split=lab))
    norm = compute_norm(parts["train"], dataset.norm.transform if dataset.norm else "log1p")
    return tuple(Dataset(dataset.catalog, parts[k], norm, dataset.header) for k in ("train", "val", "test"))


def stored_splits(dataset):
    """(train, val, test) from the split flags already in the file."""
    parts = [dataset.by_split(k) for k in ("train", "val", "test")]
    if not parts[0]:
        raise InsufficientData("dataset has no records flagged split=train")
    norm = dataset.norm or compute_norm(parts[0])
    return tuple(Dataset(dataset.catalog, p, norm, dataset.header) for p in parts)


def pretrain_pool(dataset, held_out):
    """Every record except the held-out (validation/test) labeled ones."""
    skip = {rec.id for part in held_out for rec in part.records}
    return dataset.subset([rec for rec in dataset.records if rec.id not in skip])
