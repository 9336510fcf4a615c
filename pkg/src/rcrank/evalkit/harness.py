"""Variant comparisons, lambda sweep and simulated end-to-end improvement."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import trainer
from ..domain.dataset import pretrain_pool, stored_splits
from ..encoders import EncoderConfig, build_vocabulary, prepare_record
from ..errors import InvalidConfig, Unsupported
from ..model import variant_spec
from ..pretrain import PretrainConfig, pretrained_bundle, run_pretraining
from ..synthgen.schema import DbState, QuerySpec
from ..synthgen.simulator import revise, simulate_runtime
from .metrics import MetricsReport, compute_report

DEFAULT_LAMBDAS = (1.0, 3.0, 5.0, 7.0, 10.0)


class OracleModel:
    """Stub whose estimates are the records' own impact labels."""

    def __init__(self, catalog):
        self.catalog = tuple(catalog)

    def predict_records(self, records):
        return np.stack([np.asarray(r.impacts, dtype=np.float64) for r in records])


class TrainedPredictor:
    def __init__(self, model, vocab, norm):
        self.model, self.vocab, self.norm = model, vocab, norm
        self.catalog = model.catalog

    def predict_records(self, records):
        prep = [prepare_record(r, self.vocab, self.norm, self.model.cfg) for r in records]
        return trainer.predict(self.model, prep)


def evaluate(predictor, records, eps=0.10, per_cell_mse=False, timing=None):
    """MetricsReport of ``predictor`` on labeled ``records``; adds inference time per query."""
    t0 = time.perf_counter()
    est = predictor.predict_records(records)
    per_query = (time.perf_counter() - t0) / max(1, len(records))
    truth = np.stack([r.impacts for r in records])
    return compute_report(truth, est, eps, per_cell_mse, {**(timing or {}), "inference_s_per_query": per_query})


# end-to-end improvement


@dataclass
class Improvement:
    original_s: float
    revised_s: float
    improvement_pct: float
    n_queries: int

    def to_dict(self):
        return {
            "original_s": self.original_s,
            "revised_s": self.revised_s,
            "improvement_pct": self.improvement_pct,
            "n_queries": self.n_queries,
        }


def end_to_end_improvement(predictor, records, db, catalog=None):
    """Revise each query by its estimated top-1 root cause and re-simulate noiselessly."""
    if db is None or any(r.spec is None for r in records):
        raise Unsupported("end-to-end improvement needs generator specs and database state")
    db = db if isinstance(db, DbState) else DbState.from_dict(db)
    catalog = tuple(catalog or predictor.catalog)
    top1 = np.argmax(predictor.predict_records(records), axis=1)
    before = after = 0.0
    for rec, j in zip(records, top1):
        spec = QuerySpec.from_dict(rec.spec)
        before += simulate_runtime(spec, db)
        after += simulate_runtime(revise(spec, catalog[int(j)]), db)
    pct = 100.0 * (before - after) / before if before > 0 else 0.0
    return Improvement(before, after, pct, len(records))


# variant runs


@dataclass
class VariantRun:
    variant: str
    seed: int
    test: MetricsReport
    val: MetricsReport | None
    best_epoch: int
    history: list = field(default_factory=list)


@dataclass
class ComparisonTable:
    variants: list
    seeds: list
    runs: dict = field(default_factory=dict)  # variant -> [VariantRun per seed]
    extra: dict = field(default_factory=dict)

    def reports(self, variant, part="test"):
        return [getattr(run, part) for run in self.runs[variant]]

    def summary(self, part="test"):
        """One row per variant with mean and population std of every metric over seeds."""
        rows = []
        for v in self.variants:
            reps = self.reports(v, part)
            row = {"variant": v, "n_seeds": len(reps)}
            for m in MetricsReport.METRICS:
                vals = np.array([getattr(r, m) for r in reps], dtype=np.float64)
                row[f"{m}_mean"] = float(vals.mean())
                row[f"{m}_std"] = float(vals.std())
            rows.append(row)
        return rows


class PretrainCache:
    """Pretrained encoder bundles keyed by seed, computed on first use."""

    def __init__(self, dataset, cfg=None, vocab=None, enc_cfg=None):
        self.dataset = dataset
        self.cfg = cfg or PretrainConfig()
        self.vocab = vocab or build_vocabulary(dataset.records)
        self.enc_cfg = enc_cfg
        self.bundles = {}

    def get(self, seed):
        if seed not in self.bundles:
            train_part, val_part, test_part = stored_splits(self.dataset)
            pool = pretrain_pool(self.dataset, (val_part, test_part))
            q, t = np.asarray(pool.records[0].kpis).shape
            enc_cfg = self.enc_cfg or EncoderConfig(vocab_size=len(self.vocab), q=q, t=t)
            cfg = replace(self.cfg, seed=seed)
            model, history = run_pretraining(pool.records, self.vocab, train_part.norm, enc_cfg, cfg)
            self.bundles[seed] = pretrained_bundle(model, self.vocab, train_part.norm, cfg, history)
        return self.bundles[seed]


def run_variant(dataset, variant, seed, train_cfg=None, pretrain=None, vocab=None, progress=None):
    """Train one variant with one seed on the stored splits and evaluate it on the test split."""
    spec = variant_spec(variant)
    train_part, val_part, test_part = stored_splits(dataset)
    cfg = replace(train_cfg or trainer.TrainConfig(), seed=seed, variant=variant)
    bundle = None
    if pretrain is not None and spec.get("pretrained", True):
        bundle = pretrain.get(seed)
    if vocab is None and pretrain is not None:
        vocab = pretrain.vocab
    res = trainer.train(train_part, val_part, cfg, pretrained=bundle, vocab=vocab, progress=progress)
    per_epoch = float(np.mean([h["seconds"] for h in res.history]))
    test = evaluate(TrainedPredictor(res.model, res.vocab, res.norm), test_part.records, cfg.epsilon,
                    timing={"train_s_per_epoch": per_epoch})
    return VariantRun(variant, seed, test, res.val_report, res.best_epoch, res.history), res


def run_variants(dataset, variants, seeds, train_cfg=None, pretrain=None, progress=None):
    """Train and evaluate every variant under every seed.

    ``pretrain`` is a :class:`PretrainCache` (built with defaults when None) so
    that all pretrained variants of one seed share the same encoder weights.
    """
    variants = list(variants)
    for v in variants:
        variant_spec(v)
    if not variants or not seeds:
        raise InvalidConfig("need at least one variant and one seed")
    pretrain = pretrain or PretrainCache(dataset)
    table = ComparisonTable(variants, list(seeds))
    for v in variants:
        table.runs[v] = []
        for s in seeds:
            run, _ = run_variant(dataset, v, s, train_cfg, pretrain, progress=progress)
            table.runs[v].append(run)
    return table


def lambda_sweep(dataset, values=DEFAULT_LAMBDAS, seed=0, train_cfg=None, pretrain=None, progress=None):
    """[(lambda, test MetricsReport)] with one training per value."""
    pretrain = pretrain or PretrainCache(dataset)
    out = []
    for lam in values:
        if lam < 0:
            raise InvalidConfig(f"lambda must be >= 0, got {lam}")
        cfg = replace(train_cfg or trainer.TrainConfig(), lam=float(lam))
        run, _ = run_variant(dataset, cfg.variant, seed, cfg, pretrain, progress=progress)
        out.append((float(lam), run.test))
    return out
