"""Training objective, training loop and ranked diagnosis."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .diffcore import Adam
from .diffcore import tensor as T
from .domain.dataset import Dataset
from .domain.records import NormStats
from .domain.tokenize import Vocabulary
from .encoders import EncoderConfig, build_vocabulary, bucketed_batches, collate, prepare_record
from .errors import InsufficientData, InvalidConfig, ShapeError
from .evalkit.metrics import compute_report
from .model import RCRankModel, variant_spec
from .pretrain import check_step, load_pretrained, transfer_weights

ORDER_MODES = ("truth", "independent")


@dataclass
class TrainConfig:
    batch: int = 64
    epochs: int = 50
    lr: float = 3e-4
    lam: float = 7.0
    epsilon: float = 0.10
    eta: float = 0.02
    seed: int = 0
    dropout: float = 0.1
    variant: str = "full"
    order_mode: str = "truth"
    bucket_chunk: int = 8

    def validate(self):
        if self.lam < 0:
            raise InvalidConfig(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidConfig(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.eta < 0:
            raise InvalidConfig(f"eta must be >= 0, got {self.eta}")
        if self.batch < 1 or self.epochs < 1:
            raise InvalidConfig("batch and epochs must be positive")
        if self.order_mode not in ORDER_MODES:
            raise InvalidConfig(f"order_mode must be one of {ORDER_MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig(f"dropout must lie in [0, 1), got {self.dropout}")
        variant_spec(self.variant)
        return self

    def effective_lambda(self):
        return 0.0 if variant_spec(self.variant).get("loss") == "mse" else self.lam

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidConfig(f"unknown training keys: {unknown}")
        return cls(**d)


# losses


def _operands(truth, est):
    y = np.asarray(truth, dtype=np.float64)
    yh = est if isinstance(est, T.Tensor) else T.as_tensor(np.asarray(est, dtype=T.get_default_dtype()))
    if y.ndim == 1:
        y = y[None, :]
    if yh.ndim == 1:
        yh = yh.reshape(1, -1)
    if y.shape != yh.shape:
        raise ShapeError(f"truth shape {y.shape} != estimate shape {yh.shape}")
    return y.astype(yh.dtype, copy=False), yh


def loss_pred(truth, est):
    """Squared error summed over root causes, averaged over queries."""
    y, yh = _operands(truth, est)
    diff = yh - y
    return T.mean(T.tsum(diff * diff, axis=1))


def loss_valid(truth, est, eps=0.10, eta=0.02):
    """Margin hinge pushing estimates to the same side of ``eps`` as the truth."""
    y, yh = _operands(truth, est)
    sign = np.where(y < eps, 1.0, -1.0).astype(yh.dtype)
    return T.mean(T.tsum(T.relu(yh * sign + (eta - sign * eps)), axis=1))


def loss_order(truth, est, mode="truth"):
    """Hinge on adjacent gaps of the truth ranking.

    With ``mode="truth"`` estimates are arranged by the truth's descending
    order, so inverted pairs show up as negative estimated gaps. ``"independent"``
    sorts the estimates on their own.
    """
    y, yh = _operands(truth, est)
    if y.shape[1] < 2:
        return T.mean(T.tsum(yh * 0.0, axis=1))
    rows = np.arange(y.shape[0])[:, None]
    truth_order = np.argsort(-y, axis=1, kind="stable")
    z = np.take_along_axis(y, truth_order, axis=1)
    est_order = truth_order if mode == "truth" else np.argsort(-yh.data, axis=1, kind="stable")
    zh = yh[rows, est_order]
    gap_true = z[:, :-1] - z[:, 1:]
    gap_est = zh[:, :-1] - zh[:, 1:]
    return T.mean(T.tsum(T.relu(gap_true - gap_est), axis=1))


def loss_terms(truth, est, cfg):
    """Dict with pred, valid, order and total (pred + lambda * (valid + order))."""
    lam = cfg.effective_lambda() if hasattr(cfg, "effective_lambda") else cfg.lam
    pred = loss_pred(truth, est)
    valid = loss_valid(truth, est, cfg.epsilon, cfg.eta)
    order = loss_order(truth, est, getattr(cfg, "order_mode", "truth"))
    total = pred + (valid + order) * lam if lam else pred
    return {"pred": pred, "valid": valid, "order": order, "total": total}


def total_loss(truth, est, cfg):
    return loss_terms(truth, est, cfg)["total"]


# inference


def predict(model, prepared, batch=256):
    """(n, r) float64 estimates for prepared records, in eval mode without grad."""
    was_training = getattr(model, "training", False)
    model.eval()
    out = []
    try:
        with T.default_dtype(model.dtype), T.no_grad():
            for start in range(0, len(prepared), batch):
                b = collate(prepared[start : start + batch], model.dtype)
                out.append(np.asarray(model(b).data, dtype=np.float64))
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, len(model.catalog)))


@dataclass
class RankedDiagnosis:
    entries: list  # (index, name, estimate), descending
    estimates: list

    def to_dict(self):
        return {
            "ranked": [{"index": i, "root_cause": n, "impact": v} for i, n, v in self.entries],
            "estimates": list(self.estimates),
        }

    def table(self):
        if not self.entries:
            return "no root cause above the validity threshold"
        width = max(len(n) for _, n, _ in self.entries)
        lines = [f"{'rank':>4}  {'root cause':<{width}}  impact"]
        for k, (_, n, v) in enumerate(self.entries, 1):
            lines.append(f"{k:>4}  {n:<{width}}  {v:7.4f}")
        return "\n".join(lines)


def rank_estimates(estimates, catalog, eps=0.10):
    est = [float(v) for v in estimates]
    if len(est) != len(catalog):
        raise ShapeError(f"{len(est)} estimates for {len(catalog)} root causes")
    keep = sorted((j for j in range(len(est)) if est[j] >= eps), key=lambda j: (-est[j], j))
    return RankedDiagnosis([(j, catalog[j], est[j]) for j in keep], est)


def diagnose(model, record, vocab, norm, eps=0.10):
    expected = (model.cfg.q, model.cfg.t)
    if np.shape(record.kpis) != expected:
        raise ShapeError(f"KPI matrix shape {np.shape(record.kpis)} does not match the model's {expected}")
    prep = prepare_record(record, vocab, norm, model.cfg)
    return rank_estimates(predict(model, [prep])[0], model.catalog, eps)


# training


@dataclass
class TrainResult:
    model: RCRankModel
    vocab: object
    norm: object
    config: TrainConfig
    history: list = field(default_factory=list)
    best_epoch: int = 0
    val_report: object = None
    pretrained_keys: list = field(default_factory=list)


LOG_COLUMNS = ["epoch", "L_pred", "L_valid", "L_order", "L_total", "val_v_acc", "val_top1_acc",
               "val_mse_mean", "val_mc_acc", "val_tau", "val_top1_ir"]


def write_train_log(history, path):
    """Per-epoch CSV; wall-clock seconds go to a ``.timing.json`` sidecar so the CSV is reproducible."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for h in history:
            w.writerow([h["epoch"]] + [f"{h[c]:.6f}" for c in LOG_COLUMNS[1:]])
    seconds = {"seconds_per_epoch": [h["seconds"] for h in history]}
    path.with_name(path.stem + ".timing.json").write_text(json.dumps(seconds, indent=2) + "\n")


def _records(part):
    return part.records if isinstance(part, Dataset) else list(part)


def _encoder_config(records, vocab, dropout):
    q, t = np.asarray(records[0].kpis).shape
    return EncoderConfig(vocab_size=len(vocab), q=q, t=t, dropout=dropout)


def train(train_set, val_set, cfg=None, pretrained=None, vocab=None, enc_cfg=None,
          catalog=None, norm=None, log_path=None, dtype=np.float32, progress=None):
    """Fit a model on labeled ``train_set``; keeps the epoch with the best validation Top1-ACC.

    ``pretrained`` is a checkpoint path or a ``(tensors, meta)`` pair; its
    vocabulary, encoder config and normalization then take precedence.
    """
    cfg = (cfg or TrainConfig()).validate()
    train_recs, val_recs = _records(train_set), _records(val_set)
    if not train_recs:
        raise InsufficientData("training set is empty")
    if any(not r.labeled for r in train_recs + val_recs):
        raise InsufficientData("training and validation records must carry impact labels")
    catalog = tuple(catalog or train_set.catalog)
    norm = norm or getattr(train_set, "norm", None)
    if variant_spec(cfg.variant).get("pretrained") is False:
        pretrained = None
    tensors = None
    if pretrained is not None:
        tensors, meta = load_pretrained(pretrained) if isinstance(pretrained, (str, bytes)) or hasattr(pretrained, "__fspath__") else pretrained
        vocab = Vocabulary.from_dict(meta["vocab"])
        norm = NormStats.from_dict(meta["norm"])
        enc_cfg = EncoderConfig.from_dict({**meta["encoder"], "dropout": cfg.dropout})
    if norm is None:
        raise InsufficientData("no normalization statistics available")
    vocab = vocab or build_vocabulary(train_recs + val_recs)
    enc_cfg = enc_cfg or _encoder_config(train_recs, vocab, cfg.dropout)
    prep_train = [prepare_record(r, vocab, norm, enc_cfg) for r in train_recs]
    prep_val = [prepare_record(r, vocab, norm, enc_cfg) for r in val_recs]
    y_val = np.stack([p.impacts for p in prep_val]) if prep_val else None
    lengths = [len(p.sql_ids) for p in prep_train]

    with T.default_dtype(dtype):
        model = RCRankModel(enc_cfg, catalog, cfg.variant, seed=cfg.seed)
        keys = transfer_weights(model, tensors) if tensors is not None else []
        opt = Adam(model.parameters(), lr=cfg.lr)
        order_rng = np.random.default_rng([cfg.seed, 21])
        history, best, best_state, best_report = [], -1.0, None, None
        best_epoch = 0
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            model.train()
            sums = dict.fromkeys(("pred", "valid", "order", "total"), 0.0)
            n_seen = 0
            for idx in bucketed_batches(lengths, cfg.batch, order_rng, cfg.bucket_chunk):
                batch = collate([prep_train[i] for i in idx], dtype)
                opt.zero_grad()
                with T.finite_checks(False), np.errstate(over="ignore", invalid="ignore"):
                    terms = loss_terms(batch.impacts, model(batch), cfg)
                    terms["total"].backward()
                check_step(terms["total"], model.parameters(), f"training epoch {epoch}")
                opt.step()
                for k in sums:
                    sums[k] += terms[k].item() * len(idx)
                n_seen += len(idx)
            seconds = time.perf_counter() - t0
            row = {"epoch": epoch, "seconds": seconds}
            row.update({f"L_{k}": v / n_seen for k, v in sums.items()})
            if prep_val:
                report = compute_report(y_val, predict(model, prep_val), cfg.epsilon)
                score = report.top1_acc
            else:
                report, score = None, -float(row["L_total"])
            for m in ("v_acc", "top1_acc", "mse_mean", "mc_acc", "tau", "top1_ir"):
                row[f"val_{m}"] = getattr(report, m) if report else float("nan")
            history.append(row)
            if progress:
                progress(row)
            if score > best:
                best, best_epoch, best_report = score, epoch, report
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
        model.load_state_dict(best_state)
        model.eval()
    if log_path is not None:
        write_train_log(history, log_path)
    return TrainResult(model, vocab, norm, cfg, history, best_epoch, best_report, keys)
