"""Self-supervised cross-modal pretraining of the encoders.

Identifiers that occur in both the SQL text and plan node annotations (and a
couple of numbers shared by the log and the plan root) are aligned. Masking one
side of an aligned pair and predicting it from the other modalities teaches the
encoders a common space; the KPI encoder is trained as an autoencoder.

Masked content is regressed onto fixed random code vectors (per token id, per
operator kind, per log field direction). The codes never train, so the
objective cannot be satisfied by collapsing every embedding to a constant.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffcore import Adam, checkpoint, nn
from .diffcore import tensor as T
from .domain.plan import JOIN_OPS, OpKind
from .domain.records import LOG_FIELDS, LOG_INDEX, log_array
from .domain.tokenize import MASK_ID, lexeme_spans
from .encoders import MASK_OP, N_OPS, Encoders, bucketed_batches, collate, prepare_record
from .errors import InsufficientData, InvalidConfig, ShapeError, TrainingDiverged

PAIR_KINDS = ("table", "column", "predicate", "operation", "numeric")
MASK_FRACTION = 0.15
LOG_SENTINEL = 0.0
NUMERIC_TOLERANCE = math.log(2.0)  # log-space gap allowed for a numeric match
CODEBOOK_SEED = 0xC0DE

_TABLE_CONTEXT = {"from", "join", "into", "update"}
_TABLE_NODES = {OpKind.SCAN, OpKind.INDEX_SCAN, OpKind.INSERT, OpKind.UPDATE}
_PREDICATE_NODES = {OpKind.FILTER, OpKind.INDEX_SCAN}


@dataclass(frozen=True)
class AlignmentPair:
    kind: str
    sql_span: tuple | None  # (start, end) token indices
    plan_node: int | None
    log_slot: int | None = None


def match_critical_spans(rec, max_len=128):
    """Aligned (SQL span, plan node) and (log field, plan root) pairs of one record."""
    lex = lexeme_spans(rec.sql, max_len)
    nodes = rec.plan.nodes
    pairs, seen = [], set()

    def add(kind, span, node, slot=None):
        key = (span, node, slot)
        if key not in seen:
            seen.add(key)
            pairs.append(AlignmentPair(kind, span, node, slot))

    in_where = False
    join_nodes = [i for i in rec.plan.topo if nodes[i].op in JOIN_OPS]
    n_join = 0
    for k, (kind, text, start, end) in enumerate(lex):
        prev = lex[k - 1] if k > 0 else None
        if kind == "keyword":
            if text == "where":
                in_where = True
            elif text in ("group", "order"):
                in_where = False
                want = OpKind.AGGREGATE if text == "group" else OpKind.SORT
                for i, n in enumerate(nodes):
                    if n.op == want:
                        add("operation", (start, end), i)
            elif text == "join" and n_join < len(join_nodes):
                add("operation", (start, end), join_nodes[n_join])
                n_join += 1
            continue
        if kind != "ident":
            continue
        if prev is not None and prev[0] == "keyword" and prev[1] in _TABLE_CONTEXT:
            for i, n in enumerate(nodes):
                if n.table == text and n.op in _TABLE_NODES:
                    add("table", (start, end), i)
        elif prev is not None and prev[1] == "." and k >= 2:
            qualifier = lex[k - 2][1]
            for i, n in enumerate(nodes):
                if n.table == qualifier and text in n.columns:
                    pk = "predicate" if in_where and n.op in _PREDICATE_NODES else "column"
                    add(pk, (start, end), i)
    raw = log_array(rec.log)
    root = nodes[rec.plan.root]
    for slot, value in (("rows_returned", root.est_rows), ("duration_ms", root.est_cost)):
        if abs(math.log1p(raw[LOG_INDEX[slot]]) - math.log1p(value)) <= NUMERIC_TOLERANCE:
            add("numeric", None, rec.plan.root, LOG_INDEX[slot])
    return pairs


class TargetCodebook:
    """Fixed random code vectors that masked content is regressed onto."""

    def __init__(self, vocab_size, d, seed=CODEBOOK_SEED):
        rng = np.random.default_rng([seed, vocab_size, d])
        self.tok = rng.standard_normal((vocab_size, d)) / math.sqrt(d)
        self.op = rng.standard_normal((N_OPS, d)) / math.sqrt(d)
        dirs = rng.standard_normal((len(LOG_FIELDS), d))
        self.log_dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def sql(self, token_id):
        return self.tok[token_id]

    def plan(self, op_id, pieces):
        v = self.op[op_id].copy()
        if pieces:
            v += self.tok[list(pieces)].mean(axis=0)
        return v

    def log(self, slot, value):
        return value * self.log_dirs[slot]


@dataclass
class MaskedSample:
    prepared: object  # PreparedRecord with masked content
    targets: list  # (modality, position, target vector)
    side: str  # "sql" or "plan" for identifier pairs; "sql" for the fallback


def _fallback_count(n):
    return max(1, int(round(MASK_FRACTION * n)))


def mask_for_pretraining(prep, pairs, rng, codebook, all_terms=False):
    """Mask a copy of ``prep``; the original is left untouched."""
    out = prep.copy()
    targets = []
    side = "sql"
    masked_sql, masked_nodes, masked_slots = set(), set(), set()

    def mask_sql(span):
        for p in range(*span):
            if p not in masked_sql and p < len(out.sql_ids):
                masked_sql.add(p)
                targets.append(("sql", p, codebook.sql(prep.sql_ids[p])))
                out.sql_ids[p] = MASK_ID

    def mask_node(i):
        if i not in masked_nodes:
            masked_nodes.add(i)
            targets.append(("plan", i, codebook.plan(prep.plan_ops[i], prep.plan_pieces[i])))
            out.plan_ops[i] = MASK_OP
            out.plan_num[i] = 0.0
            out.plan_pieces[i] = []

    def mask_slot(s):
        if s not in masked_slots:
            masked_slots.add(s)
            targets.append(("log", s, codebook.log(s, prep.log[s])))
            out.log[s] = LOG_SENTINEL

    if not pairs:
        n = len(prep.sql_ids)
        for p in sorted(rng.choice(n, size=_fallback_count(n), replace=False).tolist()):
            mask_sql((p, p + 1))
        return MaskedSample(out, targets, side)

    k = max(1, int(round(MASK_FRACTION * len(pairs))))
    chosen = sorted(rng.choice(len(pairs), size=k, replace=False).tolist())
    side = "sql" if rng.random() < 0.5 else "plan"
    for c in chosen:
        pair = pairs[c]
        if pair.kind == "numeric":
            mask_slot(pair.log_slot)
            continue
        this_side = side if not all_terms else ("sql" if rng.random() < 0.5 else "plan")
        if this_side == "sql":
            mask_sql(pair.sql_span)
        else:
            mask_node(pair.plan_node)
    if all_terms and not masked_slots:
        mask_slot(LOG_INDEX["rows_returned"])
    return MaskedSample(out, targets, side)


class Aggregator(nn.Module):
    """One transformer block over [SQL, plan, log, log-slot queries] and a linear readout."""

    def __init__(self, d, rng, heads=4, drop_rng=None, dropout=0.0):
        self.block = nn.TransformerLayer(d, heads, 2 * d, rng, dropout, drop_rng)
        self.kind = nn.Embedding(4, d, rng)
        self.slot = nn.Embedding(len(LOG_FIELDS), d, rng)
        self.readout = nn.Linear(d, d, rng)
        self.d = d


def aggregate_and_predict(agg, e_s, e_p, e_l, targets):
    """Predicted code vectors for ``targets``: list of (batch index, modality, position).

    Returns a (len(targets), d) tensor, or None when there is nothing to predict.
    """
    if not targets:
        return None
    d = agg.d
    for e in (e_s, e_p, e_l):
        if e.tokens.shape[-1] != d:
            raise ShapeError(f"aggregator width {d} but embedding width {e.tokens.shape[-1]}")
    B, ns = e_s.mask.shape
    npl = e_p.mask.shape[1]
    slots_per = [sorted({p for b, m, p in targets if b == i and m == "log"}) for i in range(B)]
    ks = max((len(s) for s in slots_per), default=0)
    parts = [
        e_s.tokens + agg.kind(np.zeros((1, 1), dtype=np.int64)),
        e_p.tokens + agg.kind(np.ones((1, 1), dtype=np.int64)),
        e_l.tokens + agg.kind(np.full((1, 1), 2, dtype=np.int64)),
    ]
    masks = [e_s.mask, e_p.mask, e_l.mask]
    if ks:
        slot_ids = np.zeros((B, ks), dtype=np.int64)
        slot_mask = np.zeros((B, ks), dtype=bool)
        for i, s in enumerate(slots_per):
            slot_ids[i, : len(s)] = s
            slot_mask[i, : len(s)] = True
        parts.append(agg.slot(slot_ids) + agg.kind(np.full((1, 1), 3, dtype=np.int64)))
        masks.append(slot_mask)
    seq = T.concat(parts, axis=1)
    mask = np.concatenate(masks, axis=1)
    out = agg.block(seq, mask)
    base_slot = ns + npl + 1
    bi, pi = [], []
    for b, m, p in targets:
        bi.append(b)
        if m == "sql":
            pi.append(p)
        elif m == "plan":
            pi.append(ns + p)
        else:
            pi.append(base_slot + slots_per[b].index(p))
    return agg.readout(out[np.array(bi), np.array(pi)])


def pretrain_loss(pred, target_vecs, modalities, kpi_recon, kpi_true):
    """Per-term losses and their sum.

    Each masked-modality term is the mean over its targets of the squared L2
    error; the KPI term is the mean squared reconstruction error.
    """
    terms = {}
    if pred is not None:
        err = T.tsum((pred - target_vecs) ** 2, axis=1)  # (n_targets,)
        mods = np.asarray(modalities)
        for m in ("sql", "plan", "log"):
            sel = np.flatnonzero(mods == m)
            if sel.size:
                terms[m] = T.mean(err[sel])
    terms["kpi"] = T.mean((kpi_recon - kpi_true) ** 2)
    total = None
    for v in terms.values():
        total = v if total is None else total + v
    return total, terms


class PretrainModel(Encoders):
    def __init__(self, cfg, rng, drop_rng=None):
        super().__init__(cfg, rng, drop_rng)
        self.agg = Aggregator(cfg.d, rng, cfg.sql_heads, drop_rng, cfg.dropout)


@dataclass
class PretrainConfig:
    epochs: int = 5
    batch: int = 64
    lr: float = 3e-4
    seed: int = 0
    all_terms: bool = False
    bucket_chunk: int = 8
    extra: dict = field(default_factory=dict)


def pretrain_step_loss(model, samples, originals, codebook, dtype):
    """Loss on one batch of masked samples (``originals`` supply the clean KPIs)."""
    batch = collate([s.prepared for s in samples], dtype)
    e_s, e_p, e_l, e_i = model.encode(batch)
    targets, vecs, mods = [], [], []
    for b, s in enumerate(samples):
        for m, pos, vec in s.targets:
            targets.append((b, m, pos))
            vecs.append(vec)
            mods.append(m)
    pred = aggregate_and_predict(model.agg, e_s, e_p, e_l, targets)
    target_arr = np.stack(vecs).astype(dtype) if vecs else None
    recon = model.dec_i(e_i.pooled)
    kpi_true = np.stack([o.kpis for o in originals]).astype(dtype)
    return pretrain_loss(pred, target_arr, mods, recon, kpi_true)


def check_step(loss, params, where):
    """Raise TrainingDiverged unless the loss and every gradient are finite."""
    if not np.isfinite(loss.item()):
        raise TrainingDiverged(f"non-finite loss during {where}")
    for p in params:
        if p.grad is not None and not np.isfinite(p.grad.sum()):
            raise TrainingDiverged(f"non-finite gradient during {where}")


def prepare_pool(records, vocab, norm, cfg):
    prepared = []
    for rec in records:
        p = prepare_record(rec, vocab, norm, cfg)
        p.meta["pairs"] = match_critical_spans(rec, cfg.max_len)
        p.impacts = None  # labels are never used here
        prepared.append(p)
    return prepared


def run_pretraining(records, vocab, norm, enc_cfg, cfg, log_path=None, dtype=np.float32, model=None):
    """Train encoders, KPI decoder and aggregator; returns (model, per-epoch history)."""
    if not records:
        raise InsufficientData("pretraining pool is empty")
    pool = prepare_pool(records, vocab, norm, enc_cfg)
    codebook = TargetCodebook(enc_cfg.vocab_size, enc_cfg.d)
    with T.default_dtype(dtype):
        if model is None:
            model = PretrainModel(enc_cfg, np.random.default_rng([cfg.seed, 1]), np.random.default_rng([cfg.seed, 2]))
        opt = Adam(model.parameters(), lr=cfg.lr)
        order_rng = np.random.default_rng([cfg.seed, 3])
        mask_rng = np.random.default_rng([cfg.seed, 4])
        history = []
        lengths = [len(p.sql_ids) for p in pool]
        model.train()
        for epoch in range(1, cfg.epochs + 1):
            sums = {"total": 0.0, "sql": 0.0, "plan": 0.0, "log": 0.0, "kpi": 0.0}
            counts = dict.fromkeys(sums, 0)
            for idx in bucketed_batches(lengths, cfg.batch, order_rng, cfg.bucket_chunk):
                items = [pool[i] for i in idx]
                samples = [mask_for_pretraining(p, p.meta["pairs"], mask_rng, codebook, cfg.all_terms) for p in items]
                opt.zero_grad()
                with T.finite_checks(False), np.errstate(over="ignore", invalid="ignore"):
                    total, terms = pretrain_step_loss(model, samples, items, codebook, dtype)
                    total.backward()
                check_step(total, model.parameters(), f"pretraining epoch {epoch}")
                opt.step()
                sums["total"] += total.item()
                counts["total"] += 1
                for k, v in terms.items():
                    sums[k] += v.item()
                    counts[k] += 1
            row = {"epoch": epoch}
            row.update({k: sums[k] / counts[k] if counts[k] else 0.0 for k in sums})
            history.append(row)
        model.eval()
    if log_path is not None:
        write_pretrain_log(history, log_path)
    return model, history


def write_pretrain_log(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "L_SQL", "L_PLAN", "L_LOG", "L_KPIs", "L_total"])
        for h in history:
            w.writerow([h["epoch"], f"{h['sql']:.6f}", f"{h['plan']:.6f}", f"{h['log']:.6f}", f"{h['kpi']:.6f}", f"{h['total']:.6f}"])


PRETRAIN_KIND = "rcrank-pretrained"
TRANSFER_PREFIXES = ("enc_s/", "enc_p/", "enc_l/", "enc_i/", "dec_i/", "agg/")


def pretrained_bundle(model, vocab, norm, cfg=None, history=None):
    """(tensors, meta) for an encoder checkpoint, usable in memory or saved."""
    meta = {
        "kind": PRETRAIN_KIND,
        "encoder": model.cfg.to_dict(),
        "vocab": vocab.to_dict(),
        "norm": norm.to_dict(),
        "dtype": model.parameters()[0].dtype.str,
        "pretrain": asdict(cfg) if cfg is not None else {},
        "history": history or [],
    }
    return {k: v.copy() for k, v in model.state_dict().items()}, meta


def save_pretrained(model, path, vocab, norm, cfg=None, history=None):
    checkpoint.save(path, *pretrained_bundle(model, vocab, norm, cfg, history))


def load_pretrained(path):
    """(tensors, meta) of an encoder checkpoint written by :func:`save_pretrained`."""
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != PRETRAIN_KIND:
        raise InvalidConfig(f"{path} is not a pretrained encoder checkpoint")
    return tensors, meta


def transfer_weights(model, tensors):
    """Copy encoder, decoder and aggregator weights into ``model``; returns the keys copied."""
    subset = {k: v for k, v in tensors.items() if k.startswith(TRANSFER_PREFIXES)}
    own = {k for k, _ in model.named_parameters()}
    absent = sorted(set(subset) - own)
    if absent:
        raise InvalidConfig(f"pretrained keys not present in model: {absent[:5]}")
    model.load_state_dict(subset, strict=False)
    return sorted(subset)
