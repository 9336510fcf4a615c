"""Per-modality encoders into a shared width ``d`` plus the KPI decoder.

Records are first turned into plain arrays (:func:`prepare_record`) and padded
into a :class:`Batch`; encoders only ever see those arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .diffcore import nn
from .diffcore import tensor as T
from .domain.plan import OP_INDEX, OP_KINDS
from .domain.records import LOG_FIELDS, normalize_kpis, vectorize_log
from .domain.tokenize import DEFAULT_MAX_LEN, PAD_ID, Vocabulary, split_identifier, tokenize_sql
from .errors import ShapeError

N_OPS = len(OP_KINDS) + 1
MASK_OP = len(OP_KINDS)
MAX_DISTANCE = 8
N_BUCKETS = MAX_DISTANCE + 2  # 0..8, then one bucket for farther or unreachable
MAX_NODE_PIECES = 12
NUMERIC_SCALE = 0.1


@dataclass
class EncoderConfig:
    d: int = 32
    vocab_size: int = 0
    sql_layers: int = 2
    sql_heads: int = 4
    max_len: int = DEFAULT_MAX_LEN
    plan_layers: int = 2
    plan_heads: int = 4
    structural_bias: bool = True
    log_hidden: tuple = (64, 32)
    kpi_channels: tuple = (8, 16)
    q: int = 6
    t: int = 60
    dropout: float = 0.1

    def validate(self):
        for heads in (self.sql_heads, self.plan_heads):
            if self.d % heads:
                raise ShapeError(f"d={self.d} not divisible by {heads} heads")
        return self

    def to_dict(self):
        d = dict(vars(self))
        d["log_hidden"] = list(self.log_hidden)
        d["kpi_channels"] = list(self.kpi_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["log_hidden"] = tuple(d.get("log_hidden", (64, 32)))
        d["kpi_channels"] = tuple(d.get("kpi_channels", (8, 16)))
        return cls(**d)


@dataclass
class PreparedRecord:
    """Array view of one record, ready for batching."""

    id: str
    sql_ids: np.ndarray
    sql_texts: tuple
    truncated: bool
    plan_ops: np.ndarray
    plan_num: np.ndarray  # (m, 2): scaled log1p(est_rows), log1p(est_cost)
    plan_pieces: list  # per node, vocabulary ids of its identifier pieces
    plan_bucket: np.ndarray  # (m, m) distance buckets
    plan_root: int
    log: np.ndarray
    kpis: np.ndarray
    impacts: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def copy(self):
        return replace(
            self,
            sql_ids=self.sql_ids.copy(),
            plan_ops=self.plan_ops.copy(),
            plan_num=self.plan_num.copy(),
            plan_pieces=[list(p) for p in self.plan_pieces],
            log=self.log.copy(),
        )


def build_vocabulary(records):
    """Vocabulary over the SQL text and plan table/column names of ``records``."""
    names = []
    for rec in records:
        for node in rec.plan.nodes:
            if node.table:
                names.append(node.table)
            names.extend(node.columns)
    return Vocabulary.build([rec.sql for rec in records], names)


def bucketed_batches(lengths, batch, rng, chunk=8):
    """Index batches grouped by similar length to cut padding.

    Indices are shuffled, cut into chunks of ``chunk * batch``, sorted by length
    inside each chunk and sliced into batches; the batch order is shuffled
    again. ``chunk=1`` gives plain shuffled batches.
    """
    lengths = np.asarray(lengths)
    order = rng.permutation(len(lengths))
    batches = []
    span = max(1, chunk) * batch
    for start in range(0, len(order), span):
        part = order[start : start + span]
        part = part[np.argsort(lengths[part], kind="stable")]
        batches.extend(part[i : i + batch] for i in range(0, len(part), batch))
    return [batches[i] for i in rng.permutation(len(batches))]


def distance_buckets(plan):
    dist = plan.distances()
    return np.where(dist > MAX_DISTANCE, MAX_DISTANCE + 1, dist).astype(np.int64)


def node_pieces(node, vocab):
    names = ([node.table] if node.table else []) + list(node.columns)
    ids = [vocab.id(p) for name in names for p in split_identifier(name)]
    return ids[:MAX_NODE_PIECES]


def prepare_record(rec, vocab, norm, cfg):
    seq = tokenize_sql(rec.sql, vocab, cfg.max_len)
    plan = rec.plan
    kpis = normalize_kpis(rec.kpis, norm)
    if kpis.shape != (cfg.q, cfg.t):
        raise ShapeError(f"record {rec.id}: KPI matrix {kpis.shape} but model expects {(cfg.q, cfg.t)}")
    return PreparedRecord(
        id=rec.id,
        sql_ids=np.asarray(seq.ids, dtype=np.int64),
        sql_texts=seq.texts,
        truncated=seq.truncated,
        plan_ops=np.array([OP_INDEX[n.op] for n in plan.nodes], dtype=np.int64),
        plan_num=NUMERIC_SCALE * np.log1p(np.array([[n.est_rows, n.est_cost] for n in plan.nodes], dtype=np.float64)),
        plan_pieces=[node_pieces(n, vocab) for n in plan.nodes],
        plan_bucket=distance_buckets(plan),
        plan_root=plan.root,
        log=vectorize_log(rec.log, norm),
        kpis=kpis,
        impacts=None if rec.impacts is None else np.asarray(rec.impacts, dtype=np.float64),
    )


@dataclass
class Batch:
    sql_ids: np.ndarray  # (B, Ns)
    sql_mask: np.ndarray
    plan_ops: np.ndarray  # (B, Np)
    plan_num: np.ndarray  # (B, Np, 2)
    plan_pieces: np.ndarray  # (B, Np, K)
    plan_piece_mask: np.ndarray
    plan_mask: np.ndarray
    plan_bucket: np.ndarray  # (B, Np, Np)
    plan_root: np.ndarray  # (B,)
    log: np.ndarray  # (B, 13)
    kpis: np.ndarray  # (B, q, t)
    impacts: np.ndarray | None = None

    def __len__(self):
        return self.sql_ids.shape[0]


def collate(items, dtype=np.float64):
    B = len(items)
    ns = max(len(p.sql_ids) for p in items)
    npl = max(len(p.plan_ops) for p in items)
    k = max(1, max(len(pc) for p in items for pc in p.plan_pieces))
    sql_ids = np.full((B, ns), PAD_ID, dtype=np.int64)
    plan_ops = np.zeros((B, npl), dtype=np.int64)
    plan_num = np.zeros((B, npl, 2), dtype=dtype)
    pieces = np.full((B, npl, k), PAD_ID, dtype=np.int64)
    piece_mask = np.zeros((B, npl, k), dtype=bool)
    plan_mask = np.zeros((B, npl), dtype=bool)
    bucket = np.full((B, npl, npl), N_BUCKETS - 1, dtype=np.int64)
    for b, p in enumerate(items):
        sql_ids[b, : len(p.sql_ids)] = p.sql_ids
        m = len(p.plan_ops)
        plan_ops[b, :m] = p.plan_ops
        plan_num[b, :m] = p.plan_num
        plan_mask[b, :m] = True
        bucket[b, :m, :m] = p.plan_bucket
        for i, pc in enumerate(p.plan_pieces):
            pieces[b, i, : len(pc)] = pc
            piece_mask[b, i, : len(pc)] = True
    impacts = None
    if all(p.impacts is not None for p in items):
        impacts = np.stack([p.impacts for p in items]).astype(dtype)
    return Batch(
        sql_ids=sql_ids,
        sql_mask=sql_ids != PAD_ID,
        plan_ops=plan_ops,
        plan_num=plan_num,
        plan_pieces=pieces,
        plan_piece_mask=piece_mask,
        plan_mask=plan_mask,
        plan_bucket=bucket,
        plan_root=np.array([p.plan_root for p in items], dtype=np.int64),
        log=np.stack([p.log for p in items]).astype(dtype),
        kpis=np.stack([p.kpis for p in items]).astype(dtype),
        impacts=impacts,
    )


class ModalEmbedding(NamedTuple):
    tokens: T.Tensor  # (B, N, d)
    mask: np.ndarray  # (B, N) bool
    pooled: T.Tensor  # (B, d)


def sinusoidal_positions(n, d):
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class SqlEncoder(nn.Module):
    def __init__(self, cfg, rng, drop_rng=None):
        self.tok = nn.Embedding(cfg.vocab_size, cfg.d, rng)
        self.layers = [
            nn.TransformerLayer(cfg.d, cfg.sql_heads, 2 * cfg.d, rng, cfg.dropout, drop_rng) for _ in range(cfg.sql_layers)
        ]
        self.d = cfg.d

    def __call__(self, ids, mask):
        x = self.tok(ids) + sinusoidal_positions(ids.shape[1], self.d)
        for layer in self.layers:
            x = layer(x, mask)
        return ModalEmbedding(x, mask, nn.masked_mean(x, mask))


class PlanEncoder(nn.Module):
    """Node features through self-attention biased by tree distance; pooled at the root."""

    def __init__(self, cfg, rng, drop_rng=None):
        self.op = nn.Embedding(N_OPS, cfg.d, rng)
        self.num = nn.Linear(2, cfg.d, rng)
        self.piece = nn.Embedding(cfg.vocab_size, cfg.d, rng)
        self.norm = nn.LayerNorm(cfg.d)
        self.layers = [
            nn.TransformerLayer(cfg.d, cfg.plan_heads, 2 * cfg.d, rng, cfg.dropout, drop_rng) for _ in range(cfg.plan_layers)
        ]
        self.structural_bias = cfg.structural_bias
        if cfg.structural_bias:
            self.dist_bias = [nn.Parameter(np.zeros((N_BUCKETS, 1), dtype=T.get_default_dtype())) for _ in self.layers]

    def node_features(self, ops, num, pieces, piece_mask):
        pm = piece_mask.astype(T.get_default_dtype())[..., None]
        count = np.maximum(pm.sum(axis=2), 1.0)
        piece_mean = T.tsum(self.piece(pieces) * pm, axis=2) * (1.0 / count)
        return self.norm(self.op(ops) + self.num(num) + piece_mean)

    def __call__(self, ops, num, pieces, piece_mask, mask, bucket, root):
        x = self.node_features(ops, num, pieces, piece_mask)
        B, n = ops.shape
        for i, layer in enumerate(self.layers):
            bias = None
            if self.structural_bias:
                bias = T.embedding_lookup(self.dist_bias[i], bucket).reshape(B, n, n)
            x = layer(x, mask, bias)
        return ModalEmbedding(x, mask, x[np.arange(B), root])


class LogEncoder(nn.Module):
    def __init__(self, cfg, rng, drop_rng=None):
        self.mlp = nn.MLP([len(LOG_FIELDS), *cfg.log_hidden, cfg.d], rng, cfg.dropout, drop_rng)

    def __call__(self, log):
        pooled = self.mlp(log)
        B, d = pooled.shape
        return ModalEmbedding(pooled.reshape(B, 1, d), np.ones((B, 1), dtype=bool), pooled)


def _conv_out(n, k, s, p):
    return (n + 2 * p - k) // s + 1


KPI_KERNEL = (3, 5)
KPI_STRIDE = (1, 2)
KPI_PAD = (1, 2)


class KpiEncoder(nn.Module):
    """Two conv stages over the channel x time grid; one position per KPI channel."""

    def __init__(self, cfg, rng):
        c1, c2 = cfg.kpi_channels
        self.conv1 = nn.Conv2d(1, c1, KPI_KERNEL, rng, KPI_STRIDE, KPI_PAD)
        self.conv2 = nn.Conv2d(c1, c2, KPI_KERNEL, rng, KPI_STRIDE, KPI_PAD)
        w = _conv_out(_conv_out(cfg.t, KPI_KERNEL[1], KPI_STRIDE[1], KPI_PAD[1]), KPI_KERNEL[1], KPI_STRIDE[1], KPI_PAD[1])
        if w <= 0:
            raise ShapeError(f"t={cfg.t} too short for the KPI encoder")
        self.proj = nn.Linear(c2 * w, cfg.d, rng)
        self.q, self.t = cfg.q, cfg.t

    def __call__(self, kpis):
        B = kpis.shape[0]
        if tuple(kpis.shape[1:]) != (self.q, self.t):
            raise ShapeError(f"KPI batch {kpis.shape[1:]} but encoder expects {(self.q, self.t)}")
        x = T.relu(self.conv1(T.as_tensor(kpis).reshape(B, 1, self.q, self.t)))
        x = T.relu(self.conv2(x))  # (B, c2, q, w)
        c2, w = x.shape[1], x.shape[3]
        x = x.transpose(0, 2, 1, 3).reshape(B, self.q, c2 * w)
        tokens = self.proj(x)
        return ModalEmbedding(tokens, np.ones((B, self.q), dtype=bool), T.mean(tokens, axis=1))


class KpiDecoder(nn.Module):
    def __init__(self, cfg, rng, hidden=128):
        self.mlp = nn.MLP([cfg.d, hidden, cfg.q * cfg.t], rng)
        self.q, self.t = cfg.q, cfg.t

    def __call__(self, pooled):
        return self.mlp(pooled).reshape(pooled.shape[0], self.q, self.t)


class Encoders(nn.Module):
    """The four encoders and the KPI decoder under their checkpoint namespaces."""

    def __init__(self, cfg, rng, drop_rng=None):
        cfg.validate()
        self.cfg = cfg
        self.enc_s = SqlEncoder(cfg, rng, drop_rng)
        self.enc_p = PlanEncoder(cfg, rng, drop_rng)
        self.enc_l = LogEncoder(cfg, rng, drop_rng)
        self.enc_i = KpiEncoder(cfg, rng)
        self.dec_i = KpiDecoder(cfg, rng)

    def encode(self, batch):
        """(E_S, E_P, E_L, E_I) for a collated batch."""
        return (
            self.enc_s(batch.sql_ids, batch.sql_mask),
            self.enc_p(
                batch.plan_ops, batch.plan_num, batch.plan_pieces, batch.plan_piece_mask,
                batch.plan_mask, batch.plan_bucket, batch.plan_root,
            ),
            self.enc_l(batch.log),
            self.enc_i(batch.kpis),
        )


def encoder_state_prefixes():
    return ("enc_s/", "enc_p/", "enc_l/", "enc_i/", "dec_i/")


def pooled_width(emb):
    return emb.pooled.shape[-1]


def check_widths(*embs):
    widths = {pooled_width(e) for e in embs}
    if len(widths) != 1:
        raise ShapeError(f"modal embeddings disagree on width: {sorted(widths)}")
    return widths.pop()
