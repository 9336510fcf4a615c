"""Cross-modal fusion with one main modality supplying every attention query.

A block computes one attention read per modality (the main modality attends to
itself too), concatenates the four reads, maps them back to width ``d`` and
adds the result to the main sequence. The common stack sees raw embeddings;
the adaptive stack sees, for each root cause, the embeddings filtered by that
cause's sigmoid gates, and its pooled output is added to the common feature.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .diffcore import nn
from .diffcore import tensor as T
from .encoders import ModalEmbedding
from .errors import InvalidState, ShapeError

MODALITIES = ("sql", "plan", "log", "kpi")


class FusedFeatures(NamedTuple):
    common: T.Tensor  # (B, d)
    adaptive: T.Tensor  # (B, r, d)
    final: T.Tensor  # (B, r, d)


class FusionConfig:
    """Fusion hyperparameters; the main modality is fixed once a model is built from it."""

    def __init__(self, d=32, blocks=3, main="sql", share_adaptive=True, use_gates=True, dropout=0.1):
        self.d = d
        self.blocks = blocks
        self._main = None
        self.share_adaptive = share_adaptive
        self.use_gates = use_gates
        self.dropout = dropout
        self.frozen = False
        self.configure_main_modality(main)

    @property
    def main(self):
        return self._main

    def configure_main_modality(self, which):
        which = str(which).lower()
        if which not in MODALITIES:
            raise ValueError(f"main modality must be one of {MODALITIES}, got {which!r}")
        if self.frozen and which != self._main:
            raise InvalidState("main modality cannot change after the fusion weights are initialized")
        self._main = which
        return self

    def to_dict(self):
        return {
            "d": self.d,
            "blocks": self.blocks,
            "main": self._main,
            "share_adaptive": self.share_adaptive,
            "use_gates": self.use_gates,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def cross_attention(main_tokens, other, wq, wk, wv, d=None):
    """Single-head attention read of ``other`` (a ModalEmbedding) from the main sequence.

    Returns (h, attention weights). Scores are scaled by sqrt(d).
    """
    d = d or main_tokens.shape[-1]
    if main_tokens.shape[-1] != other.tokens.shape[-1]:
        raise ShapeError(f"cross_attention: widths {main_tokens.shape[-1]} and {other.tokens.shape[-1]} differ")
    q = wq(main_tokens)
    k = wk(other.tokens)
    v = wv(other.tokens)
    scores = T.matmul(q, k.transpose(0, 2, 1)) * (1.0 / math.sqrt(d))
    attn = T.softmax(scores, axis=-1, mask=nn.key_mask_bias(other.mask, scores.dtype))
    return T.matmul(attn, v), attn


class CrossModalBlock(nn.Module):
    def __init__(self, d, rng, dropout=0.0, drop_rng=None):
        self.wq = nn.Linear(d, d, rng, bias=False)
        self.wk = {m: nn.Linear(d, d, rng, bias=False) for m in MODALITIES}
        self.wv = {m: nn.Linear(d, d, rng, bias=False) for m in MODALITIES}
        self.ffn = nn.MLP([4 * d, 2 * d, d], rng, dropout, drop_rng)
        self.ln = nn.LayerNorm(d)
        self.d = d

    def __call__(self, main_tokens, embs, main):
        """``embs`` maps modality -> ModalEmbedding; the main one is read from ``main_tokens``."""
        reads = []
        for m in MODALITIES:
            src = embs[m]
            if m == main:
                src = ModalEmbedding(main_tokens, src.mask, src.pooled)
            h, _ = cross_attention(main_tokens, src, self.wq, self.wk[m], self.wv[m], self.d)
            reads.append(h)
        return self.ln(main_tokens + self.ffn(T.concat(reads, axis=-1)))


class CrossModalTransformer(nn.Module):
    def __init__(self, d, blocks, rng, dropout=0.0, drop_rng=None):
        self.blocks = [CrossModalBlock(d, rng, dropout, drop_rng) for _ in range(blocks)]

    def __call__(self, embs, main):
        x = embs[main].tokens
        for block in self.blocks:
            x = block(x, embs, main)
        return nn.masked_mean(x, embs[main].mask)


class GateUnit(nn.Module):
    """One root cause's gates, one per modality: sigmoid(x W + b) * x."""

    def __init__(self, d, rng):
        for m in MODALITIES:
            setattr(self, m, nn.Linear(d, d, rng))

    def fc(self, m):
        return getattr(self, m)


def apply_gates(gates, embs):
    """Gate every modality for every root cause at once.

    Returns modality -> ModalEmbedding over a (B * r) batch, root causes minor.
    """
    out = {}
    r = len(gates)
    for m in MODALITIES:
        e = embs[m]
        B, N, d = e.tokens.shape
        w = T.stack([g.fc(m).weight for g in gates])  # (r, d, d)
        b = T.stack([g.fc(m).bias for g in gates]).reshape(1, r, 1, d)
        x = e.tokens.reshape(B, 1, N, d)
        gated = T.sigmoid(T.matmul(x, w) + b) * x  # (B, r, N, d)
        mask = np.repeat(e.mask, r, axis=0)
        out[m] = ModalEmbedding(gated.reshape(B * r, N, d), mask, None)
    return out


def gate_values(gates, embs):
    """(modality -> (B, r, N, d)) gating weights before the product, for inspection."""
    vals = {}
    for m in MODALITIES:
        x = embs[m].tokens
        B, N, d = x.shape
        w = T.stack([g.fc(m).weight for g in gates])
        b = T.stack([g.fc(m).bias for g in gates]).reshape(1, len(gates), 1, d)
        vals[m] = T.sigmoid(T.matmul(x.reshape(B, 1, N, d), w) + b)
    return vals


def _repeat(embs, r):
    out = {}
    for m, e in embs.items():
        B, N, d = e.tokens.shape
        tiled = T.concat([e.tokens.reshape(B, 1, N, d)] * r, axis=1).reshape(B * r, N, d)
        out[m] = ModalEmbedding(tiled, np.repeat(e.mask, r, axis=0), None)
    return out


class FusionMixin:
    """Fusion behaviour for any module owning ``cmt_common``, ``cmt_adaptive`` and ``gates``."""

    def _build_fusion(self, cfg, names, rng, drop_rng=None):
        cfg.frozen = True
        self.fusion_cfg = cfg
        self.r = len(names)
        self.cmt_common = CrossModalTransformer(cfg.d, cfg.blocks, rng, cfg.dropout, drop_rng)
        if cfg.share_adaptive:
            self.cmt_adaptive = CrossModalTransformer(cfg.d, cfg.blocks, rng, cfg.dropout, drop_rng)
        else:
            self.cmt_adaptive = {n: CrossModalTransformer(cfg.d, cfg.blocks, rng, cfg.dropout, drop_rng) for n in names}
        self.gates = {n: GateUnit(cfg.d, rng) for n in names}

    @property
    def main(self):
        return self.fusion_cfg.main

    def configure_main_modality(self, which):
        self.fusion_cfg.configure_main_modality(which)

    def fuse(self, embs):
        """``embs``: modality -> ModalEmbedding. Returns :class:`FusedFeatures`."""
        cfg = self.fusion_cfg
        for m in MODALITIES:
            if embs[m].tokens.shape[-1] != cfg.d:
                raise ShapeError(f"{m} embedding width {embs[m].tokens.shape[-1]} != d={cfg.d}")
        main = cfg.main
        B = embs[main].tokens.shape[0]
        gates = list(self.gates.values())
        common = self.cmt_common(embs, main)
        src = apply_gates(gates, embs) if cfg.use_gates else _repeat(embs, self.r)
        if cfg.share_adaptive:
            adaptive = self.cmt_adaptive(src, main).reshape(B, self.r, cfg.d)
        else:
            per = []
            for j, stack in enumerate(self.cmt_adaptive.values()):
                sel = np.arange(B) * self.r + j
                sub = {m: ModalEmbedding(e.tokens[sel], e.mask[sel], None) for m, e in src.items()}
                per.append(stack(sub, main))
            adaptive = T.stack(per, axis=1)
        final = common.reshape(B, 1, cfg.d) + adaptive
        return FusedFeatures(common, adaptive, final)


class Fusion(nn.Module, FusionMixin):
    """Standalone fusion stack (the full model mixes the same behaviour in)."""

    def __init__(self, cfg, names, rng, drop_rng=None):
        if isinstance(names, int):
            names = [f"rc{j}" for j in range(names)]
        self._build_fusion(cfg, list(names), rng, drop_rng)
