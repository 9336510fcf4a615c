"""The root-cause impact model and its architectural variants."""

from __future__ import annotations

import numpy as np

from .diffcore import checkpoint, nn
from .diffcore import tensor as T
from .domain.records import NormStats
from .domain.tokenize import Vocabulary
from .encoders import EncoderConfig, Encoders
from .errors import InvalidConfig
from .fusion import MODALITIES, FusionConfig, FusionMixin
from .pretrain import Aggregator

# variant -> how the forward pass is wired, plus two training switches read by
# the trainer: "loss" ("mse" drops the ranking terms) and "pretrained" (False
# ignores any pretrained weights).
VARIANTS = {
    "full": {"mode": "fusion"},
    "concat": {"mode": "concat", "inputs": MODALITIES},
    "no_gate": {"mode": "fusion", "use_gates": False, "per_rc_heads": True},
    "mse_only": {"mode": "fusion", "loss": "mse"},
    "no_pretrain": {"mode": "fusion", "pretrained": False},
    "only_sql": {"mode": "concat", "inputs": ("sql",)},
    "only_plan": {"mode": "concat", "inputs": ("plan",)},
    "only_log": {"mode": "concat", "inputs": ("log",)},
    "only_kpi": {"mode": "concat", "inputs": ("kpi",)},
    "plan_kpi_concat": {"mode": "concat", "inputs": ("plan", "kpi")},
    "main_sql": {"mode": "fusion", "main": "sql"},
    "main_plan": {"mode": "fusion", "main": "plan"},
    "main_log": {"mode": "fusion", "main": "log"},
    "main_kpi": {"mode": "fusion", "main": "kpi"},
}

MODEL_KIND = "rcrank-model"


def variant_spec(name):
    try:
        return VARIANTS[name]
    except KeyError:
        raise InvalidConfig(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None


class RCRankModel(Encoders, FusionMixin):
    """Encoders, pretraining aggregator, fusion stacks, gates and impact heads."""

    def __init__(self, enc_cfg, catalog, variant="full", fusion_cfg=None, per_rc_heads=None, seed=0):
        spec = variant_spec(variant)
        rng = np.random.default_rng([seed, 11])
        self.drop_rng = np.random.default_rng([seed, 12])
        super().__init__(enc_cfg, rng, self.drop_rng)
        self.catalog = tuple(catalog)
        self.variant = variant
        self.mode = spec["mode"]
        d, r = enc_cfg.d, len(self.catalog)
        self.agg = Aggregator(d, rng, enc_cfg.sql_heads, self.drop_rng, enc_cfg.dropout)
        if fusion_cfg is None:
            fusion_cfg = FusionConfig(d=d, dropout=enc_cfg.dropout)
            if "main" in spec:
                fusion_cfg.configure_main_modality(spec["main"])
            if "use_gates" in spec:
                fusion_cfg.use_gates = spec["use_gates"]
        self.per_rc_heads = spec.get("per_rc_heads", False) if per_rc_heads is None else per_rc_heads
        self.fusion_cfg = fusion_cfg
        if self.mode == "fusion":
            self._build_fusion(fusion_cfg, self.catalog, rng, self.drop_rng)
            if self.per_rc_heads:
                self.heads = {n: nn.MLP([d, d, 1], rng, enc_cfg.dropout, self.drop_rng) for n in self.catalog}
            else:
                self.heads = nn.MLP([d, d, 1], rng, enc_cfg.dropout, self.drop_rng)
        else:
            self.r = r
            self.inputs = spec["inputs"]
            self.heads = nn.MLP([d * len(self.inputs), d, r], rng, enc_cfg.dropout, self.drop_rng)

    @property
    def dtype(self):
        return self.parameters()[0].dtype.type

    def embeddings(self, batch):
        return dict(zip(MODALITIES, self.encode(batch)))

    def estimate_impacts(self, fused):
        """Impact estimates (B, r) from fused per-root-cause features."""
        final = fused.final
        B, r, d = final.shape
        if self.per_rc_heads:
            cols = [head(final[:, j, :]) for j, head in enumerate(self.heads.values())]
            return T.concat(cols, axis=1)
        return self.heads(final.reshape(B * r, d)).reshape(B, r)

    def forward(self, batch):
        embs = self.embeddings(batch)
        if self.mode == "fusion":
            return self.estimate_impacts(self.fuse(embs))
        pooled = [embs[m].pooled for m in self.inputs]
        x = pooled[0] if len(pooled) == 1 else T.concat(pooled, axis=-1)
        return self.heads(x)

    __call__ = forward

    def config(self):
        return {
            "variant": self.variant,
            "catalog": list(self.catalog),
            "encoder": self.cfg.to_dict(),
            "fusion": self.fusion_cfg.to_dict(),
            "per_rc_heads": self.per_rc_heads,
        }


def build_model(meta, seed=0):
    return RCRankModel(
        EncoderConfig.from_dict(meta["encoder"]),
        meta["catalog"],
        meta["variant"],
        FusionConfig.from_dict(meta["fusion"]),
        meta["per_rc_heads"],
        seed,
    )


def save_model(model, path, vocab, norm, extra=None):
    meta = {
        "kind": MODEL_KIND,
        **model.config(),
        "vocab": vocab.to_dict(),
        "norm": norm.to_dict(),
        "dtype": np.dtype(model.dtype).str,
        "extra": extra or {},
    }
    checkpoint.save(path, model.state_dict(), meta)


def load_model(path):
    """(model, vocab, norm, meta) from a model checkpoint."""
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != MODEL_KIND:
        raise InvalidConfig(f"{path} is not a model checkpoint")
    with T.default_dtype(np.dtype(meta["dtype"]).type):
        model = build_model(meta)
    model.load_state_dict(tensors)
    model.eval()
    return model, Vocabulary.from_dict(meta["vocab"]), NormStats.from_dict(meta["norm"]), meta
