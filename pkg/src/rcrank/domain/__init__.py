"""Domain types, tokenization, plan parsing, and the dataset file format."""

from .dataset import (
    DEFAULT_RATIOS,
    Dataset,
    assign_splits,
    load_dataset,
    pretrain_pool,
    save_dataset,
    split_dataset,
    stored_splits,
)
from .plan import OP_INDEX, OP_KINDS, OpKind, PlanDag, PlanNode, build_plan, parse_plan, plan_to_doc
from .records import (
    KPI_CHANNELS,
    LOG_FIELDS,
    NormStats,
    QueryRecord,
    compute_norm,
    log_array,
    normalize_kpis,
    vectorize_log,
)
from .tokenize import MASK_ID, NUM_ID, PAD_ID, UNK_ID, TokenSeq, Vocabulary, detokenize, lexeme_spans, tokenize_sql

__all__ = [
    "DEFAULT_RATIOS", "Dataset", "KPI_CHANNELS", "LOG_FIELDS", "MASK_ID", "NUM_ID", "NormStats",
    "OP_INDEX", "OP_KINDS", "OpKind", "PAD_ID", "PlanDag", "PlanNode", "QueryRecord", "TokenSeq",
    "UNK_ID", "Vocabulary", "assign_splits", "build_plan", "compute_norm", "detokenize", "load_dataset",
    "log_array", "normalize_kpis", "parse_plan", "plan_to_doc", "pretrain_pool", "save_dataset",
    "split_dataset", "stored_splits", "tokenize_sql", "vectorize_log", "lexeme_spans",
]
