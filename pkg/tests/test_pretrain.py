from dataclasses import replace

import numpy as np
import pytest

from rcrank.diffcore import checkpoint
from rcrank.diffcore import tensor as T
from rcrank.domain.plan import parse_plan
from rcrank.domain.records import LOG_FIELDS, QueryRecord
from rcrank.domain.tokenize import MASK_ID
from rcrank.encoders import EncoderConfig
from rcrank.errors import InsufficientData, InvalidConfig
from rcrank.model import RCRankModel
from rcrank.pretrain import (
    PretrainConfig,
    PretrainModel,
    TargetCodebook,
    aggregate_and_predict,
    load_pretrained,
    mask_for_pretraining,
    match_critical_spans,
    pretrain_loss,
    pretrain_step_loss,
    prepare_pool,
    run_pretraining,
    save_pretrained,
    transfer_weights,
)


def _record(sql, plan, **log):
    raw = {name: 1e9 for name in LOG_FIELDS}
    raw.update(log)
    return QueryRecord("x", sql, parse_plan(plan), raw, np.full((6, 60), 50.0), 2.0)


def test_table_mention_pairs_with_its_scan():
    rec = _record("select total_price from orders",
                  {"op": "Scan", "est_rows": 10, "est_cost": 1, "table": "orders", "columns": ["total_price"]})
    pairs = match_critical_spans(rec)
    assert [p.kind for p in pairs] == ["table"]
    assert pairs[0].plan_node == 0 and pairs[0].sql_span == (4, 5)  # total_price spans two tokens


def test_no_shared_identifiers_gives_no_pairs():
    rec = _record("select a from t", {"op": "Scan", "est_rows": 10, "est_cost": 1, "table": "orders"})
    assert match_critical_spans(rec) == []


def test_numeric_log_pair_within_tolerance():
    plan = {"op": "Scan", "est_rows": 1000, "est_cost": 1, "table": "z"}
    near = match_critical_spans(_record("select a from t", plan, rows_returned=1500))
    far = match_critical_spans(_record("select a from t", plan, rows_returned=5000))
    assert [p.kind for p in near] == ["numeric"] and far == []


def test_every_referenced_table_is_paired(small_dataset):
    for rec in small_dataset.records[:100]:
        pairs = match_critical_spans(rec)
        tables = {rec.plan.nodes[p.plan_node].table for p in pairs if p.kind == "table"}
        assert set(rec.spec["tables"]) <= tables


@pytest.fixture(scope="module")
def codebook(tiny):
    return TargetCodebook(tiny.cfg.vocab_size, tiny.cfg.d)


def test_fallback_masks_fifteen_percent_of_sql(tiny, codebook):
    prep = tiny.prepared[0].copy()
    prep.sql_ids = prep.sql_ids[:20].copy()
    sample = mask_for_pretraining(prep, [], np.random.default_rng(0), codebook)
    assert int((sample.prepared.sql_ids == MASK_ID).sum()) == 3
    assert [m for m, _, _ in sample.targets] == ["sql"] * 3


def test_masking_is_seeded_and_leaves_the_rest_alone(small_dataset, tiny, codebook):
    rec = tiny.labeled[0]
    prep = tiny.prepared[0]
    before = prep.copy()
    pairs = match_critical_spans(rec)
    a = mask_for_pretraining(prep, pairs, np.random.default_rng(9), codebook)
    b = mask_for_pretraining(prep, pairs, np.random.default_rng(9), codebook)
    np.testing.assert_array_equal(a.prepared.sql_ids, b.prepared.sql_ids)
    np.testing.assert_array_equal(a.prepared.plan_ops, b.prepared.plan_ops)
    np.testing.assert_array_equal(prep.sql_ids, before.sql_ids)
    masked_sql = {p for m, p, _ in a.targets if m == "sql"}
    masked_nodes = {p for m, p, _ in a.targets if m == "plan"}
    keep = [i for i in range(len(prep.sql_ids)) if i not in masked_sql]
    np.testing.assert_array_equal(a.prepared.sql_ids[keep], prep.sql_ids[keep])
    assert np.all(a.prepared.sql_ids[sorted(masked_sql)] == MASK_ID)
    keep = [i for i in range(len(prep.plan_ops)) if i not in masked_nodes]
    np.testing.assert_array_equal(a.prepared.plan_ops[keep], prep.plan_ops[keep])
    np.testing.assert_array_equal(a.prepared.kpis, prep.kpis)
    assert all(np.all(np.isfinite(v)) for _, _, v in a.targets)


def test_side_coin_is_fair(tiny, codebook):
    rec, prep = tiny.labeled[0], tiny.prepared[0]
    pairs = [p for p in match_critical_spans(rec) if p.kind != "numeric"]
    rng = np.random.default_rng(2024)
    sides = [mask_for_pretraining(prep, pairs, rng, codebook).side for _ in range(10_000)]
    frac = sides.count("sql") / len(sides)
    assert 0.48 <= frac <= 0.52


def _model(tiny, seed=0):
    return PretrainModel(tiny.cfg, np.random.default_rng(seed)).eval()


def test_no_targets_means_no_prediction(tiny):
    m = _model(tiny)
    e_s, e_p, e_l, e_i = m.encode(tiny.batch)
    assert aggregate_and_predict(m.agg, e_s, e_p, e_l, []) is None
    total, terms = pretrain_loss(None, None, [], m.dec_i(e_i.pooled), tiny.batch.kpis)
    assert set(terms) == {"kpi"} and total.item() == terms["kpi"].item()


def test_prediction_width_is_d(tiny):
    m = _model(tiny)
    e_s, e_p, e_l, _ = m.encode(tiny.batch)
    pred = aggregate_and_predict(m.agg, e_s, e_p, e_l, [(0, "sql", 1), (1, "plan", 0), (2, "log", 4)])
    assert pred.shape == (3, tiny.cfg.d)


def test_perfect_prediction_and_reconstruction_score_zero():
    pred = T.as_tensor(np.arange(6.0).reshape(2, 3))
    kpis = np.ones((1, 2, 2))
    total, _ = pretrain_loss(pred, pred.data.copy(), ["sql", "log"], T.as_tensor(kpis), kpis)
    assert total.item() == 0.0


def _masked_batch(tiny, codebook, seed=0):
    pool = prepare_pool(tiny.labeled[:6], tiny.vocab, tiny.ds.norm, tiny.cfg)
    rng = np.random.default_rng(seed)
    return [mask_for_pretraining(p, p.meta["pairs"], rng, codebook, all_terms=True) for p in pool], pool


def test_untrained_loss_is_positive_and_reaches_all_encoders(tiny, codebook):
    m = _model(tiny).train()
    samples, pool = _masked_batch(tiny, codebook)
    total, terms = pretrain_step_loss(m, samples, pool, codebook, np.float64)
    assert total.item() > 0 and {"sql", "plan", "log", "kpi"} <= set(terms)
    total.backward()
    for prefix in ("enc_s/", "enc_p/", "enc_l/", "enc_i/"):
        grads = [p.grad for n, p in m.named_parameters() if n.startswith(prefix) and p.grad is not None]
        assert grads and any(np.any(g != 0) for g in grads), prefix


def test_empty_pool_rejected(tiny):
    with pytest.raises(InsufficientData):
        run_pretraining([], tiny.vocab, tiny.ds.norm, tiny.cfg, PretrainConfig())


def test_pool_preparation_drops_labels(tiny):
    assert all(p.impacts is None for p in prepare_pool(tiny.labeled[:5], tiny.vocab, tiny.ds.norm, tiny.cfg))


def _pretrain_bytes(tiny, records, path):
    cfg = PretrainConfig(epochs=1, batch=16, seed=4)
    m, hist = run_pretraining(records, tiny.vocab, tiny.ds.norm, tiny.cfg, cfg, dtype=np.float64)
    save_pretrained(m, path, tiny.vocab, tiny.ds.norm, cfg, hist)
    return path.read_bytes()


def test_pretraining_is_deterministic_and_label_free(tiny, tmp_path):
    recs = tiny.ds.records[:48]
    a = _pretrain_bytes(tiny, recs, tmp_path / "a.rck")
    assert a == _pretrain_bytes(tiny, recs, tmp_path / "b.rck")
    scrambled = [replace(r, impacts=None if r.impacts is None else r.impacts[::-1] + 0.3) for r in recs]
    assert a == _pretrain_bytes(tiny, scrambled, tmp_path / "c.rck")


def test_checkpoint_transfers_into_the_diagnosis_model(tiny, tmp_path):
    _pretrain_bytes(tiny, tiny.ds.records[:32], tmp_path / "p.rck")
    tensors, meta = load_pretrained(tmp_path / "p.rck")
    assert meta["history"] and meta["encoder"]["d"] == tiny.cfg.d
    model = RCRankModel(EncoderConfig.from_dict(meta["encoder"]), tiny.ds.catalog, seed=1)
    keys = transfer_weights(model, tensors)
    assert any(k.startswith("enc_s/") for k in keys)
    state = model.state_dict()
    for k in keys:
        np.testing.assert_array_equal(state[k], tensors[k])
    with pytest.raises(InvalidConfig):
        load_pretrained(_not_pretrained(tmp_path))


def _not_pretrained(tmp_path):
    path = tmp_path / "plain.rck"
    checkpoint.save(path, {"w": np.zeros(2)}, {"kind": "other"})
    return path


def test_loss_decreases_over_five_epochs(small_dataset, tmp_path):
    from rcrank.synthgen import GenConfig, generate_workload
    from rcrank.encoders import build_vocabulary

    ds = generate_workload(GenConfig(total=1000, labeled=100), seed=8)
    vocab = build_vocabulary(ds.records)
    cfg = EncoderConfig(vocab_size=len(vocab))
    _, hist = run_pretraining(ds.records, vocab, ds.norm, cfg, PretrainConfig(epochs=5, seed=0),
                              log_path=tmp_path / "log.csv")
    assert hist[-1]["total"] < hist[0]["total"]
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,L_SQL,L_PLAN,L_LOG,L_KPIs,L_total" and len(lines) == 6
