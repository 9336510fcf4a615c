from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rcrank.diffcore import Parameter, check_gradients
from rcrank.diffcore import tensor as T
from rcrank.domain.dataset import stored_splits
from rcrank.errors import InsufficientData, InvalidConfig, ShapeError
from rcrank.trainer import (
    LOG_COLUMNS,
    TrainConfig,
    diagnose,
    loss_order,
    loss_pred,
    loss_terms,
    loss_valid,
    predict,
    rank_estimates,
    total_loss,
    train,
)

# losses


def test_pred_loss_examples():
    assert loss_pred([0.5], [0.3]).item() == pytest.approx(0.04, abs=1e-12)
    assert loss_pred([0.5, 0.2], [0.5, 0.2]).item() == 0.0
    assert loss_pred([0.5, 0.2], [0.3, 0.5]).item() == pytest.approx(0.2**2 + 0.3**2, abs=1e-12)


def test_pred_loss_averages_over_queries():
    y = [[0.5, 0.2], [0.1, 0.1]]
    yh = [[0.3, 0.2], [0.1, 0.4]]
    assert loss_pred(y, yh).item() == pytest.approx((0.04 + 0.09) / 2, abs=1e-12)


def test_length_mismatch_is_a_shape_error():
    with pytest.raises(ShapeError):
        loss_pred([0.5, 0.1], [0.3])


def test_valid_loss_examples():
    assert loss_valid([0.05], [0.12]).item() == pytest.approx(0.04, abs=1e-12)
    assert loss_valid([0.30], [0.05]).item() == pytest.approx(0.07, abs=1e-12)
    assert loss_valid([0.30], [0.10 + 0.02]).item() == pytest.approx(0.0, abs=1e-15)


def test_order_loss_penalises_a_narrower_gap():
    y = [0.40, 0.40 - 0.096]
    assert loss_order(y, [0.40, 0.40 - 0.065]).item() == pytest.approx(0.031, abs=1e-9)
    assert loss_order(y, [0.40, 0.40 - 0.101]).item() == 0.0


def test_order_loss_sees_inversions_only_in_truth_mode():
    y, yh = [0.5, 0.2], [0.2, 0.5]
    assert loss_order(y, yh, "truth").item() == pytest.approx(0.6, abs=1e-12)
    assert loss_order(y, yh, "independent").item() == 0.0


def test_total_loss_combination():
    cfg = TrainConfig(lam=7.0)
    assert 0.04 + cfg.lam * (0.01 + 0.031) == pytest.approx(0.327, abs=1e-12)
    # y=0.3 valid, estimate 0.1 short of the margin by 0.01: valid hinge 0.01
    y, yh = [[0.3]], [[0.11]]
    terms = loss_terms(y, yh, cfg)
    assert terms["valid"].item() == pytest.approx(0.01, abs=1e-12)
    expected = terms["pred"].item() + 7.0 * (terms["valid"].item() + terms["order"].item())
    assert terms["total"].item() == pytest.approx(expected, abs=1e-12)


def test_zero_lambda_and_mse_variant_reduce_to_pred_loss():
    y, yh = [[0.3, 0.05]], [[0.05, 0.3]]
    pred = loss_pred(y, yh).item()
    assert total_loss(y, yh, TrainConfig(lam=0.0)).item() == pred
    assert total_loss(y, yh, TrainConfig(variant="mse_only")).item() == pred


def test_perfect_estimates_cost_nothing(small_dataset):
    y = np.stack([r.impacts for r in small_dataset.labeled()])
    assert total_loss(y, y.copy(), TrainConfig()).item() == 0.0


impact_rows = arrays(np.float64, (3, 5), elements=st.floats(0.0, 1.0))


@given(impact_rows, impact_rows)
def test_losses_are_non_negative(y, yh):
    cfg = TrainConfig()
    for name, value in loss_terms(y, yh, cfg).items():
        assert value.item() >= 0.0, name


# dyadic grid values so that shifting is exact and cannot create ties
grid_rows = arrays(np.int64, (3, 5), elements=st.integers(0, 64)).map(lambda a: a / 64.0)


@given(grid_rows, grid_rows, st.integers(-320, 320).map(lambda k: k / 64.0))
def test_order_loss_ignores_a_common_shift(y, yh, c):
    for mode in ("truth", "independent"):
        base = loss_order(y, yh, mode).item()
        assert loss_order(y + c, yh + c, mode).item() == pytest.approx(base, abs=1e-9)


def test_total_loss_gradient():
    rng = np.random.default_rng(0)
    y = rng.uniform(0.0, 1.0, (4, 5))
    y[np.abs(y - 0.10) < 0.02] = 0.5
    est = Parameter(rng.uniform(0.0, 1.0, (4, 5)))
    result = check_gradients(lambda: total_loss(y, est, TrainConfig()), [est], smooth_only=True)
    assert result.checked > 0 and result.max_error < 1e-4


# configuration


def test_config_validation():
    for bad in (dict(lam=-1.0), dict(epsilon=0.0), dict(eta=-0.1), dict(order_mode="sideways"),
                dict(variant="nope"), dict(batch=0)):
        with pytest.raises(InvalidConfig):
            TrainConfig(**bad).validate()
    cfg = TrainConfig(lam=3.0, seed=5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({"learning_rate": 1.0})


# diagnosis


CATALOG = ("rc0", "rc1", "rc2")


def test_ranking_filters_and_sorts():
    ranked = rank_estimates([0.55, 0.08, 0.20], CATALOG)
    assert [(n, v) for _, n, v in ranked.entries] == [("rc0", 0.55), ("rc2", 0.20)]


def test_ties_keep_catalog_order():
    assert [n for _, n, _ in rank_estimates([0.2, 0.2], CATALOG[:2]).entries] == ["rc0", "rc1"]


def test_nothing_above_threshold_gives_empty_diagnosis():
    ranked = rank_estimates([0.01, 0.05, 0.09], CATALOG)
    assert ranked.entries == [] and ranked.to_dict()["ranked"] == []
    assert "no root cause" in ranked.table()
    with pytest.raises(ShapeError):
        rank_estimates([0.3], CATALOG)


def test_diagnosis_matches_batched_prediction(tiny):
    model = tiny.model(seed=2)
    rec = tiny.labeled[0]
    a = diagnose(model, rec, tiny.vocab, tiny.ds.norm, eps=-np.inf)
    b = diagnose(model, rec, tiny.vocab, tiny.ds.norm, eps=-np.inf)
    assert a.to_dict() == b.to_dict()
    np.testing.assert_allclose(a.estimates, predict(model, tiny.prepared[:1])[0], rtol=0, atol=1e-12)
    values = [v for _, _, v in a.entries]
    assert values == sorted(values, reverse=True) and len(values) == len(tiny.ds.catalog)


def test_mismatched_kpi_shape_is_rejected(tiny):
    rec = replace(tiny.labeled[0], kpis=np.zeros((5, 60)))
    with pytest.raises(ShapeError):
        diagnose(tiny.model(), rec, tiny.vocab, tiny.ds.norm)


# training


def _fit(tiny, tmp_path=None, **over):
    train_set, val_set, _ = stored_splits(tiny.ds)
    cfg = TrainConfig(**{"epochs": 3, "batch": 16, "lr": 3e-3, "dropout": 0.0, "seed": 1, **over})
    log = None if tmp_path is None else tmp_path / "train.csv"
    return train(train_set, val_set, cfg, vocab=tiny.vocab, enc_cfg=tiny.cfg, log_path=log, dtype=np.float64)


def test_training_lowers_the_loss_and_logs(tiny, tmp_path):
    res = _fit(tiny, tmp_path, epochs=4)
    totals = [h["L_total"] for h in res.history]
    assert totals[-1] < totals[0]
    assert 1 <= res.best_epoch <= 4 and res.val_report is not None
    lines = (tmp_path / "train.csv").read_text().splitlines()
    assert lines[0].split(",") == LOG_COLUMNS and len(lines) == 5


def test_training_is_deterministic(tiny):
    a, b = _fit(tiny), _fit(tiny)
    assert a.val_report.to_dict() == b.val_report.to_dict()
    for k, v in a.model.state_dict().items():
        np.testing.assert_array_equal(v, b.model.state_dict()[k])


def test_training_without_pretraining_variant(tiny):
    res = _fit(tiny, epochs=1, variant="no_pretrain")
    assert res.pretrained_keys == [] and len(res.history) == 1


def test_empty_training_set(tiny):
    _, val_set, _ = stored_splits(tiny.ds)
    with pytest.raises(InsufficientData):
        train([], val_set, TrainConfig(epochs=1), catalog=tiny.ds.catalog, norm=tiny.ds.norm)


def test_unlabeled_records_are_refused(tiny):
    _, val_set, _ = stored_splits(tiny.ds)
    pool = [r for r in tiny.ds.records if not r.labeled][:5]
    with pytest.raises(InsufficientData):
        train(pool, val_set, TrainConfig(epochs=1), catalog=tiny.ds.catalog, norm=tiny.ds.norm)
