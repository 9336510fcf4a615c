"""Acceptance checks, one test per criterion.

Criteria 4 to 7 share one set of trainings per seed on the default synthetic
benchmark (12,000 queries, 2,000 labeled, d=32); on a single core these take
a few hours in total. Each test records a PASS/FAIL line that is printed in
the terminal summary.
"""

import hashlib
import time
from pathlib import Path

import numpy as np
import pytest
from gradcases import OP_CASES

from rcrank.cli import main
from rcrank.diffcore import check_gradients, checkpoint, grad_check
from rcrank.domain.dataset import load_dataset, save_dataset, stored_splits
from rcrank.encoders import EncoderConfig, build_vocabulary, collate, prepare_record
from rcrank.evalkit import OracleModel, PretrainCache, TrainedPredictor, end_to_end_improvement, oracles, run_variant
from rcrank.evalkit import metrics as M
from rcrank.model import RCRankModel
from rcrank.synthgen import GenConfig, generate_workload, impact_from_runtimes
from rcrank.trainer import TrainConfig, loss_order, loss_valid, total_loss

SEEDS = (0, 1, 2)
TRAIN_EPOCHS = 50
SHORT_EPOCHS = 15
ABLATIONS = ("concat", "no_gate", "mse_only")


def _majority(wins):
    return sum(wins) >= 2


# 1: gradients


def _full_loss_case(seed):
    ds = generate_workload(GenConfig(total=40, labeled=20), seed=0)
    recs = ds.labeled()[:2]
    vocab = build_vocabulary(ds.records)
    cfg = EncoderConfig(d=8, vocab_size=len(vocab), dropout=0.0, sql_heads=2, plan_heads=2, max_len=32,
                        log_hidden=(16, 8), kpi_channels=(2, 2))
    batch = collate([prepare_record(r, vocab, ds.norm, cfg) for r in recs])
    model = RCRankModel(cfg, ds.catalog, seed=seed).eval()
    return (lambda: total_loss(batch.impacts, model(batch), TrainConfig())), model.parameters()


def test_criterion_1_gradient_fidelity(verdict):
    t0 = time.perf_counter()
    worst_op, worst_model, checked = 0.0, 0.0, 0
    for seed in range(5):
        for name, case in OP_CASES.items():
            fn, params = case(np.random.default_rng(seed))
            worst_op = max(worst_op, grad_check(fn, params, fd_step=1e-3))
        fn, params = _full_loss_case(seed)
        res = check_gradients(fn, params, fd_step=1e-3, per_param=1, rng=np.random.default_rng(seed),
                              smooth_only=True)
        worst_model = max(worst_model, res.max_error)
        checked += res.checked
    elapsed = time.perf_counter() - t0
    ok = worst_op < 1e-4 and worst_model < 1e-4 and elapsed < 120.0
    verdict(1, ok, f"ops max err {worst_op:.2e}, full loss max err {worst_model:.2e} "
                   f"over {checked} coordinates, {elapsed:.0f} s")
    assert ok


# 2: worked loss and impact numbers


def test_criterion_2_worked_numbers(verdict):
    narrow = loss_order([0.40, 0.40 - 0.096], [0.40, 0.40 - 0.065]).item()
    wide = loss_order([0.40, 0.40 - 0.096], [0.40, 0.40 - 0.101]).item()
    valid = (loss_valid([0.05], [0.12]).item(), loss_valid([0.30], [0.05]).item())
    impact = impact_from_runtimes(1.5, 0.67)
    errs = [abs(narrow - 0.031), abs(wide), abs(valid[0] - 0.04), abs(valid[1] - 0.07),
            abs(impact - (1.5 - 0.67) / 1.5)]
    ok = max(errs) <= 1e-9 and round(impact, 4) == 0.5533
    verdict(2, ok, f"order hinge {narrow:.6f} / {wide:.1g}, impact {impact:.4f}, max err {max(errs):.1e}")
    assert ok


# 3: metrics versus brute force


def _random_case(rng, r):
    n = int(rng.integers(1, 9))
    if rng.random() < 0.5:  # coarse grid: ties in truth and in estimates
        return rng.integers(0, 8, (n, r)) / 10.0, rng.integers(0, 8, (n, r)) / 10.0
    return rng.uniform(0, 1, (n, r)), rng.uniform(0, 1, (n, r))


def test_criterion_3_metric_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, tied = 0.0, 0
    for r in (5, 10):
        for _ in range(200):
            y, yh = _random_case(rng, r)
            tied += any(len(set(row)) < r for row in np.vstack([y, yh]))
            pairs = [
                (M.v_acc(y, yh, 0.1), oracles.v_acc(y, yh, 0.1)),
                (M.top1_acc(y, yh, 0.1), oracles.top1_acc(y, yh, 0.1)),
                (M.mc_acc(y, yh, 0.1), oracles.mc_acc(y, yh, 0.1)),
                (M.kendall_tau(y, yh), oracles.kendall_tau(y, yh)),
                (M.top1_ir(y, yh), oracles.top1_ir(y, yh)),
                *zip(M.mse_with_std(y, yh), oracles.mse_with_std(y, yh)),
            ]
            worst = max(worst, max(abs(a - b) for a, b in pairs))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and tied > 0 and elapsed < 60.0
    verdict(3, ok, f"max deviation {worst:.1e} on 400 pairs ({tied} with ties), {elapsed:.1f} s")
    assert ok


# shared trainings for 4 to 7


class Bench:
    """Datasets, pretrained encoders and trained variants, built on first request."""

    def __init__(self):
        self.datasets, self.caches, self.runs, self.seconds = {}, {}, {}, {}

    def dataset(self, seed):
        if seed not in self.datasets:
            t0 = time.perf_counter()
            self.datasets[seed] = generate_workload(GenConfig(), seed=seed)
            self.caches[seed] = PretrainCache(self.datasets[seed])
            self.caches[seed].get(seed)
            self.seconds[seed] = time.perf_counter() - t0
        return self.datasets[seed]

    def run(self, seed, variant, epochs=TRAIN_EPOCHS):
        key = (seed, variant, epochs)
        if key not in self.runs:
            ds = self.dataset(seed)
            t0 = time.perf_counter()
            self.runs[key] = run_variant(ds, variant, seed, TrainConfig(epochs=epochs), self.caches[seed])
            if (variant, epochs) == ("full", TRAIN_EPOCHS):
                self.seconds[seed] += time.perf_counter() - t0
        return self.runs[key]


@pytest.fixture(scope="module")
def bench():
    return Bench()


@pytest.mark.slow
def test_criterion_4_learning_on_synthetic_data(bench, verdict):
    rows = []
    for seed in SEEDS:
        run, _ = bench.run(seed, "full")
        ds = bench.dataset(seed)
        tr, va, te = stored_splits(ds)
        rows.append((seed, run.test.top1_acc, run.test.v_acc, bench.seconds[seed], len(tr), len(va), len(te)))
    ok = all(t >= 0.60 and v >= 0.75 and s < 1800 for _, t, v, s, *_ in rows)
    detail = "; ".join(f"seed {s}: top1 {t:.3f} v_acc {v:.3f} ({sec / 60:.0f} min, {a}/{b}/{c})"
                       for s, t, v, sec, a, b, c in rows)
    verdict(4, ok, detail)
    assert ok


@pytest.mark.slow
def test_criterion_5_ablation_direction(bench, verdict):
    wins = {"concat_tau": [], "concat_top1": [], "no_gate_top1": [], "mse_only_mc": []}
    for seed in SEEDS:
        full = bench.run(seed, "full")[0].test
        concat, no_gate, mse_only = (bench.run(seed, v)[0].test for v in ABLATIONS)
        wins["concat_tau"].append((full.tau, concat.tau))
        wins["concat_top1"].append((full.top1_acc, concat.top1_acc))
        wins["no_gate_top1"].append((full.top1_acc, no_gate.top1_acc))
        wins["mse_only_mc"].append((full.mc_acc, mse_only.mc_acc))
    ok = all(_majority([a > b for a, b in pairs]) for pairs in wins.values())
    verdict(5, ok, "; ".join(f"{k} {sum(a > b for a, b in pairs)}/3 ("
                             + ", ".join(f"{a:.3f} vs {b:.3f}" for a, b in pairs) + ")"
                             for k, pairs in wins.items()))
    assert ok


@pytest.mark.slow
def test_criterion_6_pretraining_helps(bench, verdict):
    pairs = []
    for seed in SEEDS:
        with_pt = bench.run(seed, "full", SHORT_EPOCHS)[0].val.top1_acc
        scratch = bench.run(seed, "no_pretrain", SHORT_EPOCHS)[0].val.top1_acc
        pairs.append((with_pt, scratch))
    ok = _majority([a >= b for a, b in pairs])
    verdict(6, ok, ", ".join(f"{a:.3f} vs {b:.3f}" for a, b in pairs))
    assert ok


@pytest.mark.slow
def test_criterion_7_revision_loop(bench, verdict):
    rows = []
    for seed in SEEDS:
        ds = bench.dataset(seed)
        _, res = bench.run(seed, "full")
        test = stored_splits(ds)[2].records
        model = end_to_end_improvement(TrainedPredictor(res.model, res.vocab, res.norm), test, ds.header["db"])
        oracle = end_to_end_improvement(OracleModel(ds.catalog), test, ds.header["db"])
        rows.append((model.improvement_pct, oracle.improvement_pct))
    ok = all(m >= 15.0 and o >= m for m, o in rows)
    verdict(7, ok, ", ".join(f"model {m:.1f}% oracle {o:.1f}%" for m, o in rows))
    assert ok


# 8: determinism and round trips


def _digests(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(Path(folder).iterdir()) if not p.name.endswith(".timing.json")}


def _pipeline(folder, monkeypatch):
    folder.mkdir()
    monkeypatch.chdir(folder)
    steps = [
        ["gen-data", "--seed", "11", "--set", "total=600", "--set", "labeled=150", "--out", "data.jsonl"],
        ["pretrain", "--data", "data.jsonl", "--epochs", "1", "--seed", "3", "--out", "pre.rck"],
        ["train", "--data", "data.jsonl", "--pretrained", "pre.rck", "--epochs", "2", "--seed", "3",
         "--out", "model.rck"],
        ["eval", "--model", "model.rck", "--data", "data.jsonl", "--report", "report.json"],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    return _digests(folder)


def _bytes_round_trip(path, tmp_path):
    ds = load_dataset(path)
    save_dataset(ds, tmp_path / "again.jsonl")
    return (tmp_path / "again.jsonl").read_bytes() == Path(path).read_bytes()


def _checkpoint_round_trip(path, tmp_path):
    tensors, meta = checkpoint.load(path)
    checkpoint.save(tmp_path / "again.rck", tensors, meta)
    return (tmp_path / "again.rck").read_bytes() == Path(path).read_bytes()


@pytest.mark.slow
def test_criterion_8_determinism_and_round_trips(tmp_path, monkeypatch, verdict):
    first = _pipeline(tmp_path / "a", monkeypatch)
    second = _pipeline(tmp_path / "b", monkeypatch)
    same = first == second
    trips = {
        "dataset": _bytes_round_trip(tmp_path / "a" / "data.jsonl", tmp_path),
        "pretrained": _checkpoint_round_trip(tmp_path / "a" / "pre.rck", tmp_path),
        "model": _checkpoint_round_trip(tmp_path / "a" / "model.rck", tmp_path),
    }
    ok = same and all(trips.values())
    verdict(8, ok, f"{len(first)} output files identical: {same}; round trips "
                   + ", ".join(f"{k} {'ok' if v else 'differs'}" for k, v in trips.items()))
    assert ok
