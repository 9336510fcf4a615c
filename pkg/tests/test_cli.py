import json

import numpy as np
import pytest

from rcrank.cli import main
from rcrank.domain.dataset import dumps_record, load_dataset, save_dataset
from rcrank.model import save_model


@pytest.fixture(scope="module")
def data_file(tmp_path_factory, small_dataset):
    path = tmp_path_factory.mktemp("cli") / "data.jsonl"
    save_dataset(small_dataset, path)
    return path


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_data_is_reproducible(tmp_path, capsys):
    for name in ("a.jsonl", "b.jsonl"):
        code, _, _ = _run(capsys, "gen-data", "--seed", 42, "--set", "total=60", "--set", "labeled=20",
                          "--out", tmp_path / name)
        assert code == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert len(load_dataset(tmp_path / "a.jsonl").labeled()) == 20


def test_echoed_config_reruns_the_command(tmp_path, capsys):
    out = tmp_path / "d.jsonl"
    assert _run(capsys, "gen-data", "--seed", 5, "--set", "total=40", "--set", "labeled=12", "--out", out)[0] == 0
    first = out.read_bytes()
    out.unlink()
    assert _run(capsys, "gen-data", "--config", f"{out}.config")[0] == 0
    assert out.read_bytes() == first


def test_eval_with_oracle_is_perfect(data_file, tmp_path, capsys):
    code, out, _ = _run(capsys, "eval", "--model", "oracle", "--data", data_file, "--report", tmp_path / "r.json")
    assert code == 0
    printed = json.loads(out)
    assert (printed["v_acc"], printed["top1_acc"], printed["mc_acc"]) == (1.0, 1.0, 1.0)
    assert printed["mse_mean"] == 0.0
    assert json.loads((tmp_path / "r.json").read_text())["tau"] == 1.0
    assert (tmp_path / "r.csv").exists() and (tmp_path / "r.timing.json").exists()


def test_diagnose_with_nothing_valid_prints_empty_list(tiny, tmp_path, capsys):
    model = tiny.model()
    for layer in model.heads.layers:
        layer.weight.data[:] = 0.0
    model.heads.layers[-1].bias.data[:] = -1.0
    save_model(model, tmp_path / "m.rck", tiny.vocab, tiny.ds.norm)
    (tmp_path / "q.json").write_text(dumps_record(tiny.labeled[0]) + "\n")
    code, out, _ = _run(capsys, "diagnose", "--model", tmp_path / "m.rck", "--query", tmp_path / "q.json")
    assert code == 0
    assert json.loads(out.splitlines()[0]) == []


def test_diagnose_lists_valid_causes_in_order(tiny, tmp_path, capsys):
    model = tiny.model(seed=4)
    save_model(model, tmp_path / "m.rck", tiny.vocab, tiny.ds.norm)
    (tmp_path / "q.json").write_text(dumps_record(tiny.labeled[1]) + "\n")
    code, out, _ = _run(capsys, "diagnose", "--model", tmp_path / "m.rck", "--query", tmp_path / "q.json",
                        "--set", "epsilon=-100")
    ranked = json.loads(out.splitlines()[0])
    assert code == 0 and len(ranked) == len(tiny.ds.catalog)
    impacts = [e["impact"] for e in ranked]
    assert impacts == sorted(impacts, reverse=True)


def test_missing_file_exits_2(tmp_path, capsys):
    code, _, err = _run(capsys, "eval", "--model", "oracle", "--data", tmp_path / "nope.jsonl",
                        "--report", tmp_path / "r.json")
    assert code == 2 and err.startswith("error: missing_file:") and len(err.strip().splitlines()) == 1


@pytest.mark.parametrize("argv", [
    ["gen-data", "--out", "x.jsonl", "--set", "bogus=1"],
    ["gen-data", "--out", "x.jsonl", "--set", "total=5", "--set", "labeled=10"],
    ["gen-data", "--no-such-flag"],
    [],
])
def test_validation_failures_exit_3(argv, tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = _run(capsys, *argv)
    assert code == 3 and err.startswith("error: ")


def test_bad_thread_setting_exits_3(data_file, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("RCRANK_THREADS", "many")
    code, _, _ = _run(capsys, "eval", "--model", "oracle", "--data", data_file, "--report", tmp_path / "r.json")
    assert code == 3
    monkeypatch.setenv("RCRANK_THREADS", "1")
    code, _, _ = _run(capsys, "eval", "--model", "oracle", "--data", data_file, "--report", tmp_path / "r.json")
    assert code == 0


def test_eval_rejects_unknown_split(data_file, tmp_path, capsys):
    code, _, _ = _run(capsys, "eval", "--model", "oracle", "--data", data_file, "--report", tmp_path / "r.json",
                      "--split", "holdout")
    assert code == 3


def test_divergent_training_exits_4(data_file, tmp_path, capsys):
    code, _, err = _run(capsys, "train", "--data", data_file, "--out", tmp_path / "m.rck", "--epochs", 3,
                        "--set", "lr=1e30", "--set", "batch=32")
    assert code == 4 and err.startswith("error: ")


def test_train_then_eval_round_trip(data_file, tmp_path, capsys):
    model = tmp_path / "m.rck"
    code, _, _ = _run(capsys, "train", "--data", data_file, "--out", model, "--epochs", 1, "--set", "batch=32")
    assert code == 0 and model.exists() and (tmp_path / "m.rck.log.csv").exists()
    code, out, _ = _run(capsys, "eval", "--model", model, "--data", data_file, "--report", tmp_path / "r.json")
    assert code == 0
    assert np.isfinite(json.loads(out)["mse_mean"])


def test_config_from_another_command_is_rejected(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("command = train\nout = x.jsonl\n")
    assert _run(capsys, "gen-data", "--config", tmp_path / "c.txt")[0] == 3
