"""``rcrank`` command-line entry point.

Every command resolves a flat key=value configuration (config file, then
``--set`` overrides, then explicit flags), rejects unknown keys, and writes
the resolved configuration next to its outputs so the run can be repeated with
``rcrank <command> --config <that file>``.

Exit codes: 0 success, 2 missing file, 3 validation failure, 4 training
divergence, 1 anything else. Failures print one line ``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .domain.dataset import load_dataset, pretrain_pool, record_from_doc, save_dataset, stored_splits
from .encoders import EncoderConfig, build_vocabulary
from .errors import InvalidConfig, NumericalError, RCRankError
from .evalkit.harness import OracleModel, PretrainCache, TrainedPredictor, evaluate, lambda_sweep, run_variants
from .evalkit.reports import write_comparison, write_metrics, write_sweep
from .model import load_model, save_model
from .pretrain import PretrainConfig, run_pretraining, save_pretrained, write_pretrain_log
from .synthgen.workload import GenConfig, gen_config_from_kv, generate_workload, parse_kv
from .trainer import TrainConfig, diagnose, train

EXIT_OK, EXIT_OTHER, EXIT_MISSING, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3, 4
THREADS_ENV = "RCRANK_THREADS"

_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}
_PRETRAIN_FIELDS = {f.name: f.type for f in fields(PretrainConfig) if f.name != "extra"}


class UsageError(InvalidConfig):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# configuration plumbing


def _coerce(value, kind, key):
    kind = kind if isinstance(kind, str) else getattr(kind, "__name__", str(kind))
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        if kind == "bool":
            low = str(value).strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(value)
            return low in ("1", "true", "yes")
    except ValueError:
        raise InvalidConfig(f"config key {key!r}: cannot parse {value!r} as {kind}") from None
    return str(value)


def _train_config(kv, skip=()):
    args = {}
    for k, v in kv.items():
        name = "lam" if k == "lambda" else k
        if name in _TRAIN_FIELDS and name not in skip:
            args[name] = _coerce(v, _TRAIN_FIELDS[name], k)
    return TrainConfig(**args).validate()


def _pretrain_config(kv, prefix=""):
    args = {}
    for k, v in kv.items():
        if k.startswith(prefix) and k[len(prefix):] in _PRETRAIN_FIELDS:
            name = k[len(prefix):]
            args[name] = _coerce(v, _PRETRAIN_FIELDS[name], k)
    cfg = PretrainConfig(**args)
    if cfg.epochs < 1 or cfg.batch < 1:
        raise InvalidConfig("pretraining epochs and batch must be positive")
    return cfg


def _resolve(args, allowed):
    """Merge config file, --set pairs and flags; reject keys outside ``allowed``."""
    kv = {}
    if args.config:
        kv.update(parse_kv(Path(args.config).read_text(encoding="utf-8")))
        echoed = kv.pop("command", args.command)
        if echoed != args.command:
            raise InvalidConfig(f"config file was written by {echoed!r}, not {args.command!r}")
    for item in args.set or ():
        kv.update(parse_kv(item))
    for key, value in vars(args).items():
        if key in ("command", "config", "set", "threads", "func") or value is None:
            continue
        kv[key.replace("-", "_")] = str(value)
    unknown = sorted(k for k in kv if not _allowed(k, allowed))
    if unknown:
        raise InvalidConfig(f"unknown config keys for {args.command}: {unknown}")
    return kv


def _allowed(key, allowed):
    return any(key == a or (a.endswith("*") and key.startswith(a[:-1])) for a in allowed)


def _require(kv, *keys):
    for k in keys:
        if not kv.get(k):
            raise InvalidConfig(f"missing required setting {k!r}")
    return [kv[k] for k in keys]


def _echo(kv, command, path):
    lines = [f"# rcrank {command} resolved configuration", f"command = {command}"]
    lines += [f"{k} = {kv[k]}" for k in sorted(kv)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _ints(text):
    return [int(x) for x in str(text).replace(" ", "").split(",") if x]


def _floats(text):
    return [float(x) for x in str(text).replace(" ", "").split(",") if x]


def _load(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return load_dataset(path)


# commands


def cmd_gen_data(args):
    kv = _resolve(args, set(GenConfig.__dataclass_fields__) | {"catalog", "seed", "out"})
    (out,) = _require(kv, "out")
    gen_kv = {k: v for k, v in kv.items() if k != "out"}
    cfg, seed = gen_config_from_kv(gen_kv)
    seed = 0 if seed is None else seed
    kv["seed"] = str(seed)
    ds = generate_workload(cfg, seed)
    save_dataset(ds, out)
    _echo(kv, args.command, f"{out}.config")
    print(f"wrote {len(ds.records)} records ({len(ds.labeled())} labeled) to {out}")


def cmd_pretrain(args):
    kv = _resolve(args, {"data", "out", *_PRETRAIN_FIELDS})
    data, out = _require(kv, "data", "out")
    ds = _load(data)
    cfg = _pretrain_config(kv)
    train_part, val_part, test_part = stored_splits(ds)
    pool = pretrain_pool(ds, (val_part, test_part))
    vocab = build_vocabulary(ds.records)
    q, t = np.asarray(ds.records[0].kpis).shape
    enc_cfg = EncoderConfig(vocab_size=len(vocab), q=q, t=t)
    model, history = run_pretraining(pool.records, vocab, train_part.norm, enc_cfg, cfg)
    save_pretrained(model, out, vocab, train_part.norm, cfg, history)
    write_pretrain_log(history, f"{out}.log.csv")
    _echo(kv, args.command, f"{out}.config")
    print(f"pretrained on {len(pool.records)} queries; final loss {history[-1]['total']:.6f}; wrote {out}")


def cmd_train(args):
    kv = _resolve(args, {"data", "out", "pretrained", "lambda", *_TRAIN_FIELDS})
    data, out = _require(kv, "data", "out")
    ds = _load(data)
    cfg = _train_config(kv)
    pretrained = kv.get("pretrained") or None
    if pretrained and not Path(pretrained).is_file():
        raise FileNotFoundError(f"no such file: {pretrained}")
    train_part, val_part, _ = stored_splits(ds)
    vocab = None if pretrained else build_vocabulary(ds.records)
    res = train(train_part, val_part, cfg, pretrained=pretrained, vocab=vocab, log_path=f"{out}.log.csv")
    save_model(res.model, out, res.vocab, res.norm, {"train": cfg.to_dict(), "best_epoch": res.best_epoch})
    _echo(kv, args.command, f"{out}.config")
    val = res.val_report
    summary = f"val top1_acc {val.top1_acc:.4f} v_acc {val.v_acc:.4f}" if val else "no validation split"
    print(f"best epoch {res.best_epoch}; {summary}; wrote {out}")


def _predictor(model_path, catalog):
    if model_path == "oracle":
        return OracleModel(catalog), 0.10
    if not Path(model_path).is_file():
        raise FileNotFoundError(f"no such file: {model_path}")
    model, vocab, norm, meta = load_model(model_path)
    eps = meta.get("extra", {}).get("train", {}).get("epsilon", 0.10)
    return TrainedPredictor(model, vocab, norm), eps


def cmd_eval(args):
    kv = _resolve(args, {"model", "data", "report", "split", "epsilon", "per_cell_mse"})
    model_path, data, report = _require(kv, "model", "data", "report")
    ds = _load(data)
    split = kv.get("split", "test")
    if split not in ("train", "val", "test", "all"):
        raise InvalidConfig(f"split must be train, val, test or all, got {split!r}")
    records = ds.labeled() if split == "all" else [r for r in ds.by_split(split) if r.labeled]
    if not records:
        raise InvalidConfig(f"no labeled records in split {split!r}")
    predictor, eps = _predictor(model_path, ds.catalog)
    if tuple(predictor.catalog) != tuple(ds.catalog):
        raise InvalidConfig("model and dataset root-cause catalogs differ")
    eps = float(kv.get("epsilon", eps))
    rep = evaluate(predictor, records, eps, _coerce(kv.get("per_cell_mse", "false"), "bool", "per_cell_mse"))
    base = report[:-5] if report.endswith(".json") else report
    write_metrics(rep, f"{base}.json", f"{base}.csv")
    _echo(kv, args.command, f"{base}.config")
    print(json.dumps({m: getattr(rep, m) for m in rep.METRICS} | {"n_queries": rep.n_queries}, sort_keys=True))


def _read_query(path, r):
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise InvalidConfig(f"{path} is empty")
    first = json.loads(lines[0])
    if isinstance(first, dict) and "catalog" in first:
        ds = load_dataset(path)
        if not ds.records:
            raise InvalidConfig(f"{path} holds no records")
        return ds.records[0]
    if len(lines) != 1:
        raise InvalidConfig(f"{path}: expected a single record")
    return record_from_doc(first, r)


def cmd_diagnose(args):
    kv = _resolve(args, {"model", "query", "epsilon"})
    model_path, query = _require(kv, "model", "query")
    if not Path(model_path).is_file():
        raise FileNotFoundError(f"no such file: {model_path}")
    model, vocab, norm, meta = load_model(model_path)
    eps = float(kv.get("epsilon", meta.get("extra", {}).get("train", {}).get("epsilon", 0.10)))
    rec = _read_query(query, len(model.catalog))
    result = diagnose(model, rec, vocab, norm, eps)
    print(json.dumps(result.to_dict()["ranked"]))
    print(result.table())


def _experiment_inputs(kv):
    data, out = _require(kv, "data", "out")
    ds = _load(data)
    cfg = _train_config(kv, skip=("seed", "variant"))
    pcache = PretrainCache(ds, _pretrain_config(kv, "pretrain_"))
    Path(out).mkdir(parents=True, exist_ok=True)
    return ds, cfg, pcache, Path(out)


_EXPERIMENT_KEYS = {"data", "out", "lambda", "pretrain_*", *(_TRAIN_FIELDS.keys() - {"variant"})}


def cmd_ablate(args):
    kv = _resolve(args, (_EXPERIMENT_KEYS - {"seed"}) | {"variants", "seeds", "svg"})
    ds, cfg, pcache, out = _experiment_inputs(kv)
    variants = [v for v in kv.get("variants", "full").split(",") if v]
    seeds = _ints(kv.get("seeds", "0"))
    table = run_variants(ds, variants, seeds, cfg, pcache)
    write_comparison(table, out, svg=_coerce(kv.get("svg", "false"), "bool", "svg"))
    _echo(kv, args.command, out / "config.txt")
    print((out / "comparison.txt").read_text(), end="")


def cmd_sweep_lambda(args):
    kv = _resolve(args, _EXPERIMENT_KEYS | {"values"})
    ds, cfg, pcache, out = _experiment_inputs(kv)
    values = _floats(kv.get("values", "1,3,5,7,10"))
    seed = int(kv.get("seed", 0))
    results = lambda_sweep(ds, values, seed, cfg, pcache)
    write_sweep(results, out)
    _echo(kv, args.command, out / "config.txt")
    print((out / "lambda_sweep.txt").read_text(), end="")


# parser


def build_parser():
    p = _Parser(prog="rcrank", description="Root-cause impact ranking for slow queries.")
    p.add_argument("--version", action="version", version=f"rcrank {__version__}")
    p.add_argument("--threads", type=int, help=f"cap numeric library threads (env {THREADS_ENV})")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, func, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="flat key = value configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
        sp.set_defaults(func=func)
        return sp

    sp = command("gen-data", cmd_gen_data, "generate a synthetic workload")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)

    sp = command("pretrain", cmd_pretrain, "pretrain the encoders")
    sp.add_argument("--data")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)

    sp = command("train", cmd_train, "train the full model")
    sp.add_argument("--data")
    sp.add_argument("--pretrained")
    sp.add_argument("--out")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--variant")

    sp = command("eval", cmd_eval, "evaluate a model (or 'oracle') on a dataset split")
    sp.add_argument("--model")
    sp.add_argument("--data")
    sp.add_argument("--report")
    sp.add_argument("--split")

    sp = command("diagnose", cmd_diagnose, "rank root causes for one query record")
    sp.add_argument("--model")
    sp.add_argument("--query")

    sp = command("ablate", cmd_ablate, "compare model variants over seeds")
    sp.add_argument("--data")
    sp.add_argument("--variants")
    sp.add_argument("--seeds")
    sp.add_argument("--out")

    sp = command("sweep-lambda", cmd_sweep_lambda, "train once per loss weight")
    sp.add_argument("--data")
    sp.add_argument("--values")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    return p


def _thread_limit(args):
    n = args.threads if args.threads is not None else os.environ.get(THREADS_ENV)
    if n is None:
        return None
    try:
        n = int(n)
    except ValueError:
        raise InvalidConfig(f"{THREADS_ENV} must be an integer, got {n!r}") from None
    if n < 1:
        raise InvalidConfig("thread count must be >= 1")
    return n


def _fail(category, message, code):
    text = " ".join(str(message).split())
    print(f"error: {category}: {text}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a command is required (try --help)")
        limit = _thread_limit(args)
        if limit is None:
            args.func(args)
        else:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=limit):
                args.func(args)
    except (FileNotFoundError, IsADirectoryError) as exc:
        return _fail("missing_file", exc.strerror and f"{exc.strerror}: {exc.filename}" or exc, EXIT_MISSING)
    except NumericalError as exc:
        return _fail(exc.category, exc, EXIT_DIVERGED)
    except RCRankError as exc:
        return _fail(exc.category, exc, EXIT_INVALID)
    except json.JSONDecodeError as exc:
        return _fail("parse_error", exc, EXIT_INVALID)
    except Exception as exc:  # noqa: BLE001 - last-resort single-line report
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_OTHER)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
