"""Command-line orchestration: ingest, train, eval, sweep.

Every experiment is driven by one JSON config file; command-line flags
override config keys (flag > config > default). The resolved config's
fingerprint is stamped into every artifact a run writes. Exit codes:
0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import corpus, ppmi
from .container import read_container, write_container
from .errors import CheckpointError, CofactorError
from .factor import (Hyperparams, TrainData, load_checkpoint, run_label,
                     save_checkpoint, train)
from .predict_eval import (evaluate, save_report, sweep_lambda_s,
                           write_sweep_csv, write_trace_csv)
from .sdae import SdaeConfig

DEFAULT_CONFIG = {
    "paths": {"ratings": None, "clicks": None, "documents": None, "output_dir": "out"},
    "dataset_label": "data",
    "seed": 0,
    "synthetic": None,
    "subsample_fraction": 1.0,
    "split": {"mode": "in_matrix", "test_fraction": 0.2, "validation_fraction": 0.08},
    "hyper": {"n_factors": 64, "lambda_s": 1.0, "lambda_user": 0.01,
              "lambda_item": 10.0, "lambda_context": 0.01, "lambda_recon": 10.0,
              "lambda_decay": 1e-4, "max_epochs": 50, "patience": 5,
              "center_ratings": False},
    "text": {"enabled": True, "vocab_size": 8000, "bow_scheme": "tfidf",
             "hidden_widths": [200], "noise_rate": 0.3, "pretrain_epochs": 20,
             "learning_rate": 0.01},
    "sweep": {"lambda_s_grid": [0.001, 0.01, 0.1, 1.0, 10.0, 100.0],
              "sparsity_grid": [10, 20, 50, 80]},
    "flags": {"clicks_from_all": False, "clamp": None, "threads": 1,
              "deterministic": False},
}


class ConfigError(CofactorError):
    """Unusable run configuration (maps to exit code 2)."""


def _merge(base: dict, override: dict, context: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise ConfigError(f"unknown config key {context + key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, context + key + ".")
        else:
            out[key] = value
    return out


def load_config(path: str, overrides: argparse.Namespace) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user_cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    cfg = _merge(DEFAULT_CONFIG, user_cfg)
    if getattr(overrides, "seed", None) is not None:
        cfg["seed"] = overrides.seed
    if getattr(overrides, "threads", None) is not None:
        cfg["flags"]["threads"] = overrides.threads
    if getattr(overrides, "deterministic", False):
        cfg["flags"]["deterministic"] = True
    if getattr(overrides, "mode", None) is not None:
        cfg["split"]["mode"] = {"in": "in_matrix", "out": "out_of_matrix"}[overrides.mode]
    if getattr(overrides, "lambda_s_grid", None) is not None:
        cfg["sweep"]["lambda_s_grid"] = [float(x) for x in overrides.lambda_s_grid.split(",")]
    if getattr(overrides, "sparsity_grid", None) is not None:
        cfg["sweep"]["sparsity_grid"] = [float(x) for x in overrides.sparsity_grid.split(",")]
    if getattr(overrides, "clamp", None) is not None:
        lo, hi = (float(x) for x in overrides.clamp.split(","))
        cfg["flags"]["clamp"] = [lo, hi]
    if getattr(overrides, "clicks_from_all", False):
        cfg["flags"]["clicks_from_all"] = True
    if cfg["flags"]["deterministic"]:
        cfg["flags"]["threads"] = 1
    return cfg


def fingerprint(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["paths"]["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cache_dir(cfg: dict) -> Path:
    cache = _out_dir(cfg) / "cache"
    cache.mkdir(parents=True, exist_ok=True)
    return cache


def _require_path(cfg: dict, key: str) -> Path:
    value = cfg["paths"].get(key)
    if not value:
        raise ConfigError(f"config paths.{key} is not set")
    path = Path(value)
    if not path.exists():
        raise ConfigError(f"paths.{key} does not exist: {path}")
    return path


# ---------------------------------------------------------------- ingest

def _write_ratings_cache(cache: Path, ratings: corpus.RatingDataset) -> None:
    write_container(cache / "ratings.bin",
                    {"kind": "ratings", "user_ids": list(ratings.user_ids),
                     "item_ids": list(ratings.item_ids)},
                    {"users": ratings.users, "items": ratings.items,
                     "values": ratings.ratings})


def _write_clicks_cache(cache: Path, clicks: corpus.ClickDataset) -> None:
    write_container(cache / "clicks.bin",
                    {"kind": "clicks", "n_users": clicks.n_users,
                     "n_items": clicks.n_items},
                    {"users": clicks.users, "items": clicks.items})


def _write_docs_cache(cache: Path, docs: corpus.DocTermMatrix) -> None:
    write_container(cache / "docs.bin",
                    {"kind": "docs", "vocab": list(docs.vocab),
                     "n_items": docs.n_items},
                    {"data": docs.rows.data, "indices": docs.rows.indices,
                     "indptr": docs.rows.indptr})


def _ingest_synthetic(cfg: dict) -> int:
    blob = dict(cfg["synthetic"])
    if "encoder_hidden" in blob:
        blob["encoder_hidden"] = tuple(blob["encoder_hidden"])
    try:
        config = corpus.SyntheticConfig(**blob)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic config: {exc}") from None
    ratings, clicks, docs, _ = corpus.generate_synthetic(config, seed=cfg["seed"])
    cache = _cache_dir(cfg)
    _write_ratings_cache(cache, ratings)
    _write_clicks_cache(cache, clicks)
    _write_docs_cache(cache, docs)
    report = {"config": fingerprint(cfg), "synthetic": True,
              "n_users": ratings.n_users, "n_items": ratings.n_items,
              "n_ratings": ratings.n_entries, "n_clicks": clicks.n_entries,
              "vocab_size": docs.vocab_size}
    (cache / "ingest_report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    for key in sorted(report):
        print(f"{key}: {report[key]}")
    return 0


def cmd_ingest(cfg: dict) -> int:
    if cfg["synthetic"] is not None:
        return _ingest_synthetic(cfg)
    ratings_path = _require_path(cfg, "ratings")
    cache = _cache_dir(cfg)
    with open(ratings_path, "r", encoding="utf-8") as fh:
        ratings = corpus.parse_ratings(fh)
    _write_ratings_cache(cache, ratings)
    report = {"config": fingerprint(cfg), "n_users": ratings.n_users,
              "n_items": ratings.n_items, "n_ratings": ratings.n_entries}
    if cfg["paths"]["clicks"]:
        clicks_path = _require_path(cfg, "clicks")
        with open(clicks_path, "r", encoding="utf-8") as fh:
            clicks, dropped = corpus.parse_clicks(fh, ratings.user_index_map,
                                                  ratings.item_index_map)
        _write_clicks_cache(cache, clicks)
        report["n_clicks"] = clicks.n_entries
        report["n_clicks_dropped"] = dropped
    if cfg["paths"]["documents"] and cfg["text"]["enabled"]:
        docs_path = _require_path(cfg, "documents")
        with open(docs_path, "r", encoding="utf-8") as fh:
            docs = corpus.parse_documents(fh, cfg["text"]["vocab_size"],
                                          cfg["text"]["bow_scheme"],
                                          ratings.item_index_map)
        _write_docs_cache(cache, docs)
        report["vocab_size"] = docs.vocab_size
        report["n_documents"] = int((np.diff(docs.rows.indptr) > 0).sum())
    (cache / "ingest_report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    for key in sorted(report):
        print(f"{key}: {report[key]}")
    return 0


def _load_cached_ratings(cache: Path) -> corpus.RatingDataset:
    path = cache / "ratings.bin"
    if not path.exists():
        raise ConfigError(f"no ingested ratings at {path}; run `cofactor ingest` first")
    meta, arrays = read_container(path)
    return corpus.RatingDataset(
        n_users=len(meta["user_ids"]), n_items=len(meta["item_ids"]),
        users=arrays["users"], items=arrays["items"], ratings=arrays["values"],
        user_ids=tuple(meta["user_ids"]), item_ids=tuple(meta["item_ids"]))


def _load_cached_clicks(cache: Path) -> corpus.ClickDataset | None:
    path = cache / "clicks.bin"
    if not path.exists():
        return None
    meta, arrays = read_container(path)
    return corpus.ClickDataset(meta["n_users"], meta["n_items"],
                               arrays["users"], arrays["items"])


def _load_cached_docs(cache: Path) -> corpus.DocTermMatrix | None:
    path = cache / "docs.bin"
    if not path.exists():
        return None
    meta, arrays = read_container(path)
    vocab = tuple(meta["vocab"])
    rows = sp.csr_matrix((arrays["data"], arrays["indices"], arrays["indptr"]),
                         shape=(meta["n_items"], len(vocab)))
    return corpus.DocTermMatrix(n_items=meta["n_items"], vocab=vocab, rows=rows)


# ----------------------------------------------------------------- train

def _build_hyper(cfg: dict, docs: corpus.DocTermMatrix | None) -> Hyperparams:
    text = cfg["text"]
    sdae = None
    if text["enabled"]:
        if docs is None:
            raise ConfigError("text.enabled is true but no documents were ingested")
        hidden = list(text["hidden_widths"])
        k = cfg["hyper"]["n_factors"]
        widths = [docs.vocab_size, *hidden, k, *reversed(hidden), docs.vocab_size]
        sdae = SdaeConfig(layer_widths=widths, noise_rate=text["noise_rate"],
                          pretrain_epochs=text["pretrain_epochs"],
                          learning_rate=text["learning_rate"])
    return Hyperparams(sdae=sdae, seed=cfg["seed"], **cfg["hyper"])


def _prepare_data(cfg: dict, ratings: corpus.RatingDataset,
                  cached_clicks: corpus.ClickDataset | None,
                  docs: corpus.DocTermMatrix | None,
                  lambda_s: float) -> TrainData:
    if cfg["subsample_fraction"] < 1.0:
        ratings = corpus.subsample_ratings(ratings, cfg["subsample_fraction"], cfg["seed"])
    split = corpus.make_split(ratings, cfg["split"]["mode"],
                              cfg["split"]["test_fraction"],
                              cfg["split"]["validation_fraction"], cfg["seed"])
    ppmi_matrix = None
    if lambda_s > 0:
        if cached_clicks is not None:
            clicks = cached_clicks
        elif cfg["flags"]["clicks_from_all"]:
            clicks = corpus.binarize_ratings(ratings)
        else:
            clicks = corpus.binarize_ratings(split.train)
        counts = ppmi.cooccurrence_counts(clicks)
        ppmi_matrix = ppmi.build_ppmi(counts)
    return TrainData(split=split, ppmi=ppmi_matrix, docs=docs)


def cmd_train(cfg: dict, dry_run: bool = False) -> int:
    cache = _cache_dir(cfg)
    ratings = _load_cached_ratings(cache)
    docs = _load_cached_docs(cache) if cfg["text"]["enabled"] else None
    hyper = _build_hyper(cfg, docs)
    if dry_run:
        print(json.dumps(cfg, sort_keys=True, indent=2))
        widths = hyper.sdae.layer_widths if hyper.sdae else []
        print(f"planned: n_users={ratings.n_users} n_items={ratings.n_items} "
              f"n_ratings={ratings.n_entries} n_factors={hyper.n_factors} "
              f"layer_widths={widths} run={run_label(hyper)}")
        return 0
    data = _prepare_data(cfg, ratings, _load_cached_clicks(cache), docs, hyper.lambda_s)
    threads = cfg["flags"]["threads"]
    state, trace = train(data, hyper, threads=threads)
    out = _out_dir(cfg)
    fp = fingerprint(cfg)
    vocab = docs.vocab if docs is not None else ()
    save_checkpoint(out / "checkpoint.bin", state, hyper,
                    user_ids=ratings.user_ids, item_ids=ratings.item_ids,
                    vocab=vocab, config_fingerprint=fp,
                    best_validation_rmse=trace.best_validation_rmse)
    with open(out / "trace.csv", "w", encoding="utf-8", newline="") as fh:
        write_trace_csv(trace, fh, fp)
    print(f"run: {trace.label}")
    print(f"best epoch: {trace.best_epoch}")
    print(f"best validation rmse: {trace.best_validation_rmse:.6f}")
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    return 0


# ------------------------------------------------------------------ eval

def cmd_eval(cfg: dict, checkpoint: str) -> int:
    # --mode already folded into cfg["split"]["mode"] by load_config
    ckpt_path = Path(checkpoint)
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint does not exist: {ckpt_path}")
    state, hyper, meta = load_checkpoint(ckpt_path)
    cache = _cache_dir(cfg)
    ratings = _load_cached_ratings(cache)
    if (meta["n_users"], meta["n_items"]) != (ratings.n_users, ratings.n_items):
        raise CheckpointError(
            f"checkpoint is for {meta['n_users']}x{meta['n_items']} but data is "
            f"{ratings.n_users}x{ratings.n_items}")
    docs = _load_cached_docs(cache)
    data = _prepare_data(cfg, ratings, _load_cached_clicks(cache), docs, lambda_s=0.0)
    clamp = cfg["flags"]["clamp"]
    report = evaluate(state, data.split, docs,
                      clamp=tuple(clamp) if clamp else None,
                      config_fingerprint=fingerprint(cfg),
                      trace_ref=str(Path(cfg["paths"]["output_dir"]) / "trace.csv"))
    out = _out_dir(cfg)
    save_report(report, out / "report.txt", out / "report.csv",
                lambda_s=hyper.lambda_s, epoch=state.epoch)
    print(f"mode: {report.mode}")
    print(f"rmse: {report.rmse:.6f} over {report.n_predictions} predictions")
    return 0


# ----------------------------------------------------------------- sweep

def cmd_sweep(cfg: dict) -> int:
    cache = _cache_dir(cfg)
    ratings = _load_cached_ratings(cache)
    docs = _load_cached_docs(cache) if cfg["text"]["enabled"] else None
    cached_clicks = _load_cached_clicks(cache)
    hyper = _build_hyper(cfg, docs)
    threads = cfg["flags"]["threads"]
    out = _out_dir(cfg)
    fp = fingerprint(cfg)

    grid = cfg["sweep"]["lambda_s_grid"]
    if grid:
        data = _prepare_data(cfg, ratings, cached_clicks, docs, lambda_s=1.0)
        points = sweep_lambda_s(data, hyper, grid, threads=threads)
        with open(out / "sweep_lambda_s.csv", "w", encoding="utf-8", newline="") as fh:
            write_sweep_csv(points, fh, fp)
        print("lambda_s sweep:")
        for p in points:
            print(f"  lambda_s={p.lambda_s:<10g} validation={p.validation_rmse:.6f} "
                  f"test={p.test_rmse:.6f}")

    sparsity = cfg["sweep"]["sparsity_grid"]
    if sparsity:
        label = cfg["dataset_label"]
        rows = []
        pmf_hyper = dataclasses.replace(hyper, lambda_s=0.0, sdae=None)
        for pct in sparsity:
            sub_cfg = copy.deepcopy(cfg)
            sub_cfg["subsample_fraction"] = pct / 100.0
            data = _prepare_data(sub_cfg, ratings, cached_clicks, docs, hyper.lambda_s)
            joint_state, _ = train(data, hyper, threads=threads)
            joint_rmse = evaluate(joint_state, data.split, docs).rmse
            pmf_data = TrainData(split=data.split, ppmi=None, docs=None)
            pmf_state, _ = train(pmf_data, pmf_hyper, threads=threads)
            pmf_rmse = evaluate(pmf_state, data.split).rmse
            rows.append((f"{label}-{pct:g}", pct / 100.0, joint_rmse, pmf_rmse))
        with open(out / "sparsity.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("label,fraction,joint_test_rmse,pmf_test_rmse,config\n")
            for name, frac, joint_rmse, pmf_rmse in rows:
                fh.write(f"{name},{frac:g},{joint_rmse:.10g},{pmf_rmse:.10g},{fp}\n")
        print(f"{'subset':<12}{'joint':>10}{'pmf':>10}")
        for name, _, joint_rmse, pmf_rmse in rows:
            print(f"{name:<12}{joint_rmse:>10.4f}{pmf_rmse:>10.4f}")
    return 0


# ------------------------------------------------------------------ main

def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="JSON run config")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--threads", type=int, help="cap internal worker threads")
    parser.add_argument("--deterministic", action="store_true",
                        help="single-threaded, fixed reduction order")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cofactor",
        description="Joint factorization of ratings and co-click PPMI with a text anchor")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="parse and cache datasets")
    _add_common_flags(p_ingest)

    p_train = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common_flags(p_train)
    p_train.add_argument("--clicks-from-all", action="store_true",
                         help="derive clicks from all ratings, not just the train split")
    p_train.add_argument("--dry-run", action="store_true",
                         help="print the resolved config and planned dimensions, write nothing")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--mode", choices=["in", "out"],
                        help="prediction mode (default: config split mode)")
    p_eval.add_argument("--clamp", help="lo,hi clamp for predictions")

    p_sweep = sub.add_parser("sweep", help="lambda_s grid and sparsity curves")
    _add_common_flags(p_sweep)
    p_sweep.add_argument("--clicks-from-all", action="store_true")
    p_sweep.add_argument("--lambda-s-grid", help="comma-separated lambda_s values")
    p_sweep.add_argument("--sparsity-grid", help="comma-separated rating percentages")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "train":
            return cmd_train(cfg, dry_run=args.dry_run)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CofactorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
