"""Command-line pipeline: preprocess, similarity, train, evaluate, ablate.

Artifacts of a run live under ``<output>/<config_hash>/``. Exit codes: 0 on
success, 1 on usage/configuration errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from filelock import FileLock, Timeout

from ._random import substream_seed
from .config import FIELDS, ConfigError, RunConfig, parse_config
from .dataset import (InteractionLog, dataset_stats, kcore_filter, load_interactions, load_item_texts,
                      split_train_test)
from .estimators import check_interactions
from .evaluation import (METRIC_NAMES, dumps_report, evaluate_model, format_table, metrics_report,
                         percentage_increase)
from .experiment import ABLATION_KINDS, run_ablation, run_kind, similarity_from_source
from .graph import build_operator
from .models import forward, load_checkpoint, save_checkpoint, similarity_only_scores
from .training import jsonl_writer

logger = logging.getLogger("dualrec")

COMMANDS = ("preprocess", "similarity", "train", "evaluate", "ablate")


class MissingArtifact(RuntimeError):
    pass


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dualrec", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML file of run settings")
        for field in FIELDS:
            p.add_argument("--" + field.replace("_", "-"), dest=field, default=None, metavar="VALUE")
    return parser


# -- hashing and artifact io -----------------------------------------------------------

def _sha256(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, Path):
            h.update(part.read_bytes())
        elif isinstance(part, bytes):
            h.update(part)
        else:
            h.update(json.dumps(part, sort_keys=True).encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()


class RunDir:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.hash = cfg.config_hash()
        self.path = Path(cfg.output) / self.hash

    def __truediv__(self, name: str) -> Path:
        return self.path / name

    def require(self, name: str, command: str) -> Path:
        p = self / name
        if not p.exists():
            raise MissingArtifact(f"missing artifact {p}; run {command} first")
        return p

    def cached(self, stamp: str, digest: str) -> bool:
        p = self / stamp
        return p.exists() and p.read_text().strip() == digest

    def load_splits(self) -> tuple[InteractionLog, InteractionLog]:
        arrays = np.load(self.require("splits.npz", "preprocess"))
        ids = json.loads(self.require("ids.json", "preprocess").read_text(encoding="utf-8"))
        users, items = tuple(ids["users"]), tuple(ids["items"])
        return (InteractionLog(arrays["train_users"], arrays["train_items"], users, items),
                InteractionLog(arrays["test_users"], arrays["test_items"], users, items))

    def load_similarity(self) -> sp.csr_matrix:
        return sp.load_npz(self.require("similarity.npz", "similarity")).tocsr()


def _write_json(path: Path, obj) -> None:
    path.write_text(dumps_report(obj), encoding="utf-8")


# -- commands ------------------------------------------------------------------------

def cmd_preprocess(run: RunDir) -> None:
    cfg = run.cfg
    inputs = [Path(cfg.interactions)] + ([Path(cfg.item_texts)] if cfg.item_texts else [])
    digest = _sha256(*inputs, {k: getattr(cfg, k) for k in
                               ("min_interactions", "train_ratio", "seed", "interactions_format", "header")})
    if run.cached("preprocess.sha256", digest):
        logger.info("preprocess: inputs unchanged (hash %s), nothing to do", digest[:12])
        return
    log = load_interactions(cfg.interactions, cfg.interactions_format, cfg.header)
    log = kcore_filter(log, cfg.min_interactions)
    if len(log) == 0:
        raise RuntimeError(f"no interactions survive the {cfg.min_interactions}-core filter")
    train, test = split_train_test(log, cfg.train_ratio, substream_seed(cfg.seed, "split"))
    texts = load_item_texts(cfg.item_texts, log) if cfg.item_texts else None
    stats = dataset_stats(log, texts)
    np.savez(run / "splits.npz", train_users=train.users, train_items=train.items,
             test_users=test.users, test_items=test.items)
    (run / "ids.json").write_text(json.dumps({"users": list(log.user_ids), "items": list(log.item_ids)}),
                                  encoding="utf-8")
    _write_json(run / "stats.json", {"dataset": cfg.name, **stats.to_dict(),
                                     "n_train": len(train), "n_test": len(test)})
    (run / "preprocess.sha256").write_text(digest + "\n")
    logger.info("preprocess: %d users, %d items, %d interactions (density %.3g); %d train / %d test",
                stats.n_users, stats.n_items, stats.n_interactions, stats.density, len(train), len(test))


def cmd_similarity(run: RunDir) -> None:
    cfg = run.cfg
    pre = run.require("preprocess.sha256", "preprocess").read_text().strip()
    inputs = []
    if cfg.text_source in ("tfidf", "blend"):
        inputs.append(Path(cfg.item_texts))
    if cfg.text_source in ("external", "blend"):
        inputs.append(Path(cfg.vectors))
    digest = _sha256(pre, *inputs, {k: getattr(cfg, k) for k in
                                    ("text_source", "blend_alpha", "top_n", "threshold")})
    if run.cached("similarity.sha256", digest):
        logger.info("similarity: inputs unchanged (hash %s), nothing to do", digest[:12])
        return
    train, _ = run.load_splits()
    texts = load_item_texts(cfg.item_texts, train) if cfg.item_texts else None
    B = similarity_from_source(train, cfg.text_source, texts, cfg.vectors, cfg.blend_alpha,
                               cfg.top_n, cfg.threshold)
    sp.save_npz(run / "similarity.npz", B)
    (run / "similarity.sha256").write_text(digest + "\n")
    logger.info("similarity: %d edges over %d items", B.nnz, B.shape[0])


def _validation_for(cfg: RunConfig, test: InteractionLog):
    if cfg.validation == "test":
        logger.warning("TEST-MONITORED MODE: early stopping monitors the test split; metrics are optimistic")
        return test.to_csr()
    return None


def cmd_train(run: RunDir) -> None:
    cfg = run.cfg
    train, test = run.load_splits()
    B = run.load_similarity() if cfg.model in ("belightrec", "belightrec_w", "simonly") else None
    if cfg.model == "simonly":
        logger.info("simonly has no trainable parameters; nothing to train")
        return
    with (run / "train_log.jsonl").open("w", encoding="utf-8") as fh:
        _, model = run_kind(cfg.model, train, test, B, cfg.model_params(), cfg.ks,
                            validation=_validation_for(cfg, test), log=jsonl_writer(fh))
    save_checkpoint(run / "model.blck", model.state_, model.model_config)
    sp.save_npz(run / "fit_matrix.npz", model.fit_matrix_)
    h = model.history_
    _write_json(run / "history.json", {"epochs": h.epochs, "evaluations": h.evaluations,
                                       "best_metric": h.best_metric, "best_epoch": h.best_epoch,
                                       "stopped_early": h.stopped_early})
    logger.info("train: %d epochs, best recall@20 %.5f at epoch %d", len(h.epochs), h.best_metric, h.best_epoch)


def cmd_evaluate(run: RunDir) -> None:
    cfg = run.cfg
    train, test = run.load_splits()
    R_train = train.to_csr()
    if cfg.model == "simonly":
        B = run.load_similarity()
        scorer = lambda users: similarity_only_scores(R_train[users], B)  # noqa: E731
    else:
        ckpt = run / "model.blck"
        if not ckpt.exists():
            raise MissingArtifact(f"no checkpoint at {ckpt}; run train first")
        state, mconf = load_checkpoint(ckpt)
        op = None
        if mconf.propagates:
            R_fit = sp.load_npz(run.require("fit_matrix.npz", "train"))
            B = run.load_similarity() if mconf.use_semantic else None
            op = build_operator(R_fit, B, cfg.semantic_weighting, cfg.semantic_summand)
        e_u, e_i = forward(state, op, mconf)
        scorer = lambda users: e_u[users] @ e_i.T  # noqa: E731
    metrics = evaluate_model(scorer, R_train, check_interactions(test, shape=R_train.shape), cfg.ks)
    report = metrics_report(cfg.model, cfg.name, metrics, run.hash)
    _write_json(run / "metrics.json", report)
    (run / "metrics.txt").write_text(format_table({cfg.model: metrics}, cfg.name), encoding="utf-8")
    sys.stdout.write(format_table({cfg.model: metrics}, cfg.name))


def cmd_ablate(run: RunDir) -> None:
    cfg = run.cfg
    cmd_preprocess(run)
    cmd_similarity(run)
    train, test = run.load_splits()
    B = run.load_similarity()
    results = run_ablation(train, test, B, cfg.model_params(), cfg.ks, ABLATION_KINDS,
                           validation=_validation_for(cfg, test))
    _write_json(run / "ablation.json",
                {"dataset": cfg.name, "config_hash": run.hash,
                 "models": {k: metrics_report(k, cfg.name, m, run.hash) for k, m in results.items()}})
    table = format_table(results, cfg.name)
    (run / "ablation.txt").write_text(table, encoding="utf-8")
    rows = percentage_increase(results, "mfbpr")
    columns = ["model"] + [f"{metric}@{k}" for k in cfg.ks for metric in METRIC_NAMES]
    with (run / "ablation_increase.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: (row[c] if c == "model" else f"{row[c]:.4f}") for c in columns})
    sys.stdout.write(table)


HANDLERS = {"preprocess": cmd_preprocess, "similarity": cmd_similarity, "train": cmd_train,
            "evaluate": cmd_evaluate, "ablate": cmd_ablate}


def run_command(command: str, cfg: RunConfig) -> Path:
    """Run one pipeline step under an exclusive lock on the run directory."""
    run = RunDir(cfg)
    run.path.mkdir(parents=True, exist_ok=True)
    (run / "config.json").write_text(dumps_report(cfg.to_dict()), encoding="utf-8")
    try:
        with FileLock(str(run / ".lock"), timeout=0):
            HANDLERS[command](run)
    except Timeout:
        raise RuntimeError(f"run directory {run.path} is locked by another process") from None
    return run.path


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = {name: getattr(args, name) for name in FIELDS}
        cfg = parse_config(args.config, overrides)
    except (UsageError, ConfigError) as exc:
        print(f"dualrec: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        path = run_command(args.command, cfg)
    except (MissingArtifact, RuntimeError, ValueError, OSError, FloatingPointError) as exc:
        print(f"dualrec: error: {exc}", file=sys.stderr)
        return 2
    logger.info("%s: artifacts in %s", args.command, path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
