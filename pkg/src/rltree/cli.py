"""Command-line entry point: ``rltree train|eval|induce``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import Graph, ParameterStore
from .data import DataError, Example, attach_gold_trees, read_corpus
from .encoder import Vocab, load_embeddings
from .evaluation import bracketing_f1, branching_stats, format_table, format_tsv
from .model import REGIMES, Model, ModelConfig
from .tasks import TASKS
from .training import NumericAbort, TrainConfig, evaluate, rng_streams, train
from .trees import to_sexpr

log = logging.getLogger("rltree")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# model-shape flags; None means "take it from the checkpoint" in eval/induce
MODEL_FLAGS = {"dim": "dim", "emb_dim": "emb_dim", "tracking": "tracking",
               "track_dim": "track_dim", "policy_hidden": "policy_hidden",
               "head_hidden": "head_hidden", "tanh_cell": "tanh_cell"}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(text: str) -> bool:
    if text.lower() in ("on", "true", "1", "yes"):
        return True
    if text.lower() in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def build_parser() -> Parser:
    p = Parser(prog="rltree", description="Task-driven latent tree Tree LSTM encoders.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)
    common = Parser(add_help=False)
    common.add_argument("--task", choices=sorted(TASKS))
    common.add_argument("--regime", choices=REGIMES)
    common.add_argument("--checkpoint")
    common.add_argument("--out")
    common.add_argument("--gold-trees")
    common.add_argument("--unlabeled-trees", action="store_true", default=None,
                        help="gold trees carry no constituent labels")
    common.add_argument("--dim", type=int)
    common.add_argument("--emb-dim", type=int)
    common.add_argument("--tracking", type=_on_off, metavar="{on,off}")
    common.add_argument("--track-dim", type=int)
    common.add_argument("--policy-hidden", type=int)
    common.add_argument("--head-hidden", type=int)
    common.add_argument("--tanh-cell", type=_on_off, metavar="{on,off}")
    common.add_argument("--decode", choices=("greedy", "sample"))
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--config", help="config echo file from an earlier run")
    t.add_argument("--train")
    t.add_argument("--dev")
    t.add_argument("--test")
    t.add_argument("--embeddings")
    t.add_argument("--lr", type=float)
    t.add_argument("--l2", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--sup-epochs", type=int)
    t.add_argument("--baseline", type=_on_off, metavar="{on,off}")
    t.add_argument("--patience", type=int)
    t.add_argument("--restarts", type=int)
    t.add_argument("--log-wall-time", action="store_true", default=None,
                   help="fill the wall-time column (makes logs non-reproducible)")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--test", help="corpus to evaluate")
    e.add_argument("--dev", help="used when --test is absent")

    i = sub.add_parser("induce", parents=[common], help="write induced trees")
    i.add_argument("--test", help="one tokenized sentence per line")
    return p


TRAIN_DEFAULTS = {
    "task": "sentiment", "regime": "latent", "dim": 100, "emb_dim": 100, "tracking": None,
    "track_dim": 50, "policy_hidden": 64, "head_hidden": 200, "tanh_cell": False,
    "lr": 0.01, "l2": 0.0, "epochs": 10, "sup_epochs": 1, "baseline": False,
    "patience": None, "restarts": 1, "decode": "greedy",
}


def resolve_train_args(args) -> dict:
    """Merge config echo, defaults and explicit flags into one config dict."""
    cfg = dict(TRAIN_DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            cfg.update(json.load(f))
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose", "out"):
            continue
        if value is not None:
            cfg[key] = value
    if cfg.get("tracking") is None:
        cfg["tracking"] = cfg["task"] in ("entailment", "snli")
    if cfg.get("seed") is None:
        raise UsageError("--seed is required")
    for key in ("train", "dev"):
        if not cfg.get(key):
            raise UsageError(f"--{key} is required")
    if args.out:
        cfg["out"] = args.out
    if not cfg.get("out"):
        raise UsageError("--out is required")
    return cfg


def _model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(task=cfg["task"], regime=cfg["regime"], dim=cfg["dim"],
                       emb_dim=cfg["emb_dim"], tracking=cfg["tracking"],
                       track_dim=cfg["track_dim"], tanh_cell=cfg["tanh_cell"],
                       policy_hidden=cfg["policy_hidden"], head_hidden=cfg["head_hidden"])


def _load_corpus(path, task, gold=None, labeled=True) -> list[Example]:
    examples = read_corpus(path, task, labeled_trees=labeled)
    if gold:
        attach_gold_trees(examples, gold, labeled=labeled)
    return examples


def build_vocab(examples: list[Example], task: str) -> Vocab:
    vocab = Vocab()
    for ex in examples:
        for s in ex.sentences:
            for tok in s:
                vocab.add(tok)
        if task in ("generation", "imdb"):
            for tok in ex.target:
                vocab.add(tok)
    return vocab


def cmd_train(args) -> int:
    cfg = resolve_train_args(args)
    out = Path(cfg["out"])
    labeled = not cfg.get("unlabeled_trees", False)
    train_ex = _load_corpus(cfg["train"], cfg["task"], cfg.get("gold_trees"), labeled)
    dev_ex = _load_corpus(cfg["dev"], cfg["task"], None, labeled)
    vocab = build_vocab(train_ex, cfg["task"])
    labels = sorted({str(ex.target) for ex in train_ex}) if cfg["task"] in (
        "sentiment", "sst", "entailment", "snli") else []
    pretrained = load_embeddings(cfg["embeddings"], cfg["emb_dim"]) if cfg.get("embeddings") else None

    best = None
    for restart in range(cfg["restarts"]):
        seed = cfg["seed"] + restart
        streams = rng_streams(seed)
        model = Model(_model_config(cfg), vocab, labels).init_params(streams["init"], pretrained)
        try:
            train_set = [model.instance(ex) for ex in train_ex]
            dev_set = [model.instance(ex) for ex in dev_ex]
        except ValueError as e:
            raise DataError(cfg["dev"], [(0, str(e))]) from None
        tcfg = TrainConfig(regime=cfg["regime"], lr=cfg["lr"], l2=cfg["l2"],
                           sup_epochs=cfg["sup_epochs"], epochs=cfg["epochs"], seed=seed,
                           baseline=cfg["baseline"], task=cfg["task"], decode=cfg["decode"],
                           patience=cfg["patience"], log_wall_time=cfg.get("log_wall_time", False))
        result = train(model, train_set, dev_set, tcfg)
        higher = model.task.higher_is_better
        if best is None or (result.best_dev > best[1].best_dev if higher
                            else result.best_dev < best[1].best_dev):
            best = (model, result, tcfg, train_set)

    model, result, tcfg, train_set = best
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.tsv", "w", encoding="utf-8") as f:
        for entry in result.history:
            f.write(entry.line(tcfg.log_wall_time) + "\n")
    train_metric = evaluate(model, train_set, tcfg.decode).report
    meta = model.meta()
    meta["train"] = {"seed": tcfg.seed, "best_epoch": result.best_epoch}
    model.store.save(out / "checkpoint.bin", meta)
    echo = {k: v for k, v in cfg.items() if k != "out"}
    with open(out / "config.json", "w", encoding="utf-8") as f:
        json.dump(echo, f, indent=2, sort_keys=True)
        f.write("\n")
    summary = {"best_epoch": result.best_epoch, "dev_metric": result.best_dev,
               "train_metric": train_metric.value, "metric": model.task.metric,
               "seed": tcfg.seed, "skips": result.skips}
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"best epoch {result.best_epoch}: dev {model.task.metric} {result.best_dev:.6f}, "
          f"train {train_metric.value:.6f}; wrote {out}")
    return EXIT_OK


def load_model(args) -> Model:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    store, meta = ParameterStore.load(args.checkpoint)
    model_meta = dict(meta["model"])
    for flag, key in MODEL_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            model_meta[key] = value
    for key in ("task", "regime"):
        value = getattr(args, key, None)
        if value is not None and value != model_meta[key]:
            raise UsageError(f"--{key} {value} but the checkpoint was trained with {model_meta[key]}")
    meta = dict(meta, model=model_meta)
    model = Model.from_meta(meta)
    model.load_store(store)
    return model


def cmd_eval(args) -> int:
    model = load_model(args)
    path = args.test or args.dev
    if not path:
        raise UsageError("--test (or --dev) is required")
    labeled = not args.unlabeled_trees
    examples = _load_corpus(path, model.config.task, args.gold_trees, labeled)
    try:
        data = [model.instance(ex) for ex in examples]
    except ValueError as e:
        raise DataError(path, [(0, str(e))]) from None
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    ev = evaluate(model, data, args.decode or "greedy", rng)
    reports = [ev.report]
    golds = [t for ex in examples if ex.has_gold for t in ex.gold]
    if golds and all(t is not None for t in ev.trees) and all(ex.has_gold for ex in examples):
        reports.append(bracketing_f1(ev.trees, golds))
    if ev.trees and all(t is not None for t in ev.trees):
        reports.append(branching_stats(ev.trees))
    print(format_table(reports))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.tsv").write_text(format_tsv(reports), encoding="utf-8")
    return EXIT_OK


def cmd_induce(args) -> int:
    model = load_model(args)
    if model.policy is None:
        raise UsageError(f"checkpoint regime {model.config.regime!r} has no structure policy")
    if not args.test:
        raise UsageError("--test (sentences to parse) is required")
    if not args.out:
        raise UsageError("--out is required")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    lines = []
    with open(args.test, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            tokens = line.split()
            if not tokens:
                log.warning("%s:%d: empty sentence skipped", args.test, lineno)
                continue
            g = Graph(model.store)
            _, tree, _ = model.encode(g, model.vocab.encode(tokens), args.decode or "greedy", rng=rng)
            lines.append(to_sexpr(tree, tokens))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(l + "\n" for l in lines), encoding="utf-8")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "induce": cmd_induce}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"rltree: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"rltree: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as e:
        print(f"rltree: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericAbort as e:
        print(f"rltree: numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
