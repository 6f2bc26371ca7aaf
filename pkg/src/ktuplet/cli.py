"""Command-line entry point: ``ktuplet <command> [flags]``.

Settings resolve as built-in defaults, then ``--config`` (a JSON object keyed
by flag name), then explicit flags. Every JSON output embeds the resolved
settings. Files are written atomically.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from ktuplet import checkpoint
from ktuplet.comparator import Comparator, ComparatorConfig, train_comparator
from ktuplet.dataset import atomic_write_text, format_csv, load_csv, select_classes, synth_gaussian
from ktuplet.embedding import DEFAULT_EMBED_DIM, DEFAULT_HIDDEN, EmbeddingModel, TrainConfig, train_embedding
from ktuplet.errors import ConfigError, KTupletError
from ktuplet.evaluator import evaluate

DEFAULTS = {
    "gen-data": {"classes": 20, "per_class": 50, "dim": 16, "spread": 0.15, "seed": 0, "out": None},
    "train-embed": {
        "data": None,
        "train_classes": None,
        "hidden": ",".join(str(h) for h in DEFAULT_HIDDEN),
        "embed_dim": DEFAULT_EMBED_DIM,
        "seed": 0,
        "init_seed": None,
        "batch_size": 64,
        "k_neg": 5,
        "margin": 0.5,
        "epochs": 100,
        "switch_epoch": 80,
        "steps_per_epoch": None,
        "lr": 0.001,
        "decay_every": 40,
        "decay_factor": 0.5,
        "eq2_verbatim": False,
        "trace": None,
        "out": None,
    },
    "train-comparator": {
        "data": None,
        "train_classes": None,
        "embedding": None,
        "hidden": 64,
        "seed": 0,
        "init_seed": None,
        "ways": 5,
        "shots": 1,
        "queries": 15,
        "episodes_per_batch": 4,
        "batches_per_epoch": 10,
        "epochs": 100,
        "lr": 0.001,
        "renorm_class_feature": False,
        "finetune_embedding": False,
        "embedding_out": None,
        "trace": None,
        "out": None,
    },
    "evaluate": {
        "data": None,
        "test_classes": None,
        "embedding": None,
        "untrained": False,
        "init_seed": 0,
        "comparator": None,
        "classifier": None,
        "seed": 0,
        "ways": 5,
        "shots": 1,
        "queries": 15,
        "episodes": 600,
        "renorm_class_feature": False,
        "workers": 1,
        "out": None,
    },
    "embed-dump": {"data": None, "classes": None, "embedding": None, "out": None},
}


def parse_classes(text) -> list[int] | None:
    """``"0-13"``, ``"1,4,7"`` or a mix such as ``"0-3,9"``."""
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return sorted({int(c) for c in text})
    out = set()
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                if hi < lo:
                    raise ValueError
                out.update(range(lo, hi + 1))
            else:
                out.add(int(part))
        except ValueError:
            raise ConfigError(f"bad class list entry {part!r}") from None
    if not out:
        raise ConfigError("empty class list")
    return sorted(out)


def _parse_dims(text) -> list[int]:
    if isinstance(text, int):
        return [text]
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    try:
        dims = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad layer width list {text!r}") from None
    if any(d < 1 for d in dims):
        raise ConfigError("layer widths must be >= 1")
    return dims


def _opt(p, *flags, **kw):
    p.add_argument(*flags, default=argparse.SUPPRESS, **kw)


def _flag(p, *flags, help=None):
    p.add_argument(*flags, action="store_true", default=argparse.SUPPRESS, help=help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ktuplet", description="K-tuplet metric learning and few-shot evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        _opt(p, "--config", help="JSON file of settings keyed by flag name")
        _opt(p, "--out", help=out_help)

    p = sub.add_parser("gen-data", help="write a synthetic Gaussian-blob dataset as CSV")
    common(p, "CSV path (stdout if omitted)")
    _opt(p, "--classes", type=int)
    _opt(p, "--per-class", type=int)
    _opt(p, "--dim", type=int)
    _opt(p, "--spread", type=float)
    _opt(p, "--seed", type=int, help="data seed")

    p = sub.add_parser("train-embed", help="train the embedding with the K-tuplet loss")
    common(p, "checkpoint path (required)")
    _opt(p, "--data", help="CSV dataset")
    _opt(p, "--train-classes", help="classes to train on, e.g. 0-13 (default: all)")
    _opt(p, "--hidden", help="comma-separated hidden widths")
    _opt(p, "--embed-dim", type=int)
    _opt(p, "--seed", type=int, help="tuplet sampling seed")
    _opt(p, "--init-seed", type=int, help="weight init seed (default: --seed)")
    _opt(p, "--batch-size", type=int)
    _opt(p, "--k-neg", type=int)
    _opt(p, "--margin", type=float)
    _opt(p, "--epochs", type=int)
    _opt(p, "--switch-epoch", type=int, help="first epoch of semi-hard training")
    _opt(p, "--steps-per-epoch", type=int)
    _opt(p, "--lr", type=float)
    _opt(p, "--decay-every", type=int)
    _opt(p, "--decay-factor", type=float)
    _flag(p, "--eq2-verbatim", help="select semi-hard terms with the literal >= margin condition")
    _opt(p, "--trace", help="also write the trace JSON here")

    p = sub.add_parser("train-comparator", help="train the similarity comparator on episodes")
    common(p, "checkpoint path (required)")
    _opt(p, "--data")
    _opt(p, "--train-classes")
    _opt(p, "--embedding", help="embedding checkpoint")
    _opt(p, "--hidden", type=int, help="hidden width before the 8-unit head")
    _opt(p, "--seed", type=int, help="episode sampling seed")
    _opt(p, "--init-seed", type=int)
    _opt(p, "--ways", type=int)
    _opt(p, "--shots", type=int)
    _opt(p, "--queries", type=int)
    _opt(p, "--episodes-per-batch", type=int)
    _opt(p, "--batches-per-epoch", type=int)
    _opt(p, "--epochs", type=int)
    _opt(p, "--lr", type=float)
    _flag(p, "--renorm-class-feature")
    _flag(p, "--finetune-embedding", help="also update the embedding (needs --embedding-out)")
    _opt(p, "--embedding-out")
    _opt(p, "--trace")

    p = sub.add_parser("evaluate", help="episodic few-shot accuracy with a 95%% CI")
    common(p, "report path (stdout if omitted)")
    _opt(p, "--data")
    _opt(p, "--test-classes")
    _opt(p, "--embedding")
    _flag(p, "--untrained", help="use a freshly initialized embedding instead of --embedding")
    _opt(p, "--init-seed", type=int)
    _opt(p, "--comparator")
    _opt(p, "--classifier", choices=["euclid", "similarity"])
    _opt(p, "--seed", type=int, help="episode sampling seed")
    _opt(p, "--ways", type=int)
    _opt(p, "--shots", type=int)
    _opt(p, "--queries", type=int)
    _opt(p, "--episodes", type=int)
    _flag(p, "--renorm-class-feature")
    _opt(p, "--workers", type=int)

    p = sub.add_parser("embed-dump", help="write label,embedding rows as CSV")
    common(p, "CSV path (stdout if omitted)")
    _opt(p, "--data")
    _opt(p, "--classes")
    _opt(p, "--embedding")
    return parser


def resolve(command: str, ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    given = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    if getattr(ns, "config", None):
        with open(ns.config, encoding="utf-8") as fh:
            try:
                from_file = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{ns.config}: invalid JSON ({exc})") from None
        if not isinstance(from_file, dict):
            raise ConfigError(f"{ns.config}: expected a JSON object")
        for key, value in from_file.items():
            key = key.lstrip("-").replace("-", "_")
            if key not in cfg:
                raise ConfigError(f"{ns.config}: unknown setting {key!r} for {command}")
            cfg[key] = value
    cfg.update(given)
    return cfg


def _require(cfg, *keys):
    for key in keys:
        if cfg.get(key) in (None, ""):
            raise ConfigError(f"--{key.replace('_', '-')} is required")


def _emit(text: str, path) -> None:
    if path:
        atomic_write_text(path, text)
    else:
        sys.stdout.write(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _load_data(cfg, key):
    ds = load_csv(cfg["data"])
    classes = parse_classes(cfg.get(key))
    return ds if classes is None else select_classes(ds, classes)


def cmd_gen_data(cfg):
    ds = synth_gaussian(cfg["classes"], cfg["per_class"], cfg["dim"], cfg["spread"], cfg["seed"])
    _emit(format_csv(ds), cfg["out"])


def cmd_train_embed(cfg):
    _require(cfg, "data", "out")
    ds = _load_data(cfg, "train_classes")
    init_seed = cfg["seed"] if cfg["init_seed"] is None else cfg["init_seed"]
    dims = [ds.dim, *_parse_dims(cfg["hidden"]), cfg["embed_dim"]]
    model = EmbeddingModel.init(dims, np.random.default_rng(init_seed))
    config = TrainConfig(
        epochs=cfg["epochs"],
        switch_epoch=cfg["switch_epoch"],
        batch_size=cfg["batch_size"],
        k_neg=cfg["k_neg"],
        margin=cfg["margin"],
        lr=cfg["lr"],
        decay_every=cfg["decay_every"],
        decay_factor=cfg["decay_factor"],
        steps_per_epoch=cfg["steps_per_epoch"],
        eq2_verbatim=bool(cfg["eq2_verbatim"]),
    )
    model, trace = train_embedding(model, ds, config, np.random.default_rng(cfg["seed"]))
    checkpoint.save(model, cfg["out"])
    doc = {"command": "train-embed", "config": cfg, "trace": [asdict(r) for r in trace]}
    text = _json(doc)
    if cfg["trace"]:
        atomic_write_text(cfg["trace"], text)
    sys.stdout.write(text)


def cmd_train_comparator(cfg):
    _require(cfg, "data", "embedding", "out")
    if cfg["finetune_embedding"] and not cfg["embedding_out"]:
        raise ConfigError("--finetune-embedding needs --embedding-out")
    ds = _load_data(cfg, "train_classes")
    embedding = checkpoint.load(cfg["embedding"], expect="embedding")
    init_seed = cfg["seed"] if cfg["init_seed"] is None else cfg["init_seed"]
    comp = Comparator.init(embedding.dim, np.random.default_rng(init_seed), hidden=cfg["hidden"])
    config = ComparatorConfig(
        epochs=cfg["epochs"],
        batches_per_epoch=cfg["batches_per_epoch"],
        episodes_per_batch=cfg["episodes_per_batch"],
        ways=cfg["ways"],
        shots=cfg["shots"],
        queries=cfg["queries"],
        lr=cfg["lr"],
        renorm_class_feature=bool(cfg["renorm_class_feature"]),
        finetune_embedding=bool(cfg["finetune_embedding"]),
    )
    comp, trace = train_comparator(comp, embedding, ds, config, np.random.default_rng(cfg["seed"]))
    checkpoint.save(comp, cfg["out"])
    if config.finetune_embedding:
        checkpoint.save(embedding, cfg["embedding_out"])
    text = _json({"command": "train-comparator", "config": cfg, "trace": [asdict(r) for r in trace]})
    if cfg["trace"]:
        atomic_write_text(cfg["trace"], text)
    sys.stdout.write(text)


def cmd_evaluate(cfg):
    _require(cfg, "data")
    ds = _load_data(cfg, "test_classes")
    if cfg["untrained"]:
        model = EmbeddingModel.default(ds.dim, np.random.default_rng(cfg["init_seed"]))
    else:
        _require(cfg, "embedding")
        model = checkpoint.load(cfg["embedding"], expect="embedding")
    classifier = cfg["classifier"] or ("similarity" if cfg["comparator"] else "euclid")
    cfg["classifier"] = classifier
    comparator = None
    if classifier == "similarity":
        _require(cfg, "comparator")
        comparator = checkpoint.load(cfg["comparator"], expect="comparator")
    report = evaluate(
        model,
        comparator,
        ds,
        C=cfg["ways"],
        K_shot=cfg["shots"],
        n_query=cfg["queries"],
        num_episodes=cfg["episodes"],
        rng=cfg["seed"],
        renorm_class_feature=bool(cfg["renorm_class_feature"]),
        workers=cfg["workers"],
    )
    report.config = cfg
    _emit(report.to_json(), cfg["out"])


def cmd_embed_dump(cfg):
    _require(cfg, "data", "embedding")
    ds = _load_data(cfg, "classes")
    model = checkpoint.load(cfg["embedding"], expect="embedding")
    emb = model.forward(ds.features)
    lines = [
        ",".join([str(label)] + [repr(x) for x in row]) + "\n"
        for label, row in zip(ds.labels.tolist(), emb.tolist())
    ]
    _emit("".join(lines), cfg["out"])


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-embed": cmd_train_embed,
    "train-comparator": cmd_train_comparator,
    "evaluate": cmd_evaluate,
    "embed-dump": cmd_embed_dump,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = resolve(ns.command, ns)
        COMMANDS[ns.command](cfg)
    except BrokenPipeError:
        # downstream closed the pipe (e.g. `| head`)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (KTupletError, OSError, ValueError, TypeError, KeyError) as exc:
        print(f"ktuplet {ns.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
