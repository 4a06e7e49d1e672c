"""Command-line surface: gen / train / eval / tag / trace.

Exit codes: 0 success, 1 for I/O and validation failures, 2 for usage errors
(argparse's convention).  Train and gen accept a flat key=value config file;
any key can be overridden by the matching flag.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .controller import run_episode, trace_to_jsonl
from .corpus import (
    ConfigError,
    GenConfig,
    ValidationError,
    atomic_write_text,
    generate_corpus,
    read_corpus,
    with_tags,
    write_corpus,
    write_vocab,
)
from .encoder import VocabularyError
from .evaluation import evaluate, format_report
from .model import ModelDims
from .training import METRICS_COLUMNS, TrainConfig, TrainError, train

_USER_ERRORS = (
    OSError,
    ValidationError,
    ConfigError,
    CheckpointError,
    TrainError,
    VocabularyError,
)


def _pair(text):
    parts = text.split(",") if isinstance(text, str) else list(text)
    if len(parts) != 2:
        raise ValueError(f"expected LO,HI, got {text!r}")
    return (int(parts[0]), int(parts[1]))


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


GEN_KEYS = {
    "docs": int,
    "seed": int,
    "vocab_size": int,
    "trigger_pool": int,
    "shared_pool": int,
    "filler_pool": int,
    "paragraphs": _pair,
    "sentences_per_paragraph": _pair,
    "words_per_sentence": _pair,
    "events_per_doc": _pair,
}

TRAIN_KEYS = {
    "sup_epochs": int,
    "rl_epochs": int,
    "learning_rate": float,
    "batch_size": int,
    "reward_beta": float,
    "baseline_alpha": float,
    "seed": int,
    "clip_norm": float,
    "metrics_eval_docs": int,
    "vocab_size": int,
    "embed_dim": int,
    "word_hidden": int,
    "sent_hidden": int,
    "controller_hidden": int,
    "head_hidden": int,
    "word_only": _bool,
}


def parse_config_file(path, keys):
    """Flat key=value lines; blank lines and # comments are skipped."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in keys:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = keys[key](value.strip())
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: {e}") from e
    return values


def _merge(args, keys):
    """Config-file values overridden by explicitly-given flags."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(parse_config_file(args.config, keys))
    for key in keys:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    return merged


def _add_key_flags(parser, keys):
    for key, conv in keys.items():
        flag = "--" + key.replace("_", "-")
        if conv is _pair:
            parser.add_argument(flag, type=int, nargs=2, metavar=("LO", "HI"), default=None)
        elif conv is _bool:
            parser.add_argument(flag, action="store_const", const=True, default=None)
        else:
            parser.add_argument(flag, type=conv, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hiertag", description="hierarchical event-span tagger"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic labelled corpus")
    p.add_argument("--out", required=True, help="corpus JSONL path")
    p.add_argument("--vocab-out", default=None, help="also write the vocabulary file")
    p.add_argument("--config", default=None)
    _add_key_flags(p, GEN_KEYS)

    p = sub.add_parser("train", help="train on a labelled corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", default=None, help="per-epoch metrics CSV path")
    p.add_argument("--config", default=None)
    p.add_argument("--init-ckpt", default=None, help="continue from this checkpoint")
    _add_key_flags(p, TRAIN_KEYS)

    p = sub.add_parser("eval", help="report metrics for a checkpoint on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--report", choices=("text", "json"), default="text")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")

    p = sub.add_parser("tag", help="write predicted tags back onto a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("trace", help="step-by-step action trace for one document")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--doc-index", type=int, default=0)
    p.add_argument("--out", default=None, help="write JSONL here instead of stdout")
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _cmd_gen(args):
    cfg = GenConfig(**{k: tuple(v) if isinstance(v, list) else v
                       for k, v in _merge(args, GEN_KEYS).items()})
    docs = generate_corpus(cfg)
    write_corpus(docs, args.out)
    if args.vocab_out:
        write_vocab(args.vocab_out, cfg.vocab_size, cfg.trigger_pool)
    print(f"wrote {len(docs)} documents to {args.out}")
    return 0


def _metrics_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(METRICS_COLUMNS)
    for r in rows:
        writer.writerow(
            [r.epoch, r.phase, r.mean_loss, r.mean_reward, r.token_acc, r.span_f1,
             r.actions_per_word]
        )
    return buf.getvalue()


def _cmd_train(args):
    corpus = read_corpus(args.corpus)
    if not corpus:
        raise TrainError(f"no documents in {args.corpus}")
    values = _merge(args, TRAIN_KEYS)
    dim_keys = ("vocab_size", "embed_dim", "word_hidden", "sent_hidden",
                "controller_hidden", "head_hidden", "word_only")
    dim_values = {k: values.pop(k) for k in dim_keys if k in values}
    config = TrainConfig(**values)

    init_model = None
    dims = None
    if args.init_ckpt:
        init_model = load_checkpoint(args.init_ckpt)
        if dim_values:
            raise TrainError("dimension flags conflict with --init-ckpt")
    else:
        if "vocab_size" not in dim_values:
            dim_values["vocab_size"] = 1 + max(max(d.tokens) for d in corpus if d.tokens)
        dims = ModelDims(**dim_values)

    model, metrics = train(corpus, config, dims=dims, init_model=init_model)
    save_checkpoint(model, args.out)
    if args.metrics:
        atomic_write_text(args.metrics, _metrics_csv(metrics))
    for r in metrics:
        print(
            f"epoch {r.epoch:3d} [{r.phase}] loss={r.mean_loss:.4f} "
            f"reward={r.mean_reward:.4f} acc={r.token_acc:.4f} "
            f"f1={r.span_f1:.4f} apw={r.actions_per_word:.4f}"
        )
    print(f"wrote checkpoint to {args.out}")
    return 0


def _cmd_eval(args):
    corpus = read_corpus(args.corpus)
    model = load_checkpoint(args.ckpt)
    report = evaluate(corpus, model)
    if args.report == "json":
        text = json.dumps(report.to_dict(), indent=2) + "\n"
    else:
        text = format_report(report) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _episode(args, doc, model, rng):
    return run_episode(
        doc, model.encoder, model.controller,
        mode=args.mode, rng=rng, level_mask=model.level_mask,
    )


def _cmd_tag(args):
    corpus = read_corpus(args.corpus)
    model = load_checkpoint(args.ckpt)
    rng = np.random.default_rng(args.seed)
    tagged = [with_tags(doc, _episode(args, doc, model, rng).predicted_tags) for doc in corpus]
    write_corpus(tagged, args.out)
    print(f"tagged {len(tagged)} documents into {args.out}")
    return 0


def _cmd_trace(args):
    corpus = read_corpus(args.corpus)
    if not 0 <= args.doc_index < len(corpus):
        raise ValidationError("doc_index", f"corpus has {len(corpus)} documents")
    model = load_checkpoint(args.ckpt)
    rng = np.random.default_rng(args.seed)
    text = trace_to_jsonl(_episode(args, corpus[args.doc_index], model, rng)) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "tag": _cmd_tag,
    "trace": _cmd_trace,
}


def cli_main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
