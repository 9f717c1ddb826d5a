"""Command-line entry point: ``mmpms <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Errors are written
to stderr as one JSON object per line; results go to stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks
from .decoder import generate, generate_all, generate_all_batch
from .evalx import evaluate, export_representations, mapping_keywords, selection_stats
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from .vocab_data import (Vocab, build_vocab, decode_ids, encode_pairs, encode_text, read_corpus,
                         split_by_post, synth_corpus, write_corpus)

log = logging.getLogger("mmpms")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _echo_config(command: str, resolved: dict) -> None:
    sys.stderr.write(json.dumps({"command": command, "config": resolved}, sort_keys=True) + "\n")


def _config_flags(p: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(TrainConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=type(f.default), default=None)


def _resolve_config(args) -> TrainConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return TrainConfig.from_dict(values)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmpms", description="Multi-mapping conversation model with posterior mapping selection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="write a synthetic one-to-many corpus")
    p.add_argument("--posts", type=int, required=True)
    p.add_argument("--modes", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary file from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--max-size", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True, help="training corpus file")
    p.add_argument("--valid", help="validation corpus (default: hold out 10%% of training posts)")
    p.add_argument("--vocab", help="vocabulary file (default: built from the training corpus)")
    p.add_argument("--metrics", help="also write the per-epoch JSON lines here")
    p.add_argument("--out", required=True)
    _config_flags(p)

    p = sub.add_parser("generate", help="generate responses for one post")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--post", required=True)
    p.add_argument("--mapping", default="random", help="module index, 'random' or 'all'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=30)

    p = sub.add_parser("eval", help="automatic metrics on a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--multi", action="store_true", help="one response per mapping module")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("--workers", type=int, default=1, help="generation threads; results do not depend on it")

    p = sub.add_parser("grad-check", help="finite-difference gradient suite on a tiny model")
    p.add_argument("--config")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--param-scale", type=float, default=1.0,
                   help="redraw parameters from U(-s, s); 0 keeps the training initialisation")

    p = sub.add_parser("inspect", help="selection statistics, keywords and representation export")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--max-len", type=int, default=30)
    p.add_argument("--export", help="write candidate representations here")
    return parser


def _load(path):
    params, config, vocab = load_checkpoint(path)
    if vocab is None:
        raise ValueError(f"{path} carries no vocabulary")
    return params, config, vocab


def cmd_synth(args) -> None:
    _echo_config("synth-data", vars(args))
    write_corpus(synth_corpus(args.posts, args.modes, args.seed), args.out)


def cmd_build_vocab(args) -> None:
    _echo_config("build-vocab", vars(args))
    vocab = build_vocab(read_corpus(args.corpus), args.max_size)
    vocab.save(args.out)
    print(json.dumps({"vocab_size": len(vocab)}))


def cmd_train(args) -> None:
    config = _resolve_config(args)
    _echo_config("train", {**config.to_dict(), "corpus": args.corpus, "valid": args.valid,
                           "vocab": args.vocab, "out": args.out})
    rows = read_corpus(args.corpus)
    if args.valid:
        valid_rows = read_corpus(args.valid)
    else:
        rows, valid_rows = split_by_post(rows, [0.9, 0.1])
    vocab = Vocab.load(args.vocab) if args.vocab else build_vocab(rows, config.vocab_max)
    train_pairs = encode_pairs(rows, vocab, config.max_len)
    valid_pairs = encode_pairs(valid_rows, vocab, config.max_len)
    metrics_fh = open(args.metrics, "w", encoding="utf-8") if args.metrics else None

    def on_epoch(record):
        line = json.dumps(record)
        print(line, flush=True)
        if metrics_fh:
            metrics_fh.write(line + "\n")

    try:
        result = train(config, train_pairs, valid_pairs, len(vocab), on_epoch)
    finally:
        if metrics_fh:
            metrics_fh.close()
    save_checkpoint(result.params, config, args.out, vocab)


def cmd_generate(args) -> None:
    params, config, vocab = _load(args.ckpt)
    _echo_config("generate", {**vars(args), "model": config.to_dict()})
    ids = encode_text(args.post, vocab)
    if not ids:
        raise UsageError("--post must contain at least one token")
    rng = np.random.default_rng(args.seed)
    if args.mapping == "all":
        outs = generate_all(ids, params, args.max_len)
    else:
        mapping = "random" if args.mapping == "random" else int(args.mapping)
        if mapping != "random" and not 0 <= mapping < params.num_mappings:
            raise UsageError(f"--mapping must be in 0..{params.num_mappings - 1}, 'random' or 'all'")
        outs = [generate(ids, mapping, params, args.max_len, rng=rng)]
    for out in outs:
        print(decode_ids(out, vocab))


def cmd_eval(args) -> None:
    params, config, vocab = _load(args.ckpt)
    _echo_config("eval", {**vars(args), "model": config.to_dict()})
    pairs = encode_pairs(read_corpus(args.corpus), vocab, config.max_len)
    report = evaluate(params, vocab, pairs, multi=args.multi, max_len=args.max_len, seed=args.seed,
                      workers=args.workers)
    print(json.dumps(report.to_dict()))


def cmd_grad_check(args) -> int:
    overrides = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    config = checks.tiny_config(**overrides)
    scale = args.param_scale if args.param_scale > 0 else None
    _echo_config("grad-check", {**config.to_dict(), "epsilon": args.epsilon, "tolerance": args.tolerance,
                                "param_scale": scale})
    report = checks.run_suite(config, args.epsilon, args.tolerance, param_scale=scale)
    print(json.dumps(report))
    return 0 if report["passed"] else 2


def cmd_inspect(args) -> None:
    params, config, vocab = _load(args.ckpt)
    _echo_config("inspect", {**vars(args), "model": config.to_dict()})
    pairs = encode_pairs(read_corpus(args.corpus), vocab, config.max_len)
    out: dict = {}
    if pairs and all(p.mode_label is not None for p in pairs):
        out["selection_stats"] = selection_stats(params, pairs).to_dict()
    posts = list(dict.fromkeys(p.post for p in pairs))
    gens = generate_all_batch(params, posts, args.max_len)
    by_module = [[[vocab.id_to_token[i] for i in g[k]] for g in gens] for k in range(params.num_mappings)]
    out["mapping_keywords"] = [[{"word": w, "p": p, "count": n} for w, p, n in kws[:10]]
                               for kws in mapping_keywords(by_module, args.min_count)]
    if args.export:
        out["exported_records"] = export_representations(params, posts, args.export)
        out["export_path"] = args.export
    print(json.dumps(out))


COMMANDS = {"synth-data": cmd_synth, "build-vocab": cmd_build_vocab, "train": cmd_train,
            "generate": cmd_generate, "eval": cmd_eval, "grad-check": cmd_grad_check, "inspect": cmd_inspect}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = COMMANDS[args.command](args)
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return 1
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        _emit_error(type(exc).__name__, str(exc))
        return 2
    return int(code or 0)


def main() -> None:
    sys.exit(run())
