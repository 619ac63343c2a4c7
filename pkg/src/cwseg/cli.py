"""Command line interface: train, transfer, predict, score, bench."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import plots
from .corpus import (
    FormatError,
    TaggedSentence,
    Vocab,
    _FIELD_SEP,
    build_vocab,
    from_bmes,
    load_embeddings_path,
    normalize,
    read_bakeoff_path,
    to_bmes,
    tokenize_raw,
)
from .metrics import format_report, score
from .model import ModelConfig, SegModel
from .nn import make_rng
from .train import MODES, TrainConfig, TrainingDiverged, benchmark, format_bench_table, train
from .transfer import TransferConfig, format_history, train_transfer

# keys a run-config file may set; anything else is a usage error
CONFIG_TYPES = {
    "dim": int,
    "window": int,
    "filter_size": int,
    "use_bigrams": bool,
    "bigram_min_count": int,
    "batch_size": int,
    "epochs": int,
    "teacher_epochs": int,
    "lr": float,
    "seed": int,
    "clip_norm": float,
    "mode": str,
    "threads": int,
    "mix": float,
}


def read_config_file(path):
    """Parse a key=value run-config file (UTF-8, # comments)."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError("expected key=value, got %r" % line, line=lineno)
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in CONFIG_TYPES:
                raise FormatError("unknown config key %r" % key, line=lineno)
            typ = CONFIG_TYPES[key]
            if typ is bool:
                low = val.lower()
                if low in ("true", "1", "yes"):
                    out[key] = True
                elif low in ("false", "0", "no"):
                    out[key] = False
                else:
                    raise FormatError("bad boolean %r for %s" % (val, key), line=lineno)
            else:
                try:
                    out[key] = typ(val)
                except ValueError:
                    raise FormatError("bad %s value %r for %s" % (typ.__name__, val, key),
                                      line=lineno)
    return out


def write_config_file(path, values):
    lines = ["# cwseg run configuration"]
    for key in sorted(values):
        v = values[key]
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append("%s=%s" % (key, s))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def effective_config(args):
    return {k: getattr(args, k) for k in CONFIG_TYPES if hasattr(args, k)}


def _load_tagged(path):
    return [to_bmes(normalize(s)) for s in read_bakeoff_path(path)]


def _model_config(args):
    return ModelConfig(
        dim=args.dim,
        window=args.window,
        filter_size=args.filter_size,
        use_bigrams=args.use_bigrams,
    )


def _add_model_args(p):
    p.add_argument("--dim", type=int, default=100, help="embedding and hidden size")
    p.add_argument("--window", type=int, default=5, help="context window width, odd")
    p.add_argument("--filter-size", type=int, default=2, help="encoder filter width")
    p.add_argument("--bigrams", dest="use_bigrams", action=argparse.BooleanOptionalAction,
                   default=True, help="use bigram embeddings")
    p.add_argument("--bigram-min-count", type=int, default=3,
                   help="minimum corpus count for a bigram embedding")


def _add_train_args(p):
    p.add_argument("--batch-size", type=int, default=16, help="sentences per mini-batch")
    p.add_argument("--epochs", type=int, default=10, help="training epochs")
    p.add_argument("--lr", type=float, default=0.01, help="Adam learning rate")
    p.add_argument("--seed", type=int, default=1, help="run seed")
    p.add_argument("--clip-norm", type=float, default=5.0,
                   help="global gradient-norm clip, 0 disables")


def _add_common(p):
    p.add_argument("--config", help="key=value run-config file; flags override it")
    p.add_argument("--save-config", help="write the effective run config to this file")


def cmd_train(args):
    sentences = _load_tagged(args.corpus)
    dev = _load_tagged(args.dev) if args.dev else None
    vocab = build_vocab(sentences, args.bigram_min_count)
    emb = None
    if args.embeddings:
        emb = load_embeddings_path(args.embeddings, vocab, args.dim,
                                   make_rng(args.seed, "embeddings"))
    model = SegModel.new(_model_config(args), vocab, args.seed, char_embeddings=emb)
    cfg = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr=args.lr,
        mode=args.mode,
        workers=args.threads,
        seed=args.seed,
        clip_norm=args.clip_norm,
    )
    report = train(
        model, sentences, cfg, dev=dev,
        on_epoch=lambda e, loss, secs: print("epoch %d loss %.6f (%.2fs)" % (e, loss, secs)),
    )
    model.save(args.model_out)
    print("saved model to %s" % args.model_out)
    if report.dev_f is not None:
        print("dev F %.2f" % (100.0 * report.dev_f))
    if args.save_vocab:
        with open(args.save_vocab, "w", encoding="utf-8") as f:
            json.dump(vocab.to_json_dict(), f, ensure_ascii=True, sort_keys=True)
    if args.save_config:
        write_config_file(args.save_config, effective_config(args))
    return 0


def cmd_transfer(args):
    high = _load_tagged(args.high)
    low = _load_tagged(args.low)
    dev = _load_tagged(args.dev) if args.dev else None
    teacher = SegModel.load(args.teacher) if args.teacher else None
    cfg = TransferConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        teacher_epochs=args.teacher_epochs,
        lr=args.lr,
        high_fraction=args.mix,
        seed=args.seed,
        clip_norm=args.clip_norm,
        bigram_min_count=args.bigram_min_count,
    )
    student, history, state, dev_f = train_transfer(
        high, low, _model_config(args), cfg, teacher=teacher, dev=dev,
        on_epoch=lambda r: print(
            "epoch %d loss %.6f e %.4f a %.4f w[%.6f..%.6f]"
            % (r.epoch, r.train_loss, r.error_rate, r.update_rate, r.w_min, r.w_max)
        ),
    )
    student.save(args.model_out)
    print("saved model to %s" % args.model_out)
    table = format_history(history)
    if args.history_out:
        with open(args.history_out, "w", encoding="utf-8") as f:
            f.write(table + "\n")
    else:
        print(table)
    if args.figures:
        plots.ensure_dir(args.figures)
        path = plots.similarity_figure(history, os.path.join(args.figures, "similarity.png"))
        print("wrote %s" % path)
    if dev_f is not None:
        print("dev F %.2f" % (100.0 * dev_f))
    if args.save_config:
        write_config_file(args.save_config, effective_config(args))
    return 0


def cmd_predict(args):
    model = SegModel.load(args.model)
    if args.vocab:
        with open(args.vocab, "r", encoding="utf-8") as f:
            supplied = Vocab.from_json_dict(json.load(f))
        if supplied.content_hash() != model.vocab.content_hash():
            raise ValueError(
                "vocab hash mismatch: model has %s, %s has %s"
                % (model.vocab.content_hash()[:12], args.vocab, supplied.content_hash()[:12])
            )
    with open(args.input, "rb") as f:
        text = f.read().decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    out_lines = []
    for line in lines:
        raw = "".join(_FIELD_SEP.split(line))
        if not raw:
            out_lines.append("")
            continue
        tokens, pieces = tokenize_raw(raw)
        tagged = model.predict(tokens)
        words = from_bmes(TaggedSentence(pieces, tagged.tags))
        out_lines.append(" ".join(words))
    payload = "\n".join(out_lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(payload)
    else:
        sys.stdout.write(payload)
    return 0


def cmd_score(args):
    gold = read_bakeoff_path(args.gold)
    pred = read_bakeoff_path(args.pred)
    print(format_report(score(gold, pred), tsv=args.tsv))
    return 0


def cmd_bench(args):
    sentences = _load_tagged(args.corpus)
    dev = _load_tagged(args.dev) if args.dev else None
    vocab = build_vocab(sentences, args.bigram_min_count)
    mcfg = _model_config(args)
    seed = args.seed

    def make_model():
        return SegModel.new(mcfg, vocab, seed)

    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in MODES:
            raise ValueError("unknown mode %r" % m)
    threads = [int(x) for x in args.threads_list.split(",") if x.strip()]
    cfg = TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        lr=args.lr,
        seed=seed,
        clip_norm=args.clip_norm,
    )
    rows = benchmark(make_model, sentences, cfg, modes, threads, eval_sentences=dev)
    table = format_bench_table(rows)
    print(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(table + "\n")
    if args.figures:
        plots.ensure_dir(args.figures)
        path = plots.bench_figure(rows, os.path.join(args.figures, "bench.png"))
        print("wrote %s" % path)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cwseg",
        description="Neural Chinese word segmentation toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = subs.add_parser("train", help="train a segmenter", formatter_class=fmt)
    p.add_argument("--corpus", required=True, help="segmented training corpus")
    p.add_argument("--dev", help="segmented held-out corpus")
    p.add_argument("--model-out", default="model.cwseg", help="output model file")
    p.add_argument("--embeddings", help="word2vec-text character embeddings")
    p.add_argument("--mode", choices=MODES, default="serial", help="training mode")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sync/async")
    p.add_argument("--save-vocab", help="also write the vocabulary as JSON")
    _add_model_args(p)
    _add_train_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)
    subparsers["train"] = p

    p = subs.add_parser("transfer", help="teacher-student transfer training",
                        formatter_class=fmt)
    p.add_argument("--high", required=True, help="high-resource segmented corpus")
    p.add_argument("--low", required=True, help="low-resource segmented corpus")
    p.add_argument("--dev", help="segmented held-out corpus")
    p.add_argument("--teacher", help="pre-trained teacher model file")
    p.add_argument("--model-out", default="student.cwseg", help="output model file")
    p.add_argument("--teacher-epochs", type=int, default=10,
                   help="epochs for the internally trained teacher")
    p.add_argument("--mix", type=float, default=0.5,
                   help="fraction of each mini-batch drawn from the high corpus")
    p.add_argument("--history-out", help="write the similarity history table here")
    p.add_argument("--figures", help="directory for rendered figures")
    _add_model_args(p)
    _add_train_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_transfer)
    subparsers["transfer"] = p

    p = subs.add_parser("predict", help="segment raw text", formatter_class=fmt)
    p.add_argument("--model", required=True, help="model file from train/transfer")
    p.add_argument("--input", required=True, help="one sentence per line")
    p.add_argument("--output", help="output file (default stdout)")
    p.add_argument("--vocab", help="vocabulary JSON to cross-check against the model")
    p.set_defaults(func=cmd_predict)
    subparsers["predict"] = p

    p = subs.add_parser("score", help="score predicted segmentation", formatter_class=fmt)
    p.add_argument("--gold", required=True, help="gold segmented corpus")
    p.add_argument("--pred", required=True, help="predicted segmented corpus")
    p.add_argument("--tsv", action="store_true", help="tab-separated output")
    p.set_defaults(func=cmd_score)
    subparsers["score"] = p

    p = subs.add_parser("bench", help="time training modes", formatter_class=fmt)
    p.add_argument("--corpus", required=True, help="segmented training corpus")
    p.add_argument("--dev", help="corpus for the final-F column (default: training set)")
    p.add_argument("--modes", default="serial,async", help="comma-separated modes")
    p.add_argument("--threads-list", default="1,2,4", help="comma-separated worker counts")
    p.add_argument("--out", help="write the table to this file")
    p.add_argument("--figures", help="directory for rendered figures")
    _add_model_args(p)
    _add_train_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_bench)
    subparsers["bench"] = p

    return parser, subparsers


def _apply_config(parser, subparsers, argv):
    """Seed parser defaults from --config before parsing, so explicit flags
    keep the last word."""
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
            break
        if tok.startswith("--config="):
            path = tok.split("=", 1)[1]
            break
    if path is None:
        return
    command = next((t for t in argv if not t.startswith("-")), None)
    sub = subparsers.get(command)
    if sub is None:
        return
    try:
        values = read_config_file(path)
    except FormatError as exc:
        parser.error("config %s: %s" % (path, exc))
    dests = {a.dest for a in sub._actions}
    sub.set_defaults(**{k: v for k, v in values.items() if k in dests})


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subparsers = build_parser()
    try:
        _apply_config(parser, subparsers, argv)
        args = parser.parse_args(argv)
        if getattr(args, "mode", None) == "serial" and getattr(args, "threads", 1) != 1:
            parser.error("--threads requires --mode sync or async")
        return args.func(args)
    except TrainingDiverged as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 4
    except (OSError, ValueError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
