"""``vcr`` command line: train, eval, trace, synth.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure
during training, 4 I/O error (missing or corrupt files).
"""

import argparse
import csv
import os
import sys

import numpy as np

from vcr import checkpoint, config, data
from vcr.cost import export_trace
from vcr.model import NumericError, init_model
from vcr.tensor import Rng
from vcr.training import evaluate, run_forward, train_epochs

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4
METRIC_COLUMNS = ("epoch", "lambda", "train_bpt", "valid_bpt", "mean_m", "mean_m_sq", "equivalent_dim")


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


def load_stream(spec: config.DataSpec) -> data.TokenStream:
    """Build the split token stream (with annotations) described by a data spec."""
    try:
        if spec.level == "bit":
            if spec.encoding == "bytes":
                with open(spec.path, "rb") as fh:
                    stream = data.bytes_to_bits(fh.read())
            else:
                with open(spec.path, encoding="ascii") as fh:
                    stream = data.parse_bitstring(fh.read())
            if spec.buffer_k:
                stream, ann = data.insert_buffer_bits(stream, spec.buffer_k)
            else:
                ann = data.bit_annotations(len(stream), 8)
            stream = data.TokenStream(stream.tokens, stream.vocab, "bit", {}, ann)
        elif spec.level == "char":
            with open(spec.path, encoding="utf-8") as fh:
                stream = data.build_char_stream(fh.read(), spec.min_count)
        else:
            with open(spec.path, encoding="utf-8") as fh:
                stream = data.load_generic_tokens(fh.read())
        if spec.annotations:
            extra = data.read_annotations(spec.annotations)
            merged = data.merge_annotations(stream.annotations, extra)
            stream = data.TokenStream(stream.tokens, stream.vocab, stream.level, {}, merged)
        return data.split_corpus(stream, spec.splits)
    except OSError as exc:
        raise CliError(f"cannot read {spec.path}: {exc.strerror or exc}", EXIT_IO) from exc
    except (ValueError, UnicodeDecodeError) as exc:
        raise CliError(f"{spec.path}: {exc}", EXIT_CONFIG) from exc


def _fmt_metric(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_metrics(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in rows:
            w.writerow([_fmt_metric(row[c]) for c in METRIC_COLUMNS])


def read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def _seed_override(arg_seed):
    if arg_seed is not None:
        return arg_seed
    env = os.environ.get("VCR_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise CliError(f"VCR_SEED must be an integer, got {env!r}", EXIT_CONFIG) from None


def cmd_train(args):
    try:
        cfg = config.load(args.config, _seed_override(args.seed))
    except config.ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    stream = load_stream(cfg.data)
    penalty = cfg.penalty
    if penalty is not None and cfg.guide_flag:
        ann = stream.annotations
        if ann is None or cfg.guide_flag not in ann.flags:
            raise CliError(f"{args.config}: guide_flag {cfg.guide_flag!r} is not an annotation of this corpus",
                           EXIT_CONFIG)
        weights = np.where(ann.flags[cfg.guide_flag], cfg.guide_weight, 1.0)
        penalty = type(penalty)(penalty.m_bar, penalty.weight, penalty.mode, weights)

    out = cfg.output_dir
    try:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "config.ini"), "w", newline="\n") as fh:
            fh.write(config.effective_text(cfg))
        data.write_vocab(stream.vocab, os.path.join(out, "vocab.txt"))
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc.strerror}", EXIT_IO) from exc

    model = init_model(cfg.unit, cfg.hidden, stream.vocab_size, Rng(cfg.seed).split("init"),
                       scale=cfg.init_scale, scheduler_bias=cfg.scheduler_bias,
                       lam=cfg.train.lambda_start, epsilon=cfg.epsilon, use_bias=cfg.elman_bias)
    meta = dict(seed=cfg.seed, vocab=stream.vocab, level=stream.level,
                eval_streams=cfg.train.batch_size)
    best = {"valid": float("inf")}

    def on_epoch(m, row):
        checkpoint.save(os.path.join(out, "last.ckpt"), m, epoch=row["epoch"], **meta)
        if row["valid_bpt"] < best["valid"]:
            best["valid"] = row["valid_bpt"]
            checkpoint.save(os.path.join(out, "best.ckpt"), m, epoch=row["epoch"], **meta)
        if not args.quiet:
            print(f"epoch {row['epoch']} lambda {row['lambda']:g} train_bpt {row['train_bpt']:.4f} "
                  f"valid_bpt {row['valid_bpt']:.4f} mean_m {row['mean_m']:.4f} "
                  f"equivalent_dim {row['equivalent_dim']:.2f}", flush=True)

    try:
        if cfg.train.epochs == 0:
            for name in ("last.ckpt", "best.ckpt"):
                checkpoint.save(os.path.join(out, name), model, epoch=0, **meta)
        _, rows = train_epochs(model, stream, cfg.train, penalty, on_epoch=on_epoch)
        write_metrics(rows, os.path.join(out, "metrics.csv"))
    except NumericError as exc:
        raise CliError(f"numeric failure: {exc}", EXIT_NUMERIC) from exc
    except OSError as exc:
        raise CliError(f"cannot write to {out}: {exc.strerror}", EXIT_IO) from exc
    if rows and not args.no_plot:
        from vcr.plotting import plot_metrics

        plot_metrics(rows, os.path.join(out, "metrics.png"))
    return 0


def _load_checkpoint(path):
    try:
        return checkpoint.load(path)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc.strerror}", EXIT_IO) from exc
    except checkpoint.CheckpointError as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from exc


def _split_for(args, meta):
    cfg_path = args.config or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "config.ini")
    try:
        cfg = config.load(cfg_path)
    except config.ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    stream = load_stream(cfg.data)
    if tuple(stream.vocab) != tuple(meta["vocab"]):
        raise CliError(f"vocabulary mismatch: checkpoint has {len(meta['vocab'])} tokens, "
                       f"data from {cfg.data.path} has {len(stream.vocab)} (or a different order)",
                       EXIT_CONFIG)
    try:
        return stream.split(args.split)
    except KeyError as exc:
        raise CliError(str(exc.args[0]), EXIT_CONFIG) from None


def cmd_eval(args):
    model, meta = _load_checkpoint(args.checkpoint)
    split = _split_for(args, meta)
    res = evaluate(model, split.tokens, meta["eval_streams"])
    report = res.cost_report(split.annotations)
    text = f"split: {args.split}\nbits_per_token: {float(res.bits_per_token)!r}\n" + report.to_text()
    sys.stdout.write(text)
    if args.report:
        try:
            with open(args.report, "w", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            raise CliError(f"cannot write report {args.report}: {exc.strerror}", EXIT_IO) from exc
    return 0


def cmd_trace(args):
    model, meta = _load_checkpoint(args.checkpoint)
    if not model.is_vc:
        raise CliError(f"{args.checkpoint}: {model.unit} checkpoint has no scheduler to trace", EXIT_CONFIG)
    split = _split_for(args, meta)
    trace = run_forward(model, split.tokens)
    try:
        export_trace(trace, args.out, split.annotations)
    except OSError as exc:
        raise CliError(str(exc), EXIT_IO) from exc
    if not args.no_plot:
        from vcr.plotting import plot_trace

        labels = [data.escape_token(t) for t in meta["vocab"]]
        plot_trace(trace, os.path.splitext(args.out)[0] + ".png", split.annotations, labels=labels)
    return 0


def cmd_synth(args):
    try:
        os.makedirs(args.out, exist_ok=True)
        if args.kind == "buffer-bits":
            if args.input is None:
                raise CliError("buffer-bits needs --in <source file>", EXIT_CONFIG)
            if args.k < 0:
                raise CliError(f"--k must be non-negative, got {args.k}", EXIT_CONFIG)
            if not os.path.isfile(args.input):
                raise CliError(f"source file {args.input} does not exist", EXIT_IO)
            with open(args.input, "rb") as fh:
                raw = fh.read()
            try:
                stream, ann = data.insert_buffer_bits(data.bytes_to_bits(raw), args.k)
            except ValueError as exc:
                raise CliError(f"{args.input}: {exc}", EXIT_CONFIG) from exc
        else:
            if args.period < 1 or args.length < 1:
                raise CliError("--period and --length must be positive", EXIT_CONFIG)
            stream, ann = data.periodic_bits(args.length, args.period, args.seed or 0)
        with open(os.path.join(args.out, "corpus.bits"), "w", newline="\n") as fh:
            fh.write(data.format_bitstring(stream))
        data.write_annotations(stream, ann, os.path.join(args.out, "annotations.csv"))
    except OSError as exc:
        raise CliError(f"cannot write to {args.out}: {exc.strerror}", EXIT_IO) from exc
    print(f"wrote {len(stream)} bits to {os.path.join(args.out, 'corpus.bits')}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="vcr", description="Variable-computation recurrent language models.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from an INI config")
    t.add_argument("config")
    t.add_argument("--seed", type=int, default=None, help="override the config seed (beats VCR_SEED)")
    t.add_argument("--no-plot", action="store_true", help="skip metrics.png")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    for name, fn, helptext in (("eval", cmd_eval, "bits/token and cost report on a split"),
                               ("trace", cmd_trace, "per-step scheduler trace CSV")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("checkpoint")
        s.add_argument("--split", default="test" if name == "eval" else "valid",
                       choices=("train", "valid", "test"))
        s.add_argument("--config", default=None,
                       help="run config (default: config.ini next to the checkpoint)")
        if name == "eval":
            s.add_argument("--report", default=None, help="also write the report to this file")
        else:
            s.add_argument("--out", required=True)
            s.add_argument("--no-plot", action="store_true", help="skip the PNG next to the CSV")
        s.set_defaults(func=fn)

    y = sub.add_parser("synth", help="generate a synthetic bit corpus with an annotation sidecar")
    y.add_argument("kind", choices=("buffer-bits", "periodic"))
    y.add_argument("--k", type=int, default=8, help="buffer bits after each byte")
    y.add_argument("--in", dest="input", default=None, help="source file (buffer-bits)")
    y.add_argument("--period", type=int, default=8)
    y.add_argument("--length", type=int, default=8000)
    y.add_argument("--seed", type=int, default=None)
    y.add_argument("--out", required=True, help="output directory")
    y.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth" and args.seed is None:
            args.seed = _seed_override(None)
        return args.func(args)
    except CliError as exc:
        print(f"vcr {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
