"""Command line entry point: ``ctxlab run | stats | gen-weights``."""

import argparse
import json
import logging
import sys

from .exceptions import CtxLabError
from .harness import RunConfig, corpus_stats, emit_report, load_corpus, render_report, render_stats, run_eval, write_records
from .model import ModelConfig, init_random, save_weights


def _model_config(path):
    if path is None:
        return ModelConfig()
    with open(path, encoding="utf-8") as fh:
        return ModelConfig.from_dict(json.load(fh))


def build_parser():
    parser = argparse.ArgumentParser(prog="ctxlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="evaluate one strategy on a JSONL corpus")
    src = run.add_mutually_exclusive_group()
    src.add_argument("--weights", help="weight container produced by gen-weights")
    src.add_argument("--seed", type=int, default=0, help="seed for random weights when --weights is absent")
    run.add_argument("--config", help="model config JSON used with --seed")
    run.add_argument("--pe", choices=("sinusoidal", "rope", "rerope"), default="rope")
    run.add_argument("--attn", choices=("naive", "flash", "paged", "streaming"), default="naive")
    run.add_argument("--window", type=int, default=512)
    run.add_argument("--leak-k", type=float, default=float("inf"))
    run.add_argument("--n-sink", type=int, default=4)
    run.add_argument("--block-size", type=int, default=16)
    run.add_argument("--tile", type=int, default=16)
    run.add_argument("--gen-len", type=int, default=100)
    run.add_argument("--max-blocks", type=int, default=None)
    run.add_argument("--no-stop-at-newline", dest="stop_at_newline", action="store_false",
                     help="score the raw generation instead of its first line")
    run.add_argument("--no-timing", dest="timing", action="store_false",
                     help="omit wall times so reports are byte-reproducible")
    run.add_argument("--corpus", required=True)
    run.add_argument("--out", help="report path (stdout if omitted)")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--records", help="optional JSONL file of per-task records")

    stats = sub.add_parser("stats", help="per-language token length statistics")
    stats.add_argument("--corpus", required=True)
    stats.add_argument("--format", choices=("csv", "json"), default="csv")

    gen = sub.add_parser("gen-weights", help="write seeded random weights")
    gen.add_argument("--config", help="model config JSON (defaults to the toy model)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    return parser


def _run(args):
    config = RunConfig(
        weights=args.weights, seed=args.seed, model_config=_model_config(args.config),
        pe=args.pe, attn=args.attn, window=args.window, leak_k=args.leak_k, n_sink=args.n_sink,
        block_size=args.block_size, tile=args.tile, gen_len=args.gen_len,
        stop_at_newline=args.stop_at_newline, max_blocks=args.max_blocks,
    )
    # Fit before loading tasks so bad strategy combinations fail first.
    config.estimator().fit()
    rows, records = run_eval(config, load_corpus(args.corpus), record_timing=args.timing)
    if args.out:
        emit_report(rows, args.format, args.out)
    else:
        sys.stdout.write(render_report(rows, args.format))
    if args.records:
        write_records(records, args.records)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        if args.command == "run":
            _run(args)
        elif args.command == "stats":
            sys.stdout.write(render_stats(corpus_stats(load_corpus(args.corpus)), args.format))
        else:
            save_weights(init_random(_model_config(args.config), args.seed), args.out)
    except (CtxLabError, OSError) as exc:
        print(f"ctxlab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
