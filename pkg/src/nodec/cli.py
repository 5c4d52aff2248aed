"""Command-line experiment runner.

Subcommands: ``train`` (fit a controller, write checkpoint + loss history),
``evaluate`` (run controllers on identical initial states, write metrics and
summary tables), ``compare`` (merge runs, optionally assert metric
orderings), ``gen-graph`` (write the configured graph as an edge list).

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys

from .config import Config, ConfigError, PRESETS, load_config, parse_config_text
from .graphs import write_graph
from .pipelines import (PipelineError, build_graph, check_assertion,
                        compare_runs, run_evaluate, run_train)
from .solve import NumericalInstability

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _resolve_config(args):
    if args.config in PRESETS:
        cfg = parse_config_text(PRESETS[args.config], source=f"<preset:{args.config}>")
    else:
        cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        overrides = {k: cfg.values[k] for k in cfg.overridden}
        overrides["training.seed"] = args.seed
        overrides["eval.seed"] = args.seed
        cfg = Config(overrides)
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True,
                        help="config file path or preset name "
                             f"({', '.join(sorted(PRESETS))})")
    parser.add_argument("--seed", type=int, default=None,
                        help="override training.seed and eval.seed")
    parser.add_argument("--out", default="runs/latest", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nodec",
        description="Learned and analytic feedback control of networked dynamics")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a controller")
    _add_common(p_train)

    p_eval = sub.add_parser("evaluate", help="evaluate controllers on shared initial states")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", default=None,
                        help="checkpoint for the learned controller")

    p_cmp = sub.add_parser("compare", help="merge and compare finished runs")
    p_cmp.add_argument("runs", nargs="+", help="run directories with metrics.csv")
    p_cmp.add_argument("--assert", dest="assertion", default=None,
                       help="ordering assertion, e.g. 'peak:NODEC<RND<F'")
    p_cmp.add_argument("--out", default=None, help="write merged CSV here")

    p_gen = sub.add_parser("gen-graph", help="write the configured graph as an edge list")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    log = lambda msg: print(msg, flush=True)
    try:
        if args.command == "train":
            cfg = _resolve_config(args)
            run_train(cfg, args.out, log=log)
        elif args.command == "evaluate":
            cfg = _resolve_config(args)
            run_evaluate(cfg, args.checkpoint, args.out, log=log)
        elif args.command == "compare":
            merged, table = compare_runs(args.runs)
            print(table, end="")
            if args.out:
                from .metrics import write_metrics_csv
                write_metrics_csv(args.out, merged)
            if args.assertion:
                ok, message = check_assertion(args.assertion, merged)
                print(message)
                if not ok:
                    return EXIT_RUNTIME
        elif args.command == "gen-graph":
            cfg = (parse_config_text(PRESETS[args.config], source=args.config)
                   if args.config in PRESETS else load_config(args.config))
            graph = build_graph(cfg)
            write_graph(graph, args.out)
            print(f"wrote {graph.n} nodes, {graph.edge_count} edges to {args.out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, NumericalInstability) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
