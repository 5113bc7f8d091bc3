"""Command-line interface.

Subcommands:
    generate        sample a block-model dataset directory
    ingest          convert raw citation-corpus files into a dataset dir
    partition       assign a dataset's nodes to clients
    train           run the federated protocol for every configured seed
    analyze         emit closed-form bound/communication tables
    bench-channel   tabulate channel wire sizes and masking throughput
    sweep           grid over (iid_fraction, hops, seed) in worker processes
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .datasets import ingest_content_cites
from .errors import ConfigError, DatasetError
from .harness import (ExperimentConfig, run_analyze, run_bench_channel,
                      run_generate, run_partition, run_seed_group, run_sweep)

log = logging.getLogger("fedhop")


def _parse_floats(text):
    return [float(v) for v in text.split(",") if v != ""]


def _parse_ints(text):
    return [int(v) for v in text.split(",") if v != ""]


def build_parser():
    ap = argparse.ArgumentParser(
        prog="fedhop",
        description="Federated graph learning with one-shot neighbor aggregation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a block-model dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("ingest", help="convert content/cites files")
    p.add_argument("--content", required=True)
    p.add_argument("--cites", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-per-class", type=int, default=20)
    p.add_argument("--val-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=1000)

    p = sub.add_parser("partition", help="assign nodes to clients")
    p.add_argument("--data", required=True)
    p.add_argument("--clients", type=int, required=True)
    p.add_argument("--iid-fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run the federated protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=_parse_ints, default=None,
                   help="comma-separated, overrides config")
    p.add_argument("--hops", type=int, default=None, choices=(0, 1, 2),
                   help="overrides config")

    p = sub.add_parser("analyze", help="closed-form vs measured tables")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iid-fractions", type=_parse_floats, default=[0.0, 0.5, 1.0])

    p = sub.add_parser("bench-channel", help="wire-size and masking bench")
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", type=_parse_ints,
                   default=[1_000, 10_000, 100_000, 1_000_000])
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--elements", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="grid over iid_fraction x hops x seed")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iid-fractions", type=_parse_floats,
                   default=[0.0, 0.5, 1.0])
    p.add_argument("--hops", type=_parse_ints, default=[0, 1, 2])
    p.add_argument("--seeds", type=_parse_ints, default=None)
    p.add_argument("--workers", type=int, default=None)
    return ap


def _load_config(path, seeds=None, hops=None):
    cfg = ExperimentConfig.load(path)
    if seeds:
        cfg.seeds = seeds
    if hops is not None:
        cfg.hops = hops
        if hops > cfg.model.n_layers:
            raise ConfigError(f"hops={hops} exceeds model depth "
                              f"{cfg.model.n_layers}")
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            cfg = _load_config(args.config)
            graph, _ = run_generate(cfg, args.out, seed=args.seed)
            log.info("wrote %d nodes / %d edges to %s", graph.n_nodes,
                     graph.n_edges, args.out)
        elif args.command == "ingest":
            graph, _ = ingest_content_cites(
                args.content, args.cites, args.out,
                train_per_class=args.train_per_class,
                n_val=args.val_size, n_test=args.test_size)
            log.info("ingested %d nodes / %d edges / %d classes into %s",
                     graph.n_nodes, graph.n_edges, graph.n_classes, args.out)
        elif args.command == "partition":
            part = run_partition(args.data, args.clients, args.iid_fraction,
                                 args.seed, args.out)
            log.info("client sizes: %s", part.sizes().tolist())
        elif args.command == "train":
            cfg = _load_config(args.config, args.seeds, args.hops)
            agg, _ = run_seed_group(cfg, args.out)
            log.info("mean final test acc %.4f (%d seeds), "
                     "mean convergence round %.1f",
                     agg["mean_final_test_acc"], len(cfg.seeds),
                     agg["mean_convergence_round"])
        elif args.command == "analyze":
            cfg = _load_config(args.config)
            rows, _ = run_analyze(cfg, args.out,
                                  iid_fractions=args.iid_fractions)
            for r in rows:
                log.info("hop=%d p=%.2f bound=%.4g mean_gap=%.4g",
                         r.hop, r.iid_fraction, r.expected_bound, r.mean_gap)
        elif args.command == "bench-channel":
            table, timing = run_bench_channel(
                args.out, sizes=args.sizes, n_clients=args.clients,
                mask_elements=args.elements, seed=args.seed)
            log.info("masked reduce: %.0f elements/s, max abs err %.3g",
                     timing["elements_per_s"], timing["max_abs_error"])
        elif args.command == "sweep":
            cfg = _load_config(args.config, args.seeds)
            results = run_sweep(cfg, args.out, args.iid_fractions, args.hops,
                                workers=args.workers)
            log.info("swept %d points into %s", len(results), args.out)
    except (ConfigError, DatasetError) as e:
        log.error("%s", e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
