"""Command-line entry point for the extraction pipeline."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import metrics, pipeline, retrieval, sftprep
from .corpus import compute_stats, read_conll, write_conll
from .pipeline import RunConfig
from .retrieval import HashEmbedder


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="run config JSON file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--workers", type=int, help="override worker count")
    p.add_argument("--mode", choices=["anchored", "bio_only"], help="override output mode")
    p.add_argument("--retry-budget", type=int, help="override verifier retry budget")
    p.add_argument("--output-dir", help="override run output directory")


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config)
    for attr, key in (
        ("seed", "seed"),
        ("workers", "workers"),
        ("mode", "mode"),
        ("retry_budget", "retry_budget"),
        ("output_dir", "output_dir"),
    ):
        value = getattr(args, key, None)
        if value is not None:
            setattr(config, attr, value)
    return config


def cmd_ingest(args):
    sentences = read_conll(args.input, sep=args.sep, on_illegal=args.on_illegal)
    sys.stdout.write(write_conll(sentences, sep=args.sep))
    print(f"read {len(sentences)} sentences", file=sys.stderr)


def cmd_stats(args):
    train = read_conll(args.train, sep=args.sep, on_illegal=args.on_illegal)
    test = read_conll(args.test, sep=args.sep, on_illegal=args.on_illegal)
    stats = compute_stats(train, test, case_fold=args.case_fold)
    print(stats.to_json())


def cmd_sft_prep(args):
    corpus = read_conll(args.input, sep=args.sep, on_illegal=args.on_illegal)
    config = sftprep.SftPrepConfig(
        balance_exponent=args.balance_exponent,
        negative_ratio=args.negative_ratio,
        normalize=not args.no_normalize,
        sample_size=args.sample_size,
        seed=args.seed,
    )
    records = sftprep.prepare_sft(corpus, config)
    Path(args.output).write_text(sftprep.write_jsonl(records), encoding="utf-8")
    print(f"wrote {len(records)} records to {args.output}", file=sys.stderr)


def cmd_index(args):
    config = _load_config(args)
    embedder = HashEmbedder(config.embedder_dim)
    index_docs = []
    if config.train_path:
        train = read_conll(config.train_path, sep=config.tag_separator, on_illegal="repair")
        index_docs.extend(retrieval.demos_from_corpus(train, embedder))
    if config.definitions_path:
        index_docs.extend(retrieval.load_definitions(config.definitions_path, embedder))
    if config.kb_path:
        index_docs.extend(
            retrieval.load_definitions(config.kb_path, embedder, source=retrieval.Source.KB)
        )
    retrieval.save_snapshot(index_docs, args.snapshot)
    print(f"indexed {len(index_docs)} docs into {args.snapshot}", file=sys.stderr)


def cmd_extract(args):
    config = _load_config(args)
    result = pipeline.extract_run(config, run_name=args.run_name)
    print(str(result.run_dir))


def cmd_evaluate(args):
    gold = read_conll(args.gold, sep=args.sep)
    pred = read_conll(args.pred, sep=args.sep)
    audits = None
    report = metrics.evaluate_datasets(
        {args.dataset_id: (gold, pred)}, audits=audits, empty_convention=args.empty_convention
    )
    sys.stdout.buffer.write(metrics.emit_report(report, args.format))


def cmd_ablate(args):
    config = _load_config(args)
    rows = pipeline.ablate(config, args.toggles)
    writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)


def cmd_sweep_k(args):
    config = _load_config(args)
    rows = pipeline.sweep_k(config, args.k)
    writer = csv.DictWriter(sys.stdout, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skillex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and re-serialize a CoNLL file")
    p.add_argument("input")
    p.add_argument("--sep", default="\t")
    p.add_argument("--on-illegal", choices=["reject", "skip", "repair"], default="reject")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="corpus statistics for a train/test pair")
    p.add_argument("train")
    p.add_argument("test")
    p.add_argument("--sep", default="\t")
    p.add_argument("--on-illegal", choices=["reject", "skip", "repair"], default="repair")
    p.add_argument("--case-fold", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sft-prep", help="build an SFT JSONL training file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--sep", default="\t")
    p.add_argument("--on-illegal", choices=["reject", "skip", "repair"], default="repair")
    p.add_argument("--balance-exponent", type=float, default=1.0)
    p.add_argument("--negative-ratio", type=float, default=1.0)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--sample-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sft_prep)

    p = sub.add_parser("index", help="build and persist a retrieval snapshot")
    _add_config_args(p)
    p.add_argument("snapshot", help="snapshot output path")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("extract", help="run extraction over the test corpus")
    _add_config_args(p)
    p.add_argument("--run-name", default="run")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="score a prediction file against gold")
    p.add_argument("gold")
    p.add_argument("pred")
    p.add_argument("--sep", default="\t")
    p.add_argument("--dataset-id", default="dataset")
    p.add_argument("--format", choices=["json", "csv", "markdown"], default="json")
    p.add_argument("--empty-convention", choices=["one", "zero"], default="one")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="toggle-off comparison runs")
    _add_config_args(p)
    p.add_argument(
        "--toggles",
        nargs="+",
        choices=list(pipeline.ABLATION_TOGGLES),
        default=list(pipeline.ABLATION_TOGGLES),
    )
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-k", help="retrieval-k sweep")
    _add_config_args(p)
    p.add_argument("--k", nargs="+", type=int, default=[0, 3, 10])
    p.set_defaults(func=cmd_sweep_k)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
