"""Command-line entry point: ``past <command> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import clustering, embeddings, harness, metrics, reranking, synth, trainer
from .errors import PastError
from .model import load_checkpoint, save_checkpoint

SPLITS = ("source", "target", "query", "gallery")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="overrides every seed in the config")
    p.add_argument("--out-dir", default=".", help="directory for outputs (default: .)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key, e.g. adapt.lambda=1.0 (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="past", description="Progressive self-training for unsupervised re-ID adaptation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic source/target/query/gallery CSVs")
    _common(p)

    p = sub.add_parser("pretrain", help="supervised pretraining on source.csv")
    _common(p)
    p.add_argument("--data-dir", help="directory holding the split CSVs (default: --out-dir)")

    p = sub.add_parser("adapt", help="self-training on target.csv")
    _common(p)
    p.add_argument("--data-dir")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("eval", help="CMC/mAP of query.csv against gallery.csv")
    _common(p)
    p.add_argument("--data-dir")
    p.add_argument("--checkpoint", help="embed with this model; raw features when omitted")
    p.add_argument("--ranks", type=int, nargs="+", default=[1, 5, 10])

    for name, text in (("rerank", "k-reciprocal Jaccard distances of a feature CSV"),
                       ("cluster", "pseudo-labels for a feature CSV")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--features", required=True, help="dataset CSV")
        p.add_argument("--checkpoint", help="embed with this model first")

    p = sub.add_parser("sweep", help="adapt once per value of lambda, s_min or eta")
    _common(p)
    p.add_argument("--data-dir")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--param", required=True, choices=sorted(harness.SWEEP_FIELDS))
    p.add_argument("--values", nargs="+", help="default: the standard grid for --param")
    return parser


def _data_dir(args) -> Path:
    return Path(args.data_dir or args.out_dir)


def _load_splits(args, *names) -> list[embeddings.Dataset]:
    return [embeddings.read_csv(_data_dir(args) / f"{n}.csv") for n in names]


def _features(args):
    data = embeddings.read_csv(args.features)
    if args.checkpoint:
        return data, load_checkpoint(args.checkpoint).embed(data.features)
    return data, data.features


def cmd_gen_data(args, cfg, out: Path) -> None:
    for name, data in zip(SPLITS, synth.generate(cfg.synth)[:4]):
        embeddings.write_csv(data, out / f"{name}.csv")


def cmd_pretrain(args, cfg, out: Path) -> None:
    (source,) = _load_splits(args, "source")
    save_checkpoint(trainer.pretrain_source(source, cfg.pretrain), out / "pretrained.ckpt")


def cmd_adapt(args, cfg, out: Path) -> None:
    source, target, query, gallery = _load_splits(args, *SPLITS)
    model, logs = trainer.run_past(load_checkpoint(args.checkpoint), target, cfg.adapt, query, gallery,
                                   num_source_ids=len(np.unique(source.identities)))
    trainer.write_iterations_csv(logs, out / "iterations.csv")
    save_checkpoint(model, out / "adapted.ckpt")


def cmd_eval(args, cfg, out: Path) -> None:
    query, gallery = _load_splits(args, "query", "gallery")
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    metrics.write_results_csv(metrics.evaluate(query, gallery, model, tuple(args.ranks)), out / "results.csv")


def cmd_rerank(args, cfg, out: Path) -> None:
    data, feats = _features(args)
    k1, k2 = reranking.clamp_k(len(data), cfg.adapt.k1, cfg.adapt.k2)
    jac = reranking.jaccard_matrix(embeddings.pairwise_euclidean(feats), k1, k2, cfg.adapt.jaccard_blend)
    reranking.write_jaccard_csv(jac, out / "jaccard.csv")


def cmd_cluster(args, cfg, out: Path) -> None:
    data, feats = _features(args)
    k1, k2 = reranking.clamp_k(len(data), cfg.adapt.k1, cfg.adapt.k2)
    jac = reranking.jaccard_matrix(embeddings.pairwise_euclidean(feats), k1, k2, cfg.adapt.jaccard_blend)
    labeling = trainer.pseudo_label(feats, jac, cfg.adapt)
    clustering.write_labels_csv(labeling, out / "labels.csv")


def cmd_sweep(args, cfg, out: Path) -> None:
    source, target, query, gallery = _load_splits(args, *SPLITS)
    values = args.values or harness.SWEEP_DEFAULTS[args.param]
    spec = harness.SweepSpec(args.param, tuple(values), cfg.adapt)
    rows = harness.run_sweep(spec, load_checkpoint(args.checkpoint), target, query, gallery,
                             num_source_ids=len(np.unique(source.identities)))
    harness.write_sweep_csv(args.param, rows, out / f"sweep_{args.param}.csv")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "rerank": cmd_rerank,
    "cluster": cmd_cluster,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = harness.load_config(args.config, args.set, args.seed)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except PastError as exc:
        print(f"past {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"past {args.command}: {exc.strerror or exc}: {exc.filename or ''}".rstrip(": "), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
