"""Command-line front end: gen-data, train, evaluate, consensus, report."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import consensus, data, metrics, model, run


def _add_gen_data(sub):
    p = sub.add_parser("gen-data", help="write a synthetic blob dataset CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=2000, help="number of samples")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--centroid-scale", type=float, default=2.0)
    p.add_argument("--sigma", type=float, default=1.1)


def _add_train(sub):
    p = sub.add_parser("train", help="train an ensemble and write run artifacts")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the config output directory")


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="label a dataset with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--out", required=True, help="directory for labels and losses")
    p.add_argument("--noise-sigma", type=float, default=0.6,
                   help="augmentation noise for the base-loss view")


def _add_consensus(sub):
    p = sub.add_parser("consensus", help="aggregate stored labelings")
    p.add_argument("--labels-dir", required=True,
                   help="directory holding labels_k<k>.csv and eval_losses.csv")
    p.add_argument("--strategy", choices=consensus.STRATEGIES, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--out", help="output CSV (default: consensus_<strategy>.csv in labels dir)")
    p.add_argument("--data", help="dataset CSV with ground truth for metrics")


def _add_report(sub):
    p = sub.add_parser("report", help="print and rewrite the summary of a run")
    p.add_argument("--run-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clusterlab",
        description="Train diversity-controlled clustering ensembles and "
                    "aggregate them by consensus.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen_data(sub)
    _add_train(sub)
    _add_evaluate(sub)
    _add_consensus(sub)
    _add_report(sub)
    return parser


def _load_ensemble(labels_dir: Path, n_clusters: int) -> consensus.Ensemble:
    label_files = sorted(labels_dir.glob("labels_k*.csv"),
                         key=lambda p: int(p.stem.split("labels_k")[1]))
    if not label_files:
        raise FileNotFoundError(f"no labels_k<k>.csv files in {labels_dir}")
    labelings = np.stack([data.load_labels_csv(p) for p in label_files])
    losses_path = labels_dir / "eval_losses.csv"
    if losses_path.exists():
        losses = run.load_eval_losses(losses_path)
        if losses.shape[0] != labelings.shape[0]:
            raise ValueError(f"{losses_path}: loss count does not match label files")
    else:
        losses = np.zeros(labelings.shape[0])
    return consensus.Ensemble(labelings, losses, n_clusters)


def _cmd_gen_data(args) -> int:
    dataset = data.gen_blobs(args.seed, args.n, args.classes, args.dim,
                             args.centroid_scale, args.sigma)
    data.save_dataset_csv(args.out, dataset)
    print(f"wrote {args.n} samples, {args.classes} classes -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = run.load_config(args.config) if args.config else run.ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        config = dataclasses.replace(config, **overrides)
    report = run.train(config)
    print(run.render_table(report))
    print(f"artifacts in {config.out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    params = model.load_checkpoint(args.checkpoint)
    dataset = data.load_csv(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation = run.evaluate_model(params, dataset.features, args.noise_sigma)
    for head in range(params.n_clusterings):
        data.save_labels_csv(out / f"labels_k{head}.csv", evaluation.labels[head])
    run._write_eval_losses(out / "eval_losses.csv", evaluation.main_losses)
    print(f"wrote {params.n_clusterings} labelings of {dataset.n_samples} samples -> {out}")
    return 0


def _cmd_consensus(args) -> int:
    labels_dir = Path(args.labels_dir)
    ensemble = _load_ensemble(labels_dir, args.clusters)
    labels = consensus.consensus_for_strategy(ensemble, args.strategy)
    out = Path(args.out) if args.out else labels_dir / f"consensus_{args.strategy}.csv"
    data.save_labels_csv(out, labels)
    print(f"strategy {args.strategy}: consensus over "
          f"{len(consensus.select(ensemble, args.strategy))} labelings -> {out}")
    if args.data:
        truth = data.load_csv(args.data).labels
        if truth is not None:
            print(f"ACC={metrics.accuracy(labels, truth):.4f} "
                  f"NMI={metrics.nmi(labels, truth):.4f} "
                  f"ARI={metrics.ari(labels, truth):.4f}")
    return 0


def _cmd_report(args) -> int:
    run.compute_report(args.run_dir, print_table=True)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "gen-data": _cmd_gen_data,
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "consensus": _cmd_consensus,
        "report": _cmd_report,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
