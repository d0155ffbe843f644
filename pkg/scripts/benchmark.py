#!/usr/bin/env python3
"""Run the benchmark experiments and write one CSV row per training run.

    python scripts/benchmark.py dots --condition noisy --out results/noisy.csv
    python scripts/benchmark.py size-sweep --out results/size.csv
    python scripts/benchmark.py tfbs --out results/tfbs.csv

Target data uses seed 1 and the extractor source data seed 101.  Every run
uses 8 qubits, depth 2, lr 0.001 and 30 epochs unless overridden.
"""

import argparse
import csv
import sys
import time
from pathlib import Path

from qtransfer.datagen import gen_dot_condition, gen_tfbs_dataset
from qtransfer.frontend import fit_pca, pretrain_extractor
from qtransfer.train import TrainConfig, balanced_head, init_model, sgd_train

COLUMNS = ["experiment", "extractor", "seed", "target_size", "final_train_loss", "final_test_loss",
           "final_test_acc", "best_test_acc", "loss_gap", "extractor_unchanged", "seconds"]


def train_row(experiment, extractor, train, test, seed, args):
    before = extractor.checksum()
    t0 = time.perf_counter()
    final, trace = sgd_train(init_model(extractor, args.depth, seed), train, test,
                             TrainConfig(epochs=args.epochs, lr=args.lr, seed=seed))
    last = trace.final()
    row = {
        "experiment": experiment,
        "extractor": extractor.kind,
        "seed": seed,
        "target_size": len(train),
        "final_train_loss": last.train_loss,
        "final_test_loss": last.test_loss,
        "final_test_acc": last.test_acc,
        "best_test_acc": float(trace.column("test_acc").max()),
        "loss_gap": last.test_loss - last.train_loss,
        "extractor_unchanged": final.extractor.checksum() == before,
        "seconds": round(time.perf_counter() - t0, 1),
    }
    print(", ".join(f"{k}={v}" for k, v in row.items()), file=sys.stderr, flush=True)
    return row


def dots_rows(args):
    target = gen_dot_condition(args.n, args.condition, args.target_seed)
    source = gen_dot_condition(args.n, args.condition, args.source_seed)
    extractors = [pretrain_extractor("mlp", source.train, epochs=args.pretrain_epochs, lr=0.05, seed=0,
                                     output_dim=args.qubits),
                  fit_pca(target.train.x, args.qubits)]
    for seed in args.seeds:
        for ext in extractors:
            yield train_row(f"dots-{args.condition}", ext, target.train, target.test, seed, args)


def size_rows(args):
    target = gen_dot_condition(args.n, "clean", args.target_seed)
    source = gen_dot_condition(args.n, "clean", args.source_seed)
    mlp = pretrain_extractor("mlp", source.train, epochs=args.pretrain_epochs, lr=0.05, seed=0,
                             output_dim=args.qubits)
    for seed in args.seeds:
        for size in args.sizes:
            yield train_row("size-sweep", mlp, balanced_head(target.train, size), target.test, seed, args)


def tfbs_rows(args):
    target = gen_tfbs_dataset(args.n, seed=args.target_seed)
    source = gen_tfbs_dataset(args.n, seed=args.source_seed)
    extractors = [pretrain_extractor("ttn", source.train, epochs=args.pretrain_epochs, lr=0.05, seed=0,
                                     output_dim=args.qubits, lift="kmer"),
                  fit_pca(target.train.x, args.qubits)]
    for seed in args.seeds:
        for ext in extractors:
            yield train_row("tfbs", ext, target.train, target.test, seed, args)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("experiment", choices=("dots", "size-sweep", "tfbs"))
    parser.add_argument("--condition", choices=("clean", "noisy"), default="clean")
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--sizes", type=lambda s: [int(v) for v in s.split(",")], default=[100, 400, 1600])
    parser.add_argument("--seeds", type=lambda s: [int(v) for v in s.split(",")], default=[0, 1, 2])
    parser.add_argument("--target-seed", type=int, default=1)
    parser.add_argument("--source-seed", type=int, default=101)
    parser.add_argument("--qubits", type=int, default=8)
    parser.add_argument("--depth", type=int, default=2)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--pretrain-epochs", type=int, default=10)
    parser.add_argument("--lr", type=float, default=0.001)
    parser.add_argument("--out", type=Path, required=True)
    args = parser.parse_args(argv)

    rows = {"dots": dots_rows, "size-sweep": size_rows, "tfbs": tfbs_rows}[args.experiment](args)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
            fh.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
