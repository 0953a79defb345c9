"""Scaled-down end-to-end experiment on the synthetic corpus.

    python3 scripts/run_experiment.py runs/exp --epochs 6

Re-running with the same directory resumes from the files already there.
Writes results.json, per-framework probability CSVs and per-class bar charts.
"""

import argparse
import dataclasses
import json
import logging
from pathlib import Path

from crowdscene.evaluation import evaluate, plot_per_class
from crowdscene.experiment import ExperimentConfig, run_experiment
from crowdscene.fusion import read_prob_csv
from crowdscene.manifest import load_manifest
from crowdscene.synth import SynthSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("work_dir")
    ap.add_argument("--kinds", nargs="+", default=["mel", "cqt", "gam"])
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--lr", type=float)
    ap.add_argument("--train-per-class", type=int, default=20)
    ap.add_argument("--test-per-class", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", datefmt="%H:%M:%S")

    cfg = ExperimentConfig(kinds=tuple(args.kinds),
                           synth=SynthSpec(args.train_per_class, args.test_per_class,
                                           rng_seed=args.seed))
    train = dataclasses.replace(cfg.train, rng_seed=args.seed)
    if args.epochs:
        train = dataclasses.replace(train, epochs=args.epochs)
    if args.lr:
        train = dataclasses.replace(train, adam=dataclasses.replace(train.adam, lr=args.lr))
    cfg.train = train

    results = run_experiment(args.work_dir, cfg)
    work = Path(args.work_dir)
    manifest = load_manifest(work / "corpus" / "manifest.csv")
    for csv_path in sorted((work / "probs").glob("*.csv")):
        (preds,) = read_prob_csv(csv_path).values()
        plot_per_class(evaluate(preds, manifest), csv_path.with_suffix(".png"), title=csv_path.stem)

    print(json.dumps({k: results[k] for k in ("single", "fused")}, indent=1))
    print(f"total {results['seconds']['total'] / 60:.1f} min")


if __name__ == "__main__":
    main()
