"""Scaled-down end-to-end run: synthetic corpus -> three front ends -> VGG15 -> PROD fusion."""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from crowdscene import fusion
from crowdscene.augment import AugmentConfig
from crowdscene.evaluation import evaluate
from crowdscene.manifest import Split, load_manifest
from crowdscene.nn.optim import AdamConfig
from crowdscene.nn.train import TrainConfig, train
from crowdscene.pipeline import FeatureStore, extract_features
from crowdscene.synth import SynthSpec, generate_corpus

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    synth: SynthSpec = field(default_factory=lambda: SynthSpec(train_per_class=20, test_per_class=10))
    kinds: tuple = ("mel", "cqt", "gam")
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=6, adam=AdamConfig(lr=1e-3), batch_size=8, patches_per_segment=1, rng_seed=0))
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    schemes: tuple = ("prod", "mean", "max")


def run_experiment(work_dir, cfg=ExperimentConfig()):
    """Run (or resume) the experiment under ``work_dir``; returns the results dict.

    Existing corpus, feature and checkpoint files are reused, so an interrupted
    run picks up where it stopped.
    """
    from crowdscene.nn.checkpoint import load_checkpoint

    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    results = {"single": {}, "fused": {}, "seconds": {}, "history": {}}
    t0 = time.time()
    corpus = work / "corpus"
    if not (corpus / "manifest.csv").exists():
        generate_corpus(cfg.synth, corpus)
    manifest = load_manifest(corpus / "manifest.csv")
    results["seconds"]["corpus"] = time.time() - t0

    test_ids = sorted(r.segment_id for r in manifest.split(Split.TEST))
    per_framework = {}
    for kind in cfg.kinds:
        t = time.time()
        feat_dir = work / "features" / kind
        store = FeatureStore(feat_dir)
        if not all(r.segment_id in store for r in manifest.records):
            extract_features(manifest, kind, feat_dir)
        results["seconds"][f"features_{kind}"] = time.time() - t

        t = time.time()
        ckpt = work / "checkpoints" / kind
        if ckpt.with_suffix(".json").exists() and (work / f"history_{kind}.json").exists():
            framework, _ = load_checkpoint(ckpt)
            history = json.loads((work / f"history_{kind}.json").read_text())
        else:
            framework, hist = train(manifest, store, cfg.train, cfg.augment, kind=kind,
                                    name=f"{kind}-vgg15", checkpoint=ckpt)
            history = {"loss": hist.loss, "accuracy": hist.accuracy, "best_epoch": hist.best_epoch}
            (work / f"history_{kind}.json").write_text(json.dumps(history))
        results["seconds"][f"train_{kind}"] = time.time() - t
        results["history"][kind] = history

        t = time.time()
        preds = framework.predict(test_ids, store)
        (work / "probs").mkdir(exist_ok=True)
        fusion.write_prob_csv(work / "probs" / f"{kind}.csv", preds)
        per_framework[framework.name] = preds
        results["single"][kind] = evaluate(preds, manifest, Split.TEST).accuracy_pct
        results["seconds"][f"predict_{kind}"] = time.time() - t
        log.info("%s test accuracy %.1f%%", kind, results["single"][kind])

    inputs = fusion.FusionInput.from_predictions(per_framework)
    for scheme in cfg.schemes:
        fused = fusion.fuse(inputs, scheme)
        fusion.write_prob_csv(work / "probs" / f"fused_{scheme}.csv", fused)
        results["fused"][scheme] = evaluate(fused, manifest, Split.TEST).accuracy_pct
    results["seconds"]["total"] = time.time() - t0
    (work / "results.json").write_text(json.dumps(results, indent=1))
    return results
