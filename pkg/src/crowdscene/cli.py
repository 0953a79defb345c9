"""``crowdscene`` command line: synth, features, train, predict, fuse, evaluate, serve.

Options may also come from ``--config FILE`` (JSON or TOML); keys are option
names with dashes or underscores, either at top level or in a table named
after the subcommand. Flags given on the command line win.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from crowdscene import fusion
from crowdscene.augment import AugmentConfig
from crowdscene.evaluation import evaluate, plot_per_class, plot_segment_probs
from crowdscene.manifest import Split, load_manifest, validate_split
from crowdscene.nn.optim import AdamConfig
from crowdscene.pipeline import FEATURE_KINDS, FeatureStore, extract_features

log = logging.getLogger("crowdscene")


def _load_config(path):
    text = Path(path).read_text()
    if str(path).endswith(".toml"):
        try:
            import tomllib
        except ImportError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def _cmd_synth(args):
    from crowdscene.synth import SynthSpec, generate_corpus

    spec = SynthSpec(args.train_per_class, args.test_per_class, args.segments_per_video,
                     args.frames, args.seed)
    manifest = generate_corpus(spec, args.out)
    report = validate_split(manifest)
    print(f"wrote {len(manifest.records)} segments to {Path(args.out) / 'manifest.csv'}")
    for c in report.classes:
        print(f"  {c.label.slug:<18} train {c.train:4d}  test {c.test:4d}  "
              f"({c.train_pct:.1f}% train){'  FLAGGED' if c.flagged else ''}")


def _cmd_features(args):
    manifest = load_manifest(args.manifest)
    paths = extract_features(manifest, args.kind, args.out, split=args.split, workers=args.workers)
    print(f"wrote {len(paths)} {args.kind} feature files to {args.out}")


def _cmd_train(args):
    from crowdscene.nn.train import TrainConfig, train

    manifest = load_manifest(args.manifest)
    cfg = TrainConfig(epochs=args.epochs, adam=AdamConfig(lr=args.lr), l2_lambda=args.l2,
                      batch_size=args.batch_size, patches_per_segment=args.patches_per_segment,
                      rng_seed=args.seed)
    aug = AugmentConfig(freq_mask_width=args.freq_mask, time_mask_width=args.time_mask,
                        mixup_gamma_dist=args.gamma_dist, mixup=not args.no_mixup,
                        rng_seed=args.seed)
    _, hist = train(manifest, FeatureStore(args.features), cfg, aug, kind=args.kind,
                    name=args.name, checkpoint=args.out)
    print(f"best epoch {hist.best_epoch + 1}: loss {hist.best_loss:.4f}, "
          f"train accuracy {100 * hist.accuracy[hist.best_epoch]:.1f}%; checkpoint {args.out}")


def _cmd_predict(args):
    from crowdscene.nn.checkpoint import load_checkpoint

    manifest = load_manifest(args.manifest)
    framework, _ = load_checkpoint(args.checkpoint)
    if args.framework:
        framework.name = args.framework
    ids = sorted(r.segment_id for r in manifest.split(args.split))
    preds = framework.predict(ids, FeatureStore(args.features))
    fusion.write_prob_csv(args.out, preds)
    if args.plot:
        plot_segment_probs(preds, args.plot, title=framework.name)
    print(f"wrote {len(preds)} segment predictions to {args.out}")


def _cmd_fuse(args):
    per_framework = {}
    for path in args.inputs:
        for name, preds in fusion.read_prob_csv(path).items():
            if name in per_framework:
                name = f"{name}@{path}"
            per_framework[name] = preds
    fused = fusion.fuse(fusion.FusionInput.from_predictions(per_framework), args.scheme)
    if args.out:
        fusion.write_prob_csv(args.out, fused)
        print(f"fused {len(per_framework)} frameworks over {len(fused)} segments -> {args.out}")
    else:
        fusion.write_prob_csv(sys.stdout, fused)


def _cmd_evaluate(args):
    manifest = load_manifest(args.manifest)
    per_framework = fusion.read_prob_csv(args.predictions)
    if len(per_framework) != 1:
        raise ValueError(f"{args.predictions} holds {len(per_framework)} frameworks; fuse them first")
    preds = next(iter(per_framework.values()))
    report = evaluate(preds, manifest, args.split)
    print(report.render_text())
    if args.json:
        Path(args.json).write_text(report.to_json(indent=1))
    if args.plot:
        plot_per_class(report, args.plot)


def _cmd_serve(args):
    import uvicorn

    from crowdscene.nn.checkpoint import load_checkpoint
    from crowdscene.service import create_app

    frameworks = [load_checkpoint(p)[0] for p in args.checkpoint]
    app = create_app(frameworks, scheme=args.scheme, max_upload_bytes=args.max_upload_mb << 20)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")


def build_parser():
    p = argparse.ArgumentParser(prog="crowdscene", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON or TOML file with option defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic five-scene corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--train-per-class", type=int, default=20)
    s.add_argument("--test-per-class", type=int, default=10)
    s.add_argument("--segments-per-video", type=int, default=2)
    s.add_argument("--frames", type=int, default=0, help="image frames per segment")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("features", help="extract MEL/CQT/GAM spectrograms or frames to CSTF")
    s.add_argument("--kind", choices=FEATURE_KINDS, required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=[x.value for x in Split])
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=_cmd_features)

    s = sub.add_parser("train", help="train a VGG15 framework")
    s.add_argument("--manifest", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--kind", choices=FEATURE_KINDS, required=True)
    s.add_argument("--out", required=True, help="checkpoint path (stem)")
    s.add_argument("--name")
    s.add_argument("--epochs", type=int, default=100)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--l2", type=float, default=1e-4)
    s.add_argument("--batch-size", type=int, default=16)
    s.add_argument("--patches-per-segment", type=int, default=0)
    s.add_argument("--freq-mask", type=int, default=10)
    s.add_argument("--time-mask", type=int, default=10)
    s.add_argument("--gamma-dist", choices=("uniform", "beta"), default="uniform")
    s.add_argument("--no-mixup", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("predict", help="per-segment probabilities to a probability CSV")
    s.add_argument("--manifest", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", choices=[x.value for x in Split], default="test")
    s.add_argument("--framework", help="framework name written to the CSV")
    s.add_argument("--out", required=True)
    s.add_argument("--plot", help="bar-chart image of the segment probabilities")
    s.set_defaults(func=_cmd_predict)

    s = sub.add_parser("fuse", help="late fusion of probability CSVs")
    s.add_argument("--scheme", choices=fusion.SCHEMES, required=True)
    s.add_argument("--out")
    s.add_argument("inputs", nargs="+")
    s.set_defaults(func=_cmd_fuse)

    s = sub.add_parser("evaluate", help="accuracy and confusion matrix")
    s.add_argument("--manifest", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--split", choices=[x.value for x in Split], default="test")
    s.add_argument("--json")
    s.add_argument("--plot", help="per-class accuracy bar chart image")
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser("serve", help="HTTP inference service")
    s.add_argument("--checkpoint", action="append", required=True)
    s.add_argument("--scheme", choices=fusion.SCHEMES, default="prod")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--max-upload-mb", type=int, default=100)
    s.set_defaults(func=_cmd_serve)
    return p


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    conf = _load_config(known.config)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, subparser in sub_action.choices.items():
        values = {k: v for k, v in conf.items() if not isinstance(v, dict)}
        values.update(conf.get(name, {}))
        dests = {a.dest for a in subparser._actions}
        defaults = {k.replace("-", "_"): v for k, v in values.items()
                    if k.replace("-", "_") in dests}
        for a in subparser._actions:
            if a.dest in defaults:
                a.required = False
        subparser.set_defaults(**defaults)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (OSError, ValueError) as exc:
        print(f"crowdscene: bad config: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as a CLI diagnostic
        log.debug("command failed", exc_info=True)
        print(f"crowdscene {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
