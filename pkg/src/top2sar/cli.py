"""Command line entry point: ``top2sar {synth,ingest,train,bag,eval,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from top2sar import ingest, model, plotting, report, sampler, synth
from top2sar.experiment import ExperimentConfig, run_bagging, run_experiment
from top2sar.metrics import evaluate_scores

log = logging.getLogger("top2sar")


class CLIError(Exception):
    pass


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise CLIError(f"{path}: config must be a JSON object")
    return ExperimentConfig.from_dict(doc)


def _emit(rows, args) -> None:
    report.emit_report(rows, args.out, args.format)
    print(f"wrote {len(rows)} row(s) to {args.out}")
    if args.figures:
        os.makedirs(args.figures, exist_ok=True)
        stem = os.path.splitext(os.path.basename(args.out))[0]
        if any(getattr(r, "history", None) for r in rows):
            plotting.plot_training_curves(rows, os.path.join(args.figures, f"{stem}_curves.png"))
        plotting.plot_metric_bars(rows, os.path.join(args.figures, f"{stem}_metrics.png"))


def cmd_synth(args) -> None:
    counts = args.counts or synth.scaled_counts(args.scale)
    spec = synth.MixtureSpec(
        counts=tuple(c + args.test_per_class for c in counts), feature_dim=args.feature_dim,
        separation=args.separation, spread=args.spread, seed=args.seed,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    if args.chain:
        chain = synth.DomainChainSpec(base=spec, shift_magnitude=args.shift)
        named = zip(("domain_a", "domain_b", "target"), synth.make_domain_chain(chain))
    else:
        named = [("target", synth.make_imbalanced_mixture(spec))]
    for name, ds in named:
        if args.test_per_class:
            train, test = sampler.stratified_split(ds, seed=args.seed, test_count=args.test_per_class)
            sampler.write_manifest(train, os.path.join(args.out_dir, f"{name}_train.csv"))
            sampler.write_manifest(test, os.path.join(args.out_dir, f"{name}_test.csv"))
        else:
            sampler.write_manifest(ds, os.path.join(args.out_dir, f"{name}.csv"))
    print(f"wrote manifests to {args.out_dir}")


def cmd_ingest(args) -> None:
    img = ingest.read_pgm16(args.image)
    grid = ingest.log_transform(img) if args.log else img.values.astype(np.float64)
    patches = ingest.tile(grid, args.patch_size)
    if patches.too_small:
        raise CLIError(f"{args.image}: image smaller than one {args.patch_size}-pixel patch")
    labels = ingest.read_label_sidecar(args.labels)
    keep = [p for p in patches.patches if (p.origin_x, p.origin_y) in labels]
    if not keep:
        raise CLIError("no patch origin matches the label sidecar")
    if len(keep) < len(patches.patches):
        log.warning("%d of %d patches have no label and were skipped",
                    len(patches.patches) - len(keep), len(patches.patches))
    y = np.array([labels[(p.origin_x, p.origin_y)] for p in keep])
    n_classes = args.n_classes or int(y.max()) + 1
    ds = sampler.Dataset(np.stack([p.values for p in keep]), y, n_classes)
    sampler.write_manifest(ds, args.out)
    print(f"wrote {len(ds)} patches ({patches.footprint_m:g} m footprint) to {args.out}")


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    rows = run_experiment(cfg, jobs=args.jobs, checkpoint_dir=args.checkpoint_dir)
    _emit(rows, args)


def cmd_bag(args) -> None:
    cfg = load_config(args.config)
    ensemble, members = run_bagging(cfg, n_models=args.n_models)
    _emit(ensemble + members, args)


def cmd_eval(args) -> None:
    net = model.load_checkpoint(args.checkpoint)
    ds = sampler.read_manifest(args.manifest)
    if ds.n_features != net.spec.input_dim or ds.n_classes != net.spec.n_classes:
        raise CLIError("manifest shape does not match the checkpoint network")
    scores, _ = model.forward(net, ds.features)
    record = evaluate_scores(scores, ds.labels).to_record()
    text = json.dumps(record, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_report(args) -> None:
    rows = []
    for path in args.inputs:
        rows.extend(report.read_report(path))
    _emit(rows, args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="top2sar", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic dataset manifests")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=0.1, help="fraction of the reference class counts")
    p.add_argument("--counts", type=lambda s: [int(v) for v in s.split(",")], default=None)
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=30.0)
    p.add_argument("--spread", type=float, default=10.0)
    p.add_argument("--chain", action="store_true", help="write a two-hop domain chain")
    p.add_argument("--shift", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="PGM image -> log transform -> patches -> manifest")
    p.add_argument("image")
    p.add_argument("--labels", required=True, help="sidecar with 'origin_x,origin_y,label' lines")
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=ingest.PATCH_SIZE)
    p.add_argument("--n-classes", type=int, default=None)
    p.add_argument("--no-log", dest="log", action="store_false")
    p.set_defaults(func=cmd_ingest)

    for name, func, text in (("train", cmd_train, "run an experiment"), ("bag", cmd_bag, "run a bagging experiment")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True)
        p.add_argument("--format", choices=report.FORMATS, default="csv")
        p.add_argument("--figures", default=None, help="directory for PNG figures")
        if name == "train":
            p.add_argument("--jobs", type=int, default=1)
            p.add_argument("--checkpoint-dir", default=None)
        else:
            p.add_argument("--n-models", type=int, default=5)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="metrics of a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge reports and re-emit")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=report.FORMATS, default="csv")
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, CLIError, KeyError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"top2sar: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
