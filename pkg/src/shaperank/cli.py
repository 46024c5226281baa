"""Command-line entry point: gen, describe, distmat, train, evaluate, plot, dominance."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .datagen import MODES, generate_benchmark, read_manifest
from .evaluation import (EvaluationError, GroundTruth, compute_measures, dominates,
                         exclude_classes, rank_all, read_distance_matrix, subset_eval,
                         write_distance_matrix)

log = logging.getLogger("shaperank")


def _config(args) -> dict:
    return pipeline.load_config(getattr(args, "config", None), getattr(args, "set", None) or ())


def _add_config(p) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.add_argument("--dump-config", action="store_true", help="print the effective config and exit")


def cmd_gen(args) -> int:
    man = generate_benchmark(args.classes, args.poses, args.mode, args.seed, args.out,
                             prefix=args.prefix, separation=args.separation,
                             max_bend=args.max_bend, spacing=args.spacing,
                             workers=args.workers, log=log.info)
    print(f"wrote {len(man.entries)} models to {Path(args.out) / 'manifest.csv'}")
    return 0


def cmd_describe(args) -> int:
    cfg = _config(args)
    records = pipeline.manifest_records(args.manifest)
    art = pipeline.load_artifact(args.model) if args.model else None
    res = pipeline.describe(records, args.method, cfg, art, args.cache, args.workers)
    ok = [i for i in res.ids if i in res.vectors]
    if ok:
        cols = pipeline.column_names(args.method, res.vectors, res.artifact)
        pipeline.write_descriptors(args.out, args.method, ok, res.vectors, cols)
        if art is None:
            ref = Path(str(args.out) + ".artifact.json")
            pipeline.save_artifact(res.artifact, ref)
    print(f"{len(ok)} descriptors ({res.computed} computed, {res.cached} cached), "
          f"{len(res.failures)} failed")
    for mid, err in res.failures.items():
        print(f"failed {mid}: {err}", file=sys.stderr)
    return 1 if res.failures else 0


def cmd_distmat(args) -> int:
    cfg = _config(args)
    method, ids, vectors, _ = pipeline.read_descriptors(args.descriptors)
    method = args.method or method
    if method is None:
        raise pipeline.PipelineError("descriptor file has no method tag; pass --method")
    art = None
    if args.model:
        art = pipeline.load_artifact(args.model)
    else:
        side = Path(str(args.descriptors) + ".artifact.json")
        if side.exists():
            art = pipeline.load_artifact(side)
    dm = pipeline.distance_matrix(vectors, ids, method, art, cfg, args.metric)
    write_distance_matrix(dm, args.out)
    print(f"wrote {dm.n}x{dm.n} distance matrix to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    train = pipeline.manifest_records(args.train_manifest)
    if args.test_manifest:
        pipeline.check_disjoint(train, pipeline.manifest_records(args.test_manifest))
    art = pipeline.train(args.method, train, cfg)
    art["train_manifest"] = str(args.train_manifest)
    pipeline.save_artifact(art, args.out)
    msg = f"trained {args.method} on {len(train)} models"
    if "weights" in art:
        msg += "; weights " + ", ".join(f"{k}={v:.4f}" for k, v in art["weights"].items())
        msg += f"; train first tier {art['train_first_tier']:.4f}"
        best = max(art["component_first_tier"].values())
        msg += f" (best single {best:.4f})"
    print(msg)
    return 0


def _truth(manifest) -> GroundTruth:
    man = read_manifest(manifest)
    return GroundTruth(man.ids, man.classes, man.poses)


def cmd_evaluate(args) -> int:
    from .plotting import plot_confusion, plot_pr_curves

    dm = read_distance_matrix(args.matrix)
    truth = _truth(args.manifest)
    extra_m = sorted(set(dm.ids) - set(truth.ids))
    extra_t = sorted(set(truth.ids) - set(dm.ids))
    if extra_m or extra_t:
        raise EvaluationError(f"id mismatch: in matrix only {extra_m}; in manifest only {extra_t}")
    truth = truth.reordered(dm.ids)
    if args.exclude_classes:
        dm, truth = exclude_classes(dm, truth, args.exclude_classes.split(","))
    if args.subset:
        n, _, trials = args.subset.partition(":")
        report = subset_eval(dm, truth, int(n), int(trials or 1), args.seed)
    else:
        report = compute_measures(rank_all(dm), truth)
    if not args.pose_errors:
        report.same_pose_error = None
    stem = Path(args.out)
    stem.parent.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    if not args.pose_errors:
        d.pop("same_pose_error")
    stem.with_name(stem.name + ".json").write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")
    stem.with_name(stem.name + ".csv").write_text(report.to_csv())
    stem.with_name(stem.name + "_pr.csv").write_text(report.pr_csv())
    label = args.label or Path(args.matrix).stem
    plot_pr_curves({label: (report.recall, report.precision)},
                   stem.with_name(stem.name + "_pr.svg"), args.title or "")
    if len(report.classes):
        stem.with_name(stem.name + "_confusion.csv").write_text(report.confusion_csv())
        plot_confusion(report.classes, report.confusion,
                       stem.with_name(stem.name + "_confusion.svg"), args.title or "")
    print(",".join(f"{k}={v:.4f}" for k, v in report.scalars().items()))
    return 0


def _load_curve(path):
    d = json.loads(Path(path).read_text())
    return np.array(d["pr_curve"]["recall"]), np.array(d["pr_curve"]["precision"])


def cmd_plot(args) -> int:
    from .plotting import plot_pr_curves

    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in args.reports]
    if len(labels) != len(args.reports):
        raise SystemExit("--labels needs one label per report")
    curves = {lab: _load_curve(p) for lab, p in zip(labels, args.reports)}
    plot_pr_curves(curves, args.out, args.title or "")
    print(f"wrote {args.out}")
    return 0


def cmd_dominance(args) -> int:
    ra, pa = _load_curve(args.a)
    rb, pb = _load_curve(args.b)
    if not np.allclose(ra, rb):
        raise EvaluationError("curves use different recall grids")
    res = dominates(pa, pb)
    print(f"{args.a} dominates {args.b}: {'yes' if res else 'no'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shaperank", description=__doc__)
    p.add_argument("-q", "--quiet", action="store_true", help="only report warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a labelled benchmark")
    g.add_argument("--classes", type=int, default=10)
    g.add_argument("--poses", type=int, default=10)
    g.add_argument("--mode", choices=MODES, default="bent_poses")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--prefix")
    g.add_argument("--separation", type=float, default=1.0)
    g.add_argument("--max-bend", type=float, default=1.0)
    g.add_argument("--spacing", type=float, default=2.5)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("describe", help="compute one descriptor per model")
    d.add_argument("--manifest")
    d.add_argument("--method")
    d.add_argument("--out")
    d.add_argument("--model", help="training artifact (required for trained methods)")
    d.add_argument("--cache", help="per-model descriptor cache directory")
    d.add_argument("--workers", type=int, default=1)
    _add_config(d)
    d.set_defaults(func=cmd_describe, required=("manifest", "method", "out"))

    m = sub.add_parser("distmat", help="distance matrix from a descriptor file")
    m.add_argument("--descriptors")
    m.add_argument("--out")
    m.add_argument("--method")
    m.add_argument("--metric", choices=pipeline.METRICS)
    m.add_argument("--model")
    _add_config(m)
    m.set_defaults(func=cmd_distmat, required=("descriptors", "out"))

    t = sub.add_parser("train", help="fit codebooks, mappings or fusion weights")
    t.add_argument("--train-manifest")
    t.add_argument("--test-manifest", help="checked to share no ids with the train manifest")
    t.add_argument("--method")
    t.add_argument("--out")
    _add_config(t)
    t.set_defaults(func=cmd_train, required=("train_manifest", "method", "out"))

    e = sub.add_parser("evaluate", help="retrieval measures, PR curve and confusion matrix")
    e.add_argument("--matrix", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True, help="output path stem")
    e.add_argument("--pose-errors", action="store_true")
    e.add_argument("--exclude-classes")
    e.add_argument("--subset", metavar="N:TRIALS")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--label")
    e.add_argument("--title")
    e.set_defaults(func=cmd_evaluate)

    pl = sub.add_parser("plot", help="overlay PR curves from report JSON files")
    pl.add_argument("reports", nargs="+")
    pl.add_argument("--labels")
    pl.add_argument("--out", required=True)
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)

    dm = sub.add_parser("dominance", help="strict PR-curve dominance of report a over b")
    dm.add_argument("a")
    dm.add_argument("b")
    dm.set_defaults(func=cmd_dominance)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(format="%(message)s", stream=sys.stderr)
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    if getattr(args, "dump_config", False):
        sys.stdout.write(pipeline.dump_config(_config(args)))
        return 0
    for name in getattr(args, "required", ()):
        if getattr(args, name) is None:
            parser.error(f"{args.command}: --{name.replace('_', '-')} is required")
    try:
        return args.func(args)
    except (pipeline.PipelineError, EvaluationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
