"""Command-line entry point: ``microfacies <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import tensor
from .architectures import ARCHITECTURES, FEATURE_NODE, ArchScale, build_network
from .augment import apply_pipeline
from .data import MICROFACIES_CLASSES, load_manifest, load_split, stratified_split
from .export import read_features, write_embedding, write_feature_maps, write_features
from .network import extract_features, forward_to
from .optim import gradient_check, jitter_parameters
from .trainer import (ExperimentConfig, ImageStore, checkpoint_pipeline, evaluate_split, network_from_checkpoint,
                      predict_topk, run_experiment_suite, run_training)
from .transfer import load_checkpoint
from .tsne import tsne_embed


def _manifest(args):
    return load_manifest(args.manifest, None if args.infer_classes else MICROFACIES_CLASSES)


def _split(args, manifest):
    return load_split(args.split, manifest) if args.split else stratified_split(manifest, args.split_seed)


def cmd_split(args):
    manifest = _manifest(args)
    split = stratified_split(manifest, args.seed)
    split.export_csv(args.out)
    print(f"{'class':<16}{'train':>8}{'val':>8}{'test':>8}")
    totals = [0, 0, 0]
    for c, cnt in split.counts().items():
        vals = [cnt["train"], cnt["validation"], cnt["test"]]
        totals = [a + b for a, b in zip(totals, vals)]
        print(f"{c:<16}" + "".join(f"{v:>8}" for v in vals))
    print(f"{'total':<16}" + "".join(f"{v:>8}" for v in totals))


def cmd_train(args):
    cfg = ExperimentConfig.load(args.config)
    if args.epochs:
        cfg.epochs = args.epochs
    if args.output_dir:
        cfg.output_dir = args.output_dir
    res = run_training(cfg, resume_from=args.resume)
    print(json.dumps({"best_checkpoint": res.best_checkpoint, "epochs_run": res.epochs_run,
                      "stopped_early": res.stopped_early, **res.summary}, indent=2))


def cmd_eval(args):
    manifest = _manifest(args)
    reports = evaluate_split(args.checkpoint, manifest, _split(args, manifest), args.out)
    for name, rep in reports.items():
        macro = rep.macro()
        line = f"{name}: accuracy {rep.accuracy:.4f}"
        line += "".join(f", top{k} {v:.4f}" for k, v in sorted(rep.topk.items()))
        line += "".join(f", {m} {mu:.2f} ± {sd:.2f}" for m, (mu, sd) in macro.items())
        print(line)


def cmd_predict(args):
    for res in predict_topk(args.checkpoint, args.images, args.k):
        if res["error"]:
            print(f"{res['path']}\tERROR\t{res['error']}")
        else:
            print(res["path"] + "\t" + "\t".join(f"{c}:{p:.4f}" for c, p in res["ranked"]))


def cmd_features(args):
    ckpt = load_checkpoint(args.checkpoint)
    net = network_from_checkpoint(ckpt)
    node = args.node or FEATURE_NODE[ckpt.arch]
    manifest = _manifest(args)
    recs = _split(args, manifest).records(args.partition)
    if args.limit:
        recs = recs[:args.limit]
    pipeline = checkpoint_pipeline(ckpt)
    store = ImageStore(manifest)
    x = np.stack([apply_pipeline(store.get(r), pipeline, None, "eval") for r in recs]).astype(net.dtype)
    feats = np.concatenate([extract_features(net, x[i:i + 64], node) for i in range(0, len(x), 64)])
    write_features(feats, [r.label for r in recs], args.out, ids=[r.path for r in recs])
    if args.maps_dir:
        act = forward_to(net, x[:1], node)[0]
        write_feature_maps(act, args.maps_dir, prefix=node.replace(".", "_"))
    print(f"wrote {feats.shape[0]} x {feats.shape[1]} features from node {node!r} to {args.out}")


def cmd_tsne(args):
    ids, labels, feats = read_features(args.features)
    t = time.time()
    emb = tsne_embed(feats, args.perplexity, args.iterations, args.seed, labels)
    write_embedding(emb.coords, labels, args.out, ids=ids)
    print(f"KL after exaggeration {emb.kl_after_exaggeration:.4f}, final {emb.kl_divergence:.4f} "
          f"({time.time() - t:.1f}s)")


def cmd_suite(args):
    with open(args.configs, encoding="utf-8") as fh:
        configs = json.load(fh)
    rows = run_experiment_suite(configs, args.out)
    ok = sum(r.get("status") == "ok" for r in rows)
    print(f"{ok}/{len(rows)} runs succeeded; results in {args.out}")


def cmd_gradcheck(args):
    tensor.set_precision("fp64")
    archs = ARCHITECTURES if args.arch == "all" else (args.arch,)
    worst = 0.0
    for arch in archs:
        scale = ArchScale(args.side, args.width, args.blocks)
        net = build_network(arch, scale, args.classes, batch_norm=not args.no_bn, keep_prob=args.keep,
                            seed=args.seed, dtype=np.float64)
        jitter_parameters(net, seed=args.seed)
        rng = np.random.default_rng(args.seed)
        x = rng.normal(size=(args.batch, 3, args.side, args.side))
        y = rng.integers(0, args.classes, size=args.batch)
        t = time.time()
        res = gradient_check(net, x, y, max_per_param=args.max_per_param, seed=args.seed)
        worst = max(worst, res.max_rel_error)
        print(f"{arch}: max relative error {res.max_rel_error:.3e} ({res.worst_param}), "
              f"{res.checked} elements, {time.time() - t:.1f}s")
    return 0 if worst < args.tol else 1


def cmd_synth(args):
    from .synthetic import make_shapes_dataset
    m = make_shapes_dataset(args.out, args.per_class, args.side, args.seed)
    print(f"wrote {len(m)} images and manifest.csv to {args.out}")


def build_parser():
    p = argparse.ArgumentParser(prog="microfacies", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def manifest_args(sp, split=True):
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--infer-classes", action="store_true", help="take the class list from the manifest labels")
        if split:
            sp.add_argument("--split", help="split CSV; derived from the manifest when omitted")
            sp.add_argument("--split-seed", type=int, default=0)

    sp = sub.add_parser("split", help="stratified train/validation/test split of a manifest")
    manifest_args(sp, split=False)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("train", help="train from a JSON experiment config")
    sp.add_argument("config")
    sp.add_argument("--resume", help="last.ckpt of an interrupted run")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--output-dir")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="confusion matrices and metrics for a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    manifest_args(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="top-k classes for images")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("images", nargs="+")
    sp.add_argument("-k", type=int, default=3)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("features", help="pooled activations of a node for a partition")
    sp.add_argument("--checkpoint", required=True)
    manifest_args(sp)
    sp.add_argument("--partition", default="test", choices=("train", "validation", "test"))
    sp.add_argument("--node", help="dotted node name; defaults to the architecture's last feature stage")
    sp.add_argument("--limit", type=int)
    sp.add_argument("--maps-dir", help="also write the first image's feature maps as PGM files")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("tsne", help="2-D embedding of a feature CSV")
    sp.add_argument("features")
    sp.add_argument("--out", required=True)
    sp.add_argument("--perplexity", type=float, default=30.0)
    sp.add_argument("--iterations", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_tsne)

    sp = sub.add_parser("suite", help="run a JSON list of configs and tabulate results")
    sp.add_argument("configs")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_suite)

    sp = sub.add_parser("gradcheck", help="finite-difference check of a mini architecture")
    sp.add_argument("--arch", default="all", choices=ARCHITECTURES + ("all",))
    sp.add_argument("--side", type=int, default=16)
    sp.add_argument("--width", type=float, default=1 / 32)
    sp.add_argument("--blocks", type=int, default=1)
    sp.add_argument("--classes", type=int, default=3)
    sp.add_argument("--batch", type=int, default=2)
    sp.add_argument("--keep", type=float, default=1.0)
    sp.add_argument("--no-bn", action="store_true")
    sp.add_argument("--max-per-param", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("synth", help="write the coloured-shapes demo dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--per-class", type=int, default=200)
    sp.add_argument("--side", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
