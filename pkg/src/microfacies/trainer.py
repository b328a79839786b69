"""Experiment configuration, the training loop, early stopping, prediction and suites."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .architectures import ARCHITECTURES, ArchScale, arch_family, build_network
from .augment import PRESETS, apply_pipeline, build_preset, dataset_channel_mean, grayscale_to_rgb
from .data import (MICROFACIES_CLASSES, Manifest, batch_iter, load_manifest, load_split, read_image,
                   stratified_split)
from .errors import TrainingError, ValidationError
from .evaluation import confusion_matrix, metrics_from_cm, topk_accuracy
from .export import write_confusion, write_curves, write_metrics
from .layers import BatchNorm, softmax
from .network import Network, _walk, network_backward, network_forward
from .optim import OPTIMIZERS, LrSchedule, OptimizerState, cross_entropy_loss, lr_at, optimizer_step
from .tensor import SeededRng, topk_indices
from .transfer import (FREEZE_VARIANTS, Checkpoint, FreezePolicy, apply_freeze_policy, load_checkpoint,
                       load_pretrained, restore_state, save_checkpoint)

DEFAULT_NUM_AUG = {"vgg_resnet": 3, "inception": 4}


@dataclass
class ExperimentConfig:
    """One training run.  Field names are the keys of the JSON config file."""

    arch: str = "vgg16"
    manifest: str = ""
    output_dir: str = "runs/run"
    name: str = ""
    split: str | None = None  # split CSV; derived from the manifest when absent
    split_seed: int = 0
    class_vocabulary: str = "microfacies"  # or "inferred" from the manifest labels
    batch_size: int = 32
    load_weights: bool = False
    weights_path: str | None = None
    freeze: str = "none_frozen"
    trainable_prefixes: list = field(default_factory=list)
    dropout_keep: float = 0.8
    start_lr: float = 1e-4
    decay_step: int | None = 400
    decay_rate: float = 0.96
    batch_norm: bool = True
    num_aug: int | None = None  # family default when absent
    optimizer: str = "adam"
    epochs: int = 40
    seed: int = 0
    scale: dict = field(default_factory=lambda: ArchScale().to_dict())
    eval_every: int = 2
    early_stop_patience: int | None = None
    early_stop_min_delta: float = 0.0
    target_val_acc: float | None = None  # stop once validation accuracy reaches this

    # ---- validation & serialization ---------------------------------------

    def arch_scale(self):
        return ArchScale.from_dict(self.scale)

    def resolved_num_aug(self):
        return self.num_aug if self.num_aug is not None else DEFAULT_NUM_AUG[arch_family(self.arch)]

    def validate(self):
        problems = []
        if self.arch not in ARCHITECTURES:
            problems.append(f"arch must be one of {ARCHITECTURES}")
        else:
            if (arch_family(self.arch), self.resolved_num_aug()) not in PRESETS:
                problems.append(f"num_aug {self.num_aug} is not valid for {self.arch}")
        if not self.manifest:
            problems.append("manifest path is required")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if not 0 < self.dropout_keep <= 1:
            problems.append("dropout_keep must be in (0, 1]")
        if self.freeze not in FREEZE_VARIANTS:
            problems.append(f"freeze must be one of {FREEZE_VARIANTS}")
        if self.optimizer.lower() not in OPTIMIZERS + ("rmsp",):
            problems.append(f"optimizer must be one of {OPTIMIZERS}")
        if self.load_weights and not self.weights_path:
            problems.append("load_weights requires weights_path")
        if self.eval_every < 1:
            problems.append("eval_every must be >= 1")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            problems.append("early_stop_patience must be >= 1")
        if self.class_vocabulary not in ("microfacies", "inferred"):
            problems.append("class_vocabulary must be 'microfacies' or 'inferred'")
        for what, fn in (("learning-rate schedule", self.schedule), ("scale", self.arch_scale)):
            try:
                fn()
            except (ValueError, TypeError) as e:
                problems.append(f"{what}: {e}")
        if problems:
            raise ValidationError("invalid experiment config: " + "; ".join(problems))
        return self

    def schedule(self):
        return LrSchedule(self.start_lr, self.decay_step, self.decay_rate if self.decay_step else 1.0)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown config fields: {unknown}")
        return cls(**d)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RunResult:
    best_checkpoint: str
    curves: list
    metrics: dict  # partition -> MetricsReport
    summary: dict
    epochs_run: int
    stopped_early: bool
    output_dir: str


SUMMARY_FIELDS = ("max_train_acc", "min_train_loss", "max_val_acc", "min_val_loss", "max_top1_test", "max_top3_test")


def summarize_curves(rows):
    """The six extrema reported per run, recomputed from a curve log."""
    def ext(fn, key):
        vals = [r[key] for r in rows if r.get(key) is not None]
        return fn(vals) if vals else None
    return {"max_train_acc": ext(max, "train_acc"), "min_train_loss": ext(min, "train_loss"),
            "max_val_acc": ext(max, "val_acc"), "min_val_loss": ext(min, "val_loss"),
            "max_top1_test": ext(max, "test_top1"), "max_top3_test": ext(max, "test_top3")}


@dataclass
class EarlyStopDecision:
    action: str  # "continue" or "stop"
    best_index: int | None


def early_stop_check(history, patience, min_delta=0.0, mode="max") -> EarlyStopDecision:
    """Stop once ``patience`` consecutive epochs fail to beat the best value by more than ``min_delta``."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    sign = 1.0 if mode == "max" else -1.0
    best, best_i, stale = None, None, 0
    for i, v in enumerate(history):
        v = sign * v
        if best is None or v > best + min_delta:
            best, best_i, stale = v, i, 0
        else:
            stale += 1
    return EarlyStopDecision("stop" if stale >= patience else "continue", best_i)


# --------------------------------------------------------------------------
# Data preparation
# --------------------------------------------------------------------------

class ImageStore:
    """Decoded images kept in memory, keyed by manifest path."""

    def __init__(self, manifest: Manifest):
        self.manifest = manifest
        self._cache = {}

    def get(self, record):
        img = self._cache.get(record.path)
        if img is None:
            img = grayscale_to_rgb(read_image(self.manifest.resolve(record)))
            self._cache[record.path] = img
        return img


def _eval_tensor(store, records, pipeline, dtype):
    if not records:
        return np.zeros((0, 3, pipeline.side, pipeline.side), dtype=dtype)
    return np.stack([apply_pipeline(store.get(r), pipeline, None, "eval") for r in records]).astype(dtype)


def _has_batch_norm(net):
    return any(isinstance(layer, BatchNorm) for _, layer in _walk(net.root))


def _train_batches(records, batch_size, seed, epoch, merge_singleton):
    batches = list(batch_iter(records, batch_size, seed, epoch))
    if merge_singleton and len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = batches[-2] + batches.pop()
    return batches


def predict_proba(net: Network, x, batch_size=64):
    out = []
    for i in range(0, len(x), batch_size):
        logits, _ = network_forward(net, x[i:i + batch_size], "infer")
        out.append(softmax(logits.astype(np.float64)))
    return np.concatenate(out) if out else np.zeros((0, net.n_classes))


def _loss_acc(probs, labels):
    if len(labels) == 0:
        return None, None
    p = np.clip(probs[np.arange(len(labels)), labels], 1e-12, 1.0)
    return float(-np.log(p).mean()), float(np.mean(probs.argmax(axis=1) == labels))


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def _prepare(config: ExperimentConfig, manifest: Manifest | None):
    config.validate()
    if manifest is None:
        vocab = MICROFACIES_CLASSES if config.class_vocabulary == "microfacies" else None
        manifest = load_manifest(config.manifest, vocab)
    if config.split and os.path.exists(config.split):
        split = load_split(config.split, manifest)
    else:
        split = stratified_split(manifest, config.split_seed)
    return manifest, split


def _network_for(config, n_classes):
    return build_network(config.arch, config.arch_scale(), n_classes, batch_norm=config.batch_norm,
                         keep_prob=config.dropout_keep, seed=config.seed)


def network_from_checkpoint(ckpt: Checkpoint) -> Network:
    m = ckpt.metadata
    net = build_network(ckpt.arch, ArchScale.from_dict(m["scale"]), m["n_classes"],
                        batch_norm=m["batch_norm"], keep_prob=m["keep_prob"], materialize=False)
    dtype = next(iter(ckpt.tensors.values())).dtype if ckpt.tensors else None
    net.initialize(0, dtype)
    return restore_state(net, ckpt)


def run_training(config: ExperimentConfig, manifest: Manifest | None = None, resume_from=None) -> RunResult:
    """Train per ``config``.  ``resume_from`` continues from a ``last.ckpt``
    written by an earlier run of the same config."""
    manifest, split = _prepare(config, manifest)
    classes = list(manifest.classes)
    index = {c: i for i, c in enumerate(classes)}
    os.makedirs(config.output_dir, exist_ok=True)

    net = _network_for(config, len(classes))
    if config.load_weights:
        load_pretrained(net, load_checkpoint(config.weights_path), strict=False, seed=config.seed)
    apply_freeze_policy(net, FreezePolicy(config.freeze, tuple(config.trainable_prefixes)))

    store = ImageStore(manifest)
    train_recs, val_recs, test_recs = (split.records(p) for p in ("train", "validation", "test"))
    if not train_recs:
        raise ValidationError("the training partition is empty")
    family = arch_family(config.arch)
    pipeline = build_preset(config.resolved_num_aug(), family).with_side(config.arch_scale().input_side)
    pipeline = pipeline.with_mean(dataset_channel_mean(store.get(r) for r in train_recs))
    x_val = _eval_tensor(store, val_recs, pipeline, net.dtype)
    y_val = np.array([index[r.label] for r in val_recs], dtype=np.int64)
    x_test = _eval_tensor(store, test_recs, pipeline, net.dtype)
    y_test = np.array([index[r.label] for r in test_recs], dtype=np.int64)

    opt = OptimizerState(config.optimizer)
    sched = config.schedule()
    rows, iteration, start_epoch = [], 0, 1
    best_val, best_epoch = -1.0, None
    best_path = os.path.join(config.output_dir, "best.ckpt")
    last_path = os.path.join(config.output_dir, "last.ckpt")
    if resume_from:
        ckpt = load_checkpoint(resume_from)
        restore_state(net, ckpt)
        opt = ckpt.optimizer or opt
        m = ckpt.metadata
        rows, iteration, start_epoch = m["curves"], m["iteration"], m["epoch"] + 1
        best_val, best_epoch = m["best_val_acc"], m["best_epoch"]

    base_meta = {"classes": classes, "channel_mean": list(pipeline.channel_mean),
                 "num_aug": config.resolved_num_aug(), "arch_family": family, "config": config.to_dict()}
    merge = _has_batch_norm(net)
    stopped_early = False
    for epoch in range(start_epoch, config.epochs + 1):
        if stopped_early:
            break
        losses, accs, sizes = [], [], []
        for b, batch in enumerate(_train_batches(train_recs, config.batch_size, config.seed, epoch, merge)):
            x = np.stack([apply_pipeline(store.get(r), pipeline, SeededRng(config.seed, "augment", epoch, r.path))
                          for r in batch]).astype(net.dtype)
            y = np.array([index[r.label] for r in batch], dtype=np.int64)
            logits, cache = network_forward(net, x, "train", SeededRng(config.seed, "dropout", epoch, b))
            loss, grad = cross_entropy_loss(logits.astype(np.float64), y)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at iteration {iteration} (epoch {epoch}, batch {b})")
            grads = network_backward(net, cache, grad)
            optimizer_step(net.params, grads, opt, lr_at(sched, iteration), frozen=net.frozen)
            iteration += 1
            losses.append(loss)
            accs.append(float(np.mean(logits.argmax(axis=1) == y)))
            sizes.append(len(batch))
        val_loss, val_acc = _loss_acc(predict_proba(net, x_val), y_val)
        row = {"epoch": epoch, "train_loss": losses[-1], "train_acc": accs[-1],
               "val_loss": val_loss, "val_acc": val_acc, "test_top1": None, "test_top3": None,
               "train_loss_avg": float(np.average(losses, weights=sizes)),
               "train_acc_avg": float(np.average(accs, weights=sizes))}
        if epoch % config.eval_every == 0 and len(y_test):
            tk = topk_accuracy(predict_proba(net, x_test), y_test, (1, min(3, len(classes))))
            row["test_top1"], row["test_top3"] = tk[1], tk[min(3, len(classes))]
        rows.append(row)

        monitored = val_acc if val_acc is not None else row["train_acc_avg"]
        if monitored > best_val:
            best_val, best_epoch = monitored, epoch
            save_checkpoint(net, None, {**base_meta, "epoch": epoch, "val_acc": val_acc}, best_path)
        if config.early_stop_patience:
            hist = [r["val_acc"] if r["val_acc"] is not None else r["train_acc_avg"] for r in rows]
            stopped_early = early_stop_check(hist, config.early_stop_patience,
                                             config.early_stop_min_delta).action == "stop"
        if config.target_val_acc is not None and val_acc is not None and val_acc >= config.target_val_acc:
            stopped_early = True
        save_checkpoint(net, opt, {**base_meta, "epoch": epoch, "iteration": iteration, "curves": rows,
                                   "best_val_acc": best_val, "best_epoch": best_epoch}, last_path)

    write_curves(rows, os.path.join(config.output_dir, "curves.csv"))
    metrics = evaluate_checkpoint(load_checkpoint(best_path), {"validation": (x_val, y_val), "test": (x_test, y_test)},
                                  config.output_dir)
    return RunResult(best_path, rows, metrics, summarize_curves(rows), len(rows), stopped_early, config.output_dir)


def evaluate_checkpoint(ckpt: Checkpoint, partitions, output_dir=None):
    """Confusion matrix and metrics per partition of ``(x, labels)`` arrays."""
    net = network_from_checkpoint(ckpt)
    classes = ckpt.metadata["classes"]
    out = {}
    for name, (x, y) in partitions.items():
        if len(y) == 0:
            continue
        probs = predict_proba(net, x.astype(net.dtype))
        cm = confusion_matrix(y, probs.argmax(axis=1), len(classes), classes)
        report = metrics_from_cm(cm)
        report.topk = topk_accuracy(probs, y, sorted({1, min(3, len(classes))}))
        out[name] = report
        if output_dir:
            write_confusion(cm, os.path.join(output_dir, f"cm_{name}.csv"),
                            os.path.join(output_dir, f"cm_{name}_normalized.csv"))
            write_metrics(report, os.path.join(output_dir, f"metrics_{name}.csv"))
    return out


def checkpoint_pipeline(ckpt: Checkpoint):
    m = ckpt.metadata
    side = ArchScale.from_dict(m["scale"]).input_side
    return build_preset(m["num_aug"], m["arch_family"]).with_side(side).with_mean(m["channel_mean"])


def evaluate_split(ckpt_path, manifest: Manifest, split, output_dir=None, partitions=("validation", "test")):
    ckpt = load_checkpoint(ckpt_path)
    pipeline = checkpoint_pipeline(ckpt)
    index = {c: i for i, c in enumerate(ckpt.metadata["classes"])}
    store = ImageStore(manifest)
    data = {}
    for p in partitions:
        recs = [r for r in split.records(p) if r.label in index]
        data[p] = (_eval_tensor(store, recs, pipeline, np.float64), np.array([index[r.label] for r in recs], dtype=np.int64))
    return evaluate_checkpoint(ckpt, data, output_dir)


def predict_topk(checkpoint, image_paths, k=3):
    """Ranked ``(class, probability)`` lists per image; undecodable images get an error entry."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    classes = ckpt.metadata["classes"]
    if not 1 <= k <= len(classes):
        raise ValueError(f"k must be in [1, {len(classes)}]")
    net = network_from_checkpoint(ckpt)
    pipeline = checkpoint_pipeline(ckpt)
    results = []
    for path in image_paths:
        try:
            img = grayscale_to_rgb(read_image(path))
        except (OSError, ValueError) as e:
            results.append({"path": str(path), "ranked": None, "probabilities": None, "error": str(e)})
            continue
        x = apply_pipeline(img, pipeline, None, "eval")[None].astype(net.dtype)
        probs = predict_proba(net, x)[0]
        ranked = [(classes[i], float(probs[i])) for i in topk_indices(probs, k)]
        results.append({"path": str(path), "ranked": ranked, "probabilities": probs, "error": None})
    return results


# --------------------------------------------------------------------------
# Suites
# --------------------------------------------------------------------------

SUITE_CONFIG_FIELDS = ("name", "arch", "batch_size", "load_weights", "freeze", "dropout_keep", "start_lr",
                       "decay_step", "decay_rate", "batch_norm", "num_aug", "optimizer", "epochs", "seed", "scale")


def run_experiment_suite(configs, results_csv, manifest: Manifest | None = None):
    """Run configs sequentially; a failing run records its error and the suite continues."""
    if not configs:
        raise ValueError("suite needs at least one config")
    rows = []
    for cfg in configs:
        if isinstance(cfg, dict):
            try:
                cfg = ExperimentConfig.from_dict(cfg)
            except (ValidationError, TypeError) as e:
                rows.append({"name": cfg.get("name", ""), "status": "error", "error": str(e)})
                continue
        row = {f: getattr(cfg, f) for f in SUITE_CONFIG_FIELDS}
        row["scale"] = json.dumps(cfg.scale, sort_keys=True)
        try:
            res = run_training(cfg, manifest)
            row.update(res.summary, epochs_ran=res.epochs_run, status="ok", error="")
        except Exception as e:  # noqa: BLE001 - isolation is the point
            row.update(status="error", error=f"{type(e).__name__}: {e}")
        rows.append(row)
    cols = SUITE_CONFIG_FIELDS + ("epochs_ran",) + SUMMARY_FIELDS + ("status", "error")
    os.makedirs(os.path.dirname(os.path.abspath(results_csv)), exist_ok=True)
    with open(results_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow(["" if row.get(c) is None else row.get(c) for c in cols])
    return rows
