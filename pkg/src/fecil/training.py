"""Incremental training: bootstrap, expansion, distillation compression.

Each incremental step runs two phases. Expansion trains a widened model
(frozen previous extractor beside a trainable copy) with cross-entropy on
the wide head plus an auxiliary head that separates new classes from the
merged past. Compression distills that model back into a fixed-size
student on mixed batches whose partners come from rehearsal memory.
Weight alignment follows both phases; the memory is refreshed at the end
of the step from the compact model's features.

Determinism: every stochastic choice (init, shuffling, crops, flips,
mixing, memory sampling) derives from per-(step, role) substreams of the
run seed, so a config plus seed fixes the entire run bit-for-bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datasets import LabeledDataset, build_incremental_dataset, load_dataset, make_task_sequence
from .losses import distillation_loss, softmax_cross_entropy
from .memory import ExemplarMemory, MemoryBudget
from .metrics import EpochRecord, RunSummary, StepEval, topk_accuracy
from .mixing import rehearsal_pair_batch, within_batch_mix
from .networks import (BackboneConfig, Classifier, CompactNetwork, DynamicNetwork,
                       FeatureExtractor, aux_targets, compress_init, expand, param_count,
                       weight_align)
from .optim import SGDMomentum, cosine_lr

AUG_MODES = ("none", "mixup", "cutmix", "r_mixup", "r_cutmix")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs_expand: int = 200
    epochs_compress: int = 200
    base_lr: float = 0.1
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 5e-4
    tau: float = 2.0
    alpha: float = 0.2
    compress_aug: str = "r_cutmix"
    ce_weight_in_compression: float = 0.0
    crop_flip: bool = True
    debug_checks: bool = True

    def __post_init__(self):
        if min(self.epochs_expand, self.epochs_compress, self.batch_size) < 1:
            raise ValueError("epochs and batch size must be positive")
        if self.base_lr <= 0 or self.tau <= 0 or self.alpha <= 0:
            raise ValueError("base_lr, tau, and alpha must be positive")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("bad momentum or weight decay")
        if self.compress_aug not in AUG_MODES:
            raise ValueError(f"compress_aug must be one of {AUG_MODES}")
        if self.ce_weight_in_compression < 0:
            raise ValueError("ce_weight_in_compression must be >= 0")


@dataclass
class RunConfig:
    seed: int = 0
    dataset_kind: str = "synth"
    dataset_path: str = None
    dataset_seed: int = 0
    num_classes: int = 10
    per_class: int = 200
    image_side: int = 16
    test_per_class: int = None
    protocol: str = "B0"
    steps: int = 5
    protocol_seed: int = None
    memory_mode: str = "total"
    memory_value: int = 2000
    backbone_width: int = 8
    blocks_per_stage: int = 2
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        # Fail at construction, not miles into a run.
        if self.memory_mode not in ("total", "per_class"):
            raise ValueError(f"unknown memory mode {self.memory_mode!r}")
        if self.protocol not in ("B0", "B50"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.memory_value < 1:
            raise ValueError("memory budget must be positive")
        if self.steps < 1:
            raise ValueError("need at least one step")
        if self.backbone_width < 1 or self.blocks_per_stage < 1:
            raise ValueError("backbone width and depth must be positive")


@dataclass
class StepReport:
    step: int
    class_ids: list
    epochs: list  # EpochRecord rows for this step
    eval: StepEval


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(k) for k in key]))


def channel_stats(images):
    """Per-channel normalization constants (mean, std) as float32."""
    mean = images.mean(axis=(0, 1, 2), dtype=np.float64)
    std = images.std(axis=(0, 1, 2), dtype=np.float64)
    return mean.astype(np.float32), np.maximum(std, 1e-6).astype(np.float32)


def normalize(images, norm):
    mean, std = norm
    return ((images - mean) / std).astype(np.float32)


def augment_batch(images, rng, pad: int = 2):
    """Reflection-pad random crop plus horizontal flip, per image."""
    n, h, w = images.shape[:3]
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad), (0, 0)), mode="reflect")
    offsets = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    rows = offsets[:, 0, None] + np.arange(h)
    cols = offsets[:, 1, None] + np.arange(w)
    out = padded[np.arange(n)[:, None, None], rows[:, :, None], cols[:, None, :]]
    out[flips] = out[flips, :, ::-1]
    return out


def one_hot(rows, num_classes):
    out = np.zeros((len(rows), num_classes), dtype=np.float32)
    out[np.arange(len(rows)), rows] = 1.0
    return out


def _class_rows(head):
    return {int(cid): i for i, cid in enumerate(head.class_ids)}


def freeze_network(net) -> None:
    """Detach a trained network from future gradient flow entirely."""
    for _, t in net.params():
        t.requires_grad = False
        t.grad = None
    extractors = [net.extractor] if isinstance(net, CompactNetwork) else \
        [net.prev_extractor, net.new_extractor]
    for e in extractors:
        e.set_frozen(True)


def _assert_no_frozen_grads(net, step, phase):
    for name, t in net.params():
        if not t.requires_grad and t.grad is not None:
            raise AssertionError(f"step {step} {phase}: gradient reached frozen {name}")


def _train_phase(step, phase, epochs, config, n, batch_loss, params, net, train_rng, records):
    """Shared epoch loop: shuffle, per-batch loss closure, SGD, bookkeeping."""
    opt = SGDMomentum(params, momentum=config.momentum, weight_decay=config.weight_decay)
    for epoch in range(epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(epoch, epochs, config.base_lr)
        perm = train_rng.permutation(n)
        losses = []
        for i in range(0, n, config.batch_size):
            loss = batch_loss(perm[i : i + config.batch_size], train_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step} {phase} epoch {epoch}")
            ad.backward(loss)
            if config.debug_checks:
                _assert_no_frozen_grads(net, step, phase)
            opt.step(lr)
            opt.zero_grad()
            losses.append(value)
        records.append(EpochRecord(step, phase, epoch, float(np.mean(losses)), lr,
                                   time.perf_counter() - t0))


def train_first_task(data: LabeledDataset, class_ids, backbone: BackboneConfig,
                     config: TrainConfig, init_rng, train_rng, norm=None,
                     records=None, step: int = 1) -> CompactNetwork:
    """Bootstrap: plain cross-entropy training of the first compact model."""
    if norm is None:
        norm = channel_stats(data.images)
    if records is None:
        records = []
    extractor = FeatureExtractor(backbone, init_rng)
    head = Classifier.random(len(class_ids), extractor.out_dim, class_ids, init_rng)
    net = CompactNetwork(extractor, head)
    rows_all = np.array([_class_rows(head)[int(y)] for y in data.labels])

    def batch_loss(idx, rng):
        x = data.images[idx]
        if config.crop_flip:
            x = augment_batch(x, rng)
        logits, _ = net.forward(Tensor(normalize(x, norm)), train=True)
        return softmax_cross_entropy(logits, one_hot(rows_all[idx], head.num_classes))

    _train_phase(step, "bootstrap", config.epochs_expand, config, len(data), batch_loss,
                 [t for _, t in net.params() if t.requires_grad], net, train_rng, records)
    return net


def train_expansion(net: DynamicNetwork, data, config: TrainConfig, train_rng, norm,
                    records, step: int, old_class_ids) -> DynamicNetwork:
    """Wide-model phase: cross-entropy on both heads, then weight alignment.

    Only the new extractor and the two heads train; the auxiliary head is
    dropped once alignment is done.
    """
    rows = _class_rows(net.head_big)
    rows_all = np.array([rows[int(y)] for y in data.labels])
    old_count = len(old_class_ids)
    new_count = len(net.class_ids) - old_count
    aux_all = aux_targets(rows_all, old_count, new_count)

    def batch_loss(idx, rng):
        x = data.images[idx]
        if config.crop_flip:
            x = augment_batch(x, rng)
        logits_big, logits_aux, _ = net.forward(Tensor(normalize(x, norm)), train=True)
        loss = softmax_cross_entropy(logits_big, one_hot(rows_all[idx], len(net.class_ids)))
        aux = softmax_cross_entropy(logits_aux, one_hot(aux_all[idx], new_count + 1))
        return ad.add(loss, aux)

    _train_phase(step, "expand", config.epochs_expand, config, len(data), batch_loss,
                 net.trainable_params(), net, train_rng, records)
    new_ids = [c for c in net.class_ids if c not in set(old_class_ids)]
    weight_align(net.head_big, old_class_ids, new_ids)
    net.discard_aux()
    return net


def _mixed_batch(x, y, mem, config, rng, class_rows):
    num_classes = len(class_rows)
    mode = config.compress_aug
    if mode == "none":
        rows = np.array([class_rows[int(v)] for v in y])
        return x, one_hot(rows, num_classes)
    kind = "mixup" if mode.endswith("mixup") else "cutmix"
    if mode.startswith("r_") and mem is not None and mem.class_ids:
        mixed, targets, _ = rehearsal_pair_batch(x, y, mem, config.alpha, rng, class_rows, kind)
    else:
        mixed, targets, _ = within_batch_mix(x, y, config.alpha, rng, class_rows, kind)
    return mixed, targets.astype(np.float32)


def train_compression(big, student: CompactNetwork, data, mem, config: TrainConfig,
                      train_rng, norm, records, step: int, old_class_ids) -> CompactNetwork:
    """Distill the frozen wide model into the student on mixed batches."""
    if list(student.class_ids) != list(big.class_ids):
        raise ValueError("student and teacher must order classes identically")
    class_rows = _class_rows(student.head)

    def batch_loss(idx, rng):
        x, y = data.images[idx], data.labels[idx]
        if config.crop_flip:
            x = augment_batch(x, rng)
        mixed, targets = _mixed_batch(x, y, mem, config, rng, class_rows)
        x_norm = normalize(mixed, norm)
        teacher = big.logits(x_norm, batch_size=len(x_norm))
        logits, _ = student.forward(Tensor(x_norm), train=True)
        loss = distillation_loss(logits, Tensor(teacher), config.tau)
        if config.ce_weight_in_compression > 0:
            ce = softmax_cross_entropy(logits, targets)
            loss = ad.add(loss, ad.scale(ce, config.ce_weight_in_compression))
        return loss

    _train_phase(step, "compress", config.epochs_compress, config, len(data), batch_loss,
                 [t for _, t in student.params() if t.requires_grad], student, train_rng, records)
    new_ids = [c for c in student.class_ids if c not in set(old_class_ids)]
    weight_align(student.head, old_class_ids, new_ids)
    return student


def evaluate(net, test: LabeledDataset, norm, batch_size: int = 256):
    """(top-1, top-5) accuracy; top-5 degrades to top-C when C < 5."""
    rows = _class_rows(net.head if isinstance(net, CompactNetwork) else net.head_big)
    labels = np.array([rows[int(y)] for y in test.labels])
    logits = net.logits(normalize(test.images, norm), batch_size=batch_size)
    k5 = min(5, logits.shape[1])
    return topk_accuracy(logits, labels, 1), topk_accuracy(logits, labels, k5)


def measure_epoch_time(records, phase: str, step: int = None) -> float:
    """Median epoch wall time for a phase, first (warm-up) epoch dropped."""
    times = [r.time_s for r in records
             if r.phase == phase and (step is None or r.step == step)]
    if len(times) < 3:
        raise ValueError(f"need at least 3 {phase} epochs to time, have {len(times)}")
    return float(np.median(times[1:]))


def run_incremental(cfg: RunConfig, on_step=None):
    """Full protocol over all steps; returns (StepReports, RunSummary).

    on_step, when given, is called as on_step(t, compact, big_or_none,
    memory, norm) after each step's evaluation, before the next step
    begins.
    """
    train_ds, test_ds = load_dataset(cfg.dataset_kind, path=cfg.dataset_path,
                                     seed=cfg.dataset_seed, num_classes=cfg.num_classes,
                                     per_class=cfg.per_class, image_side=cfg.image_side,
                                     test_per_class=cfg.test_per_class)
    num_classes = int(train_ds.labels.max()) + 1
    protocol_seed = cfg.seed if cfg.protocol_seed is None else cfg.protocol_seed
    seq = make_task_sequence(num_classes, cfg.protocol, cfg.steps, protocol_seed,
                             memory=MemoryBudget(cfg.memory_mode, cfg.memory_value))
    backbone = BackboneConfig(cfg.backbone_width, train_ds.images.shape[3], cfg.blocks_per_stage)
    norm = channel_stats(train_ds.class_subset(seq.tasks[0]).images)
    mem = ExemplarMemory(seq.memory_rule)
    reports = []
    evals = []
    net = None
    seen = []
    for t, task_classes in enumerate(seq.tasks, start=1):
        init_rng, train_rng = _rng(cfg.seed, t, 0), _rng(cfg.seed, t, 1)
        records = []
        task_train = train_ds.class_subset(task_classes)
        try:
            if t == 1:
                net = train_first_task(task_train, task_classes, backbone, cfg.train,
                                       init_rng, train_rng, norm, records, step=t)
                big = None
            else:
                data = build_incremental_dataset(task_train, mem)
                big = expand(net, task_classes, init_rng)
                train_expansion(big, data, cfg.train, train_rng, norm, records, t, seen)
                freeze_network(big)
                student = compress_init(net, big.class_ids, init_rng)
                net = train_compression(big, student, data, mem, cfg.train, train_rng,
                                        norm, records, t, seen)
            mem.update(task_train.by_class(task_classes), net.extractor)
        except (ValueError, AssertionError, TrainingError) as e:
            raise TrainingError(f"step {t} failed: {e}") from e
        seen = seen + list(task_classes)
        test_seen = test_ds.class_subset(seen)
        top1_c, top5_c = evaluate(net, test_seen, norm)
        top1_b, top5_b = (top1_c, top5_c) if big is None else evaluate(big, test_seen, norm)
        ev = StepEval(t, len(seen), top1_b, top5_b, top1_c, top5_c,
                      param_count(big) if big is not None else param_count(net),
                      param_count(net), param_count(net.extractor))
        evals.append(ev)
        reports.append(StepReport(t, list(task_classes), records, ev))
        if on_step is not None:
            on_step(t, net, big, mem, norm)
    return reports, RunSummary(cfg.seed, evals)


@dataclass
class AblationRun:
    mode: str
    seed: int
    summary: RunSummary
    step_epoch_times: dict  # step -> median compress-epoch seconds


def run_ablation(cfg: RunConfig, modes=AUG_MODES, seeds=(0, 1, 2, 3, 4), progress=None):
    """Run the augmentation matrix; returns {mode: [AblationRun per seed]}.

    Epoch times cover the compression phase (the only phase the modes
    differ in), one median per step with the warm-up epoch dropped.
    """
    results = {mode: [] for mode in modes}
    for mode in modes:
        for seed in seeds:
            run_cfg = replace(cfg, seed=int(seed),
                              train=replace(cfg.train, compress_aug=mode))
            reports, summary = run_incremental(run_cfg)
            records = [r for rep in reports for r in rep.epochs]
            steps = sorted({r.step for r in records if r.phase == "compress"})
            times = {t: measure_epoch_time(records, "compress", t) for t in steps}
            results[mode].append(AblationRun(mode, int(seed), summary, times))
            if progress is not None:
                progress(mode, seed, summary)
    return results
