"""Dataset ingestion, task splitting, and incremental dataset assembly.

Supported sources: IDX image/label file pairs (big-endian, MNIST layout),
CIFAR-100 binary records (3074 bytes: coarse label, fine label, 3072
channel-planar pixels), and a deterministic synthetic blob dataset small
enough to run the full incremental protocol on a CPU in minutes.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .memory import MemoryBudget

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid split requests."""


@dataclass
class LabeledDataset:
    images: np.ndarray  # [n, H, W, C] floats in [0, 1]
    labels: np.ndarray  # [n] int class ids
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DatasetError(f"{len(self.images)} images vs {len(self.labels)} labels")
        if len(self.images) == 0:
            raise DatasetError("empty dataset")
        if np.any(self.labels < 0):
            raise DatasetError("negative class id")

    def __len__(self):
        return len(self.images)

    def class_subset(self, class_ids) -> "LabeledDataset":
        mask = np.isin(self.labels, list(class_ids))
        if not mask.any():
            raise DatasetError(f"no samples for classes {sorted(class_ids)}")
        return LabeledDataset(self.images[mask], self.labels[mask], self.split)

    def by_class(self, class_ids):
        """Image arrays per class id, in the given class order."""
        return {cid: self.images[self.labels == cid] for cid in class_ids}


def _read_idx(path, expected_magic, what):
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise DatasetError(f"cannot read {what} file {path}: {e}") from e
    if len(buf) < 4:
        raise DatasetError(f"{path}: too short for an IDX header")
    magic = struct.unpack(">I", buf[:4])[0]
    if magic != expected_magic:
        raise DatasetError(
            f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x} for {what}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DatasetError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - header != count:
        raise DatasetError(
            f"{path}: payload is {len(buf) - header} bytes, header promises {count}")
    return np.frombuffer(buf, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(path, labels_path=None, split="train") -> LabeledDataset:
    """Load an IDX image file and its sibling label file.

    When labels_path is omitted it is derived from the image path by the
    conventional substitutions images->labels and idx3->idx1.
    """
    if labels_path is None:
        labels_path = path.replace("images", "labels").replace("idx3", "idx1")
        if labels_path == path:
            raise DatasetError(f"cannot derive a labels path from {path}")
    raw = _read_idx(path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if raw.shape[0] != labels.shape[0]:
        raise DatasetError(f"{raw.shape[0]} images but {labels.shape[0]} labels")
    images = (raw.astype(np.float32) / 255.0)[..., None]
    return LabeledDataset(images, labels.astype(np.int64), split)


def load_cifar_binary(path, fine_labels: bool = True, split="train") -> LabeledDataset:
    """Load CIFAR-100 binary records (coarse byte, fine byte, 3072 pixels)."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) == 0 or len(buf) % 3074 != 0:
        hint = " (3073-byte records suggest the CIFAR-10 layout)" if len(buf) % 3073 == 0 and len(buf) else ""
        raise DatasetError(f"{path}: length {len(buf)} is not a multiple of 3074{hint}")
    records = np.frombuffer(buf, dtype=np.uint8).reshape(-1, 3074)
    labels = records[:, 1] if fine_labels else records[:, 0]
    if labels.max() >= 100:
        raise DatasetError(f"{path}: label {int(labels.max())} >= 100")
    pixels = records[:, 2:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    images = pixels.astype(np.float32) / 255.0
    return LabeledDataset(images, labels.astype(np.int64), split)


def _render_blobs(rng, num_classes, count_per_class, side):
    """Anisotropic Gaussian blob per class, jittered per sample.

    Class identity is carried jointly by blob position (classes sit on a
    circle) and orientation. Jitter is deliberately large relative to the
    class spacing so a handful of stored exemplars does not cover a
    class's variation.
    """
    yy, xx = np.meshgrid(np.arange(side, dtype=np.float64),
                         np.arange(side, dtype=np.float64), indexing="ij")
    images = np.empty((num_classes * count_per_class, side, side, 1), dtype=np.float32)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), count_per_class)
    radius = 0.28 * side
    s_major, s_minor = 0.22 * side, 0.10 * side
    row = 0
    for c in range(num_classes):
        angle = 2.0 * np.pi * c / num_classes
        base_cx = side / 2.0 + radius * np.cos(angle)
        base_cy = side / 2.0 + radius * np.sin(angle)
        tilt = np.pi * c / num_classes
        for _ in range(count_per_class):
            jx, jy = rng.normal(0.0, 0.05 * side, size=2)
            amp = rng.uniform(0.75, 1.25)
            spin = tilt + rng.normal(0.0, 0.12)
            cos_t, sin_t = np.cos(spin), np.sin(spin)
            dx, dy = xx - (base_cx + jx), yy - (base_cy + jy)
            u = dx * cos_t + dy * sin_t
            v = -dx * sin_t + dy * cos_t
            blob = amp * np.exp(-0.5 * ((u / s_major) ** 2 + (v / s_minor) ** 2))
            noisy = blob + rng.normal(0.0, 0.1, size=blob.shape)
            images[row, :, :, 0] = np.clip(noisy, 0.0, 1.0)
            row += 1
    return images, labels


def synth_gaussians(num_classes, per_class, image_side, seed, test_per_class=None):
    """Deterministic blob dataset; returns disjoint (train, test) splits.

    Each class is an elongated blob at a class-specific position and
    orientation, with per-sample position/amplitude jitter and pixel
    noise of standard deviation 0.1.
    """
    if num_classes < 2:
        raise DatasetError("need at least 2 classes")
    if per_class < 2:
        raise DatasetError("need at least 2 samples per class")
    if test_per_class is None:
        test_per_class = max(1, per_class // 4)
    rng = np.random.default_rng(seed)
    train_images, train_labels = _render_blobs(rng, num_classes, per_class, image_side)
    test_images, test_labels = _render_blobs(rng, num_classes, test_per_class, image_side)
    return (LabeledDataset(train_images, train_labels, "train"),
            LabeledDataset(test_images, test_labels, "test"))


@dataclass(frozen=True)
class TaskSequence:
    class_order: list
    tasks: list  # list of class-id groups, in presentation order
    memory_rule: MemoryBudget

    def __post_init__(self):
        flat = [c for group in self.tasks for c in group]
        if flat != list(self.class_order):
            raise ValueError("task groups must partition the class order")


def make_task_sequence(num_classes, protocol, steps, seed, memory=None) -> TaskSequence:
    """Seeded class order carved into task groups.

    B0 splits all classes into `steps` equal groups (default budget: 2000
    total). B50 trains a 50-class base task first, then splits the
    remaining 50 classes into `steps` equal groups (default budget: 20
    per class).
    """
    order = [int(c) for c in np.random.default_rng(seed).permutation(num_classes)]
    if protocol == "B0":
        if steps < 1 or num_classes % steps != 0:
            raise ValueError(f"{steps} steps do not divide {num_classes} classes")
        size = num_classes // steps
        tasks = [order[i * size : (i + 1) * size] for i in range(steps)]
        rule = memory or MemoryBudget("total", 2000)
    elif protocol == "B50":
        if num_classes != 100:
            raise ValueError("the 50-class base protocol is defined for 100 classes")
        if steps < 1 or 50 % steps != 0:
            raise ValueError(f"{steps} steps do not divide the remaining 50 classes")
        size = 50 // steps
        tasks = [order[:50]] + [order[50 + i * size : 50 + (i + 1) * size] for i in range(steps)]
        rule = memory or MemoryBudget("per_class", 20)
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    return TaskSequence(order, tasks, rule)


@dataclass
class IncrementalDataset:
    """Union of the new task's data and the current rehearsal memory."""
    images: np.ndarray
    labels: np.ndarray
    from_memory: np.ndarray = field(default=None)  # bool per sample

    def __post_init__(self):
        if self.from_memory is None:
            self.from_memory = np.zeros(len(self.labels), dtype=bool)

    def __len__(self):
        return len(self.labels)


def build_incremental_dataset(task_data: LabeledDataset, mem=None) -> IncrementalDataset:
    if mem is None or not mem.class_ids:
        return IncrementalDataset(task_data.images.copy(), task_data.labels.copy())
    overlap = set(np.unique(task_data.labels)) & set(mem.class_ids)
    if overlap:
        raise ValueError(f"new task classes already in memory: {sorted(overlap)}")
    mem_images, mem_labels = [], []
    for cid in mem.class_ids:
        imgs, _ = mem.exemplars(cid)
        mem_images.append(imgs)
        mem_labels.append(np.full(len(imgs), cid, dtype=np.int64))
    images = np.concatenate([task_data.images] + mem_images, axis=0)
    labels = np.concatenate([task_data.labels] + mem_labels)
    flags = np.zeros(len(labels), dtype=bool)
    flags[len(task_data.labels):] = True
    return IncrementalDataset(images, labels, flags)


def load_dataset(kind, path=None, seed=0, num_classes=10, per_class=200,
                 image_side=16, test_per_class=None):
    """Config-driven dispatcher; returns (train, test) LabeledDatasets."""
    if kind == "synth":
        return synth_gaussians(num_classes, per_class, image_side, seed, test_per_class)
    if kind == "cifar100":
        if path is None:
            raise DatasetError("cifar100 needs dataset.path pointing at the binary files")
        return (load_cifar_binary(os.path.join(path, "train.bin"), split="train"),
                load_cifar_binary(os.path.join(path, "test.bin"), split="test"))
    if kind == "idx":
        if path is None:
            raise DatasetError("idx needs dataset.path pointing at the file directory")
        train = load_idx(os.path.join(path, "train-images-idx3-ubyte"), split="train")
        test = load_idx(os.path.join(path, "t10k-images-idx3-ubyte"), split="test")
        return train, test
    raise DatasetError(f"unknown dataset kind {kind!r}")
