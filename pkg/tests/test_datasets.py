"""Binary loaders, the synthetic benchmark, and task sequencing."""

import struct

import numpy as np
import pytest

from fecil.datasets import (
    DatasetError,
    LabeledDataset,
    build_incremental_dataset,
    load_cifar_binary,
    load_dataset,
    load_idx,
    make_task_sequence,
    synth_gaussians,
)
from fecil.memory import ExemplarMemory, MemoryBudget


def write_idx_pair(tmp_path, images, labels, stem="train"):
    """Write a big-endian IDX image/label pair like the MNIST files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    img_path = tmp_path / f"{stem}-images-idx3-ubyte"
    lbl_path = tmp_path / f"{stem}-labels-idx1-ubyte"
    img_path.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + images.tobytes())
    lbl_path.write_bytes(struct.pack(">II", 0x801, n) + labels.tobytes())
    return str(img_path), str(lbl_path)


def test_idx_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(7, 5, 4), dtype=np.uint8)
    labels = np.array([0, 1, 2, 0, 1, 2, 3], dtype=np.uint8)
    img_path, lbl_path = write_idx_pair(tmp_path, images, labels)
    ds = load_idx(img_path, lbl_path)
    assert ds.images.shape == (7, 5, 4, 1)
    assert ds.images.dtype == np.float32
    assert np.allclose(ds.images[..., 0], images / 255.0)
    assert ds.labels.tolist() == labels.tolist()


def test_idx_labels_path_derived_from_image_path(tmp_path):
    images = np.zeros((3, 2, 2), dtype=np.uint8)
    img_path, _ = write_idx_pair(tmp_path, images, [0, 1, 2])
    ds = load_idx(img_path)  # finds train-labels-idx1-ubyte next to it
    assert len(ds) == 3
    with pytest.raises(DatasetError, match="derive"):
        load_idx(str(tmp_path / "weird-file-name"))


def test_idx_rejects_malformed(tmp_path):
    img_path, lbl_path = write_idx_pair(tmp_path, np.zeros((2, 3, 3), dtype=np.uint8), [0, 1])
    # Wrong magic.
    bad = tmp_path / "bad-images-idx3-ubyte"
    bad.write_bytes(struct.pack(">IIII", 0x123, 2, 3, 3) + bytes(18))
    with pytest.raises(DatasetError, match="bad magic"):
        load_idx(str(bad), lbl_path)
    # Payload shorter than the header promises.
    cut = tmp_path / "cut-images-idx3-ubyte"
    cut.write_bytes(struct.pack(">IIII", 0x803, 2, 3, 3) + bytes(10))
    with pytest.raises(DatasetError, match="header promises"):
        load_idx(str(cut), lbl_path)
    # Image/label count mismatch.
    _, lbl3 = write_idx_pair(tmp_path, np.zeros((3, 3, 3), dtype=np.uint8), [0, 1, 2], stem="t3")
    with pytest.raises(DatasetError, match="images but"):
        load_idx(img_path, lbl3)
    with pytest.raises(DatasetError, match="cannot read"):
        load_idx(str(tmp_path / "missing-images-idx3-ubyte"), lbl_path)


def write_cifar_binary(path, fine_labels, pixels=None, coarse_labels=None):
    n = len(fine_labels)
    if pixels is None:
        pixels = np.zeros((n, 3072), dtype=np.uint8)
    if coarse_labels is None:
        coarse_labels = np.zeros(n, dtype=np.uint8)
    rec = np.zeros((n, 3074), dtype=np.uint8)
    rec[:, 0] = coarse_labels
    rec[:, 1] = fine_labels
    rec[:, 2:] = pixels
    path.write_bytes(rec.tobytes())


def test_cifar_binary_layout(tmp_path):
    rng = np.random.default_rng(1)
    pixels = rng.integers(0, 256, size=(4, 3072), dtype=np.uint8)
    path = tmp_path / "train.bin"
    write_cifar_binary(path, fine_labels=[5, 17, 99, 0], pixels=pixels,
                       coarse_labels=[1, 2, 3, 4])
    ds = load_cifar_binary(str(path))
    assert ds.images.shape == (4, 32, 32, 3)
    assert ds.labels.tolist() == [5, 17, 99, 0]
    # Channel-planar source: first 1024 bytes are the red plane.
    assert np.allclose(ds.images[0, :, :, 0].reshape(-1), pixels[0, :1024] / 255.0)
    assert np.allclose(ds.images[0, :, :, 2].reshape(-1), pixels[0, 2048:] / 255.0)
    coarse = load_cifar_binary(str(path), fine_labels=False)
    assert coarse.labels.tolist() == [1, 2, 3, 4]


def test_cifar_binary_rejects_wrong_record_size(tmp_path):
    # 3073-byte records are the CIFAR-10 layout; the error must say so.
    path = tmp_path / "c10.bin"
    path.write_bytes(bytes(3073 * 2))
    with pytest.raises(DatasetError, match="CIFAR-10"):
        load_cifar_binary(str(path))
    short = tmp_path / "short.bin"
    short.write_bytes(bytes(100))
    with pytest.raises(DatasetError, match="not a multiple"):
        load_cifar_binary(str(short))
    empty = tmp_path / "empty.bin"
    empty.write_bytes(b"")
    with pytest.raises(DatasetError):
        load_cifar_binary(str(empty))


def test_cifar_binary_rejects_out_of_range_fine_label(tmp_path):
    path = tmp_path / "bad.bin"
    write_cifar_binary(path, fine_labels=[5, 120])
    with pytest.raises(DatasetError, match="120"):
        load_cifar_binary(str(path))


def test_synth_shapes_and_determinism():
    tr1, te1 = synth_gaussians(4, 30, 16, seed=9)
    tr2, te2 = synth_gaussians(4, 30, 16, seed=9)
    assert np.array_equal(tr1.images, tr2.images)
    assert np.array_equal(te1.images, te2.images)
    assert tr1.images.shape == (120, 16, 16, 1)
    assert te1.images.shape == (4 * 7, 16, 16, 1)  # default test split is per_class // 4
    assert tr1.images.min() >= 0.0 and tr1.images.max() <= 1.0
    assert sorted(np.unique(tr1.labels).tolist()) == [0, 1, 2, 3]
    tr3, _ = synth_gaussians(4, 30, 16, seed=10)
    assert not np.array_equal(tr1.images, tr3.images)


def test_synth_classes_lineary_separable_enough():
    # A pixel-space least-squares probe should comfortably separate four
    # well-spread classes; the benchmark is supposed to be learnable.
    train, test = synth_gaussians(10, 80, 16, seed=0)
    ids = [0, 2, 5, 8]
    tr, te = train.class_subset(ids), test.class_subset(ids)
    X = tr.images.reshape(len(tr), -1).astype(np.float64)
    Xt = te.images.reshape(len(te), -1).astype(np.float64)
    row = {c: i for i, c in enumerate(ids)}
    Y = np.eye(4)[[row[c] for c in tr.labels]]
    W = np.linalg.lstsq(np.hstack([X, np.ones((len(X), 1))]), Y, rcond=None)[0]
    pred = np.argmax(np.hstack([Xt, np.ones((len(Xt), 1))]) @ W, axis=1)
    acc = np.mean(pred == [row[c] for c in te.labels])
    assert acc > 0.9


def test_synth_validation():
    with pytest.raises(DatasetError):
        synth_gaussians(1, 10, 16, seed=0)
    with pytest.raises(DatasetError):
        synth_gaussians(3, 1, 16, seed=0)


def test_labeled_dataset_subset_and_by_class():
    ds = LabeledDataset(np.zeros((6, 2, 2, 1), dtype=np.float32),
                        np.array([0, 0, 1, 1, 2, 2]))
    sub = ds.class_subset([1, 2])
    assert sorted(np.unique(sub.labels).tolist()) == [1, 2]
    assert len(sub) == 4
    groups = ds.by_class([2, 0])
    assert list(groups.keys()) == [2, 0]
    assert all(len(v) == 2 for v in groups.values())
    with pytest.raises(DatasetError):
        ds.class_subset([9])
    with pytest.raises(DatasetError):
        LabeledDataset(np.zeros((2, 2, 2, 1)), np.array([0]))


def test_b0_task_sequence():
    seq = make_task_sequence(10, "B0", 5, seed=3)
    assert len(seq.tasks) == 5
    assert all(len(t) == 2 for t in seq.tasks)
    flat = [c for t in seq.tasks for c in t]
    assert sorted(flat) == list(range(10))
    assert flat == seq.class_order
    assert seq.memory_rule == MemoryBudget("total", 2000)
    # Same seed, same order; different seed, different order (for 10!).
    assert make_task_sequence(10, "B0", 5, seed=3).class_order == seq.class_order
    assert make_task_sequence(10, "B0", 5, seed=4).class_order != seq.class_order
    with pytest.raises(ValueError, match="divide"):
        make_task_sequence(10, "B0", 3, seed=0)


def test_b50_task_sequence():
    seq = make_task_sequence(100, "B50", 5, seed=0)
    assert len(seq.tasks) == 6
    assert len(seq.tasks[0]) == 50
    assert all(len(t) == 10 for t in seq.tasks[1:])
    assert sorted(c for t in seq.tasks for c in t) == list(range(100))
    assert seq.memory_rule == MemoryBudget("per_class", 20)
    with pytest.raises(ValueError, match="100 classes"):
        make_task_sequence(60, "B50", 5, seed=0)
    with pytest.raises(ValueError, match="unknown protocol"):
        make_task_sequence(10, "B7", 5, seed=0)


def test_build_incremental_dataset_unions_memory():
    class IdentityExtractor:
        def features(self, images, batch_size=256):
            return np.asarray(images, dtype=np.float64).reshape(len(images), -1)

    rng = np.random.default_rng(5)
    mem = ExemplarMemory(MemoryBudget("per_class", 3))
    mem.update({0: rng.random((8, 4, 4, 1)).astype(np.float32)}, IdentityExtractor())
    task = LabeledDataset(rng.random((10, 4, 4, 1)).astype(np.float32),
                          np.full(10, 1, dtype=np.int64))
    combined = build_incremental_dataset(task, mem)
    assert len(combined) == 13
    assert combined.from_memory.sum() == 3
    assert not combined.from_memory[:10].any()
    assert sorted(np.unique(combined.labels).tolist()) == [0, 1]
    # First task: no memory yet.
    alone = build_incremental_dataset(task, None)
    assert len(alone) == 10 and not alone.from_memory.any()
    # Memory must not already contain the incoming classes.
    bad_task = LabeledDataset(task.images, np.zeros(10, dtype=np.int64))
    with pytest.raises(ValueError, match="already in memory"):
        build_incremental_dataset(bad_task, mem)


def test_load_dataset_dispatcher(tmp_path):
    train, test = load_dataset("synth", num_classes=3, per_class=12, image_side=8, seed=1)
    assert train.images.shape == (36, 8, 8, 1)
    assert test.split == "test"
    with pytest.raises(DatasetError, match="dataset.path"):
        load_dataset("cifar100")
    with pytest.raises(DatasetError, match="unknown dataset kind"):
        load_dataset("imagenet")
    write_idx_pair(tmp_path, np.zeros((4, 6, 6), dtype=np.uint8), [0, 1, 0, 1], stem="train")
    write_idx_pair(tmp_path, np.zeros((2, 6, 6), dtype=np.uint8), [0, 1], stem="t10k")
    train, test = load_dataset("idx", path=str(tmp_path))
    assert len(train) == 4 and len(test) == 2
