"""Budget quotas, herding selection, and the exemplar store."""

import itertools
import json

import numpy as np
import pytest

from fecil.checkpoint import CheckpointError
from fecil.memory import (
    ExemplarMemory,
    MemoryBudget,
    herding_select,
    sample_memory_batch,
    update_memory,
)


class IdentityExtractor:
    """Feature map that flattens raw pixels; enough for memory tests."""

    def features(self, images, batch_size=256):
        return np.asarray(images, dtype=np.float64).reshape(len(images), -1)


def test_budget_quota_split():
    assert MemoryBudget("total", 10).quotas(3) == [4, 3, 3]
    assert MemoryBudget("total", 9).quotas(3) == [3, 3, 3]
    assert MemoryBudget("total", 2000).quotas(60) == [34 if i < 20 else 33 for i in range(60)]
    assert MemoryBudget("per_class", 20).quotas(4) == [20, 20, 20, 20]


def test_budget_validation():
    with pytest.raises(ValueError):
        MemoryBudget("weird", 10)
    with pytest.raises(ValueError):
        MemoryBudget("total", 0)
    with pytest.raises(ValueError, match="cannot cover"):
        MemoryBudget("total", 3).quotas(5)


def brute_force_herding(feats, m):
    """Exhaustive greedy reference: try every candidate at every step.

    Ascending scan with a strict < keeps the lowest index on exact ties,
    matching argmin's first-minimum rule.
    """
    feats = np.asarray(feats, dtype=np.float64)
    n = feats.shape[0]
    mu = feats.mean(axis=0)
    chosen, total = [], np.zeros(feats.shape[1])
    for k in range(1, min(m, n) + 1):
        best, best_d = None, None
        for j in range(n):
            if j in chosen:
                continue
            d = np.sqrt(((mu - (total + feats[j]) / k) ** 2).sum())
            if best_d is None or d < best_d:
                best, best_d = j, d
        chosen.append(best)
        total += feats[best]
    return chosen


def test_herding_matches_exhaustive_greedy_randomized():
    # Acceptance-grade oracle at unit-test size: 200 random instances.
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(1, 5))
        feats = rng.normal(size=(n, d))
        m = int(rng.integers(1, n + 1))
        assert herding_select(feats, m) == brute_force_herding(feats, m)
    # Lattice-valued features force many exact ties.
    for _ in range(200):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(1, 5))
        feats = rng.integers(-1, 2, size=(n, d)).astype(np.float64)
        m = int(rng.integers(1, n + 1))
        assert herding_select(feats, m) == brute_force_herding(feats, m)


def test_herding_tie_goes_to_lowest_index():
    # Duplicate rows make every step a tie.
    feats = np.zeros((4, 2))
    assert herding_select(feats, 3) == [0, 1, 2]
    feats = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    first = herding_select(feats, 1)[0]
    assert first == brute_force_herding(feats, 1)[0]


def test_herding_prefix_stability():
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(12, 3))
    full = herding_select(feats, 12)
    for m in range(1, 12):
        assert herding_select(feats, m) == full[:m]


def test_herding_first_pick_is_closest_to_mean():
    rng = np.random.default_rng(2)
    feats = rng.normal(size=(30, 4))
    mu = feats.mean(axis=0)
    assert herding_select(feats, 1)[0] == int(np.argmin(np.linalg.norm(feats - mu, axis=1)))


def test_herding_input_validation():
    with pytest.raises(ValueError):
        herding_select(np.zeros((0, 3)), 1)
    with pytest.raises(ValueError):
        herding_select(np.zeros((3,)), 1)
    with pytest.raises(ValueError):
        herding_select(np.zeros((3, 2)), 0)


def make_class_images(rng, n, value_scale=1.0):
    return (value_scale * rng.random((n, 4, 4, 1))).astype(np.float32)


def test_memory_update_and_rebalance():
    rng = np.random.default_rng(3)
    mem = ExemplarMemory(MemoryBudget("total", 10))
    mem.update({0: make_class_images(rng, 20), 1: make_class_images(rng, 20)}, IdentityExtractor())
    assert mem.class_ids == [0, 1]
    assert [mem.count(c) for c in (0, 1)] == [5, 5]
    before0 = mem.exemplars(0)[0].copy()
    mem.update({2: make_class_images(rng, 20)}, IdentityExtractor())
    # 10 over 3 classes: first class keeps the extra slot.
    assert [mem.count(c) for c in (0, 1, 2)] == [4, 3, 3]
    assert mem.total_count() == 10
    # Truncation keeps the herding-order prefix, untouched otherwise.
    assert np.array_equal(mem.exemplars(0)[0], before0[:4])


def test_memory_update_selects_by_herding_on_normalized_features():
    rng = np.random.default_rng(4)
    images = make_class_images(rng, 15)
    mem = ExemplarMemory(MemoryBudget("per_class", 6))
    mem.update({7: images}, IdentityExtractor())
    feats = images.reshape(15, -1).astype(np.float64)
    feats = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    expected = brute_force_herding(feats, 6)
    _, ids = mem.exemplars(7)
    assert ids == expected
    assert np.array_equal(mem.exemplars(7)[0], images[expected])


def test_memory_rejects_duplicate_class_and_empty_class():
    rng = np.random.default_rng(5)
    mem = ExemplarMemory(MemoryBudget("per_class", 3))
    update_memory(mem, {1: make_class_images(rng, 5)}, IdentityExtractor())
    with pytest.raises(ValueError, match="already in memory"):
        mem.update({1: make_class_images(rng, 5)}, IdentityExtractor())
    with pytest.raises(ValueError, match="no samples"):
        mem.update({2: np.zeros((0, 4, 4, 1), dtype=np.float32)}, IdentityExtractor())


def test_memory_sampling_is_uniform_with_replacement():
    rng = np.random.default_rng(6)
    mem = ExemplarMemory(MemoryBudget("per_class", 4))
    mem.update({0: make_class_images(rng, 10), 1: make_class_images(rng, 10)}, IdentityExtractor())
    xs, ys = sample_memory_batch(mem, 8000, np.random.default_rng(7))
    assert xs.shape == (8000, 4, 4, 1) and ys.shape == (8000,)
    # 8 stored exemplars, uniform: each class id should get about half.
    frac = np.mean(ys == 0)
    assert abs(frac - 0.5) < 0.02
    # With replacement: a batch larger than the pool must succeed.
    assert len(xs) > mem.total_count()
    with pytest.raises(ValueError):
        mem.sample(0, rng)
    with pytest.raises(ValueError):
        ExemplarMemory(MemoryBudget("total", 4)).sample(1, rng)


def test_memory_sample_determinism_per_seed():
    rng = np.random.default_rng(8)
    mem = ExemplarMemory(MemoryBudget("per_class", 5))
    mem.update({0: make_class_images(rng, 9)}, IdentityExtractor())
    x1, y1 = mem.sample(16, np.random.default_rng(42))
    x2, y2 = mem.sample(16, np.random.default_rng(42))
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)


def test_memory_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    mem = ExemplarMemory(MemoryBudget("total", 7))
    mem.update({3: make_class_images(rng, 12), 5: make_class_images(rng, 12)}, IdentityExtractor())
    idx, ten = tmp_path / "mem.json", tmp_path / "mem.ckpt"
    mem.save(idx, ten)
    loaded = ExemplarMemory.load(idx, ten)
    assert loaded.budget == mem.budget
    assert loaded.class_ids == mem.class_ids
    for cid in mem.class_ids:
        xs1, ids1 = mem.exemplars(cid)
        xs2, ids2 = loaded.exemplars(cid)
        assert ids1 == ids2
        assert np.array_equal(xs1, xs2)
    # The JSON index is human-readable and sorted.
    index = json.loads(idx.read_text())
    assert index["budget"] == {"mode": "total", "value": 7}


def test_memory_load_rejects_inconsistent_snapshot(tmp_path):
    rng = np.random.default_rng(10)
    mem = ExemplarMemory(MemoryBudget("per_class", 3))
    mem.update({1: make_class_images(rng, 6)}, IdentityExtractor())
    idx, ten = tmp_path / "mem.json", tmp_path / "mem.ckpt"
    mem.save(idx, ten)
    index = json.loads(idx.read_text())
    index["classes"][0]["exemplar_ids"].append(99)  # now longer than the tensor
    idx.write_text(json.dumps(index))
    with pytest.raises(CheckpointError, match="index entries"):
        ExemplarMemory.load(idx, ten)
