"""Fixed-budget rehearsal memory with herding selection.

The memory keeps, for every seen class, an ordered list of exemplars
(herding order) together with their source indices into that class's
training subset. Two budget modes exist: a fixed total budget split as
evenly as possible across seen classes, and a fixed per-class count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ck


@dataclass(frozen=True)
class MemoryBudget:
    mode: str  # "total" or "per_class"
    value: int

    def __post_init__(self):
        if self.mode not in ("total", "per_class"):
            raise ValueError(f"unknown budget mode {self.mode!r}")
        if self.value < 1:
            raise ValueError("budget must be positive")

    def quotas(self, num_classes: int):
        """Per-class exemplar quota, in class insertion order."""
        if self.mode == "per_class":
            return [self.value] * num_classes
        q, extra = divmod(self.value, num_classes)
        if q == 0:
            raise ValueError(f"budget {self.value} cannot cover {num_classes} classes")
        return [q + 1 if i < extra else q for i in range(num_classes)]


def herding_select(class_features, m: int):
    """Greedy herding order over one class's features.

    Picks, at each step, the index whose inclusion brings the running
    feature mean closest (L2) to the class mean; ties go to the lowest
    index. Returns min(m, n) indices. The order is prefix-stable: the
    first k picks do not depend on m.
    """
    feats = np.asarray(class_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("need a non-empty n x d feature matrix")
    if m < 1:
        raise ValueError("m must be >= 1")
    n = feats.shape[0]
    mu = feats.mean(axis=0)
    chosen = []
    running = np.zeros_like(mu)
    taken = np.zeros(n, dtype=bool)
    for k in range(1, min(m, n) + 1):
        dist = np.linalg.norm(mu[None, :] - (running[None, :] + feats) / k, axis=1)
        dist[taken] = np.inf
        j = int(np.argmin(dist))
        chosen.append(j)
        taken[j] = True
        running += feats[j]
    return chosen


def _l2_normalize(feats):
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    return feats / np.maximum(norms, 1e-12)


class ExemplarMemory:
    """Per-class exemplar store; class insertion order is preserved."""

    def __init__(self, budget: MemoryBudget):
        self.budget = budget
        self._images = {}  # class id -> [n, W, H, C] float32, herding order
        self._ids = {}     # class id -> source indices, same order
        self._pool = None

    @property
    def class_ids(self):
        return list(self._images.keys())

    def count(self, class_id) -> int:
        return len(self._images[class_id])

    def total_count(self) -> int:
        return sum(len(v) for v in self._images.values())

    def exemplars(self, class_id):
        return self._images[class_id], list(self._ids[class_id])

    def _pooled(self):
        if self._pool is None:
            if not self._images:
                raise ValueError("memory is empty")
            images = np.concatenate(list(self._images.values()), axis=0)
            labels = np.concatenate(
                [np.full(len(v), cid, dtype=np.int64) for cid, v in self._images.items()])
            self._pool = (images, labels)
        return self._pool

    def sample(self, batch_size: int, rng):
        """Uniform draw with replacement over all stored exemplars."""
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        images, labels = self._pooled()
        idx = rng.integers(0, len(labels), size=batch_size)
        return images[idx], labels[idx]

    def update(self, new_class_data, extractor) -> "ExemplarMemory":
        """Admit new classes and rebalance quotas.

        new_class_data: mapping class id -> image array, iterated in class
        order. Features for herding come from the given extractor in eval
        mode, L2-normalized per sample. Existing classes are truncated to
        their new quota by keeping the stored herding-order prefix.
        """
        overlap = set(new_class_data) & set(self._images)
        if overlap:
            raise ValueError(f"classes already in memory: {sorted(overlap)}")
        order = self.class_ids + list(new_class_data.keys())
        quotas = dict(zip(order, self.budget.quotas(len(order))))
        for cid in self.class_ids:
            q = quotas[cid]
            self._images[cid] = self._images[cid][:q]
            self._ids[cid] = self._ids[cid][:q]
        for cid, images in new_class_data.items():
            images = np.asarray(images, dtype=np.float32)
            if len(images) == 0:
                raise ValueError(f"class {cid} has no samples to select from")
            feats = _l2_normalize(extractor.features(images))
            picks = herding_select(feats, quotas[cid])
            self._images[cid] = images[picks]
            self._ids[cid] = list(picks)
        self._pool = None
        return self

    def save(self, index_path, tensor_path) -> None:
        """Snapshot: JSON index of exemplar ids plus a tensor container."""
        index = {
            "budget": {"mode": self.budget.mode, "value": self.budget.value},
            "classes": [{"id": int(cid), "exemplar_ids": [int(i) for i in self._ids[cid]]}
                        for cid in self.class_ids],
        }
        with open(index_path, "w", encoding="utf-8") as f:
            json.dump(index, f, indent=2, sort_keys=True)
        tensors = [(f"class{cid}", self._images[cid]) for cid in self.class_ids]
        ck.save_container(tensor_path, tensors, {"kind": "memory",
                                                 "class_ids": [int(c) for c in self.class_ids]})

    @staticmethod
    def load(index_path, tensor_path) -> "ExemplarMemory":
        with open(index_path, "r", encoding="utf-8") as f:
            index = json.load(f)
        meta, tensors = ck.load_container(tensor_path)
        if meta.get("kind") != "memory":
            raise ck.CheckpointError(f"{tensor_path}: not a memory snapshot")
        mem = ExemplarMemory(MemoryBudget(index["budget"]["mode"], index["budget"]["value"]))
        for entry in index["classes"]:
            cid = int(entry["id"])
            key = f"class{cid}"
            if key not in tensors:
                raise ck.CheckpointError(f"{tensor_path}: missing tensor {key!r}")
            images = tensors[key]
            if len(images) != len(entry["exemplar_ids"]):
                raise ck.CheckpointError(
                    f"{tensor_path}: class {cid} has {len(images)} tensors "
                    f"for {len(entry['exemplar_ids'])} index entries")
            mem._images[cid] = images
            mem._ids[cid] = [int(i) for i in entry["exemplar_ids"]]
        return mem


def update_memory(mem: ExemplarMemory, new_class_data, extractor) -> ExemplarMemory:
    return mem.update(new_class_data, extractor)


def sample_memory_batch(mem: ExemplarMemory, batch_size: int, rng):
    return mem.sample(batch_size, rng)
