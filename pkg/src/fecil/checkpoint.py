"""Versioned binary container for model weights and exemplar tensors.

Layout, all integers little-endian u32 unless noted:

    8 bytes   magic "FECILCK1"
    u32       format version (currently 1)
    u32       metadata length, then that many bytes of UTF-8 JSON
    u32       tensor record count
    records   name length, name bytes (UTF-8), rank, dims, float32 payload

Payloads are raw row-major float32, so save followed by load is bit-exact.
The metadata JSON carries the class id list and backbone configuration for
model checkpoints, or the class-to-exemplar index for memory snapshots.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np

from .networks import BackboneConfig, Classifier, CompactNetwork, FeatureExtractor

MAGIC = b"FECILCK1"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for malformed or mismatched checkpoint files."""


def save_container(path, tensors, meta) -> None:
    """Write named float32 arrays plus a JSON metadata block.

    tensors: iterable of (name, array); arrays must be float32.
    """
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            # ascontiguousarray would promote rank 0 to rank 1.
            arr = np.asarray(arr)
            if arr.ndim:
                arr = np.ascontiguousarray(arr)
            if arr.dtype != np.float32:
                raise CheckpointError(f"tensor {name!r} has dtype {arr.dtype}, expected float32")
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


class _Reader:
    def __init__(self, path):
        with open(path, "rb") as f:
            self.buf = f.read()
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointError(
                f"{self.path}: truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_container(path):
    """Read a container back as (meta dict, OrderedDict name -> float32 array)."""
    r = _Reader(path)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    meta_len = r.u32("metadata length")
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt metadata block: {e}") from e
    count = r.u32("tensor count")
    tensors = OrderedDict()
    for i in range(count):
        name_len = r.u32(f"tensor {i} name length")
        name = r.take(name_len, f"tensor {i} name").decode("utf-8", errors="replace")
        rank = r.u32(f"tensor {name!r} rank")
        if rank > 8:
            raise CheckpointError(f"{path}: tensor {name!r} has implausible rank {rank}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, f"tensor {name!r} dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(4 * n, f"tensor {name!r} payload")
        if name in tensors:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes after last tensor")
    return meta, tensors


def _network_tensors(net):
    return list(net.params()) + list(net.buffers())


def save_compact(path, net: CompactNetwork, extra_meta=None) -> None:
    meta = {
        "kind": "compact",
        "class_ids": list(net.class_ids),
        "backbone": net.extractor.config.to_dict(),
    }
    if extra_meta:
        meta.update(extra_meta)
    save_container(path, [(name, t.data) for name, t in _network_tensors(net)], meta)


def load_compact(path):
    """Rebuild a CompactNetwork from a checkpoint; returns (net, meta)."""
    meta, tensors = load_container(path)
    if meta.get("kind") != "compact":
        raise CheckpointError(f"{path}: kind {meta.get('kind')!r} is not a compact model checkpoint")
    try:
        config = BackboneConfig.from_dict(meta["backbone"])
        class_ids = [int(c) for c in meta["class_ids"]]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: incomplete model metadata: {e}") from e
    extractor = FeatureExtractor(config, np.random.default_rng(0))
    if "head.weight" not in tensors:
        raise CheckpointError(f"{path}: missing tensor 'head.weight'")
    head = Classifier(tensors["head.weight"], class_ids)
    net = CompactNetwork(extractor, head)
    expected = dict(_network_tensors(net))
    for name, arr in tensors.items():
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected tensor {name!r} for this backbone")
        if expected[name].data.shape != arr.shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} shape {arr.shape} != expected {expected[name].data.shape}")
        expected[name].data = arr
    missing = [n for n in expected if n not in tensors]
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing[:3]}{'...' if len(missing) > 3 else ''}")
    return net, meta
