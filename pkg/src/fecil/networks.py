"""Feature extractors, classifiers, and the expand/compress model surgery.

The extractor is a narrow 3-stage residual network (2 blocks per stage,
widths w/2w/4w, global average pool) so the whole incremental pipeline
runs on a desk CPU while keeping the batchnorm and skip structure the
algorithm interacts with.

The big model used during expansion holds a frozen copy of the previous
extractor beside a trainable one; its classifier sees the concatenation
of both feature vectors, old-extractor features first. Classification
heads are bias-free so that weight alignment (a positive per-group
rescale of weight rows) provably preserves within-group rankings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class BackboneConfig:
    width: int = 8
    in_channels: int = 1
    blocks_per_stage: int = 2

    @property
    def out_dim(self) -> int:
        return 4 * self.width

    def to_dict(self):
        return {"width": self.width, "in_channels": self.in_channels,
                "blocks_per_stage": self.blocks_per_stage}

    @staticmethod
    def from_dict(d) -> "BackboneConfig":
        return BackboneConfig(int(d["width"]), int(d["in_channels"]), int(d["blocks_per_stage"]))


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv:
    def __init__(self, k, cin, cout, stride, rng):
        self.stride = stride
        self.pad = k // 2
        self.weight = Tensor(_uniform_init(rng, (k, k, cin, cout), k * k * cin), requires_grad=True)

    def __call__(self, x, train):
        return ad.conv2d(x, self.weight, stride=self.stride, pad=self.pad)

    def params(self):
        return [("w", self.weight)]

    def buffers(self):
        return []

    def clone(self):
        c = Conv.__new__(Conv)
        c.stride, c.pad = self.stride, self.pad
        c.weight = Tensor(self.weight.data.copy(), requires_grad=self.weight.requires_grad)
        return c


class BatchNorm:
    def __init__(self, c):
        self.gamma = Tensor(np.ones(c, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=np.float32), requires_grad=True)
        self.running_mean = Tensor(np.zeros(c, dtype=np.float32))
        self.running_var = Tensor(np.ones(c, dtype=np.float32))
        self.frozen_stats = False

    def __call__(self, x, train):
        return ad.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            train=train, frozen_stats=self.frozen_stats)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def clone(self):
        b = BatchNorm.__new__(BatchNorm)
        b.gamma = Tensor(self.gamma.data.copy(), requires_grad=self.gamma.requires_grad)
        b.beta = Tensor(self.beta.data.copy(), requires_grad=self.beta.requires_grad)
        b.running_mean = Tensor(self.running_mean.data.copy())
        b.running_var = Tensor(self.running_var.data.copy())
        b.frozen_stats = self.frozen_stats
        return b


class ResidualBlock:
    """conv-bn-relu-conv-bn plus identity (or 1x1 projection) skip."""

    def __init__(self, cin, cout, stride, rng):
        self.conv1 = Conv(3, cin, cout, stride, rng)
        self.bn1 = BatchNorm(cout)
        self.conv2 = Conv(3, cout, cout, 1, rng)
        self.bn2 = BatchNorm(cout)
        if stride != 1 or cin != cout:
            self.down_conv = Conv(1, cin, cout, stride, rng)
            self.down_bn = BatchNorm(cout)
        else:
            self.down_conv = None
            self.down_bn = None

    def __call__(self, x, train):
        out = ad.relu(self.bn1(self.conv1(x, train), train))
        out = self.bn2(self.conv2(out, train), train)
        if self.down_conv is not None:
            x = self.down_bn(self.down_conv(x, train), train)
        return ad.relu(ad.add(out, x))

    def _parts(self):
        parts = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.down_conv is not None:
            parts += [("down_conv", self.down_conv), ("down_bn", self.down_bn)]
        return parts

    def params(self):
        return [(f"{n}.{k}", t) for n, m in self._parts() for k, t in m.params()]

    def buffers(self):
        return [(f"{n}.{k}", t) for n, m in self._parts() for k, t in m.buffers()]

    def clone(self):
        b = ResidualBlock.__new__(ResidualBlock)
        b.conv1, b.bn1 = self.conv1.clone(), self.bn1.clone()
        b.conv2, b.bn2 = self.conv2.clone(), self.bn2.clone()
        b.down_conv = self.down_conv.clone() if self.down_conv is not None else None
        b.down_bn = self.down_bn.clone() if self.down_bn is not None else None
        return b


class FeatureExtractor:
    """Stem conv plus three residual stages, pooled to a feature vector."""

    def __init__(self, config: BackboneConfig, rng):
        self.config = config
        self.frozen = False
        w = config.width
        self.stem_conv = Conv(3, config.in_channels, w, 1, rng)
        self.stem_bn = BatchNorm(w)
        self.stages = []
        cin = w
        for s in range(3):
            cout = w * (2 ** s)
            blocks = []
            for b in range(config.blocks_per_stage):
                stride = 2 if (s > 0 and b == 0) else 1
                blocks.append(ResidualBlock(cin, cout, stride, rng))
                cin = cout
            self.stages.append(blocks)
        self.out_dim = config.out_dim

    def __call__(self, x, train):
        train = train and not self.frozen
        h = ad.relu(self.stem_bn(self.stem_conv(x, train), train))
        for blocks in self.stages:
            for block in blocks:
                h = block(h, train)
        return ad.global_avg_pool(h)

    def features(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Eval-mode feature vectors for a raw image array."""
        chunks = []
        for i in range(0, len(images), batch_size):
            x = Tensor(images[i : i + batch_size])
            chunks.append(self(x, train=False).data)
        return np.concatenate(chunks, axis=0)

    def _parts(self):
        parts = [("stem_conv", self.stem_conv), ("stem_bn", self.stem_bn)]
        for s, blocks in enumerate(self.stages):
            for b, block in enumerate(blocks):
                parts.append((f"stage{s}.block{b}", block))
        return parts

    def params(self):
        return [(f"{n}.{k}", t) for n, m in self._parts() for k, t in m.params()]

    def buffers(self):
        return [(f"{n}.{k}", t) for n, m in self._parts() for k, t in m.buffers()]

    def set_frozen(self, frozen: bool):
        self.frozen = frozen
        for _, t in self.params():
            t.requires_grad = not frozen
            if frozen:
                t.grad = None
        for part in self._bn_layers():
            part.frozen_stats = frozen

    def _bn_layers(self):
        bns = [self.stem_bn]
        for blocks in self.stages:
            for block in blocks:
                bns += [block.bn1, block.bn2]
                if block.down_bn is not None:
                    bns.append(block.down_bn)
        return bns

    def clone(self) -> "FeatureExtractor":
        e = FeatureExtractor.__new__(FeatureExtractor)
        e.config = self.config
        e.frozen = self.frozen
        e.stem_conv = self.stem_conv.clone()
        e.stem_bn = self.stem_bn.clone()
        e.stages = [[b.clone() for b in blocks] for blocks in self.stages]
        e.out_dim = self.out_dim
        return e


class Classifier:
    """Bias-free linear head whose rows are tagged with external class ids."""

    def __init__(self, weight: np.ndarray, class_ids):
        class_ids = list(class_ids)
        if weight.shape[0] != len(class_ids):
            raise ValueError(f"{weight.shape[0]} rows for {len(class_ids)} class ids")
        if len(set(class_ids)) != len(class_ids):
            raise ValueError("duplicate class ids")
        self.weight = Tensor(np.asarray(weight, dtype=np.float32), requires_grad=True)
        self.class_ids = class_ids

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    @staticmethod
    def random(num_classes: int, in_dim: int, class_ids, rng) -> "Classifier":
        return Classifier(_uniform_init(rng, (num_classes, in_dim), in_dim), class_ids)

    def __call__(self, features):
        return ad.dense(features, self.weight)

    def params(self):
        return [("weight", self.weight)]

    def buffers(self):
        return []

    def clone(self) -> "Classifier":
        c = Classifier(self.weight.data.copy(), list(self.class_ids))
        c.weight.requires_grad = self.weight.requires_grad
        return c


class CompactNetwork:
    """Single extractor plus head: the model that survives between steps."""

    def __init__(self, extractor: FeatureExtractor, head: Classifier):
        if head.in_dim != extractor.out_dim:
            raise ValueError(f"head expects {head.in_dim} features, extractor yields {extractor.out_dim}")
        self.extractor = extractor
        self.head = head

    @property
    def class_ids(self):
        return self.head.class_ids

    def forward(self, x: Tensor, train: bool):
        feats = self.extractor(x, train)
        return self.head(feats), feats

    def logits(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        chunks = []
        for i in range(0, len(images), batch_size):
            out, _ = self.forward(Tensor(images[i : i + batch_size]), train=False)
            chunks.append(out.data)
        return np.concatenate(chunks, axis=0)

    def params(self):
        return [(f"extractor.{n}", t) for n, t in self.extractor.params()] + \
               [(f"head.{n}", t) for n, t in self.head.params()]

    def buffers(self):
        return [(f"extractor.{n}", t) for n, t in self.extractor.buffers()]

    def clone(self) -> "CompactNetwork":
        return CompactNetwork(self.extractor.clone(), self.head.clone())


class DynamicNetwork:
    """Frozen previous extractor beside a trainable one, with wide and aux heads."""

    def __init__(self, prev_extractor, new_extractor, head_big, head_aux):
        if not prev_extractor.frozen:
            raise ValueError("previous extractor must be frozen")
        if head_big.in_dim != prev_extractor.out_dim + new_extractor.out_dim:
            raise ValueError("big head width != concatenated feature width")
        if head_aux is not None and head_aux.in_dim != new_extractor.out_dim:
            raise ValueError("aux head must see only new-extractor features")
        self.prev_extractor = prev_extractor
        self.new_extractor = new_extractor
        self.head_big = head_big
        self.head_aux = head_aux

    @property
    def class_ids(self):
        return self.head_big.class_ids

    def forward(self, x: Tensor, train: bool):
        """Returns (logits_big, logits_aux, features); aux logits are None
        once the auxiliary head has been discarded."""
        prev_feats = self.prev_extractor(x, train)
        new_feats = self.new_extractor(x, train)
        feats = ad.concat([prev_feats, new_feats], axis=1)
        logits_big = self.head_big(feats)
        logits_aux = self.head_aux(new_feats) if self.head_aux is not None else None
        return logits_big, logits_aux, feats

    def logits(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        chunks = []
        for i in range(0, len(images), batch_size):
            out, _, _ = self.forward(Tensor(images[i : i + batch_size]), train=False)
            chunks.append(out.data)
        return np.concatenate(chunks, axis=0)

    def discard_aux(self):
        self.head_aux = None

    def params(self):
        out = [(f"prev_extractor.{n}", t) for n, t in self.prev_extractor.params()]
        out += [(f"new_extractor.{n}", t) for n, t in self.new_extractor.params()]
        out += [(f"head_big.{n}", t) for n, t in self.head_big.params()]
        if self.head_aux is not None:
            out += [(f"head_aux.{n}", t) for n, t in self.head_aux.params()]
        return out

    def buffers(self):
        return [(f"prev_extractor.{n}", t) for n, t in self.prev_extractor.buffers()] + \
               [(f"new_extractor.{n}", t) for n, t in self.new_extractor.buffers()]

    def trainable_params(self):
        return [t for _, t in self.params() if t.requires_grad]


def forward_big(net: DynamicNetwork, x: Tensor, train: bool = False):
    return net.forward(x, train)


def expand(prev: CompactNetwork, new_class_ids, rng) -> DynamicNetwork:
    """Build the expansion-phase network from the previous compact model.

    The new extractor starts as a copy of the previous one (weights and
    batchnorm statistics both carried over) and trains, while the previous
    copy is frozen outright. Old-class head rows keep their weights on the
    old-feature columns and are zero on the new ones, so the wide model's
    old-class logits initially reproduce the previous model exactly.
    """
    new_class_ids = list(new_class_ids)
    if len(new_class_ids) == 0:
        raise ValueError("expansion needs at least one new class")
    if set(new_class_ids) & set(prev.class_ids):
        raise ValueError("new class ids overlap previously seen classes")
    prev_extractor = prev.extractor.clone()
    prev_extractor.set_frozen(True)
    new_extractor = prev.extractor.clone()
    new_extractor.set_frozen(False)

    d_old, d_new = prev_extractor.out_dim, new_extractor.out_dim
    c_old, c_new = prev.head.num_classes, len(new_class_ids)
    weight = np.zeros((c_old + c_new, d_old + d_new), dtype=np.float32)
    weight[:c_old, :d_old] = prev.head.weight.data
    weight[c_old:, :] = _uniform_init(rng, (c_new, d_old + d_new), d_old + d_new)
    head_big = Classifier(weight, list(prev.class_ids) + new_class_ids)

    # Row 0 of the aux head is the merged "all past classes" category.
    head_aux = Classifier(_uniform_init(rng, (c_new + 1, d_new), d_new), [-1] + new_class_ids)
    return DynamicNetwork(prev_extractor, new_extractor, head_big, head_aux)


def aux_targets(y_idx, old_class_count: int, new_class_count: int | None = None) -> np.ndarray:
    """Map head row indices to auxiliary targets in [0, C_new].

    Every old class collapses to index 0; the k-th new class (in head
    order) maps to k.
    """
    y = np.asarray(y_idx)
    if np.any(y < 0):
        raise ValueError("negative class index")
    if new_class_count is not None and np.any(y >= old_class_count + new_class_count):
        raise ValueError("class index beyond the current task")
    return np.where(y < old_class_count, 0, y - old_class_count + 1)


def weight_align(head: Classifier, old_ids, new_ids) -> Classifier:
    """Rescale new-class weight rows by the old/new mean-norm ratio.

    After the rescale the mean L2 norm of new-class rows equals the mean
    norm of old-class rows; within each group the rescale is a positive
    scalar, so per-group logit rankings are unchanged.
    """
    old_ids, new_ids = list(old_ids), list(new_ids)
    if not old_ids or not new_ids:
        raise ValueError("both class groups must be non-empty")
    if sorted(old_ids + new_ids) != sorted(head.class_ids):
        raise ValueError("old_ids and new_ids must partition the head's class ids")
    pos = {cid: i for i, cid in enumerate(head.class_ids)}
    old_rows = [pos[c] for c in old_ids]
    new_rows = [pos[c] for c in new_ids]
    w = head.weight.data
    norm_old = float(np.mean(np.linalg.norm(w[old_rows], axis=1)))
    norm_new = float(np.mean(np.linalg.norm(w[new_rows], axis=1)))
    if norm_new == 0.0:
        raise ValueError("mean new-class weight norm is zero")
    gamma = norm_old / norm_new
    w[new_rows] *= np.float32(gamma)
    return head


def compress_init(prev: CompactNetwork, class_ids_t, rng) -> CompactNetwork:
    """Student for the compression phase: previous weights, widened head."""
    class_ids_t = list(class_ids_t)
    if class_ids_t[: prev.head.num_classes] != list(prev.class_ids):
        raise ValueError("compressed head must extend the previous class ids in order")
    extractor = prev.extractor.clone()
    extractor.set_frozen(False)
    c_old = prev.head.num_classes
    c_t = len(class_ids_t)
    if c_t < c_old:
        raise ValueError(f"target classes {c_t} < previous classes {c_old}")
    d = extractor.out_dim
    weight = np.empty((c_t, d), dtype=np.float32)
    weight[:c_old] = prev.head.weight.data
    if c_t > c_old:
        weight[c_old:] = _uniform_init(rng, (c_t - c_old, d), d)
    return CompactNetwork(extractor, Classifier(weight, class_ids_t))


def param_count(net) -> int:
    """Number of parameters, trainable and frozen alike (buffers excluded)."""
    return int(sum(t.data.size for _, t in net.params()))
