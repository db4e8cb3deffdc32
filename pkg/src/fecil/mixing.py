"""CutMix and Mixup, plus rehearsal-paired variants.

The rehearsal variants pair every sample of a mini-batch with a partner
drawn from the exemplar memory instead of from the batch itself, which
keeps old classes in the mixed targets even when the batch is dominated
by new-class data. Mixed pairs replace the originals, so batch size is
unchanged.

Box convention: a box is (cx, cy, rw, rh) in continuous pixel units with
cx horizontal (image axis 1) and cy vertical (axis 0). At application the
box is rounded to the integer grid, half-open [x0, x1) x [y0, y1), then
clipped to the image. The label weight lambda_eff is recomputed from the
clipped integer area, so pixel counts and label mass agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MixPlan:
    lambda_raw: float
    box: tuple  # (cx, cy, rw, rh)
    lambda_eff: float
    source_j: int


def sample_lambda(alpha: float, rng) -> float:
    """Beta(alpha, alpha) draw restricted to the open interval (0, 1)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    lam = float(rng.beta(alpha, alpha))
    while lam <= 0.0 or lam >= 1.0:
        lam = float(rng.beta(alpha, alpha))
    return lam


def sample_box(width: int, height: int, lam: float, rng):
    """Box center uniform over the image; side lengths W,H times sqrt(1-lam).

    The box may overhang the borders; clipping happens at application.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    cx = float(rng.uniform(0, width))
    cy = float(rng.uniform(0, height))
    side = float(np.sqrt(1.0 - lam))
    return (cx, cy, width * side, height * side)


def clip_box(box, width: int, height: int):
    """Integer half-open corners (x0, y0, x1, y1) of the box, clipped."""
    cx, cy, rw, rh = box
    rwi = int(round(rw))
    rhi = int(round(rh))
    x0 = int(round(cx - rw / 2.0))
    y0 = int(round(cy - rh / 2.0))
    x0c, x1c = max(0, x0), min(width, x0 + rwi)
    y0c, y1c = max(0, y0), min(height, y0 + rhi)
    if x1c <= x0c or y1c <= y0c:
        return (0, 0, 0, 0)
    return (x0c, y0c, x1c, y1c)


def cutmix_apply(x_i, x_j, box):
    """Paste the box region of x_j onto x_i; returns (mixed, lambda_eff)."""
    x_i = np.asarray(x_i)
    x_j = np.asarray(x_j)
    if x_i.shape != x_j.shape:
        raise ValueError(f"image shapes differ: {x_i.shape} vs {x_j.shape}")
    height, width = x_i.shape[0], x_i.shape[1]
    x0, y0, x1, y1 = clip_box(box, width, height)
    mixed = x_i.copy()
    mixed[y0:y1, x0:x1] = x_j[y0:y1, x0:x1]
    area = (x1 - x0) * (y1 - y0)
    return mixed, 1.0 - area / float(width * height)


def mixup_apply(x_i, x_j, lam: float):
    x_i = np.asarray(x_i)
    x_j = np.asarray(x_j)
    if x_i.shape != x_j.shape:
        raise ValueError(f"image shapes differ: {x_i.shape} vs {x_j.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    return (lam * x_i + (1.0 - lam) * x_j).astype(x_i.dtype)


def mixed_target(y_i: int, y_j: int, lambda_eff: float, num_classes: int) -> np.ndarray:
    """Probability row lambda_eff * onehot(y_i) + (1 - lambda_eff) * onehot(y_j)."""
    if not (0 <= y_i < num_classes and 0 <= y_j < num_classes):
        raise ValueError(f"class indices ({y_i}, {y_j}) outside [0, {num_classes})")
    if not 0.0 <= lambda_eff <= 1.0:
        raise ValueError(f"lambda_eff {lambda_eff} outside [0, 1]")
    row = np.zeros(num_classes, dtype=np.float64)
    row[y_i] += lambda_eff
    row[y_j] += 1.0 - lambda_eff
    return row


def plan_mix(width: int, height: int, alpha: float, rng, source_j: int) -> MixPlan:
    """Draw one lambda and box; lambda_eff comes from the clipped area."""
    lam = sample_lambda(alpha, rng)
    box = sample_box(width, height, lam, rng)
    x0, y0, x1, y1 = clip_box(box, width, height)
    area = (x1 - x0) * (y1 - y0)
    return MixPlan(lam, box, 1.0 - area / float(width * height), source_j)


def _mix_into(batch_x, rows_i, partner_x, rows_j, num_classes, alpha, rng, kind):
    """Shared pairing core; draw order per sample is lambda, then box."""
    n = len(batch_x)
    height, width = batch_x.shape[1], batch_x.shape[2]
    mixed = np.empty_like(batch_x)
    targets = np.zeros((n, num_classes), dtype=np.float64)
    lams = np.empty(n, dtype=np.float64)
    for i in range(n):
        lam = sample_lambda(alpha, rng)
        if kind == "cutmix":
            box = sample_box(width, height, lam, rng)
            mixed[i], lam_eff = cutmix_apply(batch_x[i], partner_x[i], box)
        elif kind == "mixup":
            mixed[i] = mixup_apply(batch_x[i], partner_x[i], lam)
            lam_eff = lam
        else:
            raise ValueError(f"unknown mix kind {kind!r}")
        targets[i] = mixed_target(int(rows_i[i]), int(rows_j[i]), lam_eff, num_classes)
        lams[i] = lam_eff
    return mixed, targets, lams


def rehearsal_pair_batch(batch_x, batch_y, mem, alpha, rng, class_to_row, kind="cutmix"):
    """Mix each batch sample with a partner drawn from rehearsal memory.

    batch_y holds external class ids; class_to_row maps them (and the
    memory labels) to head row indices. Returns (mixed images, target
    rows [B x C], lambda_eff per sample). Partners for the whole batch
    are drawn first, then one lambda and box per pair.
    """
    batch_x = np.asarray(batch_x)
    if len(batch_x) == 0:
        raise ValueError("empty batch")
    partner_x, partner_y = mem.sample(len(batch_x), rng)
    rows_i = [class_to_row[int(y)] for y in batch_y]
    rows_j = [class_to_row[int(y)] for y in partner_y]
    return _mix_into(batch_x, rows_i, partner_x, rows_j, len(class_to_row), alpha, rng, kind)


def within_batch_mix(batch_x, batch_y, alpha, rng, class_to_row, kind="cutmix"):
    """Classic pairing: partner each sample with a permuted batch member."""
    batch_x = np.asarray(batch_x)
    if len(batch_x) == 0:
        raise ValueError("empty batch")
    perm = rng.permutation(len(batch_x))
    rows = [class_to_row[int(y)] for y in batch_y]
    rows_j = [rows[j] for j in perm]
    return _mix_into(batch_x, rows, batch_x[perm], rows_j, len(class_to_row), alpha, rng, kind)
