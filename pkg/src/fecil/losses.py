"""Classification and distillation losses.

Both losses reduce over the batch with an arithmetic mean and are
numerically stabilized by max-subtraction inside the log-softmax.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor, _node


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def softened_softmax(logits: Tensor, tau: float) -> Tensor:
    """Row-wise softmax of ``logits / tau``; rows sum to one."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if logits.data.ndim != 2 or logits.data.shape[1] == 0:
        raise ShapeError(f"softened_softmax expects a non-empty [B, C] tensor, got {logits.shape}")
    q = np.exp(_log_softmax(logits.data / tau))

    def bwd(g):
        dot = (g * q).sum(axis=1, keepdims=True)
        return ((q * (g - dot) / tau).astype(logits.dtype, copy=False),)

    return _node(q.astype(logits.dtype, copy=False), (logits,), bwd)


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross entropy between softmax(logits) and probability rows.

    ``targets`` is a constant [B, C] array whose rows each sum to one
    (one-hot or mixed labels).
    """
    targets = np.asarray(targets)
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be [B, C], got {logits.shape}")
    if targets.shape != logits.data.shape:
        raise ShapeError(f"targets shape {targets.shape} != logits shape {logits.data.shape}")
    b = logits.data.shape[0]
    if b == 0:
        raise ShapeError("empty batch")
    row_sums = targets.sum(axis=1)
    if not np.all(np.abs(row_sums - 1.0) <= 1e-6):
        worst = int(np.argmax(np.abs(row_sums - 1.0)))
        raise ValueError(f"target row {worst} sums to {row_sums[worst]!r}, expected 1")
    logp = _log_softmax(logits.data)
    loss = -(targets * logp).sum() / b

    def bwd(g):
        p = np.exp(logp)
        return (((p - targets) * (g / b)).astype(logits.dtype, copy=False),)

    return _node(np.asarray(loss, dtype=logits.dtype), (logits,), bwd)


def distillation_loss(student_logits: Tensor, teacher_logits, tau: float) -> Tensor:
    """Soft-target cross entropy at temperature ``tau``, averaged over the batch.

    Per sample this is sum_c -q_teacher_c * log q_student_c with both
    distributions softened by ``tau``. The teacher side is treated as a
    constant: no gradient flows into it. The minimum over students equals
    the entropy of the teacher's softened distribution.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    t = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    if student_logits.data.ndim != 2:
        raise ShapeError(f"student logits must be [B, C], got {student_logits.shape}")
    if t.shape != student_logits.data.shape:
        raise ShapeError(f"teacher shape {t.shape} != student shape {student_logits.data.shape}")
    b = student_logits.data.shape[0]
    if b == 0:
        raise ShapeError("empty batch")
    q_teacher = np.exp(_log_softmax(t / tau))
    logq_student = _log_softmax(student_logits.data / tau)
    loss = -(q_teacher * logq_student).sum() / b

    def bwd(g):
        q_student = np.exp(logq_student)
        return (((q_student - q_teacher) * (g / (b * tau))).astype(student_logits.dtype, copy=False),)

    return _node(np.asarray(loss, dtype=student_logits.dtype), (student_logits,), bwd)
