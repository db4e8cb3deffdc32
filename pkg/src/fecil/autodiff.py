"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array together with an optional gradient buffer.
Operations record closures on the output node; ``backward`` walks the tape
in reverse topological order and accumulates gradients additively across
fan-out. Production code runs in float32, test oracles in float64; every
op keeps the dtype of its inputs.

Only the primitives the networks need are provided (dense, conv2d, relu,
batchnorm, global average pool, concat, plus elementwise glue). There is
no general broadcasting.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class GraphError(RuntimeError):
    """Misuse of the autodiff tape (non-scalar root, repeated backward)."""


# When true, every op asserts its output is finite. Enabled by the test
# suite; off by default because the scan costs a full pass over the data.
FINITE_CHECKS = False


class Tensor:
    """N-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        arr = np.asarray(data, dtype=dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        """Constant view of the same data, cut off from the tape."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


def _as_array(x, like: np.ndarray) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=like.dtype)


def _node(data: np.ndarray, parents, backward) -> Tensor:
    """Wrap an op result; the backward closure is kept only when needed."""
    if FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values in forward op output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    live = tuple(p for p in parents if isinstance(p, Tensor))
    out.requires_grad = any(p.requires_grad for p in live)
    if out.requires_grad:
        out._parents = live
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def backward(root: Tensor):
    """Populate ``grad`` on every tensor the scalar ``root`` depends on.

    Frozen leaves (requires_grad=False) are never visited, so they keep
    ``grad is None``. The tape is released afterwards; calling backward a
    second time on the same root raises.
    """
    if root.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {root.shape}")
    if root._consumed:
        raise GraphError("backward called twice on the same graph")
    root._consumed = True
    if not root.requires_grad:
        return

    # Iterative post-order topological sort (graphs can be deep).
    topo = []
    state = {}  # id -> 0 discovered, 1 finished
    stack = [root]
    while stack:
        node = stack[-1]
        nid = id(node)
        if state.get(nid) is None:
            state[nid] = 0
            for p in node._parents:
                if p.requires_grad and state.get(id(p)) is None:
                    stack.append(p)
        else:
            stack.pop()
            if state[nid] == 0:
                state[nid] = 1
                topo.append(node)

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        fn = node._backward
        if fn is None:
            continue
        grads = fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g
        # Release saved activations; also blocks accidental re-traversal.
        node._backward = None
        node._parents = ()


# ---------------------------------------------------------------------------
# elementwise / structural primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    c = float(c)
    return _node(x.data * np.asarray(c, dtype=x.dtype), (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g):
        return ((x.data > 0) * g,)

    return _node(out, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def tsum(x: Tensor) -> Tensor:
    """Full reduction to a scalar."""

    def bwd(g):
        return (np.full(x.shape, g, dtype=x.dtype),)

    return _node(np.asarray(x.data.sum(), dtype=x.dtype), (x,), bwd)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    if n == 0:
        raise ShapeError("mean of empty tensor")

    def bwd(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _node(np.asarray(x.data.mean(), dtype=x.dtype), (x,), bwd)


def concat(tensors, axis: int) -> Tensor:
    """Concatenate along ``axis``; gradient splits back by segment."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise ShapeError("concat rank mismatch")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), bwd)


# ---------------------------------------------------------------------------
# dense / conv / pooling / batchnorm
# ---------------------------------------------------------------------------

def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight.T (+ bias)``; weight is [out, in]."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError("dense expects 2-d input and weight")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: input dim {x.shape[1]} != weight in-dim {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"dense: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data

    def bwd(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        gb = g.sum(axis=0) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, bwd)


def _conv_cols(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Gather conv patches from padded NHWC input into [B, OH, OW, kh*kw*C]."""
    b, _, _, c = xp.shape
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    view = view[:, ::stride, ::stride]  # [B, OH, OW, C, KH, KW]
    cols = np.ascontiguousarray(view.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(b, oh, ow, kh * kw * c)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-d convolution on NHWC input with [KH, KW, Cin, Cout] weights."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and weight")
    b, h, w, cin = x.shape
    kh, kw, wcin, cout = weight.shape
    if cin != wcin:
        raise ShapeError(f"conv2d: input channels {cin} != weight channels {wcin}")
    hp, wp = h + 2 * pad, w + 2 * pad
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if pad:
        xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    else:
        xp = x.data
    cols = _conv_cols(xp, kh, kw, stride, oh, ow)
    wmat = weight.data.reshape(kh * kw * cin, cout)
    out = cols.reshape(-1, kh * kw * cin) @ wmat
    out = out.reshape(b, oh, ow, cout)

    def bwd(g):
        gflat = np.ascontiguousarray(g).reshape(-1, cout)
        gw = (cols.reshape(-1, kh * kw * cin).T @ gflat).reshape(weight.shape)
        if stride == 1:
            # Input gradient as a full correlation with the flipped kernel:
            # one gather plus one matmul instead of kh*kw strided adds.
            gp = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
            gcols = _conv_cols(gp, kh, kw, 1, hp, wp)
            wflip = np.ascontiguousarray(
                weight.data[::-1, ::-1].transpose(0, 1, 3, 2)).reshape(kh * kw * cout, cin)
            gxp = (gcols.reshape(-1, kh * kw * cout) @ wflip).reshape(b, hp, wp, cin)
        else:
            gcols = (gflat @ wmat.T).reshape(b, oh, ow, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + oh * stride : stride, j : j + ow * stride : stride, :] += \
                        gcols[:, :, :, i, j, :]
        gx = gxp[:, pad : pad + h, pad : pad + w, :] if pad else gxp
        return (gx, gw)

    return _node(out, (x, weight), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes of an NHWC tensor, yielding [B, C]."""
    if x.data.ndim != 4:
        raise ShapeError("global_avg_pool expects a 4-d tensor")
    b, h, w, c = x.shape
    out = x.data.mean(axis=(1, 2))

    def bwd(g):
        return (np.broadcast_to(g[:, None, None, :] / (h * w), (b, h, w, c)).astype(x.dtype, copy=False),)

    return _node(out, (x,), bwd)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    train: bool,
    frozen_stats: bool = False,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over the last axis.

    Train mode normalizes by batch statistics and updates the running
    buffers in place; eval mode, and train mode with ``frozen_stats``,
    uses the stored running statistics untouched.
    """
    nd = x.data.ndim
    if nd not in (2, 4):
        raise ShapeError("batchnorm expects a 2-d or 4-d tensor")
    c = x.shape[-1]
    for t, name in ((gamma, "gamma"), (beta, "beta"), (running_mean, "running_mean"), (running_var, "running_var")):
        if t.shape != (c,):
            raise ShapeError(f"batchnorm: {name} shape {t.shape} != ({c},)")
    axes = tuple(range(nd - 1))
    sub = "ijk"[: nd - 1] + "c"
    channel_dot = f"{sub},{sub}->c"
    use_batch_stats = train and not frozen_stats

    if use_batch_stats:
        mean = x.data.mean(axis=axes)
        xc = x.data - mean
        n = x.data.size // c
        var = np.einsum(channel_dot, xc, xc) / n
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std
        # Unbiased variance goes into the running buffer, biased into the
        # normalization, mirroring the usual training-framework convention.
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean.data[...] = (1 - momentum) * running_mean.data + momentum * mean
        running_var.data[...] = (1 - momentum) * running_var.data + momentum * unbiased
        out = gamma.data * xhat + beta.data

        def bwd(g):
            gbeta = g.sum(axis=axes)
            ggamma = np.einsum(channel_dot, g, xhat)
            gx = (gamma.data * inv_std) * (g - (gbeta + xhat * ggamma) / n)
            return (gx.astype(x.dtype, copy=False), ggamma, gbeta)

    else:
        inv_std = 1.0 / np.sqrt(running_var.data + eps)
        xhat = (x.data - running_mean.data) * inv_std
        out = gamma.data * xhat + beta.data

        def bwd(g):
            gx = g * (gamma.data * inv_std)
            ggamma = np.einsum(channel_dot, g, xhat)
            gbeta = g.sum(axis=axes)
            return (gx.astype(x.dtype, copy=False), ggamma, gbeta)

    return _node(out.astype(x.dtype, copy=False), (x, gamma, beta), bwd)
