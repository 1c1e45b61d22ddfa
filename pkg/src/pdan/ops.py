"""Forward operations with exact backward rules.

Every op takes and returns :class:`~pdan.tensor.Tensor` objects in the
(N, C, H, W) layout.  Stride is always 1 and convolution padding is zero
padding sized to preserve the spatial extent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import Tensor, make_result


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    groups: int = 1
    dilation: int = 1
    padding: int | None = None

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_size,
               self.groups, self.dilation) < 1:
            raise ShapeError(f"non-positive field in {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ShapeError(
                f"channels {self.in_channels}->{self.out_channels} not divisible "
                f"by groups={self.groups}")
        if self.padding is None:
            span = self.dilation * (self.kernel_size - 1)
            if span % 2:
                raise ShapeError("even effective kernel cannot preserve spatial size")
            object.__setattr__(self, "padding", span // 2)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        return (self.out_channels, self.in_channels // self.groups, k, k)

    @property
    def extent(self) -> int:
        return (self.kernel_size - 1) * self.dilation + 1


@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    ``running_var`` may be ``None`` to mark statistics that were never
    initialised; inference then refuses to run.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    momentum: float = 0.1
    eps: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, channels: int, dtype=np.float32, **kw) -> "BatchNormState":
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            **kw,
        )

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.running_var is not None and np.any(self.running_var < 0):
            raise ValueError("running variance must be non-negative")


# ----------------------------------------------------------------------------
# convolution

def _im2col(xp: np.ndarray, k: int, d: int, h: int, w: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k * k, h, w), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i * k + j] = xp[:, :, i * d:i * d + h, j * d:j * d + w]
    return cols


def _col2im(cols: np.ndarray, k: int, d: int, p: int, h: int, w: int) -> np.ndarray:
    n, c = cols.shape[:2]
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i * d:i * d + h, j * d:j * d + w] += cols[:, :, i * k + j]
    return xp[:, :, p:p + h, p:p + w]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Grouped, dilated 2-D convolution (cross-correlation), stride 1."""
    xd = x.data
    if xd.ndim != 4 or xd.shape[1] != spec.in_channels:
        raise ShapeError(f"conv2d expects (N,{spec.in_channels},H,W), got {xd.shape}")
    if weight.shape != spec.weight_shape:
        raise ShapeError(f"weight shape {weight.shape} != {spec.weight_shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {bias.shape} != ({spec.out_channels},)")
    n, cin, h, w = xd.shape
    k, d, p, g = spec.kernel_size, spec.dilation, spec.padding, spec.groups
    if spec.extent > min(h, w) + 2 * p:
        raise ShapeError(f"kernel extent {spec.extent} exceeds padded input {h}x{w}+2*{p}")
    cg, cog = cin // g, spec.out_channels // g

    if k == 1:
        cols = xd.reshape(n, g, cg, h * w)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
        cols = _im2col(xp, k, d, h, w).reshape(n, g, cg * k * k, h * w)
    wg = weight.data.reshape(g, cog, cg * k * k)
    out = np.matmul(wg[None], cols).reshape(n, spec.out_channels, h, w)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)

    def backward(grad: np.ndarray):
        gr = grad.reshape(n, g, cog, h * w)
        gw = None
        if weight.requires_grad:
            gw = np.matmul(gr, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(weight.shape)
        gb = grad.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wg.transpose(0, 2, 1)[None], gr)
            if k == 1:
                gx = gcols.reshape(xd.shape)
            else:
                gx = _col2im(gcols.reshape(n, cin, k * k, h, w), k, d, p, h, w)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, "conv2d", parents, backward)


# ----------------------------------------------------------------------------
# pointwise

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, "relu", (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    xd = x.data
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype)
    return make_result(y, "sigmoid", (x,), lambda g: (g * y * (1 - y),))


def pointwise(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown pointwise kind {kind!r}")


# ----------------------------------------------------------------------------
# normalization

def batchnorm2d(x: Tensor, state: BatchNormState) -> Tensor:
    xd = x.data
    c = state.gamma.shape[0]
    if xd.ndim != 4 or xd.shape[1] != c:
        raise ShapeError(f"batchnorm2d over {c} channels got {xd.shape}")
    axes = (0, 2, 3)
    if state.training:
        mean = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        m = state.momentum
        rm = np.zeros(c, xd.dtype) if state.running_mean is None else state.running_mean
        rv = np.ones(c, xd.dtype) if state.running_var is None else state.running_var
        state.running_mean = ((1 - m) * rm + m * mean).astype(rm.dtype)
        state.running_var = ((1 - m) * rv + m * var).astype(rv.dtype)
    else:
        if state.running_var is None or state.running_mean is None:
            raise RuntimeError("batchnorm inference requested before running statistics exist")
        mean, var = state.running_mean.astype(xd.dtype), state.running_var.astype(xd.dtype)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (xd - mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    gamma, beta = state.gamma, state.beta
    out = xhat * gamma.data.reshape(1, -1, 1, 1) + beta.data.reshape(1, -1, 1, 1)
    count = xd.size // c
    training = state.training

    def backward(grad: np.ndarray):
        gg = (grad * xhat).sum(axis=axes)
        gb = grad.sum(axis=axes)
        gxhat = grad * gamma.data.reshape(1, -1, 1, 1)
        if training:
            gx = (inv.reshape(1, -1, 1, 1) / count) * (
                count * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv.reshape(1, -1, 1, 1)
        return gx, gg, gb

    return make_result(out.astype(xd.dtype), "batchnorm2d", (x, gamma, beta), backward)


# ----------------------------------------------------------------------------
# reductions

def gap(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    return make_result(out, "gap", (x,),
                       lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),))


def gmp(x: Tensor) -> Tensor:
    """Spatial max; ties send the gradient to the first maximum in row-major order."""
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)

    def backward(grad: np.ndarray):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[..., None], grad.reshape(n, c, 1), axis=2)
        return (gx.reshape(x.shape),)

    return make_result(out, "gmp", (x,), backward)


def channel_pool(x: Tensor) -> Tensor:
    """Stack per-pixel channel mean (channel 0) and channel max (channel 1)."""
    xd = x.data
    c = xd.shape[1]
    idx = xd.argmax(axis=1)[:, None]
    mx = np.take_along_axis(xd, idx, axis=1)
    out = np.concatenate([xd.mean(axis=1, keepdims=True), mx], axis=1)

    def backward(grad: np.ndarray):
        gx = np.broadcast_to(grad[:, :1] / c, xd.shape).copy()
        gmax = np.zeros_like(xd)
        np.put_along_axis(gmax, idx, grad[:, 1:], axis=1)
        return (gx + gmax,)

    return make_result(out, "channel_pool", (x,), backward)


def reduce_pool(x: Tensor, kind: str) -> Tensor:
    funcs = {"gap": gap, "gmp": gmp, "channel_pool": channel_pool}
    if kind not in funcs:
        raise ValueError(f"unknown pool kind {kind!r}")
    return funcs[kind](x)


# ----------------------------------------------------------------------------
# rearrangements

def permute(x: Tensor, perm: Sequence[int]) -> Tensor:
    perm = tuple(int(a) for a in perm)
    if sorted(perm) != list(range(x.ndim)):
        raise ValueError(f"{perm} is not a permutation of {x.ndim} axes")
    inverse = tuple(np.argsort(perm))
    out = np.ascontiguousarray(x.data.transpose(perm))
    return make_result(out, "permute", (x,),
                       lambda g: (np.ascontiguousarray(g.transpose(inverse)),),
                       check_finite=False)


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """Depth-to-space: channel c*s*s + i*s + j lands at (c, h*s+i, w*s+j)."""
    n, cs, h, w = x.shape
    if cs % (s * s):
        raise ShapeError(f"{cs} channels not divisible by {s}^2")
    c = cs // (s * s)
    out = x.data.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * s, w * s)

    def backward(grad: np.ndarray):
        return (grad.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape),)

    return make_result(np.ascontiguousarray(out), "pixel_shuffle", (x,), backward,
                       check_finite=False)


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    n, c, hs, ws = x.shape
    if hs % s or ws % s:
        raise ShapeError(f"spatial {hs}x{ws} not divisible by {s}")
    h, w = hs // s, ws // s
    out = x.data.reshape(n, c, h, s, w, s).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * s * s, h, w)

    def backward(grad: np.ndarray):
        g = grad.reshape(n, c, s, s, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape)
        return (g,)

    return make_result(np.ascontiguousarray(out), "pixel_unshuffle", (x,), backward,
                       check_finite=False)


# ----------------------------------------------------------------------------
# combinations

def concat(xs: Sequence[Tensor]) -> Tensor:
    if len({(t.shape[0],) + t.shape[2:] for t in xs}) != 1:
        raise ShapeError(f"concat needs equal batch/spatial dims: {[t.shape for t in xs]}")
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])
    out = np.concatenate([t.data for t in xs], axis=1)

    def backward(grad: np.ndarray):
        return [grad[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))]

    return make_result(out, "concat", tuple(xs), backward, check_finite=False)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch {a.shape} vs {b.shape}")
    return make_result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def mean(xs: Sequence[Tensor]) -> Tensor:
    if len({t.shape for t in xs}) != 1:
        raise ShapeError(f"mean needs equal shapes: {[t.shape for t in xs]}")
    k = len(xs)
    # pairwise tree sum: k identical inputs with k a power of two average exactly
    level = [t.data for t in xs]
    while len(level) > 1:
        nxt = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    out = level[0] / k
    return make_result(out, "mean", tuple(xs), lambda g: [g / k] * k)


def mul_broadcast(x: Tensor, weights: Tensor) -> Tensor:
    """Scale x (N,C,H,W) by weights shaped (N,C,1,1) or (N,1,H,W)."""
    n, c, h, w = x.shape
    ws = weights.shape
    if ws not in ((n, c, 1, 1), (n, 1, h, w), x.shape):
        raise ShapeError(f"cannot broadcast weights {ws} onto {x.shape}")
    out = x.data * weights.data
    reduce_axes = tuple(i for i in range(4) if ws[i] == 1 and x.shape[i] != 1)

    def backward(grad: np.ndarray):
        gw = (grad * x.data).sum(axis=reduce_axes, keepdims=True) if reduce_axes else grad * x.data
        return grad * weights.data, gw

    return make_result(out, "mul_broadcast", (x, weights), backward)


def combine(xs: Sequence[Tensor], kind: str) -> Tensor:
    if kind == "concat_channels":
        return concat(xs)
    if kind == "add":
        return add(*xs)
    if kind == "mul_broadcast":
        return mul_broadcast(*xs)
    if kind == "mean":
        return mean(xs)
    raise ValueError(f"unknown combine kind {kind!r}")


# ----------------------------------------------------------------------------
# loss

def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over every element of every batch item."""
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    count = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=pred.dtype)

    def backward(grad: np.ndarray):
        g = np.sign(diff) * (grad / count)
        return g, -g

    return make_result(out, "l1_loss", (pred, target), backward)
