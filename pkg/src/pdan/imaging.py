"""Resampling, degradation models and colour conversion.

Images are numpy arrays laid out (3, H, W) with values in [0, 1] unless noted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    near = (a + 2) * ax3 - (a + 3) * ax2 + 1
    far = a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a
    return np.where(ax <= 1, near, np.where(ax < 2, far, 0.0))


def output_length(in_len: int, factor: float) -> int:
    out = math.ceil(in_len * factor - 1e-9)
    if out < 1:
        raise ValueError(f"resizing {in_len} by {factor} gives an empty image")
    return out


def resize_weights(in_len: int, out_len: int, factor: float,
                   antialias: bool = True) -> np.ndarray:
    """Dense (out_len, in_len) interpolation matrix for one axis.

    Pixel centres are aligned as in MATLAB ``imresize``; when shrinking the
    cubic kernel is stretched by ``1/factor``.  Taps falling outside the
    image are clamped to the border pixel (edge replication).
    """
    width = 4.0
    if factor < 1 and antialias:
        kernel = lambda t: factor * cubic(factor * t)  # noqa: E731
        width /= factor
    else:
        kernel = cubic
    x = np.arange(1, out_len + 1, dtype=np.float64)
    u = x / factor + 0.5 * (1 - 1 / factor)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = kernel(u[:, None] - idx)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.clip(idx - 1, 0, in_len - 1).astype(np.int64)
    mat = np.zeros((out_len, in_len))
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, idx.ravel()), w.ravel())
    return mat


def bicubic_resize(img: np.ndarray, factor: float, antialias: bool = True) -> np.ndarray:
    """Separable bicubic resize (a = -0.5) of a (C, H, W) or (H, W) array."""
    arr = np.asarray(img, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    _, h, w = arr.shape
    oh, ow = output_length(h, factor), output_length(w, factor)
    wh = resize_weights(h, oh, factor, antialias)
    ww = resize_weights(w, ow, factor, antialias)
    out = np.einsum("oh,chw->cow", wh, arr)
    out = np.einsum("pw,cow->cop", ww, out)
    return out[0] if squeeze else out


def gaussian_kernel(size: int = 7, sigma: float = 1.6) -> np.ndarray:
    r = (size - 1) / 2
    t = np.arange(size) - r
    g = np.exp(-(t[:, None] ** 2 + t[None, :] ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def gaussian_blur(img: np.ndarray, size: int = 7, sigma: float = 1.6) -> np.ndarray:
    """Gaussian filter with replicated borders on a (C, H, W) array."""
    k = gaussian_kernel(size, sigma)
    r = size // 2
    padded = np.pad(np.asarray(img, dtype=np.float64), ((0, 0), (r, r), (r, r)), mode="edge")
    _, h, w = img.shape
    out = np.zeros((img.shape[0], h, w))
    for i in range(size):
        for j in range(size):
            out += k[i, j] * padded[:, i:i + h, j:j + w]
    return out


@dataclass(frozen=True)
class DegradationSpec:
    """BI: bicubic down.  BD: blur, then bicubic down.  DN: bicubic down,
    then additive Gaussian noise (sigma in 8-bit units) and clamping."""

    kind: str = "BI"
    scale: int = 4
    blur_size: int = 7
    blur_sigma: float = 1.6
    noise_sigma: float = 30.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.upper())
        if self.kind not in ("BI", "BD", "DN"):
            raise ValueError(f"unknown degradation {self.kind!r}")
        if self.scale < 1:
            raise ValueError("scale must be positive")


def degrade(img: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    if spec.kind == "BD":
        img = gaussian_blur(img, spec.blur_size, spec.blur_sigma)
    lr = bicubic_resize(img, 1.0 / spec.scale)
    if spec.kind == "DN":
        rng = np.random.default_rng(spec.seed)
        lr = lr + rng.normal(0.0, spec.noise_sigma / 255.0, size=lr.shape)
        lr = np.clip(lr, 0.0, 1.0)
    return lr


def modcrop(img: np.ndarray, scale: int) -> np.ndarray:
    h, w = img.shape[-2:]
    return img[..., : h - h % scale, : w - w % scale]


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to the 8-bit grid and return to [0, 1] floats."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


# BT.601: studio swing (as used by SR benchmarks) and full swing (JPEG)
_STUDIO = (np.array([[65.481, 128.553, 24.966],
                     [-37.797, -74.203, 112.0],
                     [112.0, -93.786, -18.214]]) / 255.0,
           np.array([16.0, 128.0, 128.0]) / 255.0)
_FULL = (np.array([[0.299, 0.587, 0.114],
                   [-0.168736, -0.331264, 0.5],
                   [0.5, -0.418688, -0.081312]]),
         np.array([0.0, 0.5, 0.5]))


def rgb_to_ycbcr(img: np.ndarray, studio: bool = True) -> np.ndarray:
    m, off = _STUDIO if studio else _FULL
    return np.einsum("ij,jhw->ihw", m, np.asarray(img, dtype=np.float64)) + off[:, None, None]


def rgb_to_y(img: np.ndarray, studio: bool = True) -> np.ndarray:
    m, off = _STUDIO if studio else _FULL
    return np.einsum("j,jhw->hw", m[0], np.asarray(img, dtype=np.float64)) + off[0]
