"""PSNR and SSIM on the luminance channel."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imaging import rgb_to_y

PSNR_CAP = 100.0


def _luma(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        return rgb_to_y(arr)
    if arr.ndim == 2:
        return arr
    raise ValueError(f"expected (3,H,W) RGB or (H,W) luminance, got {arr.shape}")


def _shave(y: np.ndarray, shave: int) -> np.ndarray:
    return y[shave:-shave, shave:-shave] if shave > 0 else y


def _prepare(a, b, shave):
    ya, yb = _luma(a), _luma(b)
    if ya.shape != yb.shape:
        raise ValueError(f"shape mismatch {ya.shape} vs {yb.shape}")
    ya, yb = _shave(ya, shave), _shave(yb, shave)
    if ya.size == 0:
        raise ValueError("nothing left after shaving the border")
    return ya, yb


def psnr_y(a: np.ndarray, b: np.ndarray, shave: int = 0) -> float:
    """PSNR in dB on Y (peak 1.0); identical inputs report ``PSNR_CAP``."""
    ya, yb = _prepare(a, b, shave)
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-(t ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return g


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim_y(a: np.ndarray, b: np.ndarray, shave: int = 0, window: int = 11,
           sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
           data_range: float = 1.0) -> float:
    """Mean SSIM over all fully-contained Gaussian windows."""
    ya, yb = _prepare(a, b, shave)
    if min(ya.shape) < window:
        raise ValueError(f"image {ya.shape} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(ya, g), _filter_valid(yb, g)
    saa = _filter_valid(ya * ya, g) - mu_a ** 2
    sbb = _filter_valid(yb * yb, g) - mu_b ** 2
    sab = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))
