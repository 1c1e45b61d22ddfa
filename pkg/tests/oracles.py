"""Slow, direct reference implementations used as test oracles.

None of these share code with the package paths they check.
"""

import math

import numpy as np


def naive_conv2d(x, w, b, dilation=1, groups=1):
    """Zero-padded, stride-1, size-preserving grouped conv by explicit tap sums.
    x: (C_in, H, W); w: (C_out, C_in/groups, K, K)."""
    cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    pad = dilation * (k - 1) // 2
    cog = cout // groups
    out = np.zeros((cout, h, wd))
    for o in range(cout):
        g = o // cog
        for ci in range(cg):
            c = g * cg + ci
            for i in range(k):
                for j in range(k):
                    dy, dx = i * dilation - pad, j * dilation - pad
                    for y in range(h):
                        yy = y + dy
                        if not 0 <= yy < h:
                            continue
                        for xx in range(wd):
                            sx = xx + dx
                            if 0 <= sx < wd:
                                out[o, y, xx] += w[o, ci, i, j] * x[c, yy, sx]
        if b is not None:
            out[o] += b[o]
    return out


def block_diagonal_dense(w, groups):
    """Expand grouped weights (C_out, C_in/G, K, K) into dense weights with the
    off-group blocks zeroed."""
    cout, cg, k, _ = w.shape
    cin = cg * groups
    cog = cout // groups
    dense = np.zeros((cout, cin, k, k))
    for o in range(cout):
        g = o // cog
        dense[o, g * cg:(g + 1) * cg] = w[o]
    return dense


def cubic_kernel(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t ** 3 - (a + 3) * t ** 2 + 1
    if t < 2:
        return a * t ** 3 - 5 * a * t ** 2 + 8 * a * t - 4 * a
    return 0.0


def resize_pixel(img2d, factor, oy, ox):
    """Value of one output pixel of an antialiased bicubic resize, computed
    by summing kernel weights over every source pixel with border clamping."""
    h, w = img2d.shape

    def axis_weights(n_in, o):
        centre = (o + 1) / factor + 0.5 * (1 - 1 / factor) - 1  # 0-based source coord
        shrink = min(factor, 1.0)
        reach = int(math.ceil(2 / shrink)) + 2
        weights = {}
        for src in range(int(math.floor(centre)) - reach, int(math.floor(centre)) + reach + 1):
            wgt = shrink * cubic_kernel(shrink * (centre - src))
            if wgt != 0.0:
                clamped = min(max(src, 0), n_in - 1)
                weights[clamped] = weights.get(clamped, 0.0) + wgt
        total = sum(weights.values())
        return {k: v / total for k, v in weights.items()}

    wy, wx = axis_weights(h, oy), axis_weights(w, ox)
    return sum(vy * vx * img2d[sy, sx] for sy, vy in wy.items() for sx, vx in wx.items())


def ssim_sliding(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """SSIM averaged over every fully-contained window, one window at a time."""
    t = np.arange(window) - (window - 1) / 2
    g1 = np.exp(-t ** 2 / (2 * sigma ** 2))
    g = np.outer(g1, g1)
    g /= g.sum()
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    h, w = a.shape
    vals = []
    for y in range(h - window + 1):
        for x in range(w - window + 1):
            pa = a[y:y + window, x:x + window]
            pb = b[y:y + window, x:x + window]
            ma, mb = (g * pa).sum(), (g * pb).sum()
            va = (g * (pa - ma) ** 2).sum()
            vb = (g * (pb - mb) ** 2).sum()
            cov = (g * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2))
                        / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def scalar_adam(grad_fn, w, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trajectory = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        trajectory.append(w)
    return trajectory


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def scene(h, w, seed=0):
    """Smooth synthetic RGB test image with some texture, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    phases = rng.uniform(0, 3, size=3)
    img = np.stack([0.5 + 0.3 * np.sin(6 * xx + p) * np.cos(4 * yy + p) for p in phases])
    img += 0.15 * (((xx * 8).astype(int) + (yy * 8).astype(int)) % 2)
    return np.clip(img, 0, 1)
