"""Image quality metrics: PSNR and SSIM (window 11, standard constants)."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; inf for identical images."""
    m = mse(a, b)
    if m == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / m))


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(r**2) / (2 * sigma**2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Inputs are float images in [0, peak]; they are quantized to 8-bit first
    (the convention used when reporting against 8-bit ground truth) and
    compared with K1=0.01, K2=0.03, L=255.  RGB images are averaged over
    channels; border pixels without full window support are cropped.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    a = np.round(np.clip(a / peak, 0, 1) * 255.0)
    b = np.round(np.clip(b / peak, 0, 1) * 255.0)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]

    kernel = _gaussian_kernel()
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    pad = 5
    vals = []
    for ch in range(a.shape[-1]):
        x, y = a[..., ch], b[..., ch]
        mu_x = convolve(x, kernel, mode="nearest")
        mu_y = convolve(y, kernel, mode="nearest")
        xx = convolve(x * x, kernel, mode="nearest") - mu_x**2
        yy = convolve(y * y, kernel, mode="nearest") - mu_y**2
        xy = convolve(x * y, kernel, mode="nearest") - mu_x * mu_y
        s = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / ((mu_x**2 + mu_y**2 + c1) * (xx + yy + c2))
        vals.append(s[pad:-pad, pad:-pad].mean())
    return float(np.mean(vals))
