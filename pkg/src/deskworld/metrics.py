"""Rollout quality metrics: PSNR and SSIM on uint8 frames."""

from __future__ import annotations

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 8
_K1, _K2, _L = 0.01, 0.03, 255.0
PSNR_CAP_DB = 100.0


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 255.0) -> float:
    """10 log10(max^2 / MSE); identical inputs cap at 100 dB."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(max_val * max_val / mse))


def to_luma(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 3 and frame.shape[-1] == 3:
        return frame.astype(np.float64) @ LUMA_WEIGHTS
    return frame.astype(np.float64)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """SSIM with an 8x8 uniform window, stride 1, on luma; mean over windows.

    Uses the standard constants K1=0.01, K2=0.03 on an L=255 dynamic range.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    x, y = to_luma(a), to_luma(b)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"frames smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (_K1 * _L) ** 2
    c2 = (_K2 * _L) ** 2
    mu_x = _window_mean(x)
    mu_y = _window_mean(y)
    xx = _window_mean(x * x) - mu_x * mu_x
    yy = _window_mean(y * y) - mu_y * mu_y
    xy = _window_mean(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def _window_mean(img: np.ndarray) -> np.ndarray:
    """Mean over all SSIM_WINDOW x SSIM_WINDOW windows at stride 1 (valid)."""
    # summed-area table; fixed summation order keeps this deterministic
    s = np.cumsum(np.cumsum(img, axis=0), axis=1)
    s = np.pad(s, ((1, 0), (1, 0)))
    w = SSIM_WINDOW
    totals = (s[w:, w:] - s[:-w, w:] - s[w:, :-w] + s[:-w, :-w])
    return totals / (w * w)
