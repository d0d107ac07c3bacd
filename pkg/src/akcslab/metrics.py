"""Reconstruction quality metrics: PSNR and windowed SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import convolve2d

from .errors import InvalidDimensionError, ShapeError
from .linalg import as_matrix

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(x, x_ref, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) in dB; +inf for identical inputs."""
    x = as_matrix(x, "image")
    ref = as_matrix(x_ref, "reference")
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if peak <= 0.0:
        raise InvalidDimensionError(f"peak must be positive, got {peak}")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(x, x_ref) -> float:
    """Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), dynamic
    range 1.0 and the usual stability constants K1=0.01, K2=0.03."""
    x = as_matrix(x, "image")
    ref = as_matrix(x_ref, "reference")
    if x.shape != ref.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise InvalidDimensionError(
            f"image must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    win = _gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(ref, win, mode="valid")
    var_x = convolve2d(x * x, win, mode="valid") - mu_x * mu_x
    var_y = convolve2d(ref * ref, win, mode="valid") - mu_y * mu_y
    cov = convolve2d(x * ref, win, mode="valid") - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
