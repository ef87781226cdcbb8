"""Fidelity metrics between a reconstruction and its ground truth.

All three metrics run on the real-valued BT.601 luminance plane after
shaving ``factor`` pixels from each border (configurable via ``shave``).
PSNR of identical inputs is reported as an explicit infinity sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Image, rgb_to_ycbcr_y
from .errors import ContractViolationError

__all__ = ["MetricReport", "psnr", "ssim", "rmse", "evaluate"]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 255.0


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    rmse: float
    shave: int
    pixel_count: int


def _shaved_planes(a: Image, b: Image, factor: int, shave: int | None):
    if a.size != b.size:
        raise ContractViolationError(
            f"metric inputs differ in size: {a.size} vs {b.size}"
        )
    s = factor if shave is None else shave
    ya = rgb_to_ycbcr_y(a)
    yb = rgb_to_ycbcr_y(b)
    if s > 0:
        if 2 * s >= min(a.height, a.width):
            raise ContractViolationError(
                f"shave of {s} per side leaves nothing of a {a.width}x{a.height} image"
            )
        ya = ya[s:-s, s:-s]
        yb = yb[s:-s, s:-s]
    return ya, yb, s


def _mse(ya: np.ndarray, yb: np.ndarray) -> float:
    diff = ya - yb
    return float(np.mean(diff * diff))


def psnr(a: Image, b: Image, factor: int, shave: int | None = None) -> float:
    """Peak signal-to-noise ratio in dB; inf when the planes are identical."""
    ya, yb, _ = _shaved_planes(a, b, factor, shave)
    mse = _mse(ya, yb)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DYNAMIC_RANGE * DYNAMIC_RANGE / mse)


def rmse(a: Image, b: Image, factor: int, shave: int | None = None) -> float:
    """Root of the mean squared luminance difference over the shaved region."""
    ya, yb, _ = _shaved_planes(a, b, factor, shave)
    return math.sqrt(_mse(ya, yb))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g1 = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    win = np.outer(g1, g1)
    return win / win.sum()


_SSIM_WIN = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)


def _windowed_mean(plane: np.ndarray, win: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(plane, win.shape)
    return np.tensordot(view, win, axes=([2, 3], [0, 1]))


def ssim(a: Image, b: Image, factor: int, shave: int | None = None) -> float:
    """Mean local structural similarity over the shaved luminance planes.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 255.
    """
    ya, yb, _ = _shaved_planes(a, b, factor, shave)
    if min(ya.shape) < SSIM_WINDOW:
        raise ContractViolationError(
            f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} after shaving, got {ya.shape}"
        )
    win = _SSIM_WIN
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    mu_a = _windowed_mean(ya, win)
    mu_b = _windowed_mean(yb, win)
    var_a = _windowed_mean(ya * ya, win) - mu_a * mu_a
    var_b = _windowed_mean(yb * yb, win) - mu_b * mu_b
    cov = _windowed_mean(ya * yb, win) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def evaluate(a: Image, b: Image, factor: int, shave: int | None = None) -> MetricReport:
    """All three metrics in one report (single color conversion)."""
    ya, yb, s = _shaved_planes(a, b, factor, shave)
    mse = _mse(ya, yb)
    psnr_db = math.inf if mse == 0.0 else 10.0 * math.log10(DYNAMIC_RANGE**2 / mse)
    return MetricReport(
        psnr_db=psnr_db,
        ssim=ssim(a, b, factor, shave),
        rmse=math.sqrt(mse),
        shave=s,
        pixel_count=int(ya.size),
    )
