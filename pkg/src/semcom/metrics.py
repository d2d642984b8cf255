"""Reconstruction quality metrics: PSNR and windowed SSIM.

Both metrics operate on de-normalized images in [0, 1]; use
``denormalize`` to map the pipeline's [-1, 1] tensors there first.
PSNR of identical images is reported as a documented 100 dB cap
instead of infinity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d

from .errors import ConfigError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def denormalize(x: np.ndarray) -> np.ndarray:
    """Map [-1, 1] image tensors to the [0, 1] metric domain."""
    return (np.asarray(x, dtype=float) + 1.0) / 2.0


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio 10*log10(max_val^2 / MSE) in dB."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch {a.shape} vs {b.shape}")
    if max_val <= 0.0:
        raise ConfigError("max_val must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(max_val ** 2 / mse)))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _windowed_moments(img: np.ndarray, kernel: np.ndarray):
    # Separable valid-region filtering; moments only make sense where
    # the window fits entirely inside the image.
    full = convolve1d(convolve1d(img, kernel, axis=0, mode="constant"),
                      kernel, axis=1, mode="constant")
    half = kernel.size // 2
    return full[half:img.shape[0] - half, half:img.shape[1] - half]


def _ssim_single(a: np.ndarray, b: np.ndarray, max_val: float) -> float:
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    mu_a = _windowed_moments(a, kernel)
    mu_b = _windowed_moments(b, kernel)
    var_a = _windowed_moments(a * a, kernel) - mu_a ** 2
    var_b = _windowed_moments(b * b, kernel) - mu_b ** 2
    cov = _windowed_moments(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 Gaussian window.

    Accepts (H, W) or (C, H, W); channels are averaged.  Windows are
    evaluated only where they fit fully inside the image.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ConfigError(f"expected (H, W) or (C, H, W), got {a.shape}")
    if a.shape[-2] < SSIM_WINDOW or a.shape[-1] < SSIM_WINDOW:
        raise ConfigError(f"image {a.shape} smaller than the "
                          f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    return float(np.mean([_ssim_single(ca, cb, max_val)
                          for ca, cb in zip(a, b)]))


@dataclass(frozen=True)
class MetricReport:
    """Per-sample metrics plus the batch summary used for error bars."""

    psnr_db: np.ndarray
    ssim: np.ndarray

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr_db))

    @property
    def psnr_std(self) -> float:
        return float(np.std(self.psnr_db))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim))

    @property
    def ssim_std(self) -> float:
        return float(np.std(self.ssim))

    @property
    def n_samples(self) -> int:
        return int(self.psnr_db.size)


def batch_metrics(a: np.ndarray, b: np.ndarray,
                  max_val: float = 1.0) -> MetricReport:
    """Evaluate PSNR/SSIM per sample over matching (N, C, H, W) stacks."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 4:
        raise ConfigError(f"expected matching (N, C, H, W) stacks, got "
                          f"{a.shape} vs {b.shape}")
    ps = np.array([psnr(x, y, max_val) for x, y in zip(a, b)])
    ss = np.array([ssim(x, y, max_val) for x, y in zip(a, b)])
    return MetricReport(psnr_db=ps, ssim=ss)
