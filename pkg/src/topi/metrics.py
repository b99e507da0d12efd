"""PSNR / SSIM on toy latents.

There is no VAE here, so final noisy-token latents are treated as a
single-channel image: the token grid, averaged over channels. The peak value
defaults to the dynamic range of the reference image.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0
SSIM_WINDOW = 8


@dataclass
class QualityReport:
    psnr: float
    ssim: float
    max_abs_error: float
    mean_abs_error: float

    def to_json(self) -> dict:
        # NaN (ssim on grids smaller than the window) becomes null
        return {k: (None if math.isnan(v) else float(v)) for k, v in asdict(self).items()}


def _check_shapes(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(reference, candidate, peak: float = 1.0) -> float:
    reference, candidate = _check_shapes(reference, candidate)
    mse = float(np.mean((reference - candidate) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def ssim(reference, candidate, peak: float | None = None, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all ``window x window`` patches (stride 1, uniform weights)."""
    x, y = _check_shapes(reference, candidate)
    if x.ndim != 2 or min(x.shape) < window:
        raise ValueError(f"ssim needs 2-D inputs of at least {window}x{window}, got {x.shape}")
    if peak is None:
        peak = float(x.max() - x.min()) or 1.0
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    wx = sliding_window_view(x, (window, window))
    wy = sliding_window_view(y, (window, window))
    mx = wx.mean(axis=(-2, -1))
    my = wy.mean(axis=(-2, -1))
    dx = wx - mx[..., None, None]
    dy = wy - my[..., None, None]
    # same formula for variance and covariance so ssim(x, x) is exactly 1
    vx = (dx * dx).mean(axis=(-2, -1))
    vy = (dy * dy).mean(axis=(-2, -1))
    cov = (dx * dy).mean(axis=(-2, -1))
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def latent_image(latent, grid_width: int | None = None) -> np.ndarray:
    """Token-major latent ``(n, d)`` -> channel-averaged ``(rows, width)`` image."""
    latent = np.asarray(latent, dtype=np.float64)
    n = latent.shape[0]
    width = grid_width or (math.isqrt(n - 1) + 1)
    if n % width:
        raise ValueError(f"{n} tokens do not fill rows of width {width}")
    return latent.mean(axis=1).reshape(n // width, width)


def compare(reference_latent, candidate_latent, peak: float | None = None) -> QualityReport:
    ref_img = latent_image(reference_latent)
    cand_img = latent_image(candidate_latent)
    if peak is None:
        peak = float(ref_img.max() - ref_img.min()) or 1.0
    err = np.abs(np.asarray(reference_latent) - np.asarray(candidate_latent))
    if min(ref_img.shape) >= SSIM_WINDOW:
        s = ssim(ref_img, cand_img, peak)
    else:
        s = float("nan")
    return QualityReport(
        psnr=psnr(ref_img, cand_img, peak),
        ssim=s,
        max_abs_error=float(err.max()),
        mean_abs_error=float(err.mean()),
    )
