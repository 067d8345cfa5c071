"""Image quality metrics and overlapping-patch stitching."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

EXACT = math.inf


def psnr(pred, gt, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for an exact match."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("psnr needs equally shaped images")
    if not data_range > 0:
        raise ValueError("data_range must be positive")
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0:
        return EXACT
    return 10 * math.log10(data_range**2 / mse)


def format_psnr(v: float) -> str:
    return "exact" if v == EXACT else f"{v:.3f}"


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def ssim(pred, gt, data_range: float, win_size: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over valid window positions."""
    x, y = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("ssim needs equally shaped images")
    if min(x.shape) < win_size:
        raise ValueError(f"ssim needs images of at least {win_size}x{win_size}")
    w = _gaussian_window(win_size, sigma)
    pad = win_size // 2

    def filt(img):
        out = ndimage.correlate1d(img, w, axis=0, mode="constant")
        out = ndimage.correlate1d(out, w, axis=1, mode="constant")
        return out[pad:-pad, pad:-pad]

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(s.mean())


def amplitude_phase_scores(pred, gt) -> dict:
    """PSNR/SSIM of amplitude (range 1) and phase (range 2pi; SSIM on (theta+pi)/2pi)."""
    pa, ga = np.abs(pred), np.abs(gt)
    pp, gp = np.angle(pred), np.angle(gt)
    return {
        "amp_psnr": psnr(pa, ga, 1.0),
        "amp_ssim": ssim(pa, ga, 1.0),
        "phase_psnr": psnr(pp, gp, 2 * np.pi),
        "phase_ssim": ssim((pp + np.pi) / (2 * np.pi), (gp + np.pi) / (2 * np.pi), 1.0),
    }


# ------------------------------------------------------------ stitching


def feather_weights_1d(size: int, overlap: int, lead: bool, trail: bool) -> np.ndarray:
    """Linear ramps over ``overlap`` px at edges shared with a neighbour.

    Two neighbours' ramps over the same pixels sum to exactly 1.
    """
    w = np.ones(size)
    if overlap > 0:
        ramp = (np.arange(overlap) + 0.5) / overlap
        if lead:
            w[:overlap] = ramp
        if trail:
            w[size - overlap :] = 1.0 - ramp
    return w


def stitch_patches(patches, layout: tuple[int, int], overlap_px: int) -> np.ndarray:
    """Blend a row-major grid of equally sized square patches.

    ``layout`` is (rows, cols); neighbouring patches share ``overlap_px``
    pixels, blended with linear feathering weights that form a partition of
    unity.
    """
    rows, cols = layout
    if len(patches) != rows * cols:
        raise ValueError(f"layout {layout} needs {rows * cols} patches, got {len(patches)}")
    p = np.asarray(patches[0]).shape[0]
    for q in patches:
        if np.asarray(q).shape != (p, p):
            raise ValueError("all patches must be square and equally sized")
    if not 0 <= overlap_px <= p // 2:
        raise ValueError("overlap_px must lie in [0, patch_size / 2]")
    step = p - overlap_px
    h, w = step * (rows - 1) + p, step * (cols - 1) + p
    dtype = np.result_type(*[np.asarray(q).dtype for q in patches], np.float64)
    out = np.zeros((h, w), dtype=dtype)
    for i in range(rows):
        wr = feather_weights_1d(p, overlap_px, i > 0, i < rows - 1)
        for j in range(cols):
            wc = feather_weights_1d(p, overlap_px, j > 0, j < cols - 1)
            out[i * step : i * step + p, j * step : j * step + p] += np.outer(wr, wc) * patches[i * cols + j]
    return out


def weight_sum(layout: tuple[int, int], patch: int, overlap_px: int) -> np.ndarray:
    """Total feathering weight per output pixel (all ones by construction)."""
    ones = [np.ones((patch, patch))] * (layout[0] * layout[1])
    return stitch_patches(ones, layout, overlap_px)
