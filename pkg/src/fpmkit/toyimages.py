"""Procedural stand-ins for histology tiles: smooth textures plus blob 'cells'."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def blob_texture(rng: np.random.Generator, size: int, n_blobs: int = 12, smooth: float = 2.5) -> np.ndarray:
    """Random image in [0, 1] with features a few pixels wide and up."""
    base = ndimage.gaussian_filter(rng.standard_normal((size, size)), 8.0, mode="wrap")
    base = base / (np.abs(base).max() + 1e-12)
    yy, xx = np.indices((size, size))
    cells = np.zeros((size, size))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = rng.uniform(4, 14, 2)
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        cells[inside] += rng.uniform(0.4, 1.0)
    img = 0.5 * base + cells
    img = ndimage.gaussian_filter(img, smooth, mode="wrap")
    img -= img.min()
    return img / img.max()


def toy_pairs(n: int, size: int, seed: int = 0):
    """``n`` uncorrelated (amplitude, phase) source image pairs."""
    rng = np.random.default_rng(seed)
    amps = [blob_texture(rng, size) for _ in range(n)]
    phases = [blob_texture(rng, size) for _ in range(n)]
    return amps, phases
