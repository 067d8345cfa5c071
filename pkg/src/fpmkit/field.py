"""Complex 2-D fields: centred unitary FFTs, spectrum windows and ``.cfld`` I/O.

A field is a plain ``numpy`` array; the last two axes are (row, col) so the
same helpers work on single images and on stacks.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .geometry import GeometryError, KVector, SystemGeometry, pixel_offset

CFLD_MAGIC = b"CFLD"
CFLD_VERSION = 1


class FormatError(ValueError):
    """Malformed or unsupported on-disk artifact."""


def fft2_centered(f):
    """Unitary 2-D DFT with DC moved to ``(H//2, W//2)``."""
    f = np.asarray(f)
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(f, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def ifft2_centered(f):
    f = np.asarray(f)
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(f, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def window_start(n: int, m: int, offset: tuple[int, int]) -> tuple[int, int]:
    """Top-left corner of the ``m x m`` window centred ``offset`` px from DC.

    Raises ``GeometryError`` when the window leaves the ``n x n`` grid.
    """
    r0 = n // 2 + offset[0] - m // 2
    c0 = n // 2 + offset[1] - m // 2
    if r0 < 0 or c0 < 0 or r0 + m > n or c0 + m > n:
        raise GeometryError(
            f"spectrum window at offset {offset} leaves the {n}x{n} grid "
            "(LED too oblique for this object size)"
        )
    return r0, c0


def crop_window(big, offset, m):
    n = big.shape[-1]
    r0, c0 = window_start(n, m, offset)
    return big[..., r0 : r0 + m, c0 : c0 + m]


def embed_window(small, offset, n):
    m = small.shape[-1]
    r0, c0 = window_start(n, m, offset)
    out = np.zeros(small.shape[:-2] + (n, n), dtype=np.result_type(small, np.complex128))
    out[..., r0 : r0 + m, c0 : c0 + m] = small
    return out


def crop_spectrum(big, k: KVector, geometry: SystemGeometry):
    """``M x M`` window of a centred ``N x N`` spectrum, centred on ``k``."""
    return crop_window(big, pixel_offset(geometry, k), geometry.meas_size_px)


def embed_spectrum(small, k: KVector, geometry: SystemGeometry, n: int | None = None):
    """Adjoint of :func:`crop_spectrum`: zero ``N x N`` grid with ``small`` pasted in."""
    n = geometry.obj_size_px if n is None else n
    return embed_window(small, pixel_offset(geometry, k), n)


def write_cfld(path, field) -> None:
    field = np.asarray(field)
    if field.ndim != 2:
        raise FormatError("a .cfld file stores exactly one 2-D field")
    h, w = field.shape
    inter = np.empty((h, w, 2), dtype="<f4")
    inter[..., 0] = field.real
    inter[..., 1] = field.imag
    with open(path, "wb") as fh:
        fh.write(CFLD_MAGIC + struct.pack("<BII", CFLD_VERSION, h, w))
        fh.write(inter.tobytes())


def read_cfld(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 13 or raw[:4] != CFLD_MAGIC:
        raise FormatError(f"{path}: not a CFLD file")
    version, h, w = struct.unpack_from("<BII", raw, 4)
    if version != CFLD_VERSION:
        raise FormatError(f"{path}: unsupported CFLD version {version}")
    if h < 1 or w < 1 or len(raw) != 13 + 8 * h * w:
        raise FormatError(f"{path}: size does not match header {h}x{w}")
    inter = np.frombuffer(raw, dtype="<f4", offset=13).reshape(h, w, 2)
    return inter[..., 0].astype(np.float64) + 1j * inter[..., 1].astype(np.float64)


def as_stored(field) -> np.ndarray:
    """Round a field through the 32-bit on-disk precision."""
    return np.asarray(field).astype(np.complex64).astype(np.complex128)
