"""Multi-LED coherent image formation, sensor quantization and dataset synthesis.

The per-LED linear operator is

    A_l{O} = (M/N) * ifft_M( P * window_l( fft_N(O) ) )

with unitary centred FFTs. The ``M/N`` gain makes a unit-transmittance
object produce unit intensity on the low-res grid independent of ``N, M``.
"""

from __future__ import annotations

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .field import (
    FormatError,
    as_stored,
    crop_window,
    embed_window,
    fft2_centered,
    ifft2_centered,
    pixel_offset,
    write_cfld,
)
from .geometry import KVector, PupilMask, SystemGeometry, led_k_vector, led_order, make_pupil

log = logging.getLogger(__name__)

FPMD_MAGIC = b"FPMD"
FPMD_VERSION = 1
BIT_DEPTHS = (8, 12, 16)


class FPMSystem:
    """Precomputed per-LED windows and pupil for one geometry.

    ``order`` is the LED sequence shared by measurements, sweeps and files.
    """

    def __init__(self, geometry: SystemGeometry, order=None, pupil: PupilMask | None = None):
        self.geometry = geometry
        self.order = [tuple(rc) for rc in (led_order(geometry) if order is None else order)]
        self.kvecs = [led_k_vector(geometry, r, c) for r, c in self.order]
        self.offsets = [pixel_offset(geometry, k) for k in self.kvecs]
        self.pupil = make_pupil(geometry) if pupil is None else pupil
        self.n = geometry.obj_size_px
        self.m = geometry.meas_size_px
        self.gain = self.m / self.n

    @property
    def n_leds(self) -> int:
        return len(self.order)

    def A(self, obj, l: int):
        spec = fft2_centered(obj)
        return self.gain * ifft2_centered(self.pupil.values * crop_window(spec, self.offsets[l], self.m))

    def AH(self, low, l: int):
        spec = np.conj(self.pupil.values) * fft2_centered(low)
        return self.gain * ifft2_centered(embed_window(spec, self.offsets[l], self.n))

    def A_from_spectrum(self, spec, l: int):
        return self.gain * ifft2_centered(self.pupil.values * crop_window(spec, self.offsets[l], self.m))

    def intensities(self, obj) -> np.ndarray:
        spec = fft2_centered(obj)
        return np.stack([np.abs(self.A_from_spectrum(spec, l)) ** 2 for l in range(self.n_leds)])


def forward_single(obj, pupil: PupilMask, k: KVector, geometry: SystemGeometry) -> np.ndarray:
    """Low-res intensity of ``obj`` under the LED with illumination frequency ``k``."""
    m, n = geometry.meas_size_px, geometry.obj_size_px
    obj = np.asarray(obj, dtype=np.complex128)
    if obj.shape != (n, n):
        raise ValueError(f"object must be {n}x{n}, got {obj.shape}")
    win = crop_window(fft2_centered(obj), pixel_offset(geometry, k), m)
    low = (m / n) * ifft2_centered(pupil.values * win)
    return np.abs(low) ** 2


@dataclass
class MeasurementStack:
    images: np.ndarray  # (L, M, M) float64
    geometry: SystemGeometry
    order: list = field(default_factory=list)
    bit_depth: int = 0
    scale: float | None = None  # stack-wide max used by quantization

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if not self.order:
            self.order = led_order(self.geometry)
        self.order = [tuple(int(v) for v in rc) for rc in self.order]
        if self.images.ndim != 3 or self.images.shape[0] != len(self.order):
            raise ValueError("images must be (L, M, M) with one image per LED in order")

    @property
    def n_leds(self) -> int:
        return self.images.shape[0]

    @property
    def m(self) -> int:
        return self.images.shape[-1]

    def system(self) -> FPMSystem:
        return FPMSystem(self.geometry, self.order)


def forward_stack(obj, geometry: SystemGeometry, order=None, system: FPMSystem | None = None) -> MeasurementStack:
    system = FPMSystem(geometry, order) if system is None else system
    obj = np.asarray(obj, dtype=np.complex128)
    n = geometry.obj_size_px
    if obj.shape != (n, n):
        raise ValueError(f"object must be {n}x{n}, got {obj.shape}")
    return MeasurementStack(system.intensities(obj), geometry, list(system.order), 0)


def _levels(bit_depth: int) -> int:
    if bit_depth not in BIT_DEPTHS:
        raise ValueError(f"bit depth must be one of {BIT_DEPTHS}, got {bit_depth}")
    return 2**bit_depth - 1


def _dequantize(codes, scale, bit_depth):
    return codes * scale / _levels(bit_depth)


def quantize_codes(images, scale, bit_depth) -> np.ndarray:
    return np.rint(np.asarray(images) / scale * _levels(bit_depth))


def quantize_stack(stack: MeasurementStack, bit_depth: int) -> MeasurementStack:
    """Round every pixel onto one stack-wide ``bit_depth`` lattice (fixed exposure)."""
    if stack.bit_depth == bit_depth and stack.scale is not None:
        return replace(stack, images=stack.images.copy())
    if stack.bit_depth != 0:
        raise ValueError("quantize_stack expects an ideal (bit_depth=0) stack")
    scale = float(stack.images.max())
    if not scale > 0:
        raise ValueError("cannot quantize an all-zero stack: scale undefined")
    codes = quantize_codes(stack.images, scale, bit_depth)
    return MeasurementStack(_dequantize(codes, scale, bit_depth), stack.geometry, list(stack.order), bit_depth, scale)


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def write_fpmd(path, stack: MeasurementStack) -> None:
    L, m = stack.n_leds, stack.m
    if stack.bit_depth == 0:
        dtype_code, data = 0, stack.images.astype("<f4")
    else:
        dtype_code = 1
        data = quantize_codes(stack.images, stack.scale, stack.bit_depth).astype("<u2")
    with open(path, "wb") as fh:
        fh.write(FPMD_MAGIC + struct.pack("<BIIBB", FPMD_VERSION, L, m, stack.bit_depth, dtype_code))
        fh.write(data.tobytes())
    meta = {
        "geometry": stack.geometry.to_dict(),
        "led_order": [list(rc) for rc in stack.order],
        "bit_depth": stack.bit_depth,
        "scale": stack.scale,
    }
    _sidecar(path).write_text(json.dumps(meta, indent=2))


def read_fpmd(path) -> MeasurementStack:
    raw = Path(path).read_bytes()
    if len(raw) < 15 or raw[:4] != FPMD_MAGIC:
        raise FormatError(f"{path}: not an FPMD file")
    version, L, m, bit_depth, dtype_code = struct.unpack_from("<BIIBB", raw, 4)
    if version != FPMD_VERSION:
        raise FormatError(f"{path}: unsupported FPMD version {version}")
    if dtype_code not in (0, 1):
        raise FormatError(f"{path}: unknown sample dtype {dtype_code}")
    dt = "<f4" if dtype_code == 0 else "<u2"
    if len(raw) != 15 + L * m * m * np.dtype(dt).itemsize:
        raise FormatError(f"{path}: payload size does not match header")
    data = np.frombuffer(raw, dtype=dt, offset=15).reshape(L, m, m).astype(np.float64)
    side = _sidecar(path)
    if not side.exists():
        raise FormatError(f"{path}: missing JSON sidecar {side.name}")
    meta = json.loads(side.read_text())
    geometry = SystemGeometry.from_dict(meta["geometry"])
    scale = meta.get("scale")
    if dtype_code == 1:
        if scale is None:
            raise FormatError(f"{path}: integer samples need a scale in the sidecar")
        data = _dequantize(data, scale, bit_depth)
    return MeasurementStack(data, geometry, meta["led_order"], bit_depth, scale)


# ---------------------------------------------------------------- datasets


def center_crop(img, n: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h < n or w < n:
        raise ValueError(f"image {img.shape} smaller than {n}x{n}")
    r0, c0 = (h - n) // 2, (w - n) // 2
    return img[r0 : r0 + n, c0 : c0 + n]


def make_object(amp_img, phase_img, n: int, phase_margin: float = 0.0):
    """Min-max normalise amplitude to [0, 1] and phase to [-pi + m, pi - m].

    Returns ``None`` if either image has zero dynamic range.
    """
    a = center_crop(amp_img, n)
    p = center_crop(phase_img, n)
    if np.ptp(a) == 0 or np.ptp(p) == 0:
        return None
    a = (a - a.min()) / np.ptp(a)
    half = np.pi - phase_margin
    p = (p - p.min()) / np.ptp(p) * 2 * half - half
    return a * np.exp(1j * p)


def split_counts(n: int, splits) -> tuple[int, int, int]:
    _, fv, ft = splits
    n_val, n_test = int(np.floor(fv * n)), int(np.floor(ft * n))
    return n - n_val - n_test, n_val, n_test


def synthesize_dataset(
    amp_images,
    phase_images,
    geometry: SystemGeometry,
    bit_depths,
    out_dir,
    seed: int = 0,
    splits=(0.8, 0.1, 0.1),
    phase_margin: float = 0.0,
    threads: int | None = None,
) -> dict:
    """Write objects, ideal + quantized stacks and ``manifest.json`` to ``out_dir``."""
    if len(amp_images) != len(phase_images):
        raise ValueError("need as many phase images as amplitude images")
    geometry.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    system = FPMSystem(geometry)
    n = geometry.obj_size_px
    bit_depths = sorted({int(b) for b in bit_depths}, reverse=True)
    for b in bit_depths:
        _levels(b)

    objects = []
    for i, (a, p) in enumerate(zip(amp_images, phase_images)):
        obj = make_object(a, p, n, phase_margin)
        if obj is None:
            log.warning("sample %d skipped: constant amplitude or phase image", i)
            continue
        objects.append((i, as_stored(obj)))

    def work(item):
        idx, obj = item
        sid = f"s{idx:04d}"
        write_cfld(out / f"{sid}_obj.cfld", obj)
        ideal = forward_stack(obj, geometry, system=system)
        stacks = {"0": f"{sid}_ideal.fpmd"}
        write_fpmd(out / stacks["0"], ideal)
        for b in bit_depths:
            stacks[str(b)] = f"{sid}_b{b}.fpmd"
            write_fpmd(out / stacks[str(b)], quantize_stack(ideal, b))
        return {"id": sid, "object": f"{sid}_obj.cfld", "stacks": stacks}

    with ThreadPoolExecutor(max_workers=threads or 1) as ex:
        samples = list(ex.map(work, objects))

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(samples))
    n_train, n_val, _ = split_counts(len(samples), splits)
    for rank, j in enumerate(perm):
        samples[j]["split"] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"

    manifest = {
        "geometry": geometry.to_dict(),
        "led_order": [list(rc) for rc in system.order],
        "bit_depths": bit_depths,
        "seed": seed,
        "phase_margin": phase_margin,
        "samples": samples,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return json.loads(path.read_text()), path.parent


def manifest_samples(manifest: dict, split: str | None = None):
    return [s for s in manifest["samples"] if split is None or s["split"] == split]
