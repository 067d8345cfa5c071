"""LED-array illumination geometry and the coherent pupil.

Conventions
-----------
* Frequencies are in cycles/m. ``kx`` follows the LED column index, ``ky``
  the row index.
* The field of view at the sample plane is ``meas_size_px`` camera pixels
  back-projected through the objective, i.e.
  ``fov_m = meas_size_px * sensor_pixel_pitch_m / magnification``. Both the
  low-res and the high-res spectra therefore share the frequency step
  ``1 / fov_m``.
* Spectra are centred: DC sits at index ``size // 2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    """Invalid or inconsistent optical configuration."""


@dataclass(frozen=True)
class SystemGeometry:
    wavelength_m: float = 630e-9
    led_pitch_m: float = 4e-3
    led_distance_m: float = 80e-3
    array_side: int = 15
    na_objective: float = 0.25
    magnification: float = 10.0
    sensor_pixel_pitch_m: float = 6.5e-6
    obj_size_px: int = 320
    meas_size_px: int = 64

    @property
    def n_leds(self) -> int:
        return self.array_side * self.array_side

    @property
    def fov_m(self) -> float:
        return self.meas_size_px * self.sensor_pixel_pitch_m / self.magnification

    @property
    def center_index(self) -> float:
        return (self.array_side - 1) / 2

    def validate(self) -> "SystemGeometry":
        if not self.wavelength_m > 0:
            raise GeometryError("wavelength_m must be positive")
        if not self.led_distance_m > 0:
            raise GeometryError("led_distance_m must be positive")
        if not 0 < self.na_objective < 1:
            raise GeometryError("na_objective must lie in (0, 1)")
        if self.array_side < 1 or self.array_side % 2 == 0:
            raise GeometryError("array_side must be a positive odd integer")
        if self.meas_size_px < 1 or self.obj_size_px < self.meas_size_px:
            raise GeometryError("need obj_size_px >= meas_size_px >= 1")
        if self.magnification <= 0 or self.sensor_pixel_pitch_m <= 0:
            raise GeometryError("magnification and pixel pitch must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SystemGeometry":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise GeometryError(f"unknown geometry fields: {sorted(unknown)}")
        return cls(**d).validate()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "SystemGeometry":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class KVector:
    kx: float
    ky: float

    @property
    def norm(self) -> float:
        return math.hypot(self.kx, self.ky)


@dataclass(frozen=True)
class PupilMask:
    values: np.ndarray
    cutoff_px: int


def led_k_vector(geometry: SystemGeometry, row: int, col: int) -> KVector:
    """Illumination spatial frequency of the LED at ``(row, col)``."""
    n = geometry.array_side
    if not (0 <= row < n and 0 <= col < n):
        raise IndexError(f"LED ({row}, {col}) outside a {n}x{n} array")
    c = geometry.center_index
    dx = (col - c) * geometry.led_pitch_m
    dy = (row - c) * geometry.led_pitch_m
    r = math.sqrt(dx * dx + dy * dy + geometry.led_distance_m**2)
    return KVector(dx / r / geometry.wavelength_m, dy / r / geometry.wavelength_m)


def cutoff_px(geometry: SystemGeometry) -> int:
    return int(math.floor(geometry.na_objective / geometry.wavelength_m * geometry.fov_m))


def make_pupil(geometry: SystemGeometry) -> PupilMask:
    """Ideal binary disk pupil on the centred ``M x M`` low-res spectrum grid.

    Pixels at distance exactly ``cutoff_px`` from the centre are inside.
    """
    m = geometry.meas_size_px
    r = cutoff_px(geometry)
    if r >= m / 2:
        raise GeometryError(
            f"pupil radius {r}px does not fit a {m}px low-res grid; "
            "reduce NA or the field of view"
        )
    yy, xx = np.indices((m, m))
    dist2 = (yy - m // 2) ** 2 + (xx - m // 2) ** 2
    return PupilMask((dist2 <= r * r).astype(np.complex128), r)


def is_brightfield(geometry: SystemGeometry, k: KVector) -> bool:
    return k.norm * geometry.wavelength_m <= geometry.na_objective


def led_order(geometry: SystemGeometry) -> list[tuple[int, int]]:
    """All LEDs sorted by increasing ``|k|``, ties by polar angle in [0, 2pi)."""

    def key(rc):
        k = led_k_vector(geometry, *rc)
        angle = math.atan2(k.ky, k.kx) % (2 * math.pi)
        # rounding merges floating-point ties on |k|
        return (round(k.norm * geometry.wavelength_m, 12), round(angle, 12))

    n = geometry.array_side
    return sorted(((r, c) for r in range(n) for c in range(n)), key=key)


def k_vectors(geometry: SystemGeometry, order=None) -> list[KVector]:
    order = led_order(geometry) if order is None else order
    return [led_k_vector(geometry, r, c) for r, c in order]


def pixel_offset(geometry: SystemGeometry, k: KVector) -> tuple[int, int]:
    """(row, col) shift of the spectrum window in frequency pixels."""
    fov = geometry.fov_m
    return int(round(k.ky * fov)), int(round(k.kx * fov))


def desk_geometry(**overrides) -> SystemGeometry:
    """Small 5x5-LED, 160 -> 32 px configuration used for quick experiments."""
    base = dict(
        wavelength_m=630e-9,
        led_pitch_m=6e-3,
        led_distance_m=80e-3,
        array_side=5,
        na_objective=0.12,
        magnification=4.0,
        sensor_pixel_pitch_m=6.5e-6,
        obj_size_px=160,
        meas_size_px=32,
    )
    base.update(overrides)
    return SystemGeometry(**base).validate()
