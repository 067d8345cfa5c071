import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fpmkit.geometry import (
    GeometryError,
    KVector,
    SystemGeometry,
    cutoff_px,
    desk_geometry,
    is_brightfield,
    led_k_vector,
    led_order,
    make_pupil,
)

PAPER = SystemGeometry()  # 630 nm, 4 mm pitch, 80 mm, 15x15, 0.25 NA, 10x


def test_central_led_is_on_axis():
    k = led_k_vector(PAPER, 7, 7)
    assert (k.kx, k.ky) == (0.0, 0.0)


def test_one_step_right_of_centre():
    k = led_k_vector(PAPER, 7, 8)
    expected = (0.004 / math.sqrt(0.004**2 + 0.080**2)) / 630e-9
    assert k.kx == pytest.approx(expected, rel=1e-12)
    assert k.kx == pytest.approx(7.925e4, rel=1e-3)
    assert k.ky == 0.0


def test_corner_led():
    k = led_k_vector(PAPER, 14, 14)
    expected = (0.028 / math.sqrt(2 * 0.028**2 + 0.080**2)) / 630e-9
    assert k.kx == pytest.approx(expected, rel=1e-12)
    assert k.ky == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("rc", [(-1, 0), (0, 15), (15, 15)])
def test_out_of_range_led(rc):
    with pytest.raises(IndexError):
        led_k_vector(PAPER, *rc)


@given(st.integers(-7, 7), st.integers(-7, 7))
def test_k_vector_antisymmetric(dr, dc):
    a = led_k_vector(PAPER, 7 + dr, 7 + dc)
    b = led_k_vector(PAPER, 7 - dr, 7 - dc)
    assert a.kx == -b.kx and a.ky == -b.ky
    assert math.hypot(a.kx * PAPER.wavelength_m, a.ky * PAPER.wavelength_m) <= 1


def test_pupil_matches_disk_enumeration():
    # M = 64 and a 16 px radius: fov chosen so that NA/lambda * fov = 16.5
    g = SystemGeometry(meas_size_px=64, obj_size_px=128, magnification=1.0,
                       sensor_pixel_pitch_m=16.5 * 630e-9 / 0.25 / 64)
    pupil = make_pupil(g)
    assert pupil.cutoff_px == 16
    count = sum(1 for y in range(64) for x in range(64) if (y - 32) ** 2 + (x - 32) ** 2 <= 16**2)
    assert pupil.values.sum().real == count
    yy, xx = np.indices((64, 64))
    inside = (yy - 32) ** 2 + (xx - 32) ** 2 <= 256
    assert np.array_equal(pupil.values.real.astype(bool), inside)


def test_paper_pupil_radius_closed_form():
    # 10x / 0.25 NA, 6.5 um pixels, 64 px low-res frames at 630 nm
    expected = math.floor(0.25 / 630e-9 * 64 * 6.5e-6 / 10)
    assert cutoff_px(PAPER) == expected == 16
    assert make_pupil(PAPER).cutoff_px == 16


def test_zero_na_keeps_only_dc():
    g = desk_geometry(na_objective=1e-12)
    vals = make_pupil(g).values
    assert vals.sum() == 1 and vals[16, 16] == 1


def test_pupil_too_large_is_rejected():
    with pytest.raises(GeometryError):
        make_pupil(desk_geometry(na_objective=0.5))


def test_pupil_point_symmetric():
    v = make_pupil(desk_geometry()).values
    # centre is (16, 16) on a 32 grid, so reflect rows/cols 1..31
    inner = v[1:, 1:]
    assert np.array_equal(inner, inner[::-1, ::-1])


def test_brightfield_classification():
    assert is_brightfield(PAPER, led_k_vector(PAPER, 7, 7))
    corner = led_k_vector(PAPER, 0, 0)
    assert corner.norm * PAPER.wavelength_m > 0.25
    assert not is_brightfield(PAPER, corner)
    # exactly at the cutoff counts as brightfield
    edge = KVector(0.25 / PAPER.wavelength_m, 0.0)
    assert is_brightfield(PAPER, edge)


def test_led_order_sorted_by_radius_centre_first():
    order = led_order(PAPER)
    assert order[0] == (7, 7)
    assert len(order) == 225 and len(set(order)) == 225
    radii = [led_k_vector(PAPER, *rc).norm for rc in order]
    assert all(b >= a - 1e-6 for a, b in zip(radii, radii[1:]))


def test_geometry_json_roundtrip(tmp_path):
    g = desk_geometry()
    g.save(tmp_path / "g.json")
    assert SystemGeometry.load(tmp_path / "g.json") == g


@pytest.mark.parametrize(
    "bad",
    [dict(wavelength_m=0), dict(led_distance_m=-1), dict(na_objective=1.0), dict(array_side=4),
     dict(obj_size_px=16, meas_size_px=32)],
)
def test_invalid_geometry(bad):
    with pytest.raises(GeometryError):
        SystemGeometry(**bad).validate()
