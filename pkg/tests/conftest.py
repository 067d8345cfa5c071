import numpy as np
import pytest

from fpmkit.geometry import desk_geometry


def direct_dft(f, inverse=False):
    """Centred unitary DFT by explicit summation over every (u, v, x, y)."""
    h, w = f.shape
    sign = 1 if inverse else -1
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for x in range(h):
                for y in range(w):
                    phase = (u - h // 2) * (x - h // 2) / h + (v - w // 2) * (y - w // 2) / w
                    acc += f[x, y] * np.exp(sign * 2j * np.pi * phase)
            out[u, v] = acc / np.sqrt(h * w)
    return out


def random_field(rng, shape, amp=1.0):
    return amp * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def random_object(rng, n, margin=0.3):
    amp = 0.3 + 0.7 * rng.random((n, n))
    phase = rng.uniform(-np.pi + margin, np.pi - margin, (n, n))
    return amp * np.exp(1j * phase)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_geometry():
    """3x3 LEDs, 32 -> 16 px."""
    return desk_geometry(array_side=3, obj_size_px=32, meas_size_px=16)


@pytest.fixture
def tiny_geometry():
    """3x3 LEDs, 16 -> 8 px."""
    return desk_geometry(array_side=3, obj_size_px=16, meas_size_px=8, magnification=2.0, na_objective=0.08)


ACCEPTANCE_LINES = []


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> str:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {name}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
