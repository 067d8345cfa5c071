"""Classical FPM reconstruction: Wirtinger flow, sequential sweeps, alternating projections."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .field import embed_window, fft2_centered, ifft2_centered, window_start
from .forward import FPMSystem, MeasurementStack


class StepSizeError(RuntimeError):
    """Iterations diverged; the step size is too large for this data."""


@dataclass
class SolverConfig:
    # a deliberately large start; auto-halving shrinks it to the stable range
    eta: float = 100.0
    iters: int = 100
    record_objective: bool = True
    auto_halve: bool = True
    max_halvings: int = 40

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.iters < 0:
            raise ValueError("iters must be non-negative")


@dataclass
class SweepResult:
    grad_stack: np.ndarray  # (L, N, N)
    phi_final: np.ndarray


def _system(meas: MeasurementStack, system: FPMSystem | None) -> FPMSystem:
    system = meas.system() if system is None else system
    if system.m != meas.m or system.n_leds != meas.n_leds:
        raise ValueError("measurement stack does not match the system geometry")
    return system


def _check_obj(obj, system: FPMSystem) -> np.ndarray:
    obj = np.asarray(obj, dtype=np.complex128)
    if obj.shape != (system.n, system.n):
        raise ValueError(f"object must be {system.n}x{system.n}, got {obj.shape}")
    return obj


def led_gradient(system: FPMSystem, obj, image, l: int) -> np.ndarray:
    """Single-LED term ``A_l^H{(|A_l O|^2 - I_l) * A_l O}``."""
    u = system.A(obj, l)
    return system.AH((np.abs(u) ** 2 - image) * u, l)


def objective_and_gradient(obj, meas: MeasurementStack, system: FPMSystem | None = None):
    """Return ``f(O) = sum_l ||I_l - |A_l O|^2||^2`` and the mean per-LED gradient."""
    system = _system(meas, system)
    obj = _check_obj(obj, system)
    spec = fft2_centered(obj)
    acc = np.zeros_like(spec)
    f = 0.0
    pconj = np.conj(system.pupil.values)
    for l in range(system.n_leds):
        u = system.A_from_spectrum(spec, l)
        r = np.abs(u) ** 2 - meas.images[l]
        f += float(np.sum(r * r))
        # accumulate A_l^H in the spectrum domain, one inverse FFT at the end
        r0, c0 = _window(system, l)
        acc[r0 : r0 + system.m, c0 : c0 + system.m] += pconj * fft2_centered(r * u)
    grad = system.gain * ifft2_centered(acc) / system.n_leds
    return f, grad


def _window(system: FPMSystem, l: int):
    return window_start(system.n, system.m, system.offsets[l])


def wf_objective(obj, meas: MeasurementStack, system: FPMSystem | None = None) -> float:
    system = _system(meas, system)
    spec = fft2_centered(_check_obj(obj, system))
    return float(
        sum(np.sum((np.abs(system.A_from_spectrum(spec, l)) ** 2 - meas.images[l]) ** 2) for l in range(system.n_leds))
    )


def wf_gradient(obj, meas: MeasurementStack, system: FPMSystem | None = None) -> np.ndarray:
    return objective_and_gradient(obj, meas, system)[1]


def wf_reconstruct(meas: MeasurementStack, cfg: SolverConfig, init, system: FPMSystem | None = None):
    """Full-batch Wirtinger flow.

    With ``cfg.auto_halve`` a step that would raise the objective is retried
    with half the step size, so the recorded trace is non-increasing. Without
    it, growth beyond 10x the initial objective raises ``StepSizeError``.
    Returns ``(object, trace)``; ``trace`` is empty unless ``record_objective``.
    """
    system = _system(meas, system)
    obj = _check_obj(init, system).copy()
    trace = []
    if cfg.iters == 0:
        return obj, trace
    eta = cfg.eta
    f, g = objective_and_gradient(obj, meas, system)
    f0 = f
    if cfg.record_objective:
        trace.append(f)
    for _ in range(cfg.iters):
        cand = obj - eta * g
        f_new, g_new = objective_and_gradient(cand, meas, system)
        if cfg.auto_halve:
            halvings = 0
            while not f_new <= f:
                halvings += 1
                if halvings > cfg.max_halvings:
                    # no descent at any tried step: numerically stationary
                    return obj, trace
                eta *= 0.5
                cand = obj - eta * g
                f_new, g_new = objective_and_gradient(cand, meas, system)
        elif not np.isfinite(f_new) or f_new > 10 * f0:
            raise StepSizeError(f"objective grew from {f0:.3e} to {f_new:.3e}; reduce eta (now {eta})")
        obj, f, g = cand, f_new, g_new
        if cfg.record_objective:
            trace.append(f)
    return obj, trace


def sequential_sweep(obj_in, meas: MeasurementStack, eta: float, system: FPMSystem | None = None) -> SweepResult:
    """One pass over the LEDs, stepping the intermediate field after each gradient."""
    system = _system(meas, system)
    phi = _check_obj(obj_in, system).copy()
    grads = np.empty((system.n_leds, system.n, system.n), dtype=np.complex128)
    for l in range(system.n_leds):
        grads[l] = led_gradient(system, phi, meas.images[l], l)
        phi = phi - eta * grads[l]
    return SweepResult(grads, phi)


def regular_gradients(obj, meas: MeasurementStack, system: FPMSystem | None = None) -> np.ndarray:
    """Per-LED gradient stack, every term evaluated at the same ``obj``."""
    return sequential_sweep(obj, meas, 0.0, system).grad_stack


def upsample_fourier(img, n: int) -> np.ndarray:
    """Zero-padded Fourier interpolation ``M -> N`` that preserves the mean."""
    img = np.asarray(img)
    m = img.shape[-1]
    if m == n:
        return img.astype(np.complex128)
    up = ifft2_centered(embed_window(fft2_centered(img), (0, 0), n))
    return up * (n / m)


def initialize_object(meas: MeasurementStack, geometry=None, init_sqrt: bool = False) -> np.ndarray:
    """Central-LED image upsampled to ``N x N`` as a zero-phase amplitude.

    The first LED in the module order is the on-axis one. By default the
    intensity itself is the amplitude; ``init_sqrt`` uses its square root.
    """
    geometry = meas.geometry if geometry is None else geometry
    img = meas.images[0]
    if init_sqrt:
        img = np.sqrt(np.maximum(img, 0.0))
    return upsample_fourier(img, geometry.obj_size_px).real.astype(np.complex128)


def data_residual(obj, meas: MeasurementStack, system: FPMSystem | None = None) -> float:
    """``sum_l || sqrt(I_l) - |A_l O| ||^2``."""
    system = _system(meas, system)
    spec = fft2_centered(_check_obj(obj, system))
    return float(
        sum(
            np.sum((np.sqrt(np.maximum(meas.images[l], 0)) - np.abs(system.A_from_spectrum(spec, l))) ** 2)
            for l in range(system.n_leds)
        )
    )


def ap_reconstruct(meas: MeasurementStack, iters: int, init=None, system: FPMSystem | None = None):
    """Sequential alternating projections in the object spectrum.

    Each LED's low-res field gets its modulus replaced by ``sqrt(I_l)``; the
    corrected spectrum is written back inside the pupil support. Returns
    ``(object, residual_trace)``.
    """
    system = _system(meas, system)
    if init is None:
        init = initialize_object(meas)
    obj = _check_obj(init, system)
    spec = fft2_centered(obj)
    p = system.pupil.values
    pconj_norm = np.conj(p) / np.max(np.abs(p) ** 2)
    amps = np.sqrt(np.maximum(meas.images, 0.0))
    res0 = data_residual(obj, meas, system)
    # absolute floor so a converged start does not trip the guard on round-off
    limit = 10 * res0 + 1e-12 * float(np.sum(meas.images))
    trace = [res0]
    for _ in range(iters):
        for l in range(system.n_leds):
            r0, c0 = _window(system, l)
            win = spec[r0 : r0 + system.m, c0 : c0 + system.m]
            psi = system.gain * ifft2_centered(p * win)
            psi_new = amps[l] * np.exp(1j * np.angle(psi))
            patch = fft2_centered(psi_new) / system.gain
            spec[r0 : r0 + system.m, c0 : c0 + system.m] = win + pconj_norm * (patch - p * win)
        obj = ifft2_centered(spec)
        res = data_residual(obj, meas, system)
        if not np.isfinite(res) or res > limit:
            raise StepSizeError(f"alternating projections diverged: residual {res:.3e} vs {res0:.3e}")
        trace.append(res)
    return ifft2_centered(spec), trace


def write_trace_csv(path, trace, header=("iteration", "objective")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])
