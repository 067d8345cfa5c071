"""LWGNet: Wirtinger-flow sweeps unrolled into K stages with learned gradient mixing.

Every layer is written against :mod:`fpmkit.autodiff`, so the same code runs
plain inference (numpy arrays in, no tape) and training (parameters as
``Tensor`` leaves under a ``Tape``).

Stage ``i`` maps the object estimate ``O_i`` to

    O_{i+1} = O_i + Psi_i([g_1, ..., g_L])

where ``g_l`` are the per-LED gradients collected during one sequential
sweep starting at ``O_i``. ``Psi`` is three complex 3x3 convolutions, each
followed by instance norm and the amplitude-phase tanh, then a complex
channel-wise fully connected layer.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .field import FormatError
from .forward import FPMSystem, MeasurementStack
from .solvers import initialize_object

LWGW_MAGIC = b"LWGW"
LWGW_VERSION = 1
VARIANTS = ("lwgnet", "regular", "post")


@dataclass
class LWGNetConfig:
    n_stages: int = 3
    channels: int = 32
    n_leds: int = 225
    eta: float = 0.01
    variant: str = "lwgnet"
    full_complex_conv: bool = False
    post_sweeps: int = 5
    init_sqrt: bool = False
    fc_init_scale: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.n_stages < 1 or self.channels < 1:
            raise ValueError("need at least one stage and one channel")

    @property
    def in_channels(self) -> int:
        return 1 if self.variant == "post" else self.n_leds

    @classmethod
    def from_dict(cls, d: dict) -> "LWGNetConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def layer_shapes(cfg: LWGNetConfig):
    """Parameter names and shapes in the fixed serialisation order."""
    c = cfg.channels
    shapes = OrderedDict()
    for s in range(cfg.n_stages):
        c_in = cfg.in_channels
        for j in range(1, 4):
            shapes[f"stage{s}.conv{j}.a"] = (c, c_in, 3, 3)
            shapes[f"stage{s}.conv{j}.b"] = (c, c_in, 3, 3)
            shapes[f"stage{s}.norm{j}.gamma"] = (2, c)
            shapes[f"stage{s}.norm{j}.beta"] = (2, c)
            c_in = c
        shapes[f"stage{s}.fc.weight"] = (2, c)
        shapes[f"stage{s}.fc.bias"] = (2,)
    return shapes


class LWGNetParams:
    """Named real arrays for all stages plus the network configuration.

    Complex weights are stored as (re, im) pairs along the leading axis.
    """

    def __init__(self, cfg: LWGNetConfig, arrays: "OrderedDict[str, np.ndarray]"):
        self.cfg = cfg
        shapes = layer_shapes(cfg)
        if list(arrays) != list(shapes):
            raise ValueError("parameter names do not match the configuration")
        for k, v in arrays.items():
            if v.shape != shapes[k]:
                raise ValueError(f"{k}: expected shape {shapes[k]}, got {v.shape}")
        self.arrays = arrays

    @classmethod
    def init(cls, cfg: LWGNetConfig, rng: np.random.Generator) -> "LWGNetParams":
        arrays = OrderedDict()
        for name, shape in layer_shapes(cfg).items():
            if name.endswith((".a", ".b")):
                bound = 1.0 / np.sqrt(shape[1] * 9)
                arrays[name] = rng.uniform(-bound, bound, shape)
            elif name.endswith("gamma"):
                arrays[name] = np.ones(shape)
            elif name.endswith("fc.weight"):
                bound = cfg.fc_init_scale / np.sqrt(cfg.channels)
                arrays[name] = rng.uniform(-bound, bound, shape)
            else:
                arrays[name] = np.zeros(shape)
        return cls(cfg, arrays)

    @classmethod
    def zeros(cls, cfg: LWGNetConfig) -> "LWGNetParams":
        return cls(cfg, OrderedDict((k, np.zeros(s)) for k, s in layer_shapes(cfg).items()))

    def copy(self) -> "LWGNetParams":
        return LWGNetParams(self.cfg, OrderedDict((k, v.copy()) for k, v in self.arrays.items()))

    def count(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))

    def stage(self, s: int, source=None) -> dict:
        src = self.arrays if source is None else source
        prefix = f"stage{s}."
        return {k[len(prefix) :]: v for k, v in src.items() if k.startswith(prefix)}

    def tensors(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in self.arrays.items())

    # -- .lwgw I/O: magic, u8 version, u32 K, u32 C, u32 L, then every array in
    # layer_shapes() order as u8 ndim, ndim x u32 dims, little-endian f32 data.

    def save(self, path) -> None:
        cfg = self.cfg
        with open(path, "wb") as fh:
            fh.write(LWGW_MAGIC + struct.pack("<BIII", LWGW_VERSION, cfg.n_stages, cfg.channels, cfg.in_channels))
            for arr in self.arrays.values():
                fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.astype("<f4").tobytes())
        Path(str(path) + ".json").write_text(json.dumps(asdict(cfg), indent=2))

    @classmethod
    def load(cls, path) -> "LWGNetParams":
        path = Path(path)
        side = Path(str(path) + ".json")
        if not side.exists():
            raise FormatError(f"{path}: missing JSON sidecar {side.name}")
        cfg = LWGNetConfig.from_dict(json.loads(side.read_text()))
        raw = path.read_bytes()
        if len(raw) < 17 or raw[:4] != LWGW_MAGIC:
            raise FormatError(f"{path}: not an LWGW file")
        version, k, c, l_in = struct.unpack_from("<BIII", raw, 4)
        if version != LWGW_VERSION:
            raise FormatError(f"{path}: unsupported LWGW version {version}")
        if (k, c, l_in) != (cfg.n_stages, cfg.channels, cfg.in_channels):
            raise FormatError(f"{path}: header disagrees with sidecar config")
        pos = 17
        arrays = OrderedDict()
        for name, shape in layer_shapes(cfg).items():
            (ndim,) = struct.unpack_from("<B", raw, pos)
            dims = struct.unpack_from(f"<{ndim}I", raw, pos + 1)
            pos += 1 + 4 * ndim
            if tuple(dims) != shape:
                raise FormatError(f"{path}: {name} has shape {dims}, expected {shape}")
            count = int(np.prod(dims))
            if pos + 4 * count > len(raw):
                raise FormatError(f"{path}: truncated at {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 4 * count
        if pos != len(raw):
            raise FormatError(f"{path}: trailing bytes")
        return cls(cfg, arrays)


# ------------------------------------------------------------ layers


def complex_conv2d(z, a, b, bias=None, full_complex: bool = False):
    """Complex 3x3 convolution on a (C_in, H, W) complex tensor.

    Default (decoupled) form: ``re = a * x``, ``im = b * y`` summed over input
    channels. ``full_complex`` gives ``(a*x - b*y) + j (b*x + a*y)``.
    ``bias`` is an optional (2, C_out) real pair.
    """
    z = as_tensor(z)
    x, y = ad.real(z), ad.imag(z)
    if full_complex:
        re = ad.conv2d(x, a) - ad.conv2d(y, b)
        im = ad.conv2d(x, b) + ad.conv2d(y, a)
    else:
        re = ad.conv2d(x, a)
        im = ad.conv2d(y, b)
    if bias is not None:
        bias = as_tensor(bias)
        re = re + ad.reshape(ad.index(bias, 0), (-1, 1, 1))
        im = im + ad.reshape(ad.index(bias, 1), (-1, 1, 1))
    return ad.to_complex(re, im)


def complex_instance_norm(z, gamma, beta, eps: float = 1e-5):
    """Instance norm applied to real and imaginary parts independently."""
    z, gamma, beta = as_tensor(z), as_tensor(gamma), as_tensor(beta)
    re = ad.instance_norm(ad.real(z), gamma[0], beta[0], eps)
    im = ad.instance_norm(ad.imag(z), gamma[1], beta[1], eps)
    return ad.to_complex(re, im)


def channel_fc(z, weight, bias):
    """Per-pixel complex linear map over channels: (C, H, W) -> (H, W)."""
    weight, bias = as_tensor(weight), as_tensor(bias)
    w = ad.reshape(ad.to_complex(weight[0], weight[1]), (-1, 1, 1))
    b = ad.to_complex(bias[0], bias[1])
    return ad.sum_(ad.mul(w, z), axis=0) + b


def psi_block(stack, p: dict, full_complex: bool = False, eps: float = 1e-5):
    """Psi on a (C_in, N, N) complex stack; returns an (N, N) complex update."""
    h = stack
    for j in range(1, 4):
        h = complex_conv2d(h, p[f"conv{j}.a"], p[f"conv{j}.b"], full_complex=full_complex)
        h = complex_instance_norm(h, p[f"norm{j}.gamma"], p[f"norm{j}.beta"], eps)
        h = ad.ctanh(h)
    return channel_fc(h, p["fc.weight"], p["fc.bias"])


# ------------------------------------------------------------ physics in the graph


def sweep_graph(obj, images, system: FPMSystem, eta: float):
    """Sequential per-LED gradients as graph ops; returns (grad_stack, phi_final)."""
    phi = as_tensor(obj)
    pupil = system.pupil.values
    pconj = np.conj(pupil)
    grads = []
    for l in range(system.n_leds):
        off = system.offsets[l]
        u = ad.ifft2c(ad.crop(ad.fft2c(phi), off, system.m) * pupil) * system.gain
        resid = ad.abs2(u) - images[l]
        g = ad.ifft2c(ad.embed(ad.fft2c(resid * u) * pconj, off, system.n)) * system.gain
        grads.append(g)
        if eta != 0:
            phi = phi - g * eta
    return ad.stack(grads), phi


def _forward(meas: MeasurementStack, params: LWGNetParams, source, system: FPMSystem | None):
    cfg = params.cfg
    if cfg.variant != "post" and meas.n_leds != cfg.n_leds:
        raise ValueError(f"network expects {cfg.n_leds} LEDs, stack has {meas.n_leds}")
    system = meas.system() if system is None else system
    obj = as_tensor(initialize_object(meas, init_sqrt=cfg.init_sqrt))
    images = meas.images
    if cfg.variant == "post":
        for _ in range(cfg.post_sweeps):
            # descent step: one stochastic WF epoch, i.e. the sweep's final field
            _, obj = sweep_graph(obj, images, system, cfg.eta)
        for s in range(cfg.n_stages):
            h = ad.reshape(obj, (1,) + obj.shape)
            obj = obj + psi_block(h, params.stage(s, source), cfg.full_complex_conv, cfg.eps)
        return obj
    eta = 0.0 if cfg.variant == "regular" else cfg.eta
    for s in range(cfg.n_stages):
        grads, _ = sweep_graph(obj, images, system, eta)
        obj = obj + psi_block(grads, params.stage(s, source), cfg.full_complex_conv, cfg.eps)
    return obj


def forward_graph(meas: MeasurementStack, params: LWGNetParams, tensors, system: FPMSystem | None = None) -> Tensor:
    """Network output as a Tensor, built from the given parameter tensors."""
    return _forward(meas, params, tensors, system)


def run_network(meas: MeasurementStack, params: LWGNetParams, system: FPMSystem | None = None) -> np.ndarray:
    with ad.no_tape():
        return _forward(meas, params, params.arrays, system).value


def lwgnet_forward(meas: MeasurementStack, params: LWGNetParams, system: FPMSystem | None = None) -> np.ndarray:
    if params.cfg.variant != "lwgnet":
        raise ValueError(f"parameters belong to variant {params.cfg.variant!r}")
    return run_network(meas, params, system)


def variant_post_network(meas: MeasurementStack, params: LWGNetParams, system: FPMSystem | None = None) -> np.ndarray:
    if params.cfg.variant != "post":
        raise ValueError(f"parameters belong to variant {params.cfg.variant!r}")
    return run_network(meas, params, system)


def variant_regular_gradient(meas: MeasurementStack, params: LWGNetParams, system: FPMSystem | None = None) -> np.ndarray:
    if params.cfg.variant != "regular":
        raise ValueError(f"parameters belong to variant {params.cfg.variant!r}")
    return run_network(meas, params, system)
