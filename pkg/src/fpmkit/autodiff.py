"""Tape-based reverse-mode differentiation over numpy arrays.

Complex values are differentiated as their (re, im) real pairs. The gradient
of a real loss ``L`` w.r.t. a complex tensor ``z = x + iy`` is stored packed as
``dL/dx + 1j * dL/dy``; real tensors carry real gradients.

Usage::

    with Tape() as tape:
        w = Tensor(w0, requires_grad=True)
        loss = mean(abs2(mul(w, x)))
    (gw,) = backward(tape, loss, [w])

Operations executed outside an active tape (or on tensors that need no
gradient) just compute values.
"""

from __future__ import annotations

import contextvars

import numpy as np

from .field import embed_window, fft2_centered, ifft2_centered, window_start

_active = contextvars.ContextVar("fpmkit_tape", default=None)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.value.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, i):
        return index(self, i)


class Tape:
    """Ordered record of differentiable nodes; creation order is a topological order."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._token = None

    def __enter__(self):
        self._token = _active.set(self)
        return self

    def __exit__(self, *exc):
        _active.reset(self._token)
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        for n in self.nodes:
            n.grad = None
            n._backward = None
            n._parents = ()
        self.nodes.clear()


def no_tape():
    """Context in which nothing is recorded."""

    class _NoTape:
        def __enter__(self):
            self._tok = _active.set(None)

        def __exit__(self, *exc):
            _active.reset(self._tok)
            return False

    return _NoTape()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x)


def _node(val, parents, backward_fn) -> Tensor:
    out = Tensor(val)
    tape = _active.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        tape.nodes.append(out)
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(np.asarray(g), t.value.shape)
    if not np.iscomplexobj(t.value):
        g = g.real
    t.grad = g if t.grad is None else t.grad + g


def backward(tape: Tape, loss: Tensor, wrt=None):
    """Propagate ``d loss`` back through ``tape``.

    Gradients accumulate in ``.grad`` of every tensor with ``requires_grad``.
    If ``wrt`` is given, returns their gradients (zeros where unreachable).
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {loss.value.shape}")
    if np.iscomplexobj(loss.value):
        raise ValueError("backward needs a real-valued root")
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.value)
        for node in reversed(tape.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
    if wrt is None:
        return None
    return [t.grad if t.grad is not None else np.zeros_like(t.value) for t in wrt]


# ------------------------------------------------------------ elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.value + b.value, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.value - b.value, (a, b), bw)


def neg(a):
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: _accum(a, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            _accum(a, g * np.conj(b.value))
        if b.requires_grad:
            _accum(b, g * np.conj(a.value))

    return _node(a.value * b.value, (a, b), bw)


def conj(a):
    a = as_tensor(a)
    return _node(np.conj(a.value), (a,), lambda g: _accum(a, np.conj(g)))


def real(a):
    a = as_tensor(a)
    return _node(a.value.real.copy(), (a,), lambda g: _accum(a, g.astype(np.complex128)))


def imag(a):
    a = as_tensor(a)
    return _node(a.value.imag.copy(), (a,), lambda g: _accum(a, 1j * g))


def to_complex(re, im):
    re, im = as_tensor(re), as_tensor(im)

    def bw(g):
        _accum(re, g.real)
        _accum(im, g.imag)

    return _node(re.value + 1j * im.value, (re, im), bw)


def square(a):
    a = as_tensor(a)
    if a.is_complex:
        raise TypeError("square is defined for real tensors; use abs2 for |z|^2")
    return _node(a.value * a.value, (a,), lambda g: _accum(a, 2 * g * a.value))


def abs2(a):
    """``|z|^2`` (real output)."""
    a = as_tensor(a)
    v = a.value
    out = v.real**2 + v.imag**2 if np.iscomplexobj(v) else v * v
    return _node(out, (a,), lambda g: _accum(a, 2 * g * v))


def absolute(a):
    """``|z|`` with subgradient 0 at ``z = 0``."""
    a = as_tensor(a)
    v = a.value
    r = np.abs(v)

    def bw(g):
        if np.iscomplexobj(v):
            with np.errstate(divide="ignore", invalid="ignore"):
                unit = np.where(r > 0, v / np.where(r > 0, r, 1), 0)
            _accum(a, g * unit)
        else:
            _accum(a, g * np.sign(v))

    return _node(r, (a,), bw)


def angle(a):
    """Principal argument in (-pi, pi]; subgradient 0 at ``z = 0``."""
    a = as_tensor(a)
    v = a.value

    def bw(g):
        r2 = np.abs(v) ** 2
        safe = np.where(r2 > 0, r2, 1)
        _accum(a, np.where(r2 > 0, g * 1j * v / safe, 0))

    return _node(np.angle(v), (a,), bw)


def ctanh(a):
    """Amplitude-phase activation ``tanh(|z|) * z / |z|``."""
    a = as_tensor(a)
    z = a.value
    r = np.abs(z)
    small = r < 1e-4
    rs = np.where(small, 1.0, r)
    s = np.where(small, 1 - r * r / 3, np.tanh(rs) / rs)

    def bw(g):
        # d/dr (tanh r / r) / r, with its series near 0
        t = np.tanh(rs)
        ds = np.where(small, -2.0 / 3.0 + 8.0 * r * r / 15.0, (rs * (1 - t * t) - t) / rs**3)
        _accum(a, s * g + ds * np.real(np.conj(g) * z) * z)

    return _node(s * z, (a,), bw)


# ------------------------------------------------------------ reductions / shapes


def sum_(a, axis=None):
    a = as_tensor(a)
    shape = a.value.shape

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), shape))

    return _node(a.value.sum(axis=axis), (a,), bw)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.value.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis), 1.0 / n)


def stack(items):
    items = [as_tensor(t) for t in items]

    def bw(g):
        for i, t in enumerate(items):
            _accum(t, g[i])

    return _node(np.stack([t.value for t in items]), tuple(items), bw)


def index(a, i):
    a = as_tensor(a)

    def bw(g):
        full = np.zeros(a.value.shape, dtype=np.result_type(g, a.value))
        full[i] = g
        _accum(a, full)

    return _node(a.value[i], (a,), bw)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: _accum(a, g.reshape(old)))


# ------------------------------------------------------------ Fourier optics


def fft2c(a):
    a = as_tensor(a)
    return _node(fft2_centered(a.value), (a,), lambda g: _accum(a, ifft2_centered(g)))


def ifft2c(a):
    a = as_tensor(a)
    return _node(ifft2_centered(a.value), (a,), lambda g: _accum(a, fft2_centered(g)))


def crop(a, offset, m: int):
    a = as_tensor(a)
    n = a.value.shape[-1]
    r0, c0 = window_start(n, m, offset)
    return _node(
        a.value[..., r0 : r0 + m, c0 : c0 + m].copy(), (a,), lambda g: _accum(a, embed_window(g, offset, n))
    )


def embed(a, offset, n: int):
    a = as_tensor(a)
    m = a.value.shape[-1]
    r0, c0 = window_start(n, m, offset)
    return _node(
        embed_window(a.value, offset, n), (a,), lambda g: _accum(a, g[..., r0 : r0 + m, c0 : c0 + m])
    )


# ------------------------------------------------------------ network layers


def _im2col(xp, k, h, w):
    """(C, H+k-1, W+k-1) padded input -> (C*k*k, H*W) patch matrix."""
    c = xp.shape[0]
    cols = np.empty((c, k, k, h, w), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i : i + h, j : j + w]
    return cols.reshape(c * k * k, h * w)


def conv2d(x, w):
    """Real multi-channel cross-correlation, stride 1, zero 'same' padding.

    ``x``: (C_in, H, W); ``w``: (C_out, C_in, k, k) with odd ``k``.
    """
    x, w = as_tensor(x), as_tensor(w)
    xv, wv = x.value, w.value
    c_out, c_in, k, _ = wv.shape
    if xv.shape[0] != c_in:
        raise ValueError(f"conv2d expects {c_in} input channels, got {xv.shape[0]}")
    p = k // 2
    _, h, wd = xv.shape
    cols = _im2col(np.pad(xv, ((0, 0), (p, p), (p, p))), k, h, wd)
    wmat = wv.reshape(c_out, -1)
    y = (wmat @ cols).reshape(c_out, h, wd)

    def bw(g):
        # strided views (e.g. g.real) would push matmul off the BLAS path
        gm = np.ascontiguousarray(g).reshape(c_out, h * wd)
        if w.requires_grad:
            _accum(w, (gm @ cols.T).reshape(wv.shape))
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(c_in, k, k, h, wd)
            gxp = np.zeros((c_in, h + 2 * p, wd + 2 * p), dtype=gcols.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + h, j : j + wd] += gcols[:, i, j]
            _accum(x, gxp[:, p : p + h, p : p + wd])

    return _node(y, (x, w), bw)


def instance_norm(x, gamma, beta, eps: float = 1e-5):
    """Per-channel spatial normalisation of a real (C, H, W) tensor + affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xv = x.value
    mu = xv.mean(axis=(1, 2), keepdims=True)
    var = xv.var(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    gv = gamma.value[:, None, None]
    out = gv * xhat + beta.value[:, None, None]

    def bw(g):
        _accum(gamma, (g * xhat).sum(axis=(1, 2)))
        _accum(beta, g.sum(axis=(1, 2)))
        if x.requires_grad:
            gx = g * gv
            _accum(
                x,
                inv * (gx - gx.mean(axis=(1, 2), keepdims=True) - xhat * (gx * xhat).mean(axis=(1, 2), keepdims=True)),
            )

    return _node(out, (x, gamma, beta), bw)
