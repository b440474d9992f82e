"""Dense tensors with reverse-mode automatic differentiation.

Small numpy-backed tape: enough ops for the prompt-conditioned attention
network and its losses, nothing more. Double precision is the default so
gradient checks are meaningful; float32 is available for the training hot
path.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    # force numpy to defer mixed ndarray/Tensor arithmetic to our operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------------
    def _make(self, data: np.ndarray, parents: Iterable["Tensor"],
              backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = Tensor(data)
        parents = tuple(p for p in parents if p.requires_grad or p._parents)
        if parents:
            out._parents = parents
            out._backward = backward
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root; grads land on leaves."""
        if self.data.size != 1:
            raise ShapeError("backward requires a scalar root")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic ----------------------------------------------------------
    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(
            np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def back(g):
            return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

        return self._make(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return self._make(-a.data, (a,), lambda g: ((a, -g),))

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def back(g):
            return ((a, _unbroadcast(g * b.data, a.shape)),
                    (b, _unbroadcast(g * a.data, b.shape)))

        return self._make(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def back(g):
            return ((a, _unbroadcast(g / b.data, a.shape)),
                    (b, _unbroadcast(-g * a.data / (b.data ** 2), b.shape)))

        return self._make(a.data / b.data, (a, b), back)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent: float):
        a = self

        def back(g):
            return ((a, g * exponent * a.data ** (exponent - 1)),)

        return self._make(a.data ** exponent, (a,), back)

    def __matmul__(self, other):
        return matmul(self, self._coerce(other))

    # -- shape ops -----------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.shape
        return self._make(a.data.reshape(shape), (a,),
                          lambda g: ((a, g.reshape(old)),))

    def transpose(self, *axes):
        a = self
        if not axes:
            axes = tuple(reversed(range(a.ndim)))
        inv = np.argsort(axes)
        return self._make(a.data.transpose(axes), (a,),
                          lambda g: ((a, g.transpose(inv)),))

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def back(g):
            if axis is None:
                return ((a, np.broadcast_to(g, a.shape).copy()),)
            gg = g
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                for ax in sorted(ax % a.ndim for ax in axes):
                    gg = np.expand_dims(gg, ax)
            return ((a, np.broadcast_to(gg, a.shape).copy()),)

        return self._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for ax in axes:
                n *= self.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def max(self, axis: int, keepdims: bool = False):
        """Max along one axis; gradient routes to the first argmax on ties."""
        a = self
        ax = axis % a.ndim
        out = a.data.max(axis=ax, keepdims=True)
        mask = (a.data == out)
        # first-occurrence tie break
        first = np.cumsum(mask, axis=ax) == 1
        mask = mask & first

        def back(g):
            gg = g if keepdims else np.expand_dims(g, ax)
            return ((a, mask * gg),)

        return self._make(out if keepdims else out.squeeze(ax), (a,), back)

    # -- elementwise nonlinearities -------------------------------------------
    def exp(self):
        a = self
        out_data = np.exp(a.data)
        return self._make(out_data, (a,), lambda g: ((a, g * out_data),))

    def log(self):
        a = self
        return self._make(np.log(a.data), (a,), lambda g: ((a, g / a.data),))

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)
        return self._make(out_data, (a,), lambda g: ((a, g * 0.5 / out_data),))

    def clip(self, lo: float, hi: float):
        """Clamp; gradient is zero outside [lo, hi] (projection semantics)."""
        a = self
        keep = (a.data >= lo) & (a.data <= hi)
        return self._make(np.clip(a.data, lo, hi), (a,),
                          lambda g: ((a, g * keep),))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with leading-dim broadcasting."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requires at least 2-D operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dims disagree: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return a._make(out_data, (a, b), back)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = list(parts)
    ax = axis % parts[0].ndim
    sizes = [p.shape[ax] for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=ax)

    def back(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=ax)
        return tuple((p, piece) for p, piece in zip(parts, pieces))

    return parts[0]._make(out_data, parts, back)


def sigmoid(x: Tensor) -> Tensor:
    # stable in both tails
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def back(g):
        return ((x, g * out_data * (1.0 - out_data)),)

    return x._make(out_data.astype(d.dtype), (x,), back)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU; smooth, so finite differences behave."""
    d = x.data
    c = float(np.sqrt(2.0 / np.pi))
    d2 = d * d
    t = np.tanh(c * (d + 0.044715 * (d2 * d)))
    out_data = 0.5 * d * (1.0 + t)
    # local derivative cached at forward time; backward is then a single fma
    dlocal = 0.5 * (1.0 + t) + 0.5 * d * (1.0 - t * t) * (c * (1.0 + 0.134145 * d2))

    def back(g):
        return ((x, g * dlocal),)

    return x._make(out_data, (x,), back)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax over the trailing axis, subtract-max stabilized."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return ((x, out_data * (g - dot)),)

    return x._make(out_data, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError("gain/bias must match the trailing dimension")
    d = x.data
    n = d.shape[-1]
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv
    out_data = y * gain.data + bias.data

    def back(g):
        gy = g * gain.data
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True)
                    - y * (gy * y).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        return ((x, gx), (gain, (g * y).sum(axis=axes)),
                (bias, g.sum(axis=axes)))

    return x._make(out_data, (x, gain, bias), back)


def _bilinear_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    """Corner-aligned 1-D interpolation matrix (n_in*factor, n_in)."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    for i in range(n_out):
        pos = i * (n_in - 1) / (n_out - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, n_in - 1)
        frac = pos - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Corner-aligned bilinear upsampling of a (C, h, w) tensor."""
    if factor not in (2, 4, 8, 16):
        raise ConfigError(f"unsupported upsampling factor {factor}")
    if x.ndim != 3:
        raise ShapeError("upsample_bilinear expects (C, h, w)")
    _, h, w = x.shape
    mr = Tensor(_bilinear_matrix(h, factor, x.dtype))
    mc = Tensor(_bilinear_matrix(w, factor, x.dtype))
    return matmul(matmul(mr, x), mc.T)


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor,
                      h: float = 1e-4) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    Relative error per coordinate: |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    if h <= 0:
        raise ConfigError("step size must be positive")
    probe = Tensor(x.data.astype(np.float64).copy(), requires_grad=True)
    out = f(probe)
    out.backward()
    g_ad = probe.grad.reshape(-1).copy()
    flat = probe.data.reshape(-1)
    g_fd = np.zeros_like(g_ad)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(Tensor(probe.data)).data)
        flat[i] = orig - h
        lo = float(f(Tensor(probe.data)).data)
        flat[i] = orig
        g_fd[i] = (hi - lo) / (2 * h)
    denom = np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))
    return float(np.max(np.abs(g_ad - g_fd) / denom))
