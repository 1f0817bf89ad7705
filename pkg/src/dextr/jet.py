"""Second-order forward-mode jets and a small dense tensor engine over them.

A :class:`Jet2` carries a value together with its first and second
derivatives with respect to one scalar parameter ``theta``.  A
:class:`Tensor` stores a whole array of jets as a structure of arrays: a
leading axis of length 3 holds (value, d1, d2).  Derivative-free tensors keep
only the value plane, which halves the cost of plain inference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


@dataclass(frozen=True)
class Jet2:
    v: float
    d1: float = 0.0
    d2: float = 0.0

    @staticmethod
    def _lift(x) -> Jet2:
        return x if isinstance(x, Jet2) else Jet2(float(x))

    def __add__(self, other):
        o = Jet2._lift(other)
        return Jet2(self.v + o.v, self.d1 + o.d1, self.d2 + o.d2)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.v, -self.d1, -self.d2)

    def __sub__(self, other):
        return self + (-Jet2._lift(other))

    def __rsub__(self, other):
        return Jet2._lift(other) - self

    def __mul__(self, other):
        o = Jet2._lift(other)
        return Jet2(
            self.v * o.v,
            self.v * o.d1 + self.d1 * o.v,
            self.v * o.d2 + 2.0 * self.d1 * o.d1 + self.d2 * o.v,
        )

    __rmul__ = __mul__

    def apply(self, f0: float, f1: float, f2: float) -> Jet2:
        """Compose with a scalar function given f, f', f'' at ``self.v``."""
        return Jet2(f0, f1 * self.d1, f2 * self.d1 * self.d1 + f1 * self.d2)

    def reciprocal(self) -> Jet2:
        r = 1.0 / self.v
        return self.apply(r, -r * r, 2.0 * r * r * r)

    def __truediv__(self, other):
        return self * Jet2._lift(other).reciprocal()

    def __rtruediv__(self, other):
        return Jet2._lift(other) * self.reciprocal()

    def sqrt(self) -> Jet2:
        s = math.sqrt(self.v)
        return self.apply(s, 0.5 / s, -0.25 / (s * self.v))


def lift_constant(x: float) -> Jet2:
    return Jet2(float(x), 0.0, 0.0)


class Tensor:
    """Dense row-major array of jets.

    ``data`` has shape ``(1, *shape)`` for derivative-free tensors and
    ``(3, *shape)`` otherwise.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim < 1 or data.shape[0] not in (1, 3):
            raise ShapeError(f"jet axis must have length 1 or 3, got shape {data.shape}")
        self.data = data

    @classmethod
    def constant(cls, values) -> Tensor:
        values = np.asarray(values, dtype=np.float64)
        return cls(values[None])

    @classmethod
    def from_jets(cls, v, d1, d2) -> Tensor:
        return cls(np.stack([np.asarray(v, float), np.asarray(d1, float), np.asarray(d2, float)]))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape[1:]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def is_constant(self) -> bool:
        return self.data.shape[0] == 1

    @property
    def v(self) -> np.ndarray:
        return self.data[0]

    @property
    def d1(self) -> np.ndarray:
        return np.zeros(self.shape) if self.is_constant else self.data[1]

    @property
    def d2(self) -> np.ndarray:
        return np.zeros(self.shape) if self.is_constant else self.data[2]

    def jet(self, *index) -> Jet2:
        return Jet2(float(self.v[index]), float(self.d1[index]), float(self.d2[index]))

    def full(self) -> Tensor:
        """Same tensor with explicit zero derivative planes."""
        if not self.is_constant:
            return self
        return Tensor(np.concatenate([self.data, np.zeros_like(self.data), np.zeros_like(self.data)]))

    def scale(self, a: float) -> Tensor:
        return Tensor(self.data * a)

    def reshape(self, *shape) -> Tensor:
        return Tensor(self.data.reshape((self.data.shape[0],) + tuple(shape)))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __repr__(self):
        kind = "const" if self.is_constant else "jet"
        return f"Tensor({kind}, shape={self.shape})"


def _promote(a: Tensor, b: Tensor) -> tuple[np.ndarray, np.ndarray]:
    if a.is_constant == b.is_constant:
        return a.data, b.data
    return a.full().data, b.full().data


def _check_nchw(t: Tensor, name: str):
    if len(t.shape) != 4:
        raise ShapeError(f"{name} expects an (N, C, H, W) tensor, got shape {t.shape}")


def conv2d(x: Tensor, weight: np.ndarray, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation with constant ``weight`` of shape (Cout, Cin, k, k)."""
    _check_nchw(x, "conv2d")
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d weight must be (Cout, Cin, k, k), got {weight.shape}")
    n, cin, h, w = x.shape
    if n != 1:
        raise ShapeError(f"conv2d supports batch size 1, got N={n}")
    if weight.shape[1] != cin:
        raise ShapeError(f"conv2d channel mismatch: input Cin={cin}, weight Cin={weight.shape[1]}")
    k = weight.shape[2]
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ShapeError(f"conv2d kernel {k} larger than padded input {h}x{w} (pad {pad})")
    out = kernels.conv2d(np.ascontiguousarray(x.data[:, 0]), weight, stride, pad)
    return Tensor(out[:, None])


def relu(t: Tensor) -> Tensor:
    # v == 0 maps to the zero jet (subgradient 0)
    return Tensor(t.data * (t.data[0] > 0.0))


def zeroize(t: Tensor) -> Tensor:
    return Tensor(np.zeros((1,) + t.shape))


def add(*ts: Tensor) -> Tensor:
    if not ts:
        raise ValueError("add needs at least one tensor")
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape:
            raise ShapeError(f"add shape mismatch: {shape} vs {t.shape}")
    if all(t.is_constant for t in ts):
        return Tensor(sum(t.data for t in ts))
    return Tensor(sum(t.full().data for t in ts))


def avg_pool3x3(t: Tensor) -> Tensor:
    """3x3 mean, stride 1, zero padding 1, padded zeros counted in the mean."""
    _check_nchw(t, "avg_pool3x3")
    d = t.data
    h, w = t.shape[2], t.shape[3]
    p = np.pad(d, [(0, 0)] * 3 + [(1, 1), (1, 1)])
    acc = np.zeros_like(d)
    for dy in range(3):
        for dx in range(3):
            acc += p[..., dy:dy + h, dx:dx + w]
    return Tensor(acc / 9.0)


def avg_pool2x2(t: Tensor) -> Tensor:
    """2x2 mean with stride 2 (odd trailing rows/cols dropped)."""
    _check_nchw(t, "avg_pool2x2")
    h, w = t.shape[2] // 2 * 2, t.shape[3] // 2 * 2
    d = t.data[..., :h, :w]
    return Tensor(0.25 * (d[..., 0::2, 0::2] + d[..., 1::2, 0::2] + d[..., 0::2, 1::2] + d[..., 1::2, 1::2]))


def global_avg_pool(t: Tensor) -> Tensor:
    _check_nchw(t, "global_avg_pool")
    return Tensor(t.data.mean(axis=(3, 4)))


def linear(t: Tensor, weight: np.ndarray, bias: np.ndarray | None = None) -> Tensor:
    """``y = W x + b`` over the last axis; the bias only shifts the value plane."""
    weight = np.asarray(weight, dtype=np.float64)
    if t.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear expects {weight.shape[1]} input features, got {t.shape[-1]}")
    out = t.data @ weight.T
    if bias is not None:
        out[0] = out[0] + bias
    return Tensor(out)


def instance_norm(t: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Per-channel standardization over the spatial axes (no affine)."""
    _check_nchw(t, "instance_norm")
    d = t.data
    axes = (3, 4)
    c = d - d.mean(axis=axes, keepdims=True)
    c0 = c[0]
    var0 = (c0 * c0).mean(axis=(2, 3), keepdims=True) + eps
    s0 = 1.0 / np.sqrt(var0)
    if t.is_constant:
        return Tensor(c * s0)
    c1, c2 = c[1], c[2]
    var1 = (2.0 * c0 * c1).mean(axis=(2, 3), keepdims=True)
    var2 = (2.0 * (c1 * c1 + c0 * c2)).mean(axis=(2, 3), keepdims=True)
    # s = u^(-1/2): s' = -u^(-3/2)/2, s'' = 3u^(-5/2)/4
    f1 = -0.5 * s0 / var0
    f2 = 0.75 * s0 / (var0 * var0)
    s1 = f1 * var1
    s2 = f2 * var1 * var1 + f1 * var2
    return Tensor(np.stack([c0 * s0, c0 * s1 + c1 * s0, c0 * s2 + 2.0 * c1 * s1 + c2 * s0]))
