"""Firing nonlinearities, ring geometry, sampled fields and periodic quadrature.

All integrals over the circle S = (-pi, pi] go through :func:`quad_integrate`,
the rectangle rule on M equispaced nodes. For smooth periodic integrands this
converges exponentially and is exact for trigonometric polynomials of degree
below M/2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConfigError, InvalidSize, UnsupportedDerivative

TWO_PI = 2.0 * math.pi
DEFAULT_M = 512
MIN_M = 64
EXP_CLAMP = 700.0

SIGMOID = "sigmoid"
HEAVISIDE = "heaviside"
CONSTANT = "constant"
_KIND_CODES = {SIGMOID: 0, HEAVISIDE: 1, CONSTANT: 2}


@dataclass(frozen=True)
class FiringFunction:
    """Rate function f mapping a voltage to a firing intensity in [0, 1].

    ``kind`` is ``"sigmoid"`` (slope scale ``kappa``, threshold ``rho_threshold``),
    ``"heaviside"`` (threshold only) or ``"constant"`` (``level``; test-only).
    """

    kind: str
    kappa: float = 0.0
    rho_threshold: float = 0.0
    level: float = 0.0

    def __post_init__(self):
        if self.kind not in _KIND_CODES:
            raise ConfigError(f"unknown firing kind {self.kind!r}")
        if self.kind == SIGMOID and not self.kappa > 0:
            raise ConfigError("sigmoid slope scale kappa must be positive")
        if self.kind == CONSTANT and not 0.0 <= self.level <= 1.0:
            raise ConfigError("constant firing level must lie in [0, 1]")

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]

    @property
    def smooth(self) -> bool:
        return self.kind != HEAVISIDE

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == SIGMOID:
            z = np.clip((u - self.rho_threshold) / self.kappa, -EXP_CLAMP, EXP_CLAMP)
            out = 1.0 / (1.0 + np.exp(-z))
        elif self.kind == HEAVISIDE:
            out = (u >= self.rho_threshold).astype(float)
        else:
            out = np.full_like(u, self.level)
        return out if out.ndim else float(out)

    def deriv(self, u, order: int = 1):
        """First or second derivative of f; undefined for the Heaviside kind."""
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if self.kind == HEAVISIDE:
            raise UnsupportedDerivative("Heaviside firing has no pointwise derivative")
        u = np.asarray(u, dtype=float)
        if self.kind == CONSTANT:
            out = np.zeros_like(u)
            return out if out.ndim else 0.0
        # f' = f (1 - f) / kappa = 1 / (4 kappa cosh^2(z/2)), written without cancellation
        half = 0.5 * np.clip((u - self.rho_threshold) / self.kappa, -EXP_CLAMP, EXP_CLAMP)
        d1 = 0.25 / (self.kappa * np.cosh(half) ** 2)
        out = d1 if order == 1 else -d1 * np.tanh(half) / self.kappa
        return out if out.ndim else float(out)


def sigmoid(kappa: float, rho_threshold: float) -> FiringFunction:
    return FiringFunction(SIGMOID, kappa=kappa, rho_threshold=rho_threshold)


def heaviside(rho_threshold: float) -> FiringFunction:
    return FiringFunction(HEAVISIDE, rho_threshold=rho_threshold)


def constant_rate(level: float) -> FiringFunction:
    return FiringFunction(CONSTANT, level=level)


def firing_eval(f: FiringFunction, u):
    return f(u)


def firing_deriv(f: FiringFunction, u, order: int = 1):
    return f.deriv(u, order)


@dataclass(frozen=True)
class RingGrid:
    """N neurons at x_i = pi (2i - N) / N, bin i being (x_{i-1}, x_i]."""

    n: int
    positions: np.ndarray = field(repr=False, compare=False)

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n

    @property
    def left_edges(self) -> np.ndarray:
        return self.positions - self.spacing

    @property
    def bins(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in zip(self.left_edges, self.positions)]


def grid_positions(n: int) -> RingGrid:
    if n < 1:
        raise InvalidSize(f"neuron count must be >= 1, got {n}")
    i = np.arange(1, n + 1)
    pos = math.pi * ((2 * i - n) / n)
    pos.setflags(write=False)
    return RingGrid(n, pos)


def nodes(m: int = DEFAULT_M) -> np.ndarray:
    """Quadrature nodes y_k = pi (2k - M) / M, k = 1..M."""
    _check_m(m)
    k = np.arange(1, m + 1)
    return math.pi * (2 * k - m) / m


def _check_m(m: int):
    if m < MIN_M or m % 2:
        raise InvalidSize(f"quadrature size must be even and >= {MIN_M}, got {m}")


@dataclass(frozen=True, eq=False)
class Field:
    """Real function on S sampled at the quadrature nodes.

    ``cosine`` carries (amplitude, phase) when the samples are exactly
    amplitude * cos(y + phase), so manifold points stay analytic.
    """

    values: np.ndarray
    cosine: Optional[tuple[float, float]] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        _check_m(vals.size)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return self.values.size

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], m: int = DEFAULT_M):
        return cls(np.broadcast_to(fn(nodes(m)), (m,)))

    @classmethod
    def cosine_mode(cls, amplitude: float, phase: float = 0.0, m: int = DEFAULT_M):
        return cls(amplitude * np.cos(nodes(m) + phase), cosine=(amplitude, phase))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.m

    def _wrap(self, other, op):
        other = other.values if isinstance(other, Field) else other
        return Field(op(self.values, other))

    def __add__(self, other):
        return self._wrap(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(other, np.subtract)

    def __rsub__(self, other):
        return self._wrap(other, lambda a, b: b - a)

    def __mul__(self, other):
        if isinstance(other, (int, float)) and self.cosine is not None:
            amp, ph = self.cosine
            return Field(self.values * other, cosine=(amp * other, ph))
        return self._wrap(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


FieldLike = Union[Field, np.ndarray]


def values_of(g: FieldLike) -> np.ndarray:
    if isinstance(g, Field):
        return g.values
    vals = np.asarray(g, dtype=float)
    _check_m(vals.size)
    return vals


def quad_integrate(g: FieldLike) -> float:
    """(2 pi / M) * sum_k g(y_k)."""
    vals = values_of(g)
    return float(TWO_PI / vals.size * vals.sum())


def rotate(g: FieldLike, shift: float) -> np.ndarray:
    """Samples of x -> g(x + shift), by exact Fourier interpolation."""
    vals = values_of(g)
    m = vals.size
    coeffs = np.fft.rfft(vals)
    k = np.arange(coeffs.size)
    phase = np.exp(1j * k * shift)
    if m % 2 == 0:
        # Nyquist mode must stay real for a real shift to be well defined.
        phase[-1] = math.cos(m // 2 * shift)
    return np.fft.irfft(coeffs * phase, n=m)


def default_resolution(f: FiringFunction, amplitude: float = 2.0) -> int:
    """Smallest power-of-two M >= 512 that resolves the sigmoid transition layer.

    The rectangle rule error behaves like exp(-M d) where d ~ pi kappa / amplitude is
    the distance of the nearest complex singularity of f(amplitude cos x).
    """
    if f.kind != SIGMOID:
        return DEFAULT_M
    d = math.pi * f.kappa / max(amplitude, 1e-12)
    m = DEFAULT_M
    while m * d < 30.0 and m < 1 << 16:
        m *= 2
    return m
