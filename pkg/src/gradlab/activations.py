"""Scalar nonlinearities and gradient-accelerated activations.

Three parts:

* classic activations (tanh, sigmoid, relu) with exact analytic derivatives;
* the sawtooth accelerator ``gaf_eval``: a high-frequency, tiny-amplitude
  sawtooth whose value stays within +-0.5/k of zero while its slope is 1
  almost everywhere;
* shape functions in [0, 1] that localize the acceleration, and the
  composite activation ``gaaf_forward`` / ``gaaf_backward``.

The composite backward is a *surrogate*: the sawtooth's derivative is taken
as identically 1 (its value at breakpoints included) and the tiny
``g(x) * s'(x)`` product term is dropped. Do not expect the surrogate to
match finite differences of the forward at steps much larger than 1/k; at
that scale the sawtooth's local slope averages out to ~0 by construction.

All functions are pure, stateless, and accept scalars or arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DomainError

__all__ = [
    "ActivationKind",
    "Constant",
    "GaafSpec",
    "GaussianBump",
    "ShapeKind",
    "ShiftedSigmoid",
    "activation_eval",
    "activation_deriv",
    "default_shape_for",
    "gaf_eval",
    "gaaf_backward",
    "gaaf_forward",
    "shape_eval",
]


class ActivationKind(enum.Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"
    RELU = "relu"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation_eval(kind: ActivationKind, x) -> np.ndarray:
    """phi(x) for the given activation kind."""
    x = np.asarray(x, dtype=np.float64)
    if kind is ActivationKind.TANH:
        return np.tanh(x)
    if kind is ActivationKind.SIGMOID:
        return _sigmoid(x)
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0.0)
    raise DomainError(f"unknown activation kind: {kind!r}")


def activation_deriv(kind: ActivationKind, x) -> np.ndarray:
    """phi'(x), the exact analytic derivative (relu'(0) defined as 0)."""
    x = np.asarray(x, dtype=np.float64)
    if kind is ActivationKind.TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    if kind is ActivationKind.SIGMOID:
        s = _sigmoid(x)
        return s * (1.0 - s)
    if kind is ActivationKind.RELU:
        return (x > 0).astype(np.float64)
    raise DomainError(f"unknown activation kind: {kind!r}")


def gaf_eval(x, k: float) -> np.ndarray:
    """Sawtooth accelerator: (x*k - floor(x*k) - 0.5) / k.

    Range is [-0.5/k, +0.5/k); period 1/k; slope 1 inside every tooth.
    Mathematical floor (round toward -inf), so the identity holds for
    negative x as well.
    """
    if not k > 0:
        raise DomainError(f"frequency constant must be positive, got {k}")
    x = np.asarray(x, dtype=np.float64)
    xk = x * k
    return (xk - np.floor(xk) - 0.5) / k


@dataclass(frozen=True)
class GaussianBump:
    """exp(-x^2 / (2 sigma^2)): peak 1 at the origin, symmetric taper."""

    sigma: float = 1.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class ShiftedSigmoid:
    """1 / (1 + exp((x - center) / temperature)): monotone decreasing, 1 -> 0."""

    center: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise DomainError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class Constant:
    """Fixed envelope value; Constant(0) disables acceleration entirely."""

    value: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise DomainError(f"constant shape value must be in [0, 1], got {self.value}")


ShapeKind = Union[GaussianBump, ShiftedSigmoid, Constant]


def shape_eval(shape: ShapeKind, x) -> np.ndarray:
    """s(x) in [0, 1] for the given shape function."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(shape, GaussianBump):
        return np.exp(-(x * x) / (2.0 * shape.sigma * shape.sigma))
    if isinstance(shape, ShiftedSigmoid):
        return _sigmoid(-(x - shape.center) / shape.temperature)
    if isinstance(shape, Constant):
        return np.full_like(x, shape.value)
    raise DomainError(f"unknown shape kind: {shape!r}")


def default_shape_for(base: ActivationKind) -> ShapeKind:
    """Conventional envelope per activation family: bump for saturating
    activations, decreasing sigmoid for relu (accelerate the dead zone)."""
    if base is ActivationKind.RELU:
        return ShiftedSigmoid()
    return GaussianBump()


@dataclass(frozen=True)
class GaafSpec:
    """Composite activation: base phi plus envelope-scaled sawtooth."""

    base: ActivationKind
    k: float = 10000.0
    shape: ShapeKind = GaussianBump()

    def __post_init__(self):
        if not self.k > 0:
            raise DomainError(f"frequency constant must be positive, got {self.k}")


def gaaf_forward(spec: GaafSpec, x) -> np.ndarray:
    """phi(x) + g(x) * s(x); differs from phi(x) by at most 0.5/k."""
    x = np.asarray(x, dtype=np.float64)
    return activation_eval(spec.base, x) + gaf_eval(x, spec.k) * shape_eval(spec.shape, x)


def gaaf_backward(spec: GaafSpec, x, grad_out) -> np.ndarray:
    """Surrogate gradient: grad_out * (phi'(x) + s(x))."""
    x = np.asarray(x, dtype=np.float64)
    return np.asarray(grad_out, dtype=np.float64) * (
        activation_deriv(spec.base, x) + shape_eval(spec.shape, x)
    )
