import math

import numpy as np
import pytest

from gradlab.activations import (
    ActivationKind,
    Constant,
    GaafSpec,
    GaussianBump,
    ShiftedSigmoid,
    activation_deriv,
    activation_eval,
    default_shape_for,
    gaaf_backward,
    gaaf_forward,
    gaf_eval,
    shape_eval,
)
from gradlab.errors import DomainError
from gradlab.numcore import RngStream

TANH, SIGMOID, RELU = ActivationKind.TANH, ActivationKind.SIGMOID, ActivationKind.RELU


# -- base activations ----------------------------------------------------------


def test_known_values():
    assert activation_eval(TANH, 0.0) == 0.0
    assert activation_eval(RELU, -2.0) == 0.0
    assert activation_eval(RELU, 3.0) == 3.0
    assert activation_eval(SIGMOID, 0.0) == 0.5


def test_sigmoid_matches_naive_form_without_overflow():
    x = np.linspace(-30, 30, 601)
    naive = 1.0 / (1.0 + np.exp(-x))
    assert np.allclose(activation_eval(SIGMOID, x), naive, rtol=0, atol=1e-15)
    with np.errstate(over="raise"):
        extreme = activation_eval(SIGMOID, np.array([-1000.0, 1000.0]))
    assert extreme[0] == 0.0 and extreme[1] == 1.0


@pytest.mark.parametrize("kind", [TANH, SIGMOID])
def test_smooth_derivatives_match_finite_differences(kind):
    x = RngStream(1).normal(1, 200).ravel() * 3.0
    h = 1e-6
    fd = (activation_eval(kind, x + h) - activation_eval(kind, x - h)) / (2 * h)
    assert np.allclose(activation_deriv(kind, x), fd, rtol=0, atol=1e-8)


def test_relu_derivative_convention():
    x = np.array([-1.0, -1e-12, 0.0, 1e-12, 2.0])
    assert np.array_equal(activation_deriv(RELU, x), [0.0, 0.0, 0.0, 1.0, 1.0])


# -- the sawtooth accelerator ---------------------------------------------------


def test_sawtooth_amplitude_bound():
    x = RngStream(2).uniform(10000) * 20.0 - 10.0
    for k in (1.0, 250.0, 10000.0):
        assert np.abs(gaf_eval(x, k)).max() <= 0.5 / k


def test_sawtooth_periodicity():
    x = RngStream(3).uniform(10000) * 20.0 - 10.0
    k = 10000.0
    assert np.abs(gaf_eval(x + 1.0 / k, k) - gaf_eval(x, k)).max() <= 1e-12


def test_sawtooth_mid_tooth_slope_is_one():
    k = 10000.0
    m = RngStream(4).integers(-100000, 100000, 1000).astype(np.float64)
    x = (m + 0.5) / k  # tooth centers
    h = 1e-7
    slope = (gaf_eval(x + h, k) - gaf_eval(x, k)) / h
    assert np.abs(slope - 1.0).max() <= 1e-6


def test_sawtooth_exact_values_on_dyadic_grid():
    # k and x chosen so x*k is exact in binary floating point
    k = 1024.0
    assert gaf_eval(5.5 / k, k) == 0.0
    assert gaf_eval(5.25 / k, k) == -0.25 / k
    assert gaf_eval(5.75 / k, k) == 0.25 / k
    # mathematical floor: negative inputs follow the same identity
    assert gaf_eval(-5.5 / k, k) == 0.0
    assert gaf_eval(-5.25 / k, k) == 0.25 / k


def test_sawtooth_rejects_bad_frequency():
    with pytest.raises(DomainError):
        gaf_eval(1.0, 0.0)
    with pytest.raises(DomainError):
        gaf_eval(1.0, -5.0)


# -- shape functions -------------------------------------------------------------


def test_gaussian_bump_properties():
    s = GaussianBump(sigma=1.5)
    x = np.linspace(-6, 6, 201)
    v = shape_eval(s, x)
    assert v.min() > 0.0 and v.max() <= 1.0
    assert shape_eval(s, 0.0) == 1.0
    assert np.array_equal(v, shape_eval(s, -x))
    assert math.isclose(float(shape_eval(s, 1.5)), math.exp(-0.5), rel_tol=1e-15)


def test_shifted_sigmoid_properties():
    s = ShiftedSigmoid(center=0.7, temperature=2.0)
    assert float(shape_eval(s, 0.7)) == 0.5
    assert math.isclose(float(shape_eval(s, 2.7)), 1.0 / (1.0 + math.e), rel_tol=1e-15)
    v = shape_eval(s, np.linspace(-8, 8, 100))
    assert np.all(np.diff(v) < 0)  # monotone decreasing
    assert v.min() > 0.0 and v.max() < 1.0


def test_constant_shape():
    assert np.array_equal(shape_eval(Constant(0.25), np.zeros(4)), np.full(4, 0.25))
    Constant(0.0)
    Constant(1.0)
    with pytest.raises(DomainError):
        Constant(1.5)
    with pytest.raises(DomainError):
        Constant(-0.1)


def test_shape_parameter_validation():
    with pytest.raises(DomainError):
        GaussianBump(sigma=0.0)
    with pytest.raises(DomainError):
        ShiftedSigmoid(temperature=0.0)
    with pytest.raises(DomainError):
        GaafSpec(TANH, k=0.0)


def test_default_shapes_per_family():
    assert isinstance(default_shape_for(RELU), ShiftedSigmoid)
    assert isinstance(default_shape_for(TANH), GaussianBump)
    assert isinstance(default_shape_for(SIGMOID), GaussianBump)


# -- the composite activation ----------------------------------------------------


def test_forward_matches_hand_composition():
    spec = GaafSpec(TANH, k=10000.0, shape=GaussianBump(1.5))
    x = RngStream(5).normal(1, 500).ravel() * 4.0
    saw = (x * spec.k - np.floor(x * spec.k) - 0.5) / spec.k
    bump = np.exp(-(x**2) / (2 * 1.5**2))
    assert np.allclose(gaaf_forward(spec, x), np.tanh(x) + saw * bump, rtol=0, atol=1e-15)


@pytest.mark.parametrize("base", [TANH, SIGMOID, RELU])
def test_forward_stays_within_half_tooth_of_base(base):
    spec = GaafSpec(base, k=10000.0, shape=default_shape_for(base))
    x = RngStream(6).uniform(10000) * 20.0 - 10.0
    gap = np.abs(gaaf_forward(spec, x) - activation_eval(base, x))
    assert gap.max() <= 0.5 / spec.k


def test_backward_is_base_derivative_plus_shape():
    # oracle uses alternative derivative formulas (cosh form, exp form)
    spec = GaafSpec(TANH, k=10000.0, shape=GaussianBump(1.5))
    x = RngStream(7).normal(1, 300).ravel() * 3.0
    grad = RngStream(8).normal(1, 300).ravel()
    want = grad * (1.0 / np.cosh(x) ** 2 + np.exp(-(x**2) / 4.5))
    assert np.allclose(gaaf_backward(spec, x, grad), want, rtol=1e-12, atol=1e-15)


def test_backward_is_a_surrogate_not_a_finite_difference():
    # at steps much larger than one tooth the sawtooth averages out of the
    # forward, so its +s(x) contribution exists only in the backward rule
    spec = GaafSpec(TANH, k=10000.0, shape=GaussianBump(1.5))
    x = np.array([0.0])
    h = 1e-3
    fd = (gaaf_forward(spec, x + h) - gaaf_forward(spec, x - h)) / (2 * h)
    surrogate = gaaf_backward(spec, x, np.array([1.0]))
    assert abs(float(surrogate[0] - fd[0])) > 0.5


def test_constant_zero_shape_is_exact_off_switch():
    spec = GaafSpec(TANH, shape=Constant(0.0))
    x = RngStream(9).normal(2, 50) * 5.0
    assert np.array_equal(gaaf_forward(spec, x), np.tanh(x))
    grad = RngStream(10).normal(2, 50)
    assert np.array_equal(gaaf_backward(spec, x, grad), grad * activation_deriv(TANH, x))
