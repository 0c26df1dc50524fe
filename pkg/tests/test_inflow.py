import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from flowstab.inflow import (
    Constant, InflowSignal, PiecewiseConstant, Sinusoid, ZeroAfter,
)
from flowstab.network import DomainError, StructuralError

amplitudes = st.floats(0.0, 2.0)
phases = st.floats(0.0, 2 * math.pi)


def dense_sup(sig, w, T, n=400_001):
    t = np.linspace(0.0, T, n)
    return float(np.max(sig.at(t) @ np.asarray(w)))


def test_sinusoid_values_and_nonnegativity():
    s = Sinusoid(0.45, 1.0, math.pi)
    assert s.at(0.0) == pytest.approx(0.45)
    assert s.at(math.pi / 2) == pytest.approx(0.0, abs=1e-15)
    assert np.all(s.at(np.linspace(0, 50, 5001)) >= 0)


def test_piecewise_is_right_continuous():
    s = PiecewiseConstant((1.0, 2.0), (0.5, 0.0, 2.0))
    np.testing.assert_array_equal(s.at([0.0, 0.999, 1.0, 1.5, 2.0, 9.0]), [0.5, 0.5, 0.0, 0.0, 2.0, 2.0])


def test_signal_validation():
    with pytest.raises(DomainError):
        Constant(-1.0)
    with pytest.raises(DomainError):
        Sinusoid(-0.1)
    with pytest.raises(StructuralError):
        PiecewiseConstant((2.0, 1.0), (0, 1, 2))
    with pytest.raises(StructuralError):
        PiecewiseConstant((1.0,), (1.0,))


@pytest.mark.parametrize("sig", [
    Constant(0.7),
    Sinusoid(0.3, 2.0, 1.0),
    PiecewiseConstant((0.5, 3.0), (1.0, 0.2, 0.8)),
    ZeroAfter(Sinusoid(0.5, 1.0, 0.0), 4.0),
    ZeroAfter(PiecewiseConstant((1.0,), (2.0, 1.0)), 2.5),
])
def test_running_integral_matches_quadrature(sig):
    for t in (0.0, 0.3, 1.0, 2.7, 6.0):
        expected = quad(lambda s: float(sig.at(s)), 0.0, t, limit=200, points=[0.5, 1.0, 2.5, 3.0, 4.0])[0] \
            if t > 0 else 0.0
        assert float(sig.integral(t)) == pytest.approx(expected, abs=1e-10)


def test_vector_shapes():
    sig = InflowSignal([Constant(1.0), None, Sinusoid(0.5)])
    assert sig.at(0.0).shape == (3,)
    assert sig.at(np.zeros(5)).shape == (5, 3)
    assert sig.integral(np.zeros(5)).shape == (5, 3)
    assert sig.at(1.0)[1] == 0.0
    assert not sig.is_constant and InflowSignal.constant([1.0, 0.0]).is_constant


@given(amplitudes, amplitudes, phases, st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_same_frequency_sup_is_exact(A1, A2, phi, w1, w2):
    sig = InflowSignal([Sinusoid(A1, 1.0, 0.0), Sinusoid(A2, 1.0, phi), Constant(0.25)])
    w = [w1, w2, 1.0]
    sup = sig.sup_weighted(w)
    assert sup.method == "analytic"
    assert sup.value == pytest.approx(dense_sup(sig, w, 2 * math.pi), abs=1e-9)


def test_two_equal_sinusoids_sup():
    for phi, expected in ((0.0, 4 * 0.45), (math.pi, 2 * 0.45)):
        sig = InflowSignal([Sinusoid(0.45, 1.0, 0.0), Sinusoid(0.45, 1.0, phi)])
        assert sig.sup_weighted([1.0, 1.0]).value == pytest.approx(expected, abs=1e-15)


def test_stepwise_sup_is_exact():
    sig = InflowSignal([PiecewiseConstant((1.0, 2.0), (0.2, 0.9, 0.1)), ZeroAfter(Constant(0.5), 1.5)])
    sup = sig.sup_weighted([1.0, 1.0])
    assert sup.method == "exact (stepwise)"
    assert sup.value == pytest.approx(1.4)


def test_mixed_frequency_sup_is_sampled_and_close():
    sig = InflowSignal([Sinusoid(1.0, 1.0, 0.0), Sinusoid(1.0, 3.0, 0.4)])
    sup = sig.sup_weighted([1.0, 1.0], horizon=4 * math.pi)
    assert sup.method.startswith("sampled")
    assert sup.value == pytest.approx(dense_sup(sig, [1, 1], 4 * math.pi, 2_000_001), abs=1e-6)


def test_zero_weights_give_zero_sup():
    sig = InflowSignal([Sinusoid(1.0), None])
    assert sig.sup_weighted([0.0, 3.0]).value == 0.0


@given(st.floats(0.0, 1.0))
def test_scaling_scales_values(s):
    sig = InflowSignal([Sinusoid(0.4, 1.0, 0.2), Constant(0.3), PiecewiseConstant((1.0,), (1.0, 2.0))])
    t = np.linspace(0, 5, 11)
    np.testing.assert_allclose(sig.scaled(s).at(t), s * sig.at(t), rtol=1e-14, atol=1e-15)
