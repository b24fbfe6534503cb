"""Tests for rate curves, forward curves, and the blended basket yield."""

import numpy as np
import pytest
from scipy.integrate import quad

from localcorr.errors import CurveError
from localcorr.marketdata.curves import (
    BlendedYieldCurve,
    ForwardCurve,
    RateCurve,
)


def test_flat_curve_closed_forms():
    rc = RateCurve.flat(0.03)
    for t in (0.0, 0.4, 1.0, 7.5):
        assert abs(rc.integral(t) - 0.03 * t) < 1e-15
        assert abs(rc.discount(t) - np.exp(-0.03 * t)) < 1e-15
        assert rc.rate(t) == 0.03


def test_piecewise_integral_matches_quadrature():
    """Exact knot integrals agree with adaptive numerical integration."""
    rc = RateCurve.from_pairs([(0.25, 0.01), (1.0, 0.025), (2.0, 0.02), (5.0, 0.04)])
    for t in (0.1, 0.25, 0.7, 1.0, 1.9, 3.3, 5.0, 6.5):
        knots = [k for k in rc.times if 0.0 < k < t]
        ref, _ = quad(rc.rate, 0.0, t, points=knots or None, limit=200)
        assert abs(rc.integral(t) - ref) < 1e-10


def test_integral_vectorized_matches_scalar():
    rc = RateCurve.from_pairs([(0.5, 0.01), (2.0, 0.03)])
    ts = np.array([0.1, 0.5, 1.3, 2.0, 4.0])
    vec = rc.integral(ts)
    for t, v in zip(ts, vec):
        assert abs(v - rc.integral(float(t))) < 1e-15


def test_curve_validation():
    with pytest.raises(CurveError):
        RateCurve(np.array([1.0, 0.5]), np.array([0.01, 0.02]))
    with pytest.raises(CurveError):
        RateCurve(np.array([-0.5, 1.0]), np.array([0.01, 0.02]))
    with pytest.raises(CurveError):
        RateCurve(np.array([1.0]), np.array([np.inf]))
    with pytest.raises(CurveError):
        rc = RateCurve.flat(0.02)
        rc.integral(-0.1)


def test_forward_curve_drift_consistency():
    """drift(t) is the log-derivative of the forward, checked by differences."""
    rc = RateCurve.from_pairs([(0.5, 0.02), (2.0, 0.035)])
    qc = RateCurve.from_pairs([(1.0, 0.01), (3.0, 0.005)])
    fc = ForwardCurve(100.0, rc, qc)
    h = 1e-6
    for t in (0.3, 0.8, 1.5, 2.5):
        fd = (np.log(fc.forward(t + h)) - np.log(fc.forward(t - h))) / (2 * h)
        assert abs(fc.drift(t) - fd) < 1e-7
    assert fc.forward(0.0) == 100.0


def test_forward_curve_requires_positive_spot():
    with pytest.raises(CurveError):
        ForwardCurve(-5.0, RateCurve.flat(0.02), RateCurve.flat(0.0))


def test_blended_yield_reproduces_basket_forward():
    """Index forward through the blended yield equals sum of weighted forwards."""
    rc = RateCurve.flat(0.02)
    fc1 = ForwardCurve(100.0, rc, RateCurve.flat(0.01))
    fc2 = ForwardCurve(80.0, rc, RateCurve.from_pairs([(1.0, 0.0), (2.0, 0.03)]))
    weights = np.array([0.6, 0.4])
    blend = BlendedYieldCurve(weights, (fc1, fc2), rc)
    level = 0.6 * 100.0 + 0.4 * 80.0
    index_fc = ForwardCurve(level, rc, blend)
    for t in (0.1, 0.5, 1.0, 1.7, 2.5, 4.0):
        target = 0.6 * fc1.forward(t) + 0.4 * fc2.forward(t)
        assert abs(index_fc.forward(t) - target) < 1e-10 * target


def test_blended_yield_rate_is_integral_derivative():
    rc = RateCurve.flat(0.02)
    fc1 = ForwardCurve(100.0, rc, RateCurve.flat(0.015))
    fc2 = ForwardCurve(50.0, rc, RateCurve.flat(0.0))
    blend = BlendedYieldCurve(np.array([0.5, 0.5]), (fc1, fc2), rc)
    h = 1e-6
    for t in (0.4, 1.1, 2.3):
        fd = (blend.integral(t + h) - blend.integral(t - h)) / (2 * h)
        assert abs(blend.rate(t) - fd) < 1e-7
