import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaspipe.errors import InvalidArgument
from gaspipe.profiles import SinusoidProfile, SinusoidTerm, SplineProfile, constant, from_dict


def test_sinusoid_values():
    p = SinusoidProfile(68.094, [(6.8094, 2, 0.0)], period=24.0)
    assert p.eval(0.0) == pytest.approx(68.094)
    assert p.eval(3.0) == pytest.approx(68.094 + 6.8094)
    assert p.eval(24.0) == pytest.approx(p.eval(0.0))
    assert p.time_average() == 68.094
    assert not p.is_constant()


def test_sinusoid_derivative_matches_differences():
    p = SinusoidProfile(1.0, [SinusoidTerm(0.3, 1, 0.4), SinusoidTerm(0.1, 3, -1.0)], period=2.0)
    t = np.linspace(0, 2, 17)
    h = 1e-6
    fd = (p.eval(t + h) - p.eval(t - h)) / (2 * h)
    assert np.allclose(p.eval_deriv(t), fd, rtol=1e-7, atol=1e-9)


def test_rescaled():
    p = SinusoidProfile(2.0, [(1.0, 1, 0.0)], period=10.0)
    q = p.rescaled(value_scale=3.0, time_scale=2.0)
    t = np.linspace(0, 5, 11)
    assert np.allclose(q.eval(t), 3.0 * p.eval(2.0 * t))
    assert q.period == 5.0


def test_invalid_profiles():
    with pytest.raises(InvalidArgument):
        SinusoidProfile(1.0, [(1.0, 0, 0.0)])
    with pytest.raises(InvalidArgument):
        SinusoidProfile(1.0, [], period=0.0)
    with pytest.raises(InvalidArgument):
        SplineProfile((0.0, 1.0), (1.0, 2.0), 3.0)
    with pytest.raises(InvalidArgument):
        SplineProfile((0.0, 2.0, 1.0), (1.0, 2.0, 3.0), 3.0)
    with pytest.raises(InvalidArgument):
        SplineProfile((0.0, 1.0, 3.0), (1.0, 2.0, 3.0), 3.0)


def test_spline_interpolates_and_is_periodic():
    times = np.linspace(0, 24, 24, endpoint=False)
    vals = 10 + np.sin(2 * np.pi * times / 24)
    s = SplineProfile(tuple(times), tuple(vals), 24.0)
    assert np.allclose(s.eval(times), vals, atol=1e-12)
    assert s.eval(24.0) == pytest.approx(s.eval(0.0))
    assert s.eval_deriv(24.0 - 1e-12) == pytest.approx(s.eval_deriv(0.0), abs=1e-8)
    assert s.time_average() == pytest.approx(10.0, abs=1e-6)
    # dense sinusoid samples reproduce the closed form closely
    t = np.linspace(0, 48, 97)
    assert np.allclose(s.eval(t), 10 + np.sin(2 * np.pi * t / 24), atol=1e-4)


@settings(max_examples=50, deadline=None)
@given(
    mean=st.floats(-5, 5),
    amp=st.floats(0, 2),
    h=st.integers(1, 4),
    ph=st.floats(-3.2, 3.2),
)
def test_dict_round_trip(mean, amp, h, ph):
    p = SinusoidProfile(mean, [(amp, h, ph)], period=7.0)
    assert from_dict(p.to_dict()) == p


def test_constant_and_spline_dict():
    c = constant(5.0, 2.0)
    assert c.is_constant() and c.eval(1.3) == 5.0
    assert from_dict(c.to_dict()) == c
    s = SplineProfile((0.0, 1.0, 2.0), (1.0, 2.0, 1.5), 3.0)
    r = from_dict(s.to_dict())
    assert np.allclose(r.eval(np.linspace(0, 3, 7)), s.eval(np.linspace(0, 3, 7)))
    with pytest.raises(InvalidArgument):
        from_dict({"type": "square"})
