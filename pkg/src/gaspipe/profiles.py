"""Periodic, twice-differentiable time functions.

Two representations are provided: closed-form sinusoid sums, used to synthesize
scenarios, and periodic cubic splines, used to ingest tabulated series.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidArgument


@dataclass(frozen=True)
class SinusoidTerm:
    amplitude: float
    harmonic: int
    phase: float = 0.0


@dataclass(frozen=True)
class SinusoidProfile:
    """``mean + sum(amp * sin(2*pi*h*t/period + phase))``."""

    mean: float
    terms: tuple = ()
    period: float = 1.0

    def __post_init__(self):
        if not self.period > 0:
            raise InvalidArgument("period must be positive")
        terms = tuple(t if isinstance(t, SinusoidTerm) else SinusoidTerm(*t) for t in self.terms)
        for t in terms:
            if int(t.harmonic) != t.harmonic or t.harmonic < 1:
                raise InvalidArgument("harmonics must be positive integers")
        object.__setattr__(self, "terms", terms)

    def eval(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, float(self.mean))
        w = 2.0 * math.pi / self.period
        for term in self.terms:
            out = out + term.amplitude * np.sin(w * term.harmonic * t + term.phase)
        return float(out) if out.ndim == 0 else out

    def eval_deriv(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        w = 2.0 * math.pi / self.period
        for term in self.terms:
            k = w * term.harmonic
            out = out + term.amplitude * k * np.cos(k * t + term.phase)
        return float(out) if out.ndim == 0 else out

    def rescaled(self, value_scale=1.0, time_scale=1.0):
        """Profile of ``value_scale * p(t * time_scale)`` expressed in new time units."""
        return SinusoidProfile(
            self.mean * value_scale,
            tuple(SinusoidTerm(tm.amplitude * value_scale, tm.harmonic, tm.phase) for tm in self.terms),
            self.period / time_scale,
        )

    def is_constant(self):
        return all(t.amplitude == 0 for t in self.terms)

    def time_average(self):
        return float(self.mean)

    def to_dict(self):
        return {
            "type": "sinusoid",
            "mean": self.mean,
            "period": self.period,
            "terms": [
                {"amplitude": t.amplitude, "harmonic": t.harmonic, "phase": t.phase} for t in self.terms
            ],
        }


def constant(value, period=1.0):
    return SinusoidProfile(float(value), (), period)


@dataclass(frozen=True)
class SplineProfile:
    """Periodic cubic spline through samples on ``[0, period)``.

    ``times`` must be strictly increasing within ``[0, period)``; the seam value is
    taken from the first sample.
    """

    times: tuple
    values: tuple
    period: float
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 3:
            raise InvalidArgument("spline needs >= 3 matching samples")
        if not self.period > 0:
            raise InvalidArgument("period must be positive")
        if np.any(np.diff(times) <= 0) or times[0] < 0 or times[-1] >= self.period:
            raise InvalidArgument("spline times must be strictly increasing in [0, period)")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("spline values must be finite")
        knots = np.append(times, times[0] + self.period)
        vals = np.append(values, values[0])
        object.__setattr__(self, "times", tuple(times.tolist()))
        object.__setattr__(self, "values", tuple(values.tolist()))
        object.__setattr__(self, "_spline", CubicSpline(knots, vals, bc_type="periodic"))

    def _wrap(self, t):
        t0 = self.times[0]
        return t0 + np.mod(np.asarray(t, dtype=float) - t0, self.period)

    def eval(self, t):
        out = self._spline(self._wrap(t))
        return float(out) if np.ndim(out) == 0 else out

    def eval_deriv(self, t):
        out = self._spline(self._wrap(t), 1)
        return float(out) if np.ndim(out) == 0 else out

    def rescaled(self, value_scale=1.0, time_scale=1.0):
        return SplineProfile(
            tuple(np.asarray(self.times) / time_scale),
            tuple(np.asarray(self.values) * value_scale),
            self.period / time_scale,
        )

    def is_constant(self):
        return len(set(self.values)) == 1

    def time_average(self):
        return float(self._spline.integrate(self.times[0], self.times[0] + self.period) / self.period)

    def to_dict(self):
        return {"type": "spline", "times": list(self.times), "values": list(self.values), "period": self.period}


Profile = SinusoidProfile | SplineProfile


def from_dict(obj) -> Profile:
    kind = obj.get("type")
    if kind == "sinusoid":
        terms = tuple(SinusoidTerm(t["amplitude"], int(t["harmonic"]), t.get("phase", 0.0)) for t in obj.get("terms", []))
        return SinusoidProfile(obj["mean"], terms, obj["period"])
    if kind == "constant":
        return constant(obj["value"], obj.get("period", 1.0))
    if kind == "spline":
        return SplineProfile(tuple(obj["times"]), tuple(obj["values"]), obj["period"])
    raise InvalidArgument(f"unknown profile type {kind!r}")
