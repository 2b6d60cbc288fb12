"""Scalar time functions used for injections, slack densities and compressor ratios.

All functions are vectorized over ``t`` and provide an analytic time
derivative. Each one serializes to a plain dict with a ``kind`` key.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError


def _scalar(t):
    return isinstance(t, (float, int, np.floating))


class TimeFunction:
    kind = "abstract"

    def __call__(self, t):
        raise NotImplementedError

    def derivative(self, t):
        raise NotImplementedError

    def breakpoints(self) -> tuple:
        """Times where the function is not smooth."""
        return ()

    def to_dict(self) -> dict:
        raise NotImplementedError

    # small algebra so envelopes and test fixtures can be composed
    def __add__(self, other):
        return Sum((self, as_time_function(other)))

    __radd__ = __add__

    def __neg__(self):
        return Sum((self,), (-1.0,))

    def __sub__(self, other):
        return Sum((self, as_time_function(other)), (1.0, -1.0))

    def __rsub__(self, other):
        return Sum((as_time_function(other), self), (1.0, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Sum((self,), (float(other),))
        return Product((self, as_time_function(other)))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=True)
class Constant(TimeFunction):
    value: float
    kind = "constant"

    def __call__(self, t):
        if np.ndim(t):
            return np.full(np.shape(t), float(self.value))
        return float(self.value)

    def derivative(self, t):
        return np.zeros(np.shape(t)) if np.ndim(t) else 0.0

    def to_dict(self):
        return {"kind": "constant", "value": float(self.value)}


@dataclass(frozen=True, eq=True)
class Sinusoid(TimeFunction):
    """``offset + amplitude * sin(2 pi t / period + phase)``."""

    amplitude: float
    period: float
    phase: float = 0.0
    offset: float = 0.0
    kind = "sinusoid"

    def __post_init__(self):
        if not self.period > 0:
            raise ParseError(f"sinusoid period must be positive, got {self.period}")

    def __call__(self, t):
        w = 2.0 * math.pi / self.period
        if _scalar(t):
            return self.offset + self.amplitude * math.sin(w * t + self.phase)
        return self.offset + self.amplitude * np.sin(w * np.asarray(t, dtype=float) + self.phase)

    def derivative(self, t):
        w = 2.0 * math.pi / self.period
        if _scalar(t):
            return self.amplitude * w * math.cos(w * t + self.phase)
        return self.amplitude * w * np.cos(w * np.asarray(t, dtype=float) + self.phase)

    def to_dict(self):
        return {
            "kind": "sinusoid",
            "amplitude": float(self.amplitude),
            "period": float(self.period),
            "phase": float(self.phase),
            "offset": float(self.offset),
        }


@dataclass(frozen=True, eq=True)
class PiecewiseLinear(TimeFunction):
    """Linear interpolation through ``(times, values)``; constant outside the table."""

    times: tuple
    values: tuple
    kind = "pwl"

    def __post_init__(self):
        ts = tuple(float(x) for x in self.times)
        vs = tuple(float(x) for x in self.values)
        if len(ts) != len(vs) or not ts:
            raise ParseError("pwl table needs matching, non-empty times and values")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ParseError("pwl breakpoints must be strictly increasing")
        object.__setattr__(self, "times", ts)
        object.__setattr__(self, "values", vs)

    def __call__(self, t):
        out = np.interp(t, self.times, self.values)
        return out if np.ndim(t) else float(out)

    def derivative(self, t):
        ts = np.asarray(self.times)
        vs = np.asarray(self.values)
        if len(ts) == 1:
            return np.zeros(np.shape(t)) if np.ndim(t) else 0.0
        slopes = np.diff(vs) / np.diff(ts)
        # right-continuous slope, zero outside the table
        idx = np.searchsorted(ts, t, side="right") - 1
        inside = (idx >= 0) & (idx < len(slopes))
        out = np.where(inside, slopes[np.clip(idx, 0, len(slopes) - 1)], 0.0)
        return out if np.ndim(t) else float(out)

    def breakpoints(self):
        return self.times

    def to_dict(self):
        return {"kind": "pwl", "times": list(self.times), "values": list(self.values)}


@dataclass(frozen=True, eq=True)
class TanhStep(TimeFunction):
    """Smooth step from ``before`` to ``after`` centred at ``center`` with time scale ``width``."""

    before: float
    after: float
    center: float
    width: float
    kind = "tanh_step"

    def __post_init__(self):
        if not self.width > 0:
            raise ParseError("tanh_step width must be positive")

    def __call__(self, t):
        if _scalar(t):
            s = math.tanh((t - self.center) / self.width)
        else:
            s = np.tanh((np.asarray(t, dtype=float) - self.center) / self.width)
        return self.before + (self.after - self.before) * 0.5 * (1.0 + s)

    def derivative(self, t):
        if _scalar(t):
            s = math.tanh((t - self.center) / self.width)
        else:
            s = np.tanh((np.asarray(t, dtype=float) - self.center) / self.width)
        return (self.after - self.before) * 0.5 * (1.0 - s * s) / self.width

    def to_dict(self):
        return {
            "kind": "tanh_step",
            "before": float(self.before),
            "after": float(self.after),
            "center": float(self.center),
            "width": float(self.width),
        }


@dataclass(frozen=True, eq=True)
class Switch(TimeFunction):
    """``first`` before ``at``, ``second`` from ``at`` on. Used for policy overrides."""

    first: TimeFunction
    second: TimeFunction
    at: float
    kind = "switch"

    def __call__(self, t):
        if np.ndim(t):
            t = np.asarray(t, dtype=float)
            return np.where(t < self.at, self.first(t), self.second(t))
        return self.first(t) if t < self.at else self.second(t)

    def derivative(self, t):
        if np.ndim(t):
            t = np.asarray(t, dtype=float)
            return np.where(t < self.at, self.first.derivative(t), self.second.derivative(t))
        return self.first.derivative(t) if t < self.at else self.second.derivative(t)

    def breakpoints(self):
        return tuple(sorted(set(self.first.breakpoints()) | set(self.second.breakpoints()) | {self.at}))

    def to_dict(self):
        return {
            "kind": "switch",
            "first": self.first.to_dict(),
            "second": self.second.to_dict(),
            "at": float(self.at),
        }


@dataclass(frozen=True, eq=True)
class Sum(TimeFunction):
    terms: tuple
    weights: tuple = field(default=None)
    kind = "sum"

    def __post_init__(self):
        terms = tuple(self.terms)
        weights = (1.0,) * len(terms) if self.weights is None else tuple(float(w) for w in self.weights)
        if len(weights) != len(terms):
            raise ParseError("sum needs one weight per term")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "weights", weights)

    def __call__(self, t):
        return sum(w * f(t) for w, f in zip(self.weights, self.terms))

    def derivative(self, t):
        return sum(w * f.derivative(t) for w, f in zip(self.weights, self.terms))

    def breakpoints(self):
        return tuple(sorted({b for f in self.terms for b in f.breakpoints()}))

    def to_dict(self):
        return {
            "kind": "sum",
            "terms": [f.to_dict() for f in self.terms],
            "weights": list(self.weights),
        }


@dataclass(frozen=True, eq=True)
class Product(TimeFunction):
    factors: tuple
    kind = "product"

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    def __call__(self, t):
        out = 1.0
        for f in self.factors:
            out = out * f(t)
        return out

    def derivative(self, t):
        total = 0.0
        for i, fi in enumerate(self.factors):
            term = fi.derivative(t)
            for j, fj in enumerate(self.factors):
                if j != i:
                    term = term * fj(t)
            total = total + term
        return total

    def breakpoints(self):
        return tuple(sorted({b for f in self.factors for b in f.breakpoints()}))

    def to_dict(self):
        return {"kind": "product", "factors": [f.to_dict() for f in self.factors]}


def as_time_function(x) -> TimeFunction:
    if isinstance(x, TimeFunction):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Constant(float(x))
    if isinstance(x, dict):
        return from_dict(x)
    raise ParseError(f"cannot interpret {x!r} as a time function")


def from_dict(d) -> TimeFunction:
    if isinstance(d, (int, float)):
        return Constant(float(d))
    if not isinstance(d, dict) or "kind" not in d:
        raise ParseError(f"time function must be a number or a mapping with 'kind': {d!r}")
    kind = d["kind"]
    try:
        if kind == "constant":
            return Constant(float(d["value"]))
        if kind == "sinusoid":
            return Sinusoid(
                float(d["amplitude"]),
                float(d["period"]),
                float(d.get("phase", 0.0)),
                float(d.get("offset", 0.0)),
            )
        if kind == "pwl":
            return PiecewiseLinear(tuple(d["times"]), tuple(d["values"]))
        if kind == "tanh_step":
            return TanhStep(float(d["before"]), float(d["after"]), float(d["center"]), float(d["width"]))
        if kind == "switch":
            return Switch(from_dict(d["first"]), from_dict(d["second"]), float(d["at"]))
        if kind == "sum":
            return Sum(tuple(from_dict(x) for x in d["terms"]), d.get("weights"))
        if kind == "product":
            return Product(tuple(from_dict(x) for x in d["factors"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad {kind!r} time function: {exc}") from exc
    raise ParseError(f"unknown time function kind {kind!r}")


def sample_times(horizon: float, n: int = 201, extra=()) -> np.ndarray:
    """Uniform sample of ``[0, horizon]`` plus any extra points (e.g. breakpoints)."""
    ts = np.linspace(0.0, horizon, n)
    if extra:
        ts = np.union1d(ts, [x for x in extra if 0.0 <= x <= horizon])
    return ts
