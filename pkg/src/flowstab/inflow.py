"""Time-varying exogenous inflow signals, one per link."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .network import DomainError, StructuralError

SUP_SAMPLES = 10_000


@dataclass(frozen=True)
class Constant:
    value: float

    def __post_init__(self):
        if self.value < 0:
            raise DomainError("inflow must be nonnegative")

    def at(self, t):
        return np.full(np.shape(t), float(self.value))

    def integral(self, t):
        return self.value * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class Sinusoid:
    """``amplitude * (sin(omega t + phase) + 1)``; nonnegative for amplitude >= 0."""

    amplitude: float
    omega: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise DomainError("sinusoid amplitude must be nonnegative")
        if not self.omega > 0:
            raise DomainError("sinusoid angular frequency must be positive")

    def at(self, t):
        t = np.asarray(t, dtype=float)
        return self.amplitude * (np.sin(self.omega * t + self.phase) + 1.0)

    def integral(self, t):
        t = np.asarray(t, dtype=float)
        w, p = self.omega, self.phase
        return self.amplitude * (t + (math.cos(p) - np.cos(w * t + p)) / w)


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous steps: ``values[k]`` on ``[breakpoints[k-1], breakpoints[k])``."""

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(v) for v in self.breakpoints)
        v = tuple(float(x) for x in self.values)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)
        if len(v) != len(b) + 1:
            raise StructuralError("piecewise signal needs one more value than breakpoints")
        if any(y <= x for x, y in zip(b, b[1:])) or (b and b[0] <= 0):
            raise StructuralError("breakpoints must be positive and strictly increasing")
        if any(x < 0 for x in v):
            raise DomainError("inflow must be nonnegative")

    def at(self, t):
        idx = np.searchsorted(self.breakpoints, np.asarray(t, dtype=float), side="right")
        return np.asarray(self.values)[idx]

    def integral(self, t):
        t = np.asarray(t, dtype=float)
        edges = np.concatenate([[0.0], self.breakpoints])
        vals = np.asarray(self.values)
        cum = np.concatenate([[0.0], np.cumsum(vals[:-1] * np.diff(edges))])
        idx = np.searchsorted(self.breakpoints, t, side="right")
        return cum[idx] + vals[idx] * (t - edges[idx])


@dataclass(frozen=True)
class ZeroAfter:
    """``inner`` until ``cutoff``, zero from then on."""

    inner: object
    cutoff: float

    def __post_init__(self):
        if not self.cutoff >= 0:
            raise DomainError("cutoff must be nonnegative")

    def at(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < self.cutoff, self.inner.at(t), 0.0)

    def integral(self, t):
        return self.inner.integral(np.minimum(np.asarray(t, dtype=float), self.cutoff))


def _is_stepwise(sig) -> bool:
    if isinstance(sig, (Constant, PiecewiseConstant)):
        return True
    return isinstance(sig, ZeroAfter) and _is_stepwise(sig.inner)


def _event_times(sig) -> list[float]:
    if isinstance(sig, PiecewiseConstant):
        return list(sig.breakpoints)
    if isinstance(sig, ZeroAfter):
        return [sig.cutoff, *_event_times(sig.inner)]
    return []


def _frequencies(sig) -> list[float]:
    if isinstance(sig, Sinusoid):
        return [sig.omega]
    if isinstance(sig, ZeroAfter):
        return _frequencies(sig.inner)
    return []


@dataclass(frozen=True)
class Supremum:
    value: float
    method: str  # "analytic", "exact (stepwise)" or "sampled (<n> points on [0, T])"


class InflowSignal:
    """Vector inflow lambda(t); links without a signal receive nothing."""

    def __init__(self, signals: Sequence):
        self.signals = tuple(signals)

    @classmethod
    def zero(cls, n: int) -> "InflowSignal":
        return cls([None] * n)

    @classmethod
    def constant(cls, values) -> "InflowSignal":
        return cls([Constant(float(v)) if v else None for v in values])

    @property
    def n(self) -> int:
        return len(self.signals)

    def _active(self):
        return [(i, s) for i, s in enumerate(self.signals) if s is not None]

    @property
    def is_constant(self) -> bool:
        return all(isinstance(s, Constant) for _, s in self._active())

    def at(self, t) -> np.ndarray:
        """lambda(t); shape (n,) for scalar t, (len(t), n) for an array."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.n,))
        for i, s in self._active():
            out[..., i] = s.at(t)
        return out

    def integral(self, t) -> np.ndarray:
        """Running integral of lambda from 0 to t, same shapes as :meth:`at`."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (self.n,))
        for i, s in self._active():
            out[..., i] = s.integral(t)
        return out

    def discontinuities(self) -> list[float]:
        """Sorted times at which some component may jump."""
        return sorted({t for _, s in self._active() for t in _event_times(s)})

    def scaled(self, factor: float) -> "InflowSignal":
        return InflowSignal([_scale(s, factor) for s in self.signals])

    def sup_weighted(self, w, horizon: float | None = None) -> Supremum:
        """Essential supremum over t >= 0 of ``sum_i w_i lambda_i(t)`` for ``w >= 0``.

        Exact when every weighted signal is a constant or a sinusoid at one
        shared frequency (offset plus phasor magnitude), or when all are
        step functions. Otherwise the maximum over a uniform grid with
        ``SUP_SAMPLES`` points per period of the slowest sinusoid, covering
        ``horizon`` (default: past every event time plus one period).
        """
        w = np.asarray(w, dtype=float)
        terms = [(w[i], s) for i, s in self._active() if w[i] != 0]
        if not terms:
            return Supremum(0.0, "analytic")
        if all(isinstance(s, (Constant, Sinusoid)) for _, s in terms):
            omegas = {s.omega for _, s in terms if isinstance(s, Sinusoid)}
            if len(omegas) <= 1:
                offset = 0.0
                phasor = 0j
                for wi, s in terms:
                    if isinstance(s, Constant):
                        offset += wi * s.value
                    else:
                        offset += wi * s.amplitude
                        phasor += wi * s.amplitude * complex(math.cos(s.phase), math.sin(s.phase))
                return Supremum(offset + abs(phasor), "analytic")
        events = sorted({0.0, *(e for _, s in terms for e in _event_times(s))})
        if all(_is_stepwise(s) for _, s in terms):
            t = np.asarray(events)
            total = sum(wi * s.at(t) for wi, s in terms)
            return Supremum(float(np.max(total)), "exact (stepwise)")
        omegas = [o for _, s in terms for o in _frequencies(s)]
        period = 2 * math.pi / min(omegas) if omegas else 1.0
        T = horizon if horizon is not None else events[-1] + period
        n = max(SUP_SAMPLES, int(math.ceil(SUP_SAMPLES * T / period)))
        t = np.union1d(np.linspace(0.0, T, n + 1), [e for e in events if e <= T])
        total = sum(wi * s.at(t) for wi, s in terms)
        return Supremum(float(np.max(total)), f"sampled ({t.size} points on [0, {T:g}])")


def _scale(sig, factor: float):
    if sig is None:
        return None
    if isinstance(sig, Constant):
        return Constant(sig.value * factor)
    if isinstance(sig, Sinusoid):
        return Sinusoid(sig.amplitude * factor, sig.omega, sig.phase)
    if isinstance(sig, PiecewiseConstant):
        return PiecewiseConstant(sig.breakpoints, tuple(v * factor for v in sig.values))
    return ZeroAfter(_scale(sig.inner, factor), sig.cutoff)
