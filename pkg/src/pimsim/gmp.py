"""Generalized memory polynomial nonlinearity.

y(t) = sum over taps (m, k, p) of g * u(t-m) * |u(t-m-k)|^(p-1), with odd
polynomial orders, global pre/postcursor taps m and envelope lead/lag taps k.
Shared between the distortion model of PIM sources and the cancellation
basis-function catalogue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def shifted(x: np.ndarray, delay: int) -> np.ndarray:
    """x delayed by `delay` samples with zero history (both directions)."""
    if delay == 0:
        return x
    out = np.zeros_like(x)
    if delay > 0:
        out[delay:] = x[:-delay]
    else:
        out[:delay] = x[-delay:]
    return out


@dataclass(frozen=True)
class GmpTap:
    m: int
    k: int
    p: int
    gain: complex = 1.0 + 0.0j

    def __post_init__(self):
        if self.p < 1 or self.p % 2 == 0:
            raise ValueError(f"polynomial order must be odd and >= 1, got {self.p}")
        if not np.isfinite(self.gain):
            raise ValueError("tap gain must be finite")


@dataclass(frozen=True)
class GmpModel:
    taps: tuple

    def __post_init__(self):
        taps = tuple(self.taps)
        if not taps:
            raise ValueError("a GMP model needs at least one tap")
        for t in taps:
            if not isinstance(t, GmpTap):
                raise TypeError("taps must be GmpTap instances")
        object.__setattr__(self, "taps", taps)

    @classmethod
    def from_tuples(cls, taps) -> "GmpModel":
        return cls(tuple(GmpTap(m, k, p, complex(g)) for (m, k, p, g) in taps))

    @classmethod
    def identity(cls) -> "GmpModel":
        return cls((GmpTap(0, 0, 1),))

    @classmethod
    def cubic(cls, gain: complex = 1.0) -> "GmpModel":
        """The memoryless IMD-3 generator: P={3}, M={0}, K={0}."""
        return cls((GmpTap(0, 0, 3, gain),))

    @property
    def memory_span(self) -> int:
        """Largest |delay| any tap reaches (for edge bookkeeping)."""
        span = 0
        for t in self.taps:
            span = max(span, abs(t.m), abs(t.m + t.k))
        return span


def apply_gmp(model: GmpModel, u: np.ndarray) -> np.ndarray:
    """Evaluate the GMP on a complex stream; edges use zero-padded history."""
    u = np.asarray(u)
    if u.size <= model.memory_span:
        raise ValueError("signal shorter than the model memory span")
    y = np.zeros_like(u, dtype=complex)
    for t in model.taps:
        term = shifted(u, t.m)
        if t.p > 1:
            env = np.abs(shifted(u, t.m + t.k))
            term = term * env ** (t.p - 1)
        y += t.gain * term
    return y
