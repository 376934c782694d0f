"""Sine-wave foot-height references and the gait phase clock.

Each foot follows the positive part of a biased sine wave; the right foot
runs half a period behind the left one.  The bias leaves a window in every
half cycle where both references sit at zero (double support).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

POLICY_DT = 0.03


class GaitConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GaitSpec:
    h: float = 0.15
    dh: float = 0.03
    T: float = 0.84
    phi0: float = 0.0

    def __post_init__(self):
        if not self.h > 0:
            raise GaitConfigError(f"gait amplitude h must be positive, got {self.h}")
        if not 0 <= self.dh < self.h:
            raise GaitConfigError(f"gait bias dh must satisfy 0 <= dh < h, got dh={self.dh}, h={self.h}")
        if not self.T > 0:
            raise GaitConfigError(f"gait period must be positive, got {self.T}")

    @classmethod
    def from_style(cls, max_height: float, ratio: float, T: float, phi0: float = 0.0) -> "GaitSpec":
        """Build a spec from peak foot height (h - dh) and the bias ratio dh/h."""
        if not 0 <= ratio < 1:
            raise GaitConfigError(f"dh/h must lie in [0, 1), got {ratio}")
        h = max_height / (1.0 - ratio)
        return cls(h=h, dh=h * ratio, T=T, phi0=phi0)

    @property
    def max_height(self) -> float:
        return self.h - self.dh

    @property
    def ratio(self) -> float:
        return self.dh / self.h

    def with_phase(self, phi0: float) -> "GaitSpec":
        return GaitSpec(self.h, self.dh, self.T, phi0)

    def steps_per_period(self, policy_dt: float = POLICY_DT) -> int:
        """Period in policy steps; raises if T is not a whole number of steps."""
        n = round(self.T / policy_dt)
        if n < 1 or abs(n * policy_dt - self.T) > 1e-9:
            raise GaitConfigError(
                f"gait period {self.T} s is not a whole number of {policy_dt} s policy steps"
            )
        return n


class PhaseVector(NamedTuple):
    s: float
    c: float


class ReferencePair(NamedTuple):
    left: float
    right: float


def phase_angle(t: float, spec: GaitSpec) -> float:
    return 2.0 * math.pi * t / spec.T + spec.phi0


def step_phase_angle(k: int, spec: GaitSpec, policy_dt: float = POLICY_DT) -> float:
    """Phase after k policy steps, from the integer counter (no float-time drift)."""
    n = spec.steps_per_period(policy_dt)
    return 2.0 * math.pi * (k % n) / n + spec.phi0


def phase_from_angle(angle: float) -> PhaseVector:
    return PhaseVector(math.sin(angle), math.cos(angle))


def references_from_angle(angle: float, spec: GaitSpec) -> ReferencePair:
    left = max(0.0, spec.h * math.sin(angle) - spec.dh)
    right = max(0.0, spec.h * math.sin(angle + math.pi) - spec.dh)
    return ReferencePair(left, right)


def phase(t: float, spec: GaitSpec) -> PhaseVector:
    return phase_from_angle(phase_angle(t, spec))


def reference_heights(t: float, spec: GaitSpec) -> ReferencePair:
    return references_from_angle(phase_angle(t, spec), spec)


def reference_arrays(t, spec: GaitSpec):
    """Vectorised reference_heights: (left, right) arrays for an array of times."""
    angle = 2.0 * np.pi * np.asarray(t, dtype=float) / spec.T + spec.phi0
    left = np.maximum(0.0, spec.h * np.sin(angle) - spec.dh)
    right = np.maximum(0.0, spec.h * np.sin(angle + np.pi) - spec.dh)
    return left, right


def double_support_fraction(spec: GaitSpec) -> float:
    """Share of one gait cycle in which both references are zero."""
    return 4.0 * math.asin(spec.dh / spec.h) / (2.0 * math.pi)
