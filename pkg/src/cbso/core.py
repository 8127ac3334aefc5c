"""Shared types: penalty coefficients, violation bounds, step schedules, RNG streams, run records."""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class CbsoError(Exception):
    """Base class for errors raised by this package."""


class NonPositiveCoefficient(CbsoError, ValueError):
    pass


class EqualSigmas(CbsoError, ValueError):
    pass


class BadExponent(CbsoError, ValueError):
    pass


class NonFiniteIterate(CbsoError, FloatingPointError):
    """An update produced NaN/Inf. ``state`` holds the offending iterates."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class SigmaOrderWarning(UserWarning):
    pass


def as_param_vector(values, name="param") -> np.ndarray:
    """Copy ``values`` into a read-only, finite, 1-D float64 array."""
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteIterate(f"{name} has non-finite entries: {arr}", {name: arr})
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------- penalties

@dataclass(frozen=True)
class PenaltyCoefficients:
    sigma1: float
    sigma2: float
    sigma3: float
    c0: float = 0.0
    warn: bool = False


def validate_penalty_coefficients(sigma1, sigma2, sigma3, c0=0.0) -> PenaltyCoefficients:
    """Check the penalty weights. ``sigma3 <= sigma2`` is allowed but flagged."""
    for name, val in (("sigma1", sigma1), ("sigma2", sigma2), ("sigma3", sigma3)):
        if not (val > 0) or not math.isfinite(val):
            raise NonPositiveCoefficient(f"{name} must be positive and finite, got {val}")
    if sigma2 == sigma3:
        raise EqualSigmas(f"sigma2 and sigma3 must differ (both {sigma2})")
    warn = sigma3 <= sigma2
    if warn:
        warnings.warn(
            f"sigma3={sigma3} <= sigma2={sigma2}; the violation bound assumes sigma3 >> sigma2",
            SigmaOrderWarning,
            stacklevel=2,
        )
    return PenaltyCoefficients(float(sigma1), float(sigma2), float(sigma3), float(c0), warn)


def violation_terms(c_f, c_g, coeffs: PenaltyCoefficients) -> tuple[float, float, float]:
    """The three per-quantity bounds: on h+(z), on g(y)-g(z), and on h+(y)."""
    s1, s2, s3 = coeffs.sigma1, coeffs.sigma2, coeffs.sigma3
    return (
        2.0 * c_g * s2,
        2.0 * c_f * s1 + 2.0 * c_g * (s2 / s3),
        2.0 * c_f * s1 * s3 + 2.0 * c_g * s3,
    )


def epsilon_lambda(c_f, c_g, coeffs: PenaltyCoefficients) -> float:
    """Worst-case constraint violation of an optimum of the penalised objective.

    ``c_f`` and ``c_g`` are sup-norms of the outer and inner objectives.
    """
    if c_f < 0 or c_g < 0:
        raise ValueError("c_f and c_g are sup-norms and must be nonnegative")
    return max(violation_terms(c_f, c_g, coeffs))


def epsilon_prime(eps_lambda, sigma1, sigma2, eps) -> float:
    """Optimality gap on the relaxed problem implied by an ``eps``-optimal penalised solution."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise NonPositiveCoefficient("sigma1 and sigma2 must be positive")
    if eps < 0 or eps_lambda < 0:
        raise ValueError("eps and eps_lambda must be nonnegative")
    return (1.0 / sigma1) * (eps_lambda * (1.0 + 1.0 / sigma2)) + eps


# ---------------------------------------------------------------- schedules

SCHEDULE_KINDS = ("outer_power", "inner_harmonic", "constant")


@dataclass(frozen=True)
class StepSchedule:
    kind: str
    c_a: float = 1.0
    a: float = 0.5
    eta: float = 1.0

    def __call__(self, t: int) -> float:
        if t < 0:
            raise ValueError("schedule index must be >= 0")
        if self.kind == "outer_power":
            return self.c_a / (1.0 + t) ** self.a
        if self.kind == "inner_harmonic":
            return self.eta / (t + 1.0)
        return self.c_a


def make_step_schedule(kind: str, **params) -> StepSchedule:
    """Build a schedule.

    ``outer_power``: c_a / (1+t)^a with a in (0, 1).
    ``inner_harmonic``: eta / (k+1).
    ``constant``: c_a.
    """
    if kind not in SCHEDULE_KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    sched = StepSchedule(kind, **params)
    if kind == "outer_power":
        if not 0.0 < sched.a < 1.0:
            raise BadExponent(f"outer_power exponent must lie in (0, 1), got {sched.a}")
        if sched.c_a <= 0:
            raise ValueError("c_a must be positive")
    elif kind == "inner_harmonic" and sched.eta <= 0:
        raise ValueError("eta must be positive")
    elif kind == "constant" and sched.c_a < 0:
        raise ValueError("constant step must be nonnegative")
    return sched


# ---------------------------------------------------------------- rng streams

def _stream_id(tag: str, indices) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(tag.encode())
    for i in indices:
        h.update(int(i).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStreamSpec:
    """A named, reproducible random stream: (master_seed, stream_id) -> draws."""

    master_seed: int
    stream_id: int

    @classmethod
    def derive(cls, master_seed: int, tag: str, *indices: int) -> "RngStreamSpec":
        return cls(int(master_seed) & 0xFFFFFFFFFFFFFFFF, _stream_id(tag, indices))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(
            entropy=[self.master_seed & 0xFFFFFFFF, self.master_seed >> 32],
            spawn_key=(self.stream_id & 0xFFFFFFFF, self.stream_id >> 32),
        )
        return np.random.Generator(np.random.PCG64(ss))


def make_stream(master_seed: int, tag: str, *indices: int) -> np.random.Generator:
    return RngStreamSpec.derive(master_seed, tag, *indices).generator()


# ---------------------------------------------------------------- run records

@dataclass(frozen=True)
class RunRecord:
    t: int
    phi_hat_grad_norm: float
    h_of_y: float
    h1_value: float
    h2_value: float
    envelope_grad_norm: Optional[float] = None
    wall_clock_ms: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("phi_hat_grad_norm", "h_of_y", "h1_value", "h2_value"):
            if not math.isfinite(getattr(self, name)):
                raise NonFiniteIterate(f"RunRecord.{name} is not finite at t={self.t}")
        if self.envelope_grad_norm is not None and not math.isfinite(self.envelope_grad_norm):
            raise NonFiniteIterate(f"RunRecord.envelope_grad_norm is not finite at t={self.t}")

    def as_dict(self) -> dict:
        d = {
            "t": self.t,
            "phi_hat_grad_norm": self.phi_hat_grad_norm,
            "h_of_y": self.h_of_y,
            "h1_value": self.h1_value,
            "h2_value": self.h2_value,
            "envelope_grad_norm": self.envelope_grad_norm,
            "wall_clock_ms": self.wall_clock_ms,
        }
        d.update(self.extras)
        return d


def check_log_order(records) -> None:
    last = -1
    for r in records:
        if r.t <= last:
            raise ValueError(f"RunRecord t not strictly increasing ({last} then {r.t})")
        last = r.t
