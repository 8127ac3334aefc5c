"""Constrained bilevel subgradient optimization (CBSO) for penalty-reformulated bilevel RL."""
from __future__ import annotations

from .core import (CbsoError, NonFiniteIterate, PenaltyCoefficients, RunRecord, StepSchedule, epsilon_lambda,
                   epsilon_prime, make_step_schedule, make_stream, validate_penalty_coefficients, violation_terms)
from .driver import CbsoConfig, CbsoState, run_cbso, run_inner_loop

__all__ = [
    "CbsoConfig", "CbsoError", "CbsoState", "NonFiniteIterate", "PenaltyCoefficients", "RunRecord",
    "StepSchedule", "epsilon_lambda", "epsilon_prime", "make_step_schedule", "make_stream", "run_cbso",
    "run_inner_loop", "validate_penalty_coefficients", "violation_terms",
]

__version__ = "0.1.0"
