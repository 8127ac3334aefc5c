from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbso.core import (BadExponent, EqualSigmas, NonFiniteIterate, NonPositiveCoefficient, RngStreamSpec, RunRecord,
                       SigmaOrderWarning, as_param_vector, check_log_order, epsilon_lambda, epsilon_prime,
                       make_step_schedule, make_stream, validate_penalty_coefficients, violation_terms)


def coeffs(s1, s2, s3, c0=0.0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SigmaOrderWarning)
        return validate_penalty_coefficients(s1, s2, s3, c0)


def test_valid_coefficients_no_warning():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        c = validate_penalty_coefficients(0.1, 0.01, 1.0, 0.0)
    assert not c.warn and c.sigma1 == 0.1


def test_equal_sigmas_rejected():
    with pytest.raises(EqualSigmas):
        validate_penalty_coefficients(0.1, 0.5, 0.5, 0.0)


def test_sigma_order_warning_flag():
    with pytest.warns(SigmaOrderWarning):
        c = validate_penalty_coefficients(0.1, 1.0, 0.01, 0.0)
    assert c.warn


@pytest.mark.parametrize("bad", [(0.0, 0.1, 1.0), (0.1, -1.0, 1.0), (0.1, 0.1, math.nan)])
def test_nonpositive_rejected(bad):
    with pytest.raises(NonPositiveCoefficient):
        validate_penalty_coefficients(*bad)


def test_epsilon_lambda_examples():
    assert epsilon_lambda(1, 1, coeffs(0.1, 0.01, 1.0)) == pytest.approx(2.2, abs=1e-12)
    assert epsilon_lambda(0, 0, coeffs(0.3, 0.2, 0.7)) == 0.0
    assert epsilon_lambda(1, 1, coeffs(0.01, 0.001, 0.01)) == pytest.approx(0.22, abs=1e-12)
    assert violation_terms(1, 1, coeffs(0.1, 0.01, 1.0)) == pytest.approx((0.02, 0.22, 2.2))


def test_epsilon_lambda_rejects_negative_norms():
    with pytest.raises(ValueError):
        epsilon_lambda(-1, 1, coeffs(0.1, 0.01, 1.0))


def test_epsilon_prime_examples():
    assert epsilon_prime(0, 0.1, 0.01, 0) == 0
    assert epsilon_prime(2.2, 0.1, 0.01, 0.05) == pytest.approx(2222.05, rel=1e-12)
    assert epsilon_prime(1, 1, 1, 0) == 2


pos = st.floats(0.001, 10.0)


@settings(max_examples=200, deadline=None)
@given(pos, pos, pos, pos, pos, st.floats(1.0, 3.0), st.integers(0, 3))
def test_epsilon_lambda_monotone(c_f, c_g, s1, s2, s3, factor, which):
    # monotone in C_f, C_g, sigma1, sigma2; sigma3 enters one term inversely (see below)
    args = [c_f, c_g, s1, s2, s3]
    if s2 == s3:
        s3 = s3 * 1.5 + 0.01
        args[4] = s3
    bigger = list(args)
    bigger[which] *= factor
    if bigger[3] == bigger[4]:
        return
    lo = epsilon_lambda(args[0], args[1], coeffs(*args[2:]))
    hi = epsilon_lambda(bigger[0], bigger[1], coeffs(*bigger[2:]))
    assert hi >= lo * (1 - 1e-12)


def test_epsilon_lambda_not_monotone_in_sigma3():
    # the middle term 2 C_g sigma2 / sigma3 dominates and shrinks as sigma3 grows
    assert epsilon_lambda(1, 1, coeffs(1.0, 4.0, 2.0)) < epsilon_lambda(1, 1, coeffs(1.0, 4.0, 1.0))
    # with the last term dominant, growing sigma3 increases the bound
    assert epsilon_lambda(1, 1, coeffs(1.0, 0.01, 2.0)) > epsilon_lambda(1, 1, coeffs(1.0, 0.01, 1.0))


def test_schedule_examples():
    s = make_step_schedule("outer_power", c_a=0.1, a=0.5)
    assert s(0) == pytest.approx(0.1) and s(3) == pytest.approx(0.05)
    h = make_step_schedule("inner_harmonic", eta=2.0)
    assert (h(0), h(1), h(3)) == (2.0, 1.0, 0.5)
    with pytest.raises(BadExponent):
        make_step_schedule("outer_power", c_a=1.0, a=1.5)
    with pytest.raises(ValueError):
        make_step_schedule("nope")


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_schedules_decrease(c_a, a, t):
    s = make_step_schedule("outer_power", c_a=c_a, a=a)
    h = make_step_schedule("inner_harmonic", eta=c_a)
    assert s(t + 1) < s(t) and h(t + 1) < h(t)


def test_schedules_vanish():
    assert make_step_schedule("outer_power", c_a=1, a=0.5)(10**12) < 1e-5
    assert make_step_schedule("inner_harmonic", eta=1)(10**9) < 1e-8


def test_streams_reproducible_and_distinct():
    a = make_stream(5, "inner_y", 3).random(8)
    b = make_stream(5, "inner_y", 3).random(8)
    c = make_stream(5, "inner_y", 4).random(8)
    d = make_stream(6, "inner_y", 3).random(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)
    spec = RngStreamSpec.derive(5, "inner_y", 3)
    assert spec == RngStreamSpec.derive(5, "inner_y", 3)
    assert 0 <= spec.stream_id < 2 ** 64


def test_streams_uncorrelated():
    a = make_stream(0, "x", 0).standard_normal(20000)
    b = make_stream(0, "x", 1).standard_normal(20000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(20000)


def test_param_vector_rejects_nonfinite():
    v = as_param_vector([1, 2])
    assert v.dtype == np.float64 and not v.flags.writeable
    with pytest.raises(NonFiniteIterate):
        as_param_vector([1, np.inf])


def test_run_record_validation_and_order():
    r = RunRecord(0, 1.0, 0.0, 1.0, 1.0, extras={"x": [1.0]})
    assert r.as_dict()["x"] == [1.0] and r.as_dict()["envelope_grad_norm"] is None
    with pytest.raises(NonFiniteIterate):
        RunRecord(1, math.nan, 0.0, 1.0, 1.0)
    check_log_order([r, RunRecord(1, 1.0, 0.0, 1.0, 1.0)])
    with pytest.raises(ValueError):
        check_log_order([r, r])
