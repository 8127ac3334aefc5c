from __future__ import annotations

import numpy as np
import pytest

from cbso import analysis as an
from cbso.cmdp import CmdpSpec
from cbso.core import make_stream
from conftest import make_mdp

CAT = an.CATALOG_FUNCTIONS


def huber(v, d=1.0):
    a = np.abs(v)
    return np.sum(np.where(a <= d, 0.5 * a ** 2, d * (a - 0.5 * d)), axis=-1)


# ---------------------------------------------------------------- prox closed forms

@pytest.mark.parametrize("x", [-2.5, -0.3, 0.0, 1.7])
@pytest.mark.parametrize("lam", [0.1, 1.0, 2.0])
def test_prox_quadratic(x, lam):
    r = an.prox_point(CAT["quadratic"].value, np.array([x]), lam, subgrad=CAT["quadratic"].subgrad)
    assert r.prox_point[0] == pytest.approx(x / (1 + lam), abs=1e-8)
    assert r.envelope_value == pytest.approx(x ** 2 / (2 * (1 + lam)), abs=1e-8)


def test_prox_abs_soft_threshold():
    f, sg = CAT["abs"].value, CAT["abs"].subgrad
    r = an.prox_point(f, np.array([0.5]), 1.0, subgrad=sg)
    assert r.prox_point[0] == pytest.approx(0.0, abs=1e-8)
    assert r.envelope_value == pytest.approx(0.125, abs=1e-8)
    r = an.prox_point(f, np.array([3.0]), 1.0, subgrad=sg)
    assert r.prox_point[0] == pytest.approx(2.0, abs=1e-8)
    assert r.envelope_value == pytest.approx(2.5, abs=1e-8)


def test_abs_envelope_is_huber():
    lam = 0.7
    for x in np.linspace(-3, 3, 100):
        r = an.prox_point(CAT["abs"].value, np.array([x]), lam, subgrad=CAT["abs"].subgrad)
        assert r.envelope_value == pytest.approx(huber(np.array([x]) / lam) * lam, abs=1e-6)


def test_grad_identity_bit_exact():
    r = an.prox_point(CAT["sin"].value, np.array([0.3]), 0.5, subgrad=CAT["sin"].subgrad)
    assert r.envelope_grad_norm == r.recomputed_grad_norm()


def test_prox_without_subgradient_uses_fd():
    r = an.prox_point(CAT["quadratic"].value, np.array([2.0]), 1.0)
    assert r.prox_point[0] == pytest.approx(1.0, abs=1e-7)


def test_prox_2d_nelder_mead():
    r = an.prox_point(CAT["quadratic"].value, np.array([1.0, -2.0]), 1.0, subgrad=CAT["quadratic"].subgrad)
    assert np.allclose(r.prox_point, [0.5, -1.0], atol=1e-7)


def test_prox_diverges():
    with pytest.raises(an.Diverged):
        an.prox_point(lambda v: -np.sum(v ** 4), np.array([2.0]), 1.0, subgrad=lambda v: -4 * v ** 3,
                      solver_cfg=an.ProxSolverConfig(step_scale=10.0))


def test_prox_rejects_bad_lambda():
    with pytest.raises(ValueError):
        an.prox_point(CAT["abs"].value, np.array([1.0]), 0.0)


def test_grid_envelope_matches_prox():
    g = np.linspace(-6, 6, 120001)
    q = np.array([-1.0, 0.2, 2.5])
    env = an.grid_envelope(CAT["abs"].value(g[:, None]), g, q, 1.0)
    assert np.allclose(env, [0.5, 0.02, 2.0], atol=1e-6)


# ---------------------------------------------------------------- reports

def test_report_table():
    rep = an.CheckReport().add("a", 1.0, 2.0, True).add("b", 3.0, 2.0, False)
    assert not rep.passed
    lines = rep.to_table().splitlines()
    assert lines[0] == "check,measured,bound,verdict"
    assert lines[1] == "a,1,2,pass" and lines[2] == "b,3,2,fail"
    assert an.CheckReport().passed


# ---------------------------------------------------------------- property checks

def test_envelope_gap_constant_is_zero():
    rep = an.check_envelope_gap(lambda v: 3.0, 0.0, 0.5, [np.array([0.1]), np.array([-2.0])],
                                subgrad=lambda v: np.zeros_like(v))
    assert rep.passed and abs(rep.rows[0].measured) < 1e-12


def test_envelope_gap_abs_is_tight():
    rep = an.check_envelope_gap(CAT["abs"].value, 1.0, 0.5, [np.array([2.0])], subgrad=CAT["abs"].subgrad)
    assert rep.passed and rep.rows[0].measured == pytest.approx(0.25, abs=1e-8)


def test_envelope_gap_detects_wrong_constant():
    rep = an.check_envelope_gap(CAT["abs"].value, 0.5, 0.5, [np.array([2.0])], subgrad=CAT["abs"].subgrad)
    assert not rep.passed


def test_hypomonotonicity_values():
    rng = make_stream(0, "hypo_test")
    samp = an.box_pair_sampler(-3, 3)
    assert an.estimate_hypomonotonicity(CAT["quadratic"].subgrad, samp, 500, rng) == 0.0
    assert an.estimate_hypomonotonicity(CAT["neg_quadratic"].subgrad, samp, 500, rng) == pytest.approx(1.0)
    rho = an.estimate_hypomonotonicity(CAT["sin"].subgrad, an.box_pair_sampler(-10, 10), 5000, rng)
    assert 0.9 < rho <= 1.0


def test_hypomonotonicity_rejects_zero_pairs():
    with pytest.raises(ValueError):
        an.estimate_hypomonotonicity(CAT["sin"].subgrad, an.box_pair_sampler(0, 1), 0, make_stream(0, "x"))


def test_envelope_on_grid_2d_separable():
    ax = np.linspace(-2, 2, 81)
    mesh = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
    vals = CAT["abs"].value(mesh)
    env = an.envelope_on_grid(vals, [ax, ax], 1.0)
    one = an.envelope_on_grid(CAT["abs"].value(ax[:, None]), [ax], 1.0)
    assert np.allclose(env, one[:, None] + one[None, :], atol=1e-12)


def test_argmin_double_well():
    ax = np.linspace(-2, 2, 2001)
    rep = an.check_argmin_equivalence(CAT["double_well"].value, 0.1, [ax], name="dw")
    assert rep.passed


def test_cross_lipschitz_independent_of_y():
    res = an.check_cross_lipschitz(lambda x, y: 2 * x, np.array([1.0]), an.local_pair_sampler(-1, 1, 2, 0.1),
                                   200, make_stream(0, "cl"))
    assert res.L_hat == 0.0 and res.n_pairs_used == 200


def test_cross_lipschitz_linear_coupling():
    A = np.array([[2.0, 0.0], [0.0, 0.5]])
    res = an.check_cross_lipschitz(lambda x, y: A @ y, np.zeros(2), an.box_pair_sampler(-1, 1, 2), 2000,
                                   make_stream(1, "cl"))
    assert 1.9 < res.L_hat <= 2.0 + 1e-12


def test_cross_lipschitz_bound_scales_with_sigma1():
    b1 = an.cross_lipschitz_bound(1.0, 8.0, 0.1)
    b2 = an.cross_lipschitz_bound(1.0, 8.0, 0.05)
    assert b1 == 81.0 and b2 - 1.0 == pytest.approx(2 * (b1 - 1.0))


def test_local_pair_sampler_stays_in_box():
    s = an.local_pair_sampler(-1.0, 1.0, 3, 0.5)
    rng = make_stream(0, "lp")
    for _ in range(200):
        a, b = s(rng)
        assert np.all(np.abs(a) <= 1) and np.all(np.abs(b) <= 1) and np.linalg.norm(a - b) <= 0.5 + 1e-12


# ---------------------------------------------------------------- hinge indicator mismatch

def test_tau_mismatch_far_and_deterministic():
    mdp = make_mdp(P=np.array([[[0.5, 0.5], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]]]),
                   cost=np.array([[0.0, 1.0], [1.0, 0.0]]), gamma=0.5)
    y = np.zeros(mdp.d_p)
    t = an.tau_mismatch_rate(mdp, y, [-100.0, 100.0], (8, 64), 100, 20, make_stream(0, "tm"))
    assert np.all(t.rates == 0.0)
    assert len(list(t.rows())) == 4


def test_tau_mismatch_constant_cost():
    # constant cost: every estimate equals h exactly, so the indicators never disagree
    mdp = make_mdp(P=np.full((2, 2, 2), 0.5), cost=np.ones((2, 2)), gamma=0.5)
    t = an.tau_mismatch_rate(mdp, np.zeros(mdp.d_p), [0.0, 1e-6, -1e-6], (4,), 100, 30, make_stream(0, "tm"))
    assert np.all(t.rates == 0.0)


def test_tau_mismatch_needs_trials():
    mdp = make_mdp(P=np.full((2, 2, 2), 0.5), cost=np.ones((2, 2)), gamma=0.5)
    with pytest.raises(ValueError):
        an.tau_mismatch_rate(mdp, np.zeros(mdp.d_p), [0.0], (4,), 10, 5, make_stream(0, "tm"))


# ---------------------------------------------------------------- rates

def test_fit_rate_power_law():
    series = [(t, 3 / np.sqrt(t)) for t in range(1, 200)]
    fit = an.fit_rate(series, (10, 199))
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(3), abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_rate_constant():
    fit = an.fit_rate([(t, 2.0) for t in range(1, 50)])
    assert fit.slope == pytest.approx(0.0, abs=1e-12) and fit.r_squared == 1.0


def test_fit_rate_empty_window():
    with pytest.raises(an.EmptyWindow):
        an.fit_rate([(t, 1.0) for t in range(1, 10)], (100, 200))


def test_fit_rate_rejects_nonpositive():
    with pytest.raises(ValueError):
        an.fit_rate([(1, 1.0), (2, 0.0)])


def test_running_average():
    assert np.allclose(an.running_average([1, 3, 5]), [1, 2, 3])


# ---------------------------------------------------------------- catalog and envelope checks

@pytest.mark.parametrize("name", sorted(CAT))
def test_catalog_subgradients(name):
    fn = CAT[name]
    for v in np.linspace(*fn.region, 7):
        if v == 0.0 and name == "abs":
            continue
        h = 1e-6
        fd = (fn.value(np.array([v + h])) - fn.value(np.array([v - h]))) / (2 * h)
        assert fn.subgrad(np.array([v]))[0] == pytest.approx(fd, abs=1e-5)


def test_envelope_pl_and_continuity_pass():
    pts = np.linspace(-3, 3, 9)
    assert an.check_envelope_pl(CAT["pl_sine"], 0.1, pts).passed
    assert an.check_envelope_continuity(CAT["double_well"], 0.1, pts / 2).passed


def test_envelope_continuity_needs_small_lambda():
    with pytest.raises(ValueError):
        an.check_envelope_continuity(CAT["double_well"], 0.5, [0.0])


def test_default_lambda():
    assert an.default_lambda(0.0) == 1.0
    assert an.default_lambda(4.0) == 0.125


def test_box_moreau_probe_quadratic():
    probe = an.BoxMoreauProbe(lambda v: float(0.5 * v[0] ** 2), [[-2.0, 2.0]], 1.0, n=401)
    r = probe.probe(np.array([1.0]))
    assert r.prox_point[0] == pytest.approx(0.5, abs=1e-8)
    assert probe(np.array([1.0])) == pytest.approx(0.5, abs=1e-8)
    # at the box edge the indicator is active: the prox stays inside
    r = probe.probe(np.array([2.0]))
    assert r.prox_point[0] == pytest.approx(1.0, abs=1e-8)


def test_box_moreau_probe_rejects_2d():
    with pytest.raises(ValueError):
        an.BoxMoreauProbe(lambda v: 0.0, [[0, 1], [0, 1]], 1.0)
