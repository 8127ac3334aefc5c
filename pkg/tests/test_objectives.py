from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cbso import cmdp as C
from cbso import objectives as O
from cbso.core import make_stream, validate_penalty_coefficients
from cbso.synthetic import grid_bilevel_oracle, make_problem

from conftest import make_mdp

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_bt_prob_examples():
    assert O.bt_prob(0, 0) == 0.5
    assert O.bt_prob(1, 0) == pytest.approx(1 / (1 + math.exp(-1)), rel=1e-15)
    assert O.bt_prob(700, 0) == pytest.approx(1.0) and O.bt_prob(0, 700) >= 0.0
    assert O.log_bt_prob(-800, 0) == pytest.approx(-800)


@settings(max_examples=300, deadline=None)
@given(finite, finite)
def test_bt_prob_complement_exact(a, b):
    assert O.bt_prob(a, b) + O.bt_prob(b, a) == 1.0


def _pairs(mdp, y, H, n, seed, x_true=None):
    ann = O.Annotator(np.ones(mdp.d_r) if x_true is None else x_true, "bt")
    return O.sample_preferences(mdp, y, H, n, ann, make_stream(seed, "pairs"))


def test_trajectory_return_examples():
    mdp = C.random_cmdp(0)
    pol = C.SoftmaxPolicy.for_mdp(mdp, np.zeros(mdp.d_p))
    d = C.sample_trajectory(mdp, pol, 5, make_stream(0, "d"))
    assert O.trajectory_return(mdp, np.zeros(mdp.d_r), d) == 0.0
    x = make_stream(1, "x").normal(size=mdp.d_r)
    r = C.reward_table(mdp, x)
    manual = 0.0
    for s, a in zip(d.states, d.actions):
        manual += r[s, a]
    assert O.trajectory_return(mdp, x, d) == pytest.approx(manual, abs=1e-14)
    d1 = C.sample_trajectory(mdp, pol, 1, make_stream(2, "d"))
    assert O.trajectory_return(mdp, x, d1) == r[d1.states[0], d1.actions[0]]


def test_outer_loss_examples():
    mdp = C.random_cmdp(1)
    batch = _pairs(mdp, np.zeros(mdp.d_p), 4, 16, 0)
    assert O.outer_loss_f(mdp, np.zeros(mdp.d_r), batch) == pytest.approx(math.log(2), abs=1e-15)
    # preferred return 10 vs 0
    assert float(-O.log_bt_prob(10.0, 0.0)) == pytest.approx(math.log1p(math.exp(-10)), rel=1e-12)
    assert math.log1p(math.exp(-10)) == pytest.approx(4.54e-5, rel=1e-3)
    x = make_stream(3, "x").normal(size=mdp.d_r)
    manual = []
    for i in range(len(batch)):
        p = batch.pair(i)
        r0, r1 = O.trajectory_return(mdp, x, p.d0), O.trajectory_return(mdp, x, p.d1)
        manual.append(-math.log(O.bt_prob(r1, r0)) if p.l1 else -math.log(O.bt_prob(r0, r1)))
    assert O.outer_loss_f(mdp, x, batch) == pytest.approx(np.mean(manual), rel=1e-12)
    assert O.outer_loss_f(mdp, x, [batch.pair(i) for i in range(len(batch))]) == pytest.approx(np.mean(manual))
    with pytest.raises(ValueError):
        O.outer_loss_f(mdp, x, [])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_outer_loss_nonnegative(seed):
    mdp = C.random_cmdp(seed % 7)
    batch = _pairs(mdp, make_stream(seed, "y").normal(size=mdp.d_p), 3, 8, seed)
    assert O.outer_loss_f(mdp, make_stream(seed, "x").normal(0, 3, mdp.d_r), batch) >= 0


def test_preference_pair_label_invariant():
    mdp = C.random_cmdp(0)
    d = C.sample_trajectory(mdp, np.zeros(mdp.d_p), 2, make_stream(0, "d"))
    with pytest.raises(ValueError):
        O.PreferencePair(d, d, 1, 1)
    recs = _pairs(mdp, np.zeros(mdp.d_p), 2, 3, 0).to_records()
    assert len(recs) == 3 and set(recs[0]) == {"s0", "a0", "s1", "a1", "l1"}


def test_truth_annotator():
    mdp = C.random_cmdp(0)
    ann = O.Annotator(np.array([1.0, 0.0, 0.0]), "truth")
    b = O.sample_preferences(mdp, np.zeros(mdp.d_p), 3, 200, ann, make_stream(0, "p"))
    r0 = O.trajectory_returns(mdp, ann.x_true, b.d0.states, b.d0.actions)
    r1 = O.trajectory_returns(mdp, ann.x_true, b.d1.states, b.d1.actions)
    assert np.all(b.l1[r1 > r0] == 1) and np.all(b.l1[r1 < r0] == 0)


def test_inner_g_examples():
    mdp = C.random_cmdp(2)
    ref = C.SoftmaxPolicy.for_mdp(mdp, np.zeros(mdp.d_p))
    assert O.inner_g_exact(mdp, np.zeros(mdp.d_r), np.zeros(mdp.d_p), 0.7, ref) == 0.0
    x = np.array([0.3, -0.2, 0.5])
    y = make_stream(2, "y").normal(size=mdp.d_p)
    pol = C.SoftmaxPolicy.for_mdp(mdp, y)
    assert O.inner_g_exact(mdp, x, y, 0.0, ref) == pytest.approx(
        -C.occupancy_value(mdp, pol, C.reward_table(mdp, x)), abs=1e-14)


def test_inner_g_matches_monte_carlo():
    mdp = C.random_cmdp(3, gamma=0.8)
    ref = C.SoftmaxPolicy.for_mdp(mdp, np.zeros(mdp.d_p))
    x, y, beta = np.array([0.4, 0.1, -0.3]), make_stream(3, "y").normal(size=mdp.d_p), 0.5
    pol = C.SoftmaxPolicy.for_mdp(mdp, y)
    signal = C.reward_table(mdp, x) + beta * O.log_ratio_table(mdp, y, ref)
    n, H = 100_000, 80
    rng = make_stream(3, "mc")
    s, a = C.sample_occupancy_pairs(mdp, pol, H, n, rng)
    q = -C.mc_q_estimates(mdp, pol, signal, s, a, H, 1, rng)
    se = q.std(ddof=1) / np.sqrt(n)
    bias = 2 * C.truncation_bias(mdp.gamma, H, np.abs(signal).max())
    assert abs(q.mean() - O.inner_g_exact(mdp, x, y, beta, ref)) <= 3 * se + bias


def test_constraint_and_hinge():
    P = np.ones((1, 2, 1))
    zero = make_mdp(P, np.zeros((1, 2)), 0.5, init=[1.0])
    one = make_mdp(P, np.ones((1, 2)), 0.5, init=[1.0])
    y = np.zeros(2)
    assert O.constraint_h_exact(zero, y) == 0.0 and O.hinge(0.0, 1.0) == 0.0
    assert O.constraint_h_exact(one, y) == pytest.approx(2.0, abs=1e-12) and O.hinge(2.0, 1.0) == 1.0
    assert O.hinge(1.3, 1.3) == 0.0


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(0, 1))
def test_hinge_properties(u, v, lam):
    c0 = 0.25
    assert O.hinge(u, c0) >= 0
    assert (O.hinge(u, c0) == 0) == (u <= c0)
    mid = lam * u + (1 - lam) * v
    assert O.hinge(mid, c0) <= lam * O.hinge(u, c0) + (1 - lam) * O.hinge(v, c0) + 1e-9 * (1 + abs(u) + abs(v))


def test_composites_examples():
    c = validate_penalty_coefficients(0.5, 0.25, 1.0)
    assert O.h1_value(0, 0, 0, c).value == 0 and O.h2_value(0, 0, c).value == 0
    h1 = O.h1_value(1, 2, 0.5, c)
    h2 = O.h2_value(2, 0.5, c)
    assert h1.value == pytest.approx(6.0) and h2.value == pytest.approx(4.0)
    assert O.phi_value(h1, h2, 0.5) == pytest.approx(-2.0)
    assert O.phi_value(6.0, 3.0, 0.5) == 0.0


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(0, 1e3), st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.011, 10))
def test_composites_recombine(f, g, hp, s1, s2, s3):
    if s2 == s3:
        return
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        c = validate_penalty_coefficients(s1, s2, s3)
    h1, h2 = O.h1_value(f, g, hp, c), O.h2_value(g, hp, c)
    assert O.recombine(h1, c) == pytest.approx(h1.value, rel=1e-12, abs=1e-12)
    assert O.recombine(h2, c) == pytest.approx(h2.value, rel=1e-12, abs=1e-12)


def test_x_gradient_of_h1_ignores_sigma3():
    mdp = C.random_cmdp(4).with_c0(0.0)  # costs are positive, so the hinge is active
    x, y = np.array([0.2, 0.1, -0.4]), make_stream(4, "y").normal(size=mdp.d_p)
    hp = O.hinge(O.constraint_h_exact(mdp, y), mdp.c0)
    assert hp > 0
    eps = 1e-6
    grads = []
    for s3 in (0.5, 2.0, 50.0):
        c = validate_penalty_coefficients(0.1, 0.01, s3)

        def h1(xx):
            return O.h1_value(0.0, O.inner_g_exact(mdp, xx, y, 0.0, None), hp, c).value

        grads.append(np.array([(h1(x + eps * e) - h1(x - eps * e)) / (2 * eps) for e in np.eye(3)]))
    assert np.allclose(grads[0], grads[1], atol=1e-6) and np.allclose(grads[0], grads[2], atol=1e-6)
    # and it equals d_x g / sigma1 with the exact gradient
    assert np.allclose(grads[0], O.inner_g_grad_x_exact(mdp, x, y) / 0.1, atol=1e-5)


def test_exact_outer_loss_grad_matches_fd():
    mdp = C.random_cmdp(5, n_states=3, n_actions=2)
    ann = O.Annotator(np.array([1.0, -1.0, 0.5]), "bt")
    x, y = np.array([0.2, 0.3, -0.1]), make_stream(5, "y").normal(size=mdp.d_p)
    g = O.exact_outer_loss_grad_x(mdp, x, y, 2, ann)
    eps = 1e-6
    fd = np.array([(O.exact_outer_loss(mdp, x + eps * e, y, 2, ann) - O.exact_outer_loss(mdp, x - eps * e, y, 2, ann))
                   / (2 * eps) for e in np.eye(3)])
    assert np.allclose(g, fd, atol=1e-8)
    _, _, prob = O.enumerate_trajectories(mdp, y, 2)
    assert prob.sum() == pytest.approx(1.0, abs=1e-12)


def test_phi_at_grid_optimum_matches_oracle():
    p = make_problem("P1")
    c = validate_penalty_coefficients(0.1, 0.01, 1.0, p.c0)
    res = grid_bilevel_oracle(p, c, n_x=21, n_y=2001)
    i = 10  # x = 1
    x = np.array([res.x_grid[i]])
    y, z = res.y1_star[i], res.z_star[i]
    phi = O.phi_value(p.h1(x, y, c), p.h2(x, z, c), c.sigma1)
    assert phi == pytest.approx(res.phi_table[i], abs=1e-9)
