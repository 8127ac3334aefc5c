"""Monte-Carlo (sub)gradient estimators for the CMDP track.

Each estimator averages B per-sample terms. The per-sample terms are kept on
the returned :class:`SubgradientSample` when ``keep_terms=True`` so callers
can form standard errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import cmdp as _cmdp
from .cmdp import SoftmaxPolicy
from .core import PenaltyCoefficients
from .objectives import Annotator, PreferenceBatch, bt_prob, pair_losses, sample_preferences, trajectory_returns


@dataclass(frozen=True, eq=False)
class SubgradientSample:
    vector: np.ndarray
    batch_size: int
    horizon: int
    tau: Optional[float] = None
    n_rollouts_per_q: int = 0
    extras: dict = field(default_factory=dict)
    terms: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.tau is not None and self.tau not in (0.0, 0.5, 1.0):
            raise ValueError(f"tau must be 0, 1/2 or 1, got {self.tau}")

    def metadata(self) -> dict:
        return {"B": self.batch_size, "H": self.horizon, "tau": self.tau,
                "n_rollouts_per_q": self.n_rollouts_per_q}


def _pack(terms, B, H, keep_terms, **kw) -> SubgradientSample:
    vec = terms.sum(axis=0) / B
    return SubgradientSample(vec, B, H, terms=terms if keep_terms else None, **kw)


def tau_of(h_hat: float, c0: float) -> float:
    """Clarke selection for the hinge: 1 above c0, 0 below, 1/2 on equality."""
    if h_hat > c0:
        return 1.0
    if h_hat < c0:
        return 0.0
    return 0.5


# ---------------------------------------------------------------- y direction

def grad_y_f_hat(mdp, x, y, B, H, annotator: Annotator, rng, baseline="loo",
                 pairs: PreferenceBatch | None = None, keep_terms=False) -> SubgradientSample:
    """Score-function estimate of grad_y of the preference loss.

    Per pair: (loss_i - b_i) * (grad log p_y(d0) + grad log p_y(d1)). ``baseline``
    is ``"loo"`` (leave-one-out batch mean, unbiased) or ``"none"``.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    if pairs is None:
        pairs = sample_preferences(mdp, y, H, B, annotator, rng)
    loss = pair_losses(mdp, x, pairs)
    if baseline == "loo" and B > 1:
        b = (loss.sum() - loss) / (B - 1)
    elif baseline in ("none", "loo"):
        b = 0.0
    else:
        raise ValueError(f"unknown baseline {baseline!r}")
    score = pairs.d0.log_prob_grad_accum + pairs.d1.log_prob_grad_accum
    terms = (loss - b)[:, None] * score
    return _pack(terms, B, H, keep_terms, extras={"f_hat": float(loss.mean()), "pairs": pairs})


def grad_y_g_hat(mdp, x, y, B, H, beta, pi_ref, rng, n_rollouts=1, keep_terms=False) -> SubgradientSample:
    """-(1/B) sum grad log pi(a_i|s_i) Qhat_r(s_i, a_i)
       -(beta/B) sum_j sum_{i<H} gamma^i grad_y log(pi_y/pi_ref)(s_ji, a_ji).

    (s_i, a_i) come from the occupancy sampler; Qhat uses fresh rollouts. The
    log-ratio gradient does not involve pi_ref, which is accepted for symmetry
    with the objective.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    policy = SoftmaxPolicy.for_mdp(mdp, y)
    r = _cmdp.reward_table(mdp, x)
    s, a = _cmdp.sample_occupancy_pairs(mdp, policy, H, B, rng)
    q = _cmdp.mc_q_estimates(mdp, policy, r, s, a, H, n_rollouts, rng)
    terms = -policy.grad_log[s, a] * q[:, None]
    if beta != 0.0:
        traj = _cmdp.sample_trajectories(mdp, policy, H, B, rng)
        disc = mdp.gamma ** np.arange(H)
        terms = terms - beta * np.einsum("t,ntd->nd", disc, policy.grad_log[traj.states, traj.actions])
    return _pack(terms, B, H, keep_terms, n_rollouts_per_q=n_rollouts,
                 extras={"g_q_mean": float(q.mean())})


def subgrad_y_hplus_hat(mdp, y, B, H, c0, rng, n_rollouts=1, keep_terms=False) -> SubgradientSample:
    """tau(h_hat) (1/B) sum grad log pi(a_i|s_i) Qhat_c(s_i, a_i), h_hat = mean Qhat_c."""
    if B < 1:
        raise ValueError("B must be >= 1")
    policy = SoftmaxPolicy.for_mdp(mdp, y)
    s, a = _cmdp.sample_occupancy_pairs(mdp, policy, H, B, rng)
    q = _cmdp.mc_q_estimates(mdp, policy, mdp.cost, s, a, H, n_rollouts, rng)
    h_hat = float(q.mean())
    tau = tau_of(h_hat, c0)
    terms = tau * policy.grad_log[s, a] * q[:, None]
    return _pack(terms, B, H, keep_terms, tau=tau, n_rollouts_per_q=n_rollouts,
                 extras={"h_hat": h_hat})


def combine_y_h1(f_part, g_part, hplus_part, coeffs: PenaltyCoefficients) -> np.ndarray:
    return f_part + (g_part + hplus_part / coeffs.sigma3) / coeffs.sigma1


def combine_y_h2(g_part, hplus_part, coeffs: PenaltyCoefficients) -> np.ndarray:
    return g_part + hplus_part / coeffs.sigma2


def subgrad_y_h1_hat(mdp, x, y, coeffs, B, H, beta, pi_ref, annotator, rng, n_rollouts=1,
                     baseline="loo") -> SubgradientSample:
    fs = grad_y_f_hat(mdp, x, y, B, H, annotator, rng, baseline=baseline)
    gs = grad_y_g_hat(mdp, x, y, B, H, beta, pi_ref, rng, n_rollouts)
    hs = subgrad_y_hplus_hat(mdp, y, B, H, coeffs.c0, rng, n_rollouts)
    vec = combine_y_h1(fs.vector, gs.vector, hs.vector, coeffs)
    return SubgradientSample(vec, B, H, tau=hs.tau, n_rollouts_per_q=n_rollouts,
                             extras={"f_hat": fs.extras["f_hat"], "h_hat": hs.extras["h_hat"],
                                     "parts": (fs, gs, hs)})


def subgrad_y_h2_hat(mdp, x, z, coeffs, B, H, beta, pi_ref, rng, n_rollouts=1) -> SubgradientSample:
    gs = grad_y_g_hat(mdp, x, z, B, H, beta, pi_ref, rng, n_rollouts)
    hs = subgrad_y_hplus_hat(mdp, z, B, H, coeffs.c0, rng, n_rollouts)
    vec = combine_y_h2(gs.vector, hs.vector, coeffs)
    return SubgradientSample(vec, B, H, tau=hs.tau, n_rollouts_per_q=n_rollouts,
                             extras={"h_hat": hs.extras["h_hat"], "parts": (gs, hs)})


# ---------------------------------------------------------------- x direction

def grad_x_f_hat(mdp, x, pairs: PreferenceBatch, keep_terms=False) -> SubgradientSample:
    """Pathwise gradient of the batch preference loss: (P(d1>d0) - l1)(grad R(d1) - grad R(d0))."""
    B = len(pairs)
    if B < 1:
        raise ValueError("need at least one pair")
    G = _cmdp.reward_grad_table(mdp, x)
    g0 = G[pairs.d0.states, pairs.d0.actions].sum(axis=1)
    g1 = G[pairs.d1.states, pairs.d1.actions].sum(axis=1)
    r0 = trajectory_returns(mdp, x, pairs.d0.states, pairs.d0.actions)
    r1 = trajectory_returns(mdp, x, pairs.d1.states, pairs.d1.actions)
    coef = bt_prob(r1, r0) - pairs.l1
    terms = np.atleast_1d(coef)[:, None] * (g1 - g0)
    return _pack(terms, B, pairs.d0.states.shape[1], keep_terms)


def grad_x_g_hat(mdp, x, y, B, H, rng, keep_terms=False) -> SubgradientSample:
    """-(1/B) sum_j sum_{i<H} gamma^i grad_x r_x(s_ji, a_ji) over trajectories from the initial distribution."""
    if B < 1:
        raise ValueError("B must be >= 1")
    traj = _cmdp.sample_trajectories(mdp, SoftmaxPolicy.for_mdp(mdp, y), H, B, rng)
    G = _cmdp.reward_grad_table(mdp, x)
    disc = mdp.gamma ** np.arange(H)
    terms = -np.einsum("t,ntd->nd", disc, G[traj.states, traj.actions])
    return _pack(terms, B, H, keep_terms)


def combine_x_phi(fx, gx_y, gx_z, sigma1) -> np.ndarray:
    """d_x h1(x, y) - d_x h2(x, z)/sigma1 with d_x h1 = f_x + g_x/sigma1 and d_x h2 = g_x."""
    return fx + gx_y / sigma1 - gx_z / sigma1


def grad_x_phi_hat(mdp, x, y_K, z_K, coeffs, B, H, annotator, rng) -> SubgradientSample:
    pairs = sample_preferences(mdp, y_K, H, B, annotator, rng)
    fx = grad_x_f_hat(mdp, x, pairs)
    gy = grad_x_g_hat(mdp, x, y_K, B, H, rng)
    gz = grad_x_g_hat(mdp, x, z_K, B, H, rng)
    vec = combine_x_phi(fx.vector, gy.vector, gz.vector, coeffs.sigma1)
    return SubgradientSample(vec, B, H, extras={"f_hat": float(np.mean(pair_losses(mdp, x, pairs)))})
