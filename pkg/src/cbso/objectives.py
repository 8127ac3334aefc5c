"""Exact objectives on tabular CMDPs and their penalty compositions.

f: Bradley-Terry negative log-likelihood over trajectory pairs.
g: negative occupancy-weighted Q of the learned reward, with a log-ratio term.
h: occupancy-weighted Q of the cost; h+ is its hinge at c0.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import cmdp as _cmdp
from .cmdp import CmdpSpec, SoftmaxPolicy, TrajectoryBatch
from .core import PenaltyCoefficients


@dataclass(frozen=True)
class ObjectiveValue:
    value: float
    components: dict = field(default_factory=dict)


# ---------------------------------------------------------------- preferences

def bt_prob(r_a, r_b):
    """P(a preferred over b) = exp(r_a) / (exp(r_a) + exp(r_b)).

    Evaluated so that bt_prob(a, b) + bt_prob(b, a) == 1 exactly in floating point.
    """
    z = np.asarray(r_a, dtype=np.float64) - np.asarray(r_b, dtype=np.float64)
    # for z >= 0 the value is in [0.5, 1], where 1 - p is exact
    p_pos = 1.0 / (1.0 + np.exp(-np.abs(z)))
    out = np.where(z >= 0, p_pos, 1.0 - p_pos)
    return float(out) if out.ndim == 0 else out


def log_bt_prob(r_a, r_b):
    z = np.asarray(r_a, dtype=np.float64) - np.asarray(r_b, dtype=np.float64)
    return -np.logaddexp(0.0, -z)


@dataclass(frozen=True, eq=False)
class PreferencePair:
    d0: _cmdp.Trajectory
    d1: _cmdp.Trajectory
    l0: int
    l1: int

    def __post_init__(self):
        if self.l0 + self.l1 != 1 or self.l0 not in (0, 1):
            raise ValueError("exactly one trajectory of a pair is preferred")


@dataclass(frozen=True, eq=False)
class PreferenceBatch:
    """Vectorised preference pairs; ``l1[i] = 1`` means d1 preferred."""

    d0: TrajectoryBatch
    d1: TrajectoryBatch
    l1: np.ndarray

    def __len__(self):
        return len(self.l1)

    def pair(self, i) -> PreferencePair:
        return PreferencePair(self.d0[i], self.d1[i], 1 - int(self.l1[i]), int(self.l1[i]))

    @classmethod
    def from_pairs(cls, pairs) -> "PreferenceBatch":
        def stack(ds):
            return TrajectoryBatch(np.stack([d.states for d in ds]), np.stack([d.actions for d in ds]),
                                   np.stack([d.log_prob_grad_accum for d in ds]))
        return cls(stack([p.d0 for p in pairs]), stack([p.d1 for p in pairs]),
                   np.array([p.l1 for p in pairs], dtype=np.int64))

    def to_records(self) -> list[dict]:
        return [
            {"s0": self.d0.states[i].tolist(), "a0": self.d0.actions[i].tolist(),
             "s1": self.d1.states[i].tolist(), "a1": self.d1.actions[i].tolist(),
             "l1": int(self.l1[i])}
            for i in range(len(self))
        ]


@dataclass(frozen=True, eq=False)
class Annotator:
    """Labels trajectory pairs using a hidden true reward.

    kind ``"bt"`` samples labels from the Bradley-Terry model of the true
    returns; ``"truth"`` prefers the higher true return (ties by coin flip).
    """

    x_true: np.ndarray
    kind: str = "bt"

    def prob_d1(self, mdp: CmdpSpec, d0, d1) -> np.ndarray:
        r0 = trajectory_returns(mdp, self.x_true, d0.states, d0.actions)
        r1 = trajectory_returns(mdp, self.x_true, d1.states, d1.actions)
        if self.kind == "bt":
            return bt_prob(r1, r0)
        if self.kind == "truth":
            return np.where(r1 > r0, 1.0, np.where(r1 < r0, 0.0, 0.5))
        raise ValueError(f"unknown annotator kind {self.kind!r}")

    def label(self, mdp, d0, d1, rng) -> np.ndarray:
        p = np.atleast_1d(self.prob_d1(mdp, d0, d1))
        return (rng.random(p.shape[0]) < p).astype(np.int64)


def sample_preferences(mdp, y, H, n, annotator: Annotator, rng) -> PreferenceBatch:
    policy = SoftmaxPolicy.for_mdp(mdp, y)
    d0 = _cmdp.sample_trajectories(mdp, policy, H, n, rng)
    d1 = _cmdp.sample_trajectories(mdp, policy, H, n, rng)
    return PreferenceBatch(d0, d1, annotator.label(mdp, d0, d1, rng))


# ---------------------------------------------------------------- returns / f

def trajectory_returns(mdp: CmdpSpec, x, states, actions) -> np.ndarray:
    """Undiscounted clipped-reward sums along each row of (states, actions)."""
    r = _cmdp.reward_table(mdp, x)
    return r[np.asarray(states), np.asarray(actions)].sum(axis=-1)


def trajectory_return(mdp: CmdpSpec, x, d) -> float:
    return float(trajectory_returns(mdp, x, d.states, d.actions))


def pair_losses(mdp, x, batch: PreferenceBatch) -> np.ndarray:
    r0 = trajectory_returns(mdp, x, batch.d0.states, batch.d0.actions)
    r1 = trajectory_returns(mdp, x, batch.d1.states, batch.d1.actions)
    l1 = batch.l1
    return -((1 - l1) * log_bt_prob(r0, r1) + l1 * log_bt_prob(r1, r0))


def outer_loss_f(mdp, x, pairs) -> float:
    """Mean Bradley-Terry negative log-likelihood of the labelled pairs."""
    batch = pairs if isinstance(pairs, PreferenceBatch) else PreferenceBatch.from_pairs(list(pairs))
    if len(batch) == 0:
        raise ValueError("need at least one preference pair")
    return float(np.mean(pair_losses(mdp, x, batch)))


def enumerate_trajectories(mdp: CmdpSpec, y, H: int):
    """All length-H (state, action) sequences with their probabilities under pi_y."""
    pi = SoftmaxPolicy.for_mdp(mdp, y).probs
    S, A = mdp.n_states, mdp.n_actions
    seqs = np.array(list(itertools.product(range(S * A), repeat=H)), dtype=np.int64).reshape(-1, H)
    states, actions = seqs // A, seqs % A
    prob = mdp.initial_dist[states[:, 0]] * pi[states[:, 0], actions[:, 0]]
    for t in range(1, H):
        prob = prob * mdp.transition[states[:, t - 1], actions[:, t - 1], states[:, t]] \
            * pi[states[:, t], actions[:, t]]
    keep = prob > 0
    return states[keep], actions[keep], prob[keep]


def exact_outer_loss(mdp, x, y, H, annotator: Annotator) -> float:
    """E over d0, d1 ~ pi_y and annotator labels of the pair loss, by enumeration."""
    states, actions, prob = enumerate_trajectories(mdp, y, H)
    R = trajectory_returns(mdp, x, states, actions)
    Rt = trajectory_returns(mdp, annotator.x_true, states, actions)
    if annotator.kind == "bt":
        p1 = bt_prob(Rt[None, :], Rt[:, None])
    else:
        diff = Rt[None, :] - Rt[:, None]
        p1 = np.where(diff > 0, 1.0, np.where(diff < 0, 0.0, 0.5))
    # rows index d0, columns d1
    loss = -(p1 * log_bt_prob(R[None, :], R[:, None]) + (1 - p1) * log_bt_prob(R[:, None], R[None, :]))
    return float(prob @ loss @ prob)


def exact_outer_loss_grad_x(mdp, x, y, H, annotator: Annotator) -> np.ndarray:
    """Exact x-gradient of :func:`exact_outer_loss` (pathwise, by enumeration)."""
    states, actions, prob = enumerate_trajectories(mdp, y, H)
    R = trajectory_returns(mdp, x, states, actions)
    gR = _cmdp.reward_grad_table(mdp, x)[states, actions].sum(axis=1)
    Rt = trajectory_returns(mdp, annotator.x_true, states, actions)
    if annotator.kind == "bt":
        p1 = bt_prob(Rt[None, :], Rt[:, None])
    else:
        diff = Rt[None, :] - Rt[:, None]
        p1 = np.where(diff > 0, 1.0, np.where(diff < 0, 0.0, 0.5))
    coef = (bt_prob(R[None, :], R[:, None]) - p1) * prob[:, None] * prob[None, :]
    # d loss / d x = (P(d1>d0) - l1) (grad R(d1) - grad R(d0))
    return coef.sum(axis=0) @ gR - coef.sum(axis=1) @ gR


# ---------------------------------------------------------------- g, h

def log_ratio_table(mdp, y, pi_ref) -> np.ndarray:
    pi = SoftmaxPolicy.for_mdp(mdp, y).probs
    ref = pi_ref.probs if isinstance(pi_ref, SoftmaxPolicy) else SoftmaxPolicy.for_mdp(mdp, pi_ref).probs
    return np.log(pi) - np.log(ref)


def inner_g_parts(mdp, x, y, beta, pi_ref) -> dict:
    policy = SoftmaxPolicy.for_mdp(mdp, y)
    d = _cmdp.exact_occupancy(mdp, policy)
    q_r = _cmdp.exact_q(mdp, policy, _cmdp.reward_table(mdp, x))
    reward_term = float(np.sum(d * q_r))
    kl_term = 0.0
    if beta != 0.0:
        q_kl = _cmdp.exact_q(mdp, policy, log_ratio_table(mdp, y, pi_ref))
        kl_term = float(np.sum(d * q_kl))
    return {"reward": reward_term, "log_ratio": kl_term}


def inner_g_exact(mdp, x, y, beta, pi_ref) -> float:
    """-E_d[Q_{r_x}] - beta E_d[Q_{log(pi_y/pi_ref)}], both under d^{pi_y}."""
    parts = inner_g_parts(mdp, x, y, beta, pi_ref)
    return -parts["reward"] - beta * parts["log_ratio"]


def inner_g_grad_x_exact(mdp, x, y) -> np.ndarray:
    """Exact x-gradient of :func:`inner_g_exact` (the log-ratio term has no x)."""
    policy = SoftmaxPolicy.for_mdp(mdp, y)
    d = _cmdp.exact_occupancy(mdp, policy)
    G = _cmdp.reward_grad_table(mdp, x)
    return -np.array([np.sum(d * _cmdp.exact_q(mdp, policy, G[:, :, k])) for k in range(G.shape[2])])


def constraint_h_exact(mdp, y) -> float:
    """E_{d^pi}[Q^pi_c]."""
    return _cmdp.occupancy_value(mdp, SoftmaxPolicy.for_mdp(mdp, y), mdp.cost)


def hinge(v, c0):
    return np.maximum(np.asarray(v, dtype=np.float64) - c0, 0.0) if np.ndim(v) else max(float(v) - c0, 0.0)


# ---------------------------------------------------------------- compositions

def h1_value(f, g, h_plus, coeffs: PenaltyCoefficients) -> ObjectiveValue:
    """h1 = f + (g + h+/sigma3)/sigma1."""
    value = f + (g + h_plus / coeffs.sigma3) / coeffs.sigma1
    return ObjectiveValue(float(value), {"f": float(f), "g": float(g), "h_plus": float(h_plus)})


def h2_value(g, h_plus, coeffs: PenaltyCoefficients) -> ObjectiveValue:
    """h2 = g + h+/sigma2."""
    value = g + h_plus / coeffs.sigma2
    return ObjectiveValue(float(value), {"g": float(g), "h_plus": float(h_plus)})


def recombine(ov: ObjectiveValue, coeffs: PenaltyCoefficients) -> float:
    c = ov.components
    if "f" in c:
        return c["f"] + (c["g"] + c["h_plus"] / coeffs.sigma3) / coeffs.sigma1
    return c["g"] + c["h_plus"] / coeffs.sigma2


def phi_value(h1, h2, sigma1) -> float:
    """phi = h1 - h2/sigma1 (accepts floats or ObjectiveValue)."""
    h1 = h1.value if isinstance(h1, ObjectiveValue) else h1
    h2 = h2.value if isinstance(h2, ObjectiveValue) else h2
    return float(np.squeeze(h1 - h2 / sigma1))
