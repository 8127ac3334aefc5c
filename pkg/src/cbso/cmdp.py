"""Finite tabular CMDPs with softmax-over-features policies.

Exact dynamic-programming oracles (Q tables, discounted occupancy) plus
vectorised Monte-Carlo samplers. Sampling routines take an explicit
``numpy.random.Generator`` and draw a whole batch at once, so a batch is a
deterministic function of the generator state.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CbsoError


class SingularSystem(CbsoError, np.linalg.LinAlgError):
    pass


class InvalidCmdp(CbsoError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CmdpSpec:
    """Tabular CMDP.

    transition has shape (S, A, S), cost (S, A), reward_features (S, A, d_r),
    policy_features (S, A, d_p).
    """

    transition: np.ndarray
    cost: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    c0: float
    reward_features: np.ndarray
    policy_features: np.ndarray
    r_max: float = 1.0
    cost_bound: float | None = None

    def __post_init__(self):
        for name in ("transition", "cost", "initial_dist", "reward_features", "policy_features"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        P, S, A = self.transition, self.n_states, self.n_actions
        if P.shape != (S, A, S):
            raise InvalidCmdp(f"transition must have shape (S, A, S), got {P.shape}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise InvalidCmdp("each transition row must be a probability vector")
        if self.initial_dist.shape != (S,) or np.any(self.initial_dist < 0) \
                or abs(self.initial_dist.sum() - 1.0) > 1e-12:
            raise InvalidCmdp("initial_dist must be a probability vector over states")
        if self.cost.shape != (S, A):
            raise InvalidCmdp("cost must have shape (S, A)")
        if self.reward_features.shape[:2] != (S, A) or self.policy_features.shape[:2] != (S, A):
            raise InvalidCmdp("feature tables must have leading shape (S, A)")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidCmdp("gamma must lie in [0, 1)")
        if self.r_max <= 0:
            raise InvalidCmdp("r_max must be positive")
        r_c = float(np.max(np.abs(self.cost)))
        if self.cost_bound is None:
            object.__setattr__(self, "cost_bound", r_c)
        elif r_c > self.cost_bound:
            raise InvalidCmdp(f"|cost| reaches {r_c} > declared bound {self.cost_bound}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def d_r(self) -> int:
        return self.reward_features.shape[2]

    @property
    def d_p(self) -> int:
        return self.policy_features.shape[2]

    def with_c0(self, c0: float) -> "CmdpSpec":
        return CmdpSpec(self.transition, self.cost, self.gamma, self.initial_dist, c0,
                        self.reward_features, self.policy_features, self.r_max, self.cost_bound)


# ---------------------------------------------------------------- policy / reward

@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """pi_y(a|s) proportional to exp(y . psi(s, a))."""

    params: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        y = np.array(self.params, dtype=np.float64).reshape(-1)
        if y.shape[0] != self.features.shape[2]:
            raise ValueError(f"policy params have dim {y.shape[0]}, features {self.features.shape[2]}")
        y.setflags(write=False)
        object.__setattr__(self, "params", y)
        logits = self.features @ y
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        # grad_y log pi(a|s) = psi(s, a) - E_{a'~pi}[psi(s, a')]
        glp = self.features - np.einsum("sa,sad->sd", p, self.features)[:, None, :]
        p.setflags(write=False)
        glp.setflags(write=False)
        object.__setattr__(self, "_probs", p)
        object.__setattr__(self, "_grad_log", glp)

    @classmethod
    def for_mdp(cls, mdp: CmdpSpec, params) -> "SoftmaxPolicy":
        return cls(params, mdp.policy_features)

    @property
    def probs(self) -> np.ndarray:
        return self._probs

    @property
    def grad_log(self) -> np.ndarray:
        """(S, A, d_p) table of score vectors."""
        return self._grad_log


@dataclass(frozen=True, eq=False)
class LinearClippedReward:
    """r_x(s, a) = clip(x . phi(s, a), -R, R)."""

    params: np.ndarray
    r_max: float

    def __post_init__(self):
        x = np.array(self.params, dtype=np.float64).reshape(-1)
        x.setflags(write=False)
        object.__setattr__(self, "params", x)

    def table(self, features: np.ndarray) -> np.ndarray:
        return np.clip(features @ self.params, -self.r_max, self.r_max)

    def grad_table(self, features: np.ndarray) -> np.ndarray:
        """d r_x / d x; zero where the clip is active (boundary included)."""
        raw = features @ self.params
        inside = np.abs(raw) < self.r_max
        return features * inside[..., None]


def reward_table(mdp: CmdpSpec, x) -> np.ndarray:
    return LinearClippedReward(x, mdp.r_max).table(mdp.reward_features)


def reward_grad_table(mdp: CmdpSpec, x) -> np.ndarray:
    return LinearClippedReward(x, mdp.r_max).grad_table(mdp.reward_features)


def _as_policy(mdp, policy) -> SoftmaxPolicy:
    if isinstance(policy, SoftmaxPolicy):
        return policy
    return SoftmaxPolicy.for_mdp(mdp, policy)


# ---------------------------------------------------------------- exact oracles

def state_action_kernel(mdp: CmdpSpec, policy) -> np.ndarray:
    """(SA, SA) matrix M[(s,a),(s',a')] = P(s'|s,a) pi(a'|s')."""
    pi = _as_policy(mdp, policy).probs
    S, A = mdp.n_states, mdp.n_actions
    return (mdp.transition[:, :, :, None] * pi[None, None, :, :]).reshape(S * A, S * A)


def exact_q(mdp: CmdpSpec, policy, signal) -> np.ndarray:
    """Solve (I - gamma P^pi) Q = signal over the |S||A| system."""
    signal = np.asarray(signal, dtype=np.float64)
    S, A = mdp.n_states, mdp.n_actions
    if signal.shape != (S, A) or not np.all(np.isfinite(signal)):
        raise ValueError("signal must be a finite (S, A) table")
    M = np.eye(S * A) - mdp.gamma * state_action_kernel(mdp, policy)
    b = signal.reshape(-1)
    try:
        q = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if np.max(np.abs(M @ q - b), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(b), initial=0.0)):
        raise SingularSystem("linear solve residual too large")
    return q.reshape(S, A)


def exact_state_occupancy(mdp: CmdpSpec, policy) -> np.ndarray:
    pi = _as_policy(mdp, policy).probs
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    S = mdp.n_states
    d = np.linalg.solve(np.eye(S) - mdp.gamma * P_pi.T, (1.0 - mdp.gamma) * mdp.initial_dist)
    return np.clip(d, 0.0, None)


def exact_occupancy(mdp: CmdpSpec, policy) -> np.ndarray:
    """Normalised discounted occupancy d(s, a) = (1-gamma) sum_t gamma^t Pr(s_t=s) pi(a|s)."""
    pi = _as_policy(mdp, policy).probs
    d = exact_state_occupancy(mdp, policy)[:, None] * pi
    return d / d.sum()


def occupancy_value(mdp: CmdpSpec, policy, signal) -> float:
    """E_{(s,a)~d^pi}[Q^pi_signal(s, a)]."""
    policy = _as_policy(mdp, policy)
    return float(np.sum(exact_occupancy(mdp, policy) * exact_q(mdp, policy, signal)))


def start_value(mdp: CmdpSpec, policy, signal) -> float:
    """E_{s0~init, a0~pi}[Q^pi_signal(s0, a0)] (the usual discounted return)."""
    policy = _as_policy(mdp, policy)
    q = exact_q(mdp, policy, signal)
    return float(np.sum(mdp.initial_dist[:, None] * policy.probs * q))


def truncated_start_value(mdp: CmdpSpec, policy, signal, H: int) -> float:
    """sum_{t<H} gamma^t E[signal(s_t, a_t)] from s0 ~ init by forward propagation."""
    pi = _as_policy(mdp, policy).probs
    signal = np.asarray(signal, dtype=np.float64)
    mu = mdp.initial_dist.copy()
    total, disc = 0.0, 1.0
    for _ in range(H):
        sa = mu[:, None] * pi
        total += disc * float(np.sum(sa * signal))
        mu = np.einsum("sa,sat->t", sa, mdp.transition)
        disc *= mdp.gamma
    return total


def score_gradient(mdp: CmdpSpec, policy, signal) -> np.ndarray:
    """E_{(s,a)~d^pi}[grad log pi(a|s) Q^pi(s, a)], equal to (1-gamma) grad_y V^pi(init)."""
    policy = _as_policy(mdp, policy)
    d = exact_occupancy(mdp, policy)
    q = exact_q(mdp, policy, signal)
    return np.einsum("sa,sad->d", d * q, policy.grad_log)


# ---------------------------------------------------------------- sampling

@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    log_prob_grad_accum: np.ndarray

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """N trajectories of length H: states/actions have shape (N, H)."""

    states: np.ndarray
    actions: np.ndarray
    log_prob_grad_accum: np.ndarray

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i) -> Trajectory:
        return Trajectory(self.states[i], self.actions[i], self.log_prob_grad_accum[i])


def _categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _step(mdp, s, a, rng):
    return _categorical(mdp.transition[s, a], rng.random(s.shape[0]))


def _act(pi, s, rng):
    return _categorical(pi[s], rng.random(s.shape[0]))


def sample_trajectories(mdp: CmdpSpec, policy, H: int, n: int, rng: np.random.Generator) -> TrajectoryBatch:
    if H < 1:
        raise ValueError("H must be >= 1")
    policy = _as_policy(mdp, policy)
    pi = policy.probs
    states = np.empty((n, H), dtype=np.int64)
    actions = np.empty((n, H), dtype=np.int64)
    s = _categorical(np.broadcast_to(mdp.initial_dist, (n, mdp.n_states)), rng.random(n))
    for t in range(H):
        a = _act(pi, s, rng)
        states[:, t], actions[:, t] = s, a
        if t + 1 < H:
            s = _step(mdp, s, a, rng)
    accum = policy.grad_log[states, actions].sum(axis=1)
    return TrajectoryBatch(states, actions, accum)


def sample_trajectory(mdp: CmdpSpec, policy, H: int, rng: np.random.Generator) -> Trajectory:
    return sample_trajectories(mdp, policy, H, 1, rng)[0]


def sample_occupancy_pairs(mdp: CmdpSpec, policy, H: int, n: int, rng: np.random.Generator):
    """Draw n (s, a) pairs approximately from d^pi.

    t ~ Geometric(1-gamma) on {0, 1, ...}, truncated at H-1, then roll out t steps.
    """
    if H < 1:
        raise ValueError("H must be >= 1")
    pi = _as_policy(mdp, policy).probs
    if mdp.gamma == 0.0:
        t_stop = np.zeros(n, dtype=np.int64)
    else:
        t_stop = np.minimum(rng.geometric(1.0 - mdp.gamma, size=n) - 1, H - 1)
    s = _categorical(np.broadcast_to(mdp.initial_dist, (n, mdp.n_states)), rng.random(n))
    a = _act(pi, s, rng)
    out_s, out_a = s.copy(), a.copy()
    for k in range(1, int(t_stop.max(initial=0)) + 1):
        s = _step(mdp, s, a, rng)
        a = _act(pi, s, rng)
        hit = t_stop == k
        out_s[hit], out_a[hit] = s[hit], a[hit]
    return out_s, out_a


def sample_occupancy_pair(mdp: CmdpSpec, policy, H: int, rng: np.random.Generator) -> tuple[int, int]:
    s, a = sample_occupancy_pairs(mdp, policy, H, 1, rng)
    return int(s[0]), int(a[0])


def mc_q_estimates(mdp: CmdpSpec, policy, signal, s, a, H: int, n_rollouts: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Truncated Monte-Carlo Q estimates for each (s[i], a[i]), averaged over n_rollouts."""
    if H < 1 or n_rollouts < 1:
        raise ValueError("H and n_rollouts must be >= 1")
    pi = _as_policy(mdp, policy).probs
    signal = np.asarray(signal, dtype=np.float64)
    s0 = np.repeat(np.asarray(s, dtype=np.int64), n_rollouts)
    a0 = np.repeat(np.asarray(a, dtype=np.int64), n_rollouts)
    ret = signal[s0, a0].copy()
    st, at, disc = s0, a0, 1.0
    for _ in range(1, H):
        st = _step(mdp, st, at, rng)
        at = _act(pi, st, rng)
        disc *= mdp.gamma
        ret += disc * signal[st, at]
    return ret.reshape(-1, n_rollouts).mean(axis=1)


def mc_q_estimate(mdp, policy, signal, s, a, H, n_rollouts, rng) -> float:
    return float(mc_q_estimates(mdp, policy, signal, [s], [a], H, n_rollouts, rng)[0])


def truncation_bias(gamma: float, H: int, signal_max: float) -> float:
    """Upper bound gamma^H max|signal| / (1-gamma) on the rollout truncation error."""
    return gamma ** H * signal_max / (1.0 - gamma)


# ---------------------------------------------------------------- generation / files

def random_cmdp(seed: int, n_states=5, n_actions=3, d_r=3, d_p=4, gamma=0.9, c0=0.0,
                r_max=1.0, dirichlet_alpha=1.0) -> CmdpSpec:
    """Random CMDP: Dirichlet transition rows, uniform [-1, 1] features and costs in [0, 1]."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(n_states, dirichlet_alpha), size=(n_states, n_actions))
    cost = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    init = rng.dirichlet(np.ones(n_states))
    phi = rng.uniform(-1.0, 1.0, size=(n_states, n_actions, d_r))
    psi = rng.uniform(-1.0, 1.0, size=(n_states, n_actions, d_p))
    return CmdpSpec(P, cost, gamma, init, c0, phi, psi, r_max)


def _fmt(arr) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(arr).reshape(-1))


def save_cmdp(mdp: CmdpSpec, path) -> None:
    """Write a CMDP definition file (INI section ``[cmdp]``, row-major tables)."""
    cp = configparser.ConfigParser()
    cp["cmdp"] = {
        "n_states": str(mdp.n_states),
        "n_actions": str(mdp.n_actions),
        "d_r": str(mdp.d_r),
        "d_p": str(mdp.d_p),
        "gamma": repr(mdp.gamma),
        "c0": repr(mdp.c0),
        "r_max": repr(mdp.r_max),
        "initial_dist": _fmt(mdp.initial_dist),
        "transition": _fmt(mdp.transition),
        "cost": _fmt(mdp.cost),
        "reward_features": _fmt(mdp.reward_features),
        "policy_features": _fmt(mdp.policy_features),
    }
    with open(path, "w") as fh:
        cp.write(fh)


def load_cmdp(path) -> CmdpSpec:
    cp = configparser.ConfigParser()
    if not cp.read(Path(path)):
        raise FileNotFoundError(path)
    sec = cp["cmdp"]
    S, A = sec.getint("n_states"), sec.getint("n_actions")
    d_r, d_p = sec.getint("d_r"), sec.getint("d_p")

    def arr(key, shape):
        vals = np.array([float(v) for v in sec[key].split()])
        if vals.size != int(np.prod(shape)):
            raise InvalidCmdp(f"{key}: expected {int(np.prod(shape))} numbers, got {vals.size}")
        return vals.reshape(shape)

    return CmdpSpec(
        arr("transition", (S, A, S)), arr("cost", (S, A)), sec.getfloat("gamma"),
        arr("initial_dist", (S,)), sec.getfloat("c0"),
        arr("reward_features", (S, A, d_r)), arr("policy_features", (S, A, d_p)),
        sec.getfloat("r_max", 1.0),
    )
