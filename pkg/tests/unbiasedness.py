"""Shared harness for the estimator unbiasedness checks (used by unit and acceptance tests)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cbso import cmdp as C
from cbso import estimators as E
from cbso import objectives as O
from cbso.core import make_stream


@dataclass
class UnbiasednessResult:
    name: str
    mean: np.ndarray
    stderr: np.ndarray
    exact: np.ndarray
    fd: np.ndarray
    bias: float

    def max_excess(self, target) -> float:
        """max_i |mean - target| - (3 se + bias); <= 0 means pass."""
        return float(np.max(np.abs(self.mean - target) - (3 * self.stderr + self.bias)))

    @property
    def passed(self) -> bool:
        return self.max_excess(self.exact) <= 0 and self.max_excess(self.fd) <= 0


def central_fd(fn, v, eps=1e-5):
    v = np.asarray(v, dtype=np.float64)
    return np.array([(fn(v + eps * e) - fn(v - eps * e)) / (2 * eps) for e in np.eye(v.size)])


def setup(seed=11):
    mdp = C.random_cmdp(seed, n_states=5, n_actions=3, d_r=3, d_p=4, gamma=0.9)
    rng = make_stream(seed, "unbiased_setup")
    x = rng.uniform(-0.4, 0.4, mdp.d_r)  # small enough that no reward entry is clipped
    y = rng.normal(0.0, 0.7, mdp.d_p)
    ann = O.Annotator(np.array([1.0, -0.5, 0.8]), "bt")
    return mdp, x, y, ann


def _batched(draw, n, B):
    """Mean and stderr over n/B independent batch means of size B."""
    means = np.array([draw(i) for i in range(n // B)])
    return means.mean(axis=0), means.std(axis=0, ddof=1) / np.sqrt(means.shape[0])


def check_grad_y_f(n=100_000, B=1000, seed=11, H=2) -> UnbiasednessResult:
    mdp, x, y, ann = setup(seed)
    mean, se = _batched(lambda i: E.grad_y_f_hat(mdp, x, y, B, H, ann, make_stream(seed, "yf", i)).vector, n, B)
    fd = central_fd(lambda v: O.exact_outer_loss(mdp, x, v, H, ann), y)
    return UnbiasednessResult("grad_y_f_hat", mean, se, fd, fd, 0.0)


def check_grad_y_g(n=100_000, B=1000, seed=11, H=100) -> UnbiasednessResult:
    mdp, x, y, _ = setup(seed)
    pol = C.SoftmaxPolicy.for_mdp(mdp, y)
    r = C.reward_table(mdp, x)
    mean, se = _batched(lambda i: E.grad_y_g_hat(mdp, x, y, B, H, 0.0, pol, make_stream(seed, "yg", i)).vector,
                        n, B)
    exact = -C.score_gradient(mdp, pol, r)
    fd = central_fd(lambda v: -(1 - mdp.gamma) * C.start_value(mdp, C.SoftmaxPolicy.for_mdp(mdp, v), r), y)
    return UnbiasednessResult("grad_y_g_hat", mean, se, exact, fd, C.truncation_bias(mdp.gamma, H, np.abs(r).max()))


def check_subgrad_y_hplus(n=100_000, B=1000, seed=11, H=100) -> UnbiasednessResult:
    mdp, _, y, _ = setup(seed)
    pol = C.SoftmaxPolicy.for_mdp(mdp, y)
    c0 = -1.0  # costs are >= 0, so the policy is deeply infeasible and tau = 1

    def draw(i):
        s = E.subgrad_y_hplus_hat(mdp, y, B, H, c0, make_stream(seed, "yh", i))
        assert s.tau == 1.0
        return s.vector

    mean, se = _batched(draw, n, B)
    exact = C.score_gradient(mdp, pol, mdp.cost)
    fd = central_fd(lambda v: (1 - mdp.gamma) * C.start_value(mdp, C.SoftmaxPolicy.for_mdp(mdp, v), mdp.cost), y)
    return UnbiasednessResult("subgrad_y_hplus_hat", mean, se, exact, fd,
                              C.truncation_bias(mdp.gamma, H, np.abs(mdp.cost).max()))


def check_grad_x_f(n=100_000, B=1000, seed=11, H=2) -> UnbiasednessResult:
    mdp, x, y, ann = setup(seed)

    def draw(i):
        pairs = O.sample_preferences(mdp, y, H, B, ann, make_stream(seed, "xf", i))
        return E.grad_x_f_hat(mdp, x, pairs).vector

    mean, se = _batched(draw, n, B)
    exact = O.exact_outer_loss_grad_x(mdp, x, y, H, ann)
    fd = central_fd(lambda v: O.exact_outer_loss(mdp, v, y, H, ann), x)
    return UnbiasednessResult("grad_x_f_hat", mean, se, exact, fd, 0.0)


def check_grad_x_g(n=100_000, B=1000, seed=11, H=100) -> UnbiasednessResult:
    mdp, x, y, _ = setup(seed)
    pol = C.SoftmaxPolicy.for_mdp(mdp, y)
    mean, se = _batched(lambda i: E.grad_x_g_hat(mdp, x, y, B, H, make_stream(seed, "xg", i)).vector, n, B)
    # reward is linear in x where unclipped: grad_x V = V of the feature signals
    exact = -np.array([C.start_value(mdp, pol, mdp.reward_features[:, :, k]) for k in range(mdp.d_r)])
    fd = central_fd(lambda v: -C.start_value(mdp, pol, C.reward_table(mdp, v)), x)
    phi_max = float(np.abs(mdp.reward_features).max())
    return UnbiasednessResult("grad_x_g_hat", mean, se, exact, fd, C.truncation_bias(mdp.gamma, H, phi_max))


CHECKS = {
    "grad_y_f_hat": check_grad_y_f,
    "grad_y_g_hat": check_grad_y_g,
    "subgrad_y_hplus_hat": check_subgrad_y_hplus,
    "grad_x_f_hat": check_grad_x_f,
    "grad_x_g_hat": check_grad_x_g,
}
