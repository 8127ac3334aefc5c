"""Adapters exposing the two tracks to the CBSO driver.

A problem provides ``subgrad_y_h1``, ``subgrad_y_h2``, ``outer_grad``,
``evaluate`` and ``project``; see :class:`SyntheticBilevel` for the contract.
"""
from __future__ import annotations

import numpy as np

from . import cmdp as _cmdp
from . import estimators as est
from .cmdp import CmdpSpec, SoftmaxPolicy
from .core import PenaltyCoefficients
from .objectives import Annotator, constraint_h_exact, hinge, inner_g_exact, outer_loss_f, sample_preferences
from .synthetic import SyntheticProblem, noisy_grad


class SyntheticBilevel:
    """CBSO view of a :class:`SyntheticProblem`; iterates are clipped to the domain boxes."""

    track = "synthetic"

    def __init__(self, problem: SyntheticProblem):
        self.problem = problem
        self.d_x, self.d_y = problem.d_x, problem.d_y

    def project(self, which, v):
        box = self.problem.x_box if which == "x" else self.problem.y_box
        return np.clip(v, box[:, 0], box[:, 1])

    def subgrad_y_h1(self, x, y, coeffs: PenaltyCoefficients, B, rng) -> est.SubgradientSample:
        p = self.problem
        fy = noisy_grad(p, "f_y", x, y, rng, B)
        gy = noisy_grad(p, "g_y", x, y, rng, B)
        hy = noisy_grad(p, "h_plus_y", x, y, rng, B)
        vec = est.combine_y_h1(fy, gy, hy, coeffs)
        return est.SubgradientSample(vec, B, 0, tau=float(p.tau(y)),
                                     extras={"h1": float(p.h1(x, y, coeffs))})

    def subgrad_y_h2(self, x, z, coeffs, B, rng) -> est.SubgradientSample:
        p = self.problem
        gz = noisy_grad(p, "g_y", x, z, rng, B)
        hz = noisy_grad(p, "h_plus_y", x, z, rng, B)
        vec = est.combine_y_h2(gz, hz, coeffs)
        return est.SubgradientSample(vec, B, 0, tau=float(p.tau(z)),
                                     extras={"h2": float(p.h2(x, z, coeffs))})

    def outer_grad(self, x, y, z, coeffs, B, rng) -> est.SubgradientSample:
        p = self.problem
        fx = noisy_grad(p, "f_x", x, y, rng, B)
        gxy = noisy_grad(p, "g_x", x, y, rng, B)
        gxz = noisy_grad(p, "g_x", x, z, rng, B)
        return est.SubgradientSample(est.combine_x_phi(fx, gxy, gxz, coeffs.sigma1), B, 0)

    def evaluate(self, x, y, z, coeffs, rng=None) -> dict:
        p = self.problem
        return {
            "h_of_y": float(p.h(y)),
            "h1": float(p.h1(x, y, coeffs)),
            "h2": float(p.h2(x, z, coeffs)),
            "f": float(p.f(x, y)),
            "g_y": float(p.g(x, y)),
            "g_z": float(p.g(x, z)),
            "h_plus_y": float(p.h_plus(y)),
            "h_plus_z": float(p.h_plus(z)),
        }


class RlhfCmdpBilevel:
    """Reward learning from preferences on a tabular CMDP with a cost constraint.

    x parameterises the learned reward, y and z the softmax policy. Preference
    labels come from ``annotator`` (hidden true reward). Trajectories, rollouts
    and preference pairs all use horizon ``H``.
    """

    track = "cmdp_rlhf"

    def __init__(self, mdp: CmdpSpec, annotator: Annotator, H: int, beta=0.0, y_ref=None,
                 n_rollouts=1, baseline="loo", eval_pairs=64):
        self.mdp = mdp
        self.annotator = annotator
        self.H = H
        self.beta = beta
        self.y_ref = np.zeros(mdp.d_p) if y_ref is None else np.asarray(y_ref, dtype=np.float64)
        self.pi_ref = SoftmaxPolicy.for_mdp(mdp, self.y_ref)
        self.n_rollouts = n_rollouts
        self.baseline = baseline
        self.eval_pairs = eval_pairs
        self.d_x, self.d_y = mdp.d_r, mdp.d_p

    def project(self, which, v):
        return v

    def subgrad_y_h1(self, x, y, coeffs, B, rng):
        s = est.subgrad_y_h1_hat(self.mdp, x, y, coeffs, B, self.H, self.beta, self.pi_ref,
                                 self.annotator, rng, self.n_rollouts, self.baseline)
        fs, gs, hs = s.extras.pop("parts")
        s.extras["h1"] = float(fs.extras["f_hat"] + (-gs.extras["g_q_mean"]
                                                    + hinge(hs.extras["h_hat"], coeffs.c0) / coeffs.sigma3)
                               / coeffs.sigma1)
        return s

    def subgrad_y_h2(self, x, z, coeffs, B, rng):
        s = est.subgrad_y_h2_hat(self.mdp, x, z, coeffs, B, self.H, self.beta, self.pi_ref, rng,
                                 self.n_rollouts)
        gs, hs = s.extras.pop("parts")
        s.extras["h2"] = float(-gs.extras["g_q_mean"] + hinge(hs.extras["h_hat"], coeffs.c0) / coeffs.sigma2)
        return s

    def outer_grad(self, x, y, z, coeffs, B, rng):
        return est.grad_x_phi_hat(self.mdp, x, y, z, coeffs, B, self.H, self.annotator, rng)

    def true_value(self, y) -> float:
        """E_{d^pi_y}[Q_{r_true}] (exact)."""
        r = _cmdp.reward_table(self.mdp, self.annotator.x_true)
        return _cmdp.occupancy_value(self.mdp, SoftmaxPolicy.for_mdp(self.mdp, y), r)

    def evaluate(self, x, y, z, coeffs, rng=None) -> dict:
        """Exact g, h, h+; f is a preference-batch estimate (exact f needs trajectory enumeration)."""
        mdp = self.mdp
        h_y = constraint_h_exact(mdp, y)
        h_z = constraint_h_exact(mdp, z)
        g_y = inner_g_exact(mdp, x, y, self.beta, self.pi_ref)
        g_z = inner_g_exact(mdp, x, z, self.beta, self.pi_ref)
        rng = rng if rng is not None else np.random.default_rng(0)
        f = outer_loss_f(mdp, x, sample_preferences(mdp, y, self.H, self.eval_pairs, self.annotator, rng))
        hp_y, hp_z = hinge(h_y, mdp.c0), hinge(h_z, mdp.c0)
        return {
            "h_of_y": h_y,
            "h1": f + (g_y + hp_y / coeffs.sigma3) / coeffs.sigma1,
            "h2": g_z + hp_z / coeffs.sigma2,
            "f": f,
            "g_y": g_y,
            "g_z": g_z,
            "h_plus_y": hp_y,
            "h_plus_z": hp_z,
            "true_value_y": self.true_value(y),
        }
