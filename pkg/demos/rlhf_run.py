"""Reward learning from Bradley-Terry preferences on a 6-state CMDP with a cost cap.

Run: python3 demos/rlhf_run.py [seed] [T]
"""
from __future__ import annotations

import sys

import numpy as np
from scipy import optimize

from cbso.config import build_experiment, resolve_config, shipped_config
from cbso.driver import run_cbso
from cbso.objectives import constraint_h_exact

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
T = int(sys.argv[2]) if len(sys.argv) > 2 else 300
exp = build_experiment(resolve_config(text=shipped_config("rlhf_reference.ini"),
                                      overrides=[f"run.seed={seed}", f"run.T={T}"]))
prob, mdp = exp.problem, exp.problem.mdp
print(f"c0 = {mdp.c0:.4f} (cost of the uniform policy), hidden reward {prob.annotator.x_true}")


def report(rec):
    if rec.t % 50 == 0:
        print(f"t={rec.t:4d}  x={np.round(rec.extras['x'], 3)}  true value {rec.extras['true_value_y']:.3f}"
              f"  h-c0 {rec.h_of_y - mdp.c0:+.3f}")


st = run_cbso(exp.cfg, prob, exp.x0, exp.y0, exp.z0, on_record=report)

# attainable gap: best exact value among constrained SLSQP multistarts
rng = np.random.default_rng(0)
best = -np.inf
for _ in range(10):
    r = optimize.minimize(lambda y: -prob.true_value(y), rng.normal(0.0, 1.0, mdp.d_p), method="SLSQP",
                          constraints=[{"type": "ineq", "fun": lambda y: mdp.c0 - constraint_h_exact(mdp, y)}])
    if constraint_h_exact(mdp, r.x) <= mdp.c0 + 1e-6:
        best = max(best, prob.true_value(r.x))
v0, vT = prob.true_value(exp.y0), prob.true_value(st.y)
print(f"initial {v0:.3f}, final {vT:.3f}, constrained best {best:.3f}: {100 * (vT - v0) / (best - v0):.0f}% of the gap")
print(f"final h - c0 = {constraint_h_exact(mdp, st.y) - mdp.c0:+.4f}")
