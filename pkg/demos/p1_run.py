"""P1 end to end: grid oracle, one CBSO run, envelope probes and the rate fit.

Run: python3 demos/p1_run.py [seed]
"""
from __future__ import annotations

import sys

import numpy as np

from cbso.analysis import BoxMoreauProbe, fit_rate, running_average
from cbso.config import build_experiment, resolve_config, shipped_config
from cbso.core import violation_terms
from cbso.driver import with_overrides, run_cbso
from cbso.synthetic import PhiEvaluator, cached_grid_oracle, sup_norms

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
exp = build_experiment(resolve_config(text=shipped_config("p1_reference.ini"), overrides=[f"run.seed={seed}"]))
p = exp.problem.problem
coeffs = exp.cfg.coeffs

# ground truth first: brute-force both inner problems on a grid
oracle = cached_grid_oracle("P1", 201, 2001, (coeffs.sigma1, coeffs.sigma2, coeffs.sigma3))
print(f"grid oracle: penalized optimum x = {oracle.best_x[0]:.4f}, original optimum x = {oracle.best_x_original[0]:.4f}")

# probe the Moreau envelope of Phi at every outer step
probe = BoxMoreauProbe(PhiEvaluator(p, coeffs).value, p.x_box, lam=1.0)
st = run_cbso(with_overrides(exp.cfg, probe_every=1), exp.problem, exp.x0, exp.y0, exp.z0, probe=probe)
print(f"x_T = {st.x[0]:.4f}, y_T = {st.y[0]:.4f}, z_T = {st.z[0]:.4f}")

c_f, c_g, _ = sup_norms(p)
bounds = violation_terms(c_f, c_g, coeffs)
measured = (float(p.h_plus(st.z)), abs(float(p.g(st.x, st.y) - p.g(st.x, st.z))), float(p.h_plus(st.y)))
for name, m, b in zip(("h+(z)", "g gap", "h+(y)"), measured, bounds):
    print(f"  {name:6s} {m:.3e}  bound {b:.3e}")

sq = np.array([r.envelope_grad_norm for r in st.log]) ** 2
ra = running_average(sq)
fit = fit_rate(list(zip(range(1, len(ra) + 1), ra)), (20, len(ra)))
print(f"running mean of |grad Phi_lam|^2: t=20 {ra[19]:.3e}, t={len(ra)} {ra[-1]:.3e}; log-log slope {fit.slope:.3f}")
