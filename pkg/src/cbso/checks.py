"""Named property-check suites assembled from :mod:`cbso.analysis`."""
from __future__ import annotations

import numpy as np

from . import analysis as an
from .cmdp import random_cmdp
from .core import make_stream, validate_penalty_coefficients
from .synthetic import make_problem

TAU_OFFSETS = (-1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 1.5)  # in units of the B=16 standard error


def _points(lo, hi, n, seed, tag):
    return make_stream(seed, tag).uniform(lo, hi, size=n)


def suite_envelope_gap(seed=0, planted=False) -> an.CheckReport:
    rep = an.CheckReport()
    cat = an.CATALOG_FUNCTIONS
    pts = _points(-3, 3, 100, seed, "gap_points")
    if planted:
        # |v| is 1-Lipschitz; declaring L=0.5 must fail for |x| >= lambda
        return rep.extend(an.check_envelope_gap(cat["abs"].value, 0.5, 0.5, pts, subgrad=cat["abs"].subgrad,
                                                name="envelope_gap:abs_wrong_L"))
    rep.extend(an.check_envelope_gap(cat["abs"].value, 1.0, 0.5, pts, subgrad=cat["abs"].subgrad,
                                     name="envelope_gap:abs"))
    rep.extend(an.check_envelope_gap(cat["sin"].value, 1.0, 0.5, _points(-10, 10, 100, seed, "gap_sin"),
                                     subgrad=cat["sin"].subgrad, name="envelope_gap:sin"))
    rep.extend(check_piecewise_linear_gap(seed))
    return rep


def random_piecewise_linear(seed, n_knots=12, lo=-3.0, hi=3.0):
    """Continuous piecewise-linear function with random slopes; returns (f, L)."""
    rng = make_stream(seed, "pwl")
    knots = np.sort(rng.uniform(lo, hi, n_knots))
    slopes = rng.uniform(-2.0, 2.0, n_knots + 1)
    vals = np.concatenate([[0.0], np.cumsum(slopes[1:-1] * np.diff(knots))])

    def f(v):
        v = np.asarray(v, dtype=np.float64)
        out = np.interp(v, knots, vals)
        out = np.where(v < knots[0], vals[0] + slopes[0] * (v - knots[0]), out)
        return np.where(v > knots[-1], vals[-1] + slopes[-1] * (v - knots[-1]), out)

    return f, float(np.max(np.abs(slopes)))


def check_piecewise_linear_gap(seed=0, lam=0.5) -> an.CheckReport:
    """Gap f - f_lam against a dense-grid envelope (no prox solver involved)."""
    f, L = random_piecewise_linear(seed)
    grid = np.linspace(-12.0, 12.0, 240001)
    q = np.linspace(-3.0, 3.0, 101)
    env = an.grid_envelope(f(grid), grid, q, lam)
    gap = float(np.max(f(q) - env))
    bound = 0.5 * L ** 2 * lam + 1e-6
    return an.CheckReport().add("envelope_gap:piecewise_linear", gap, bound, gap <= bound)


def suite_hypomonotonicity(seed=0, n_pairs=10_000) -> an.CheckReport:
    rep = an.CheckReport()
    for name in ("sin", "quadratic", "neg_quadratic", "double_well", "pl_sine"):
        fn = an.CATALOG_FUNCTIONS[name]
        lo, hi = fn.region
        rho = an.estimate_hypomonotonicity(fn.subgrad, an.box_pair_sampler(lo, hi), n_pairs,
                                           make_stream(seed, "hypo", len(name)))
        bound = (fn.smooth_L if fn.smooth_L is not None else fn.rho) + 1e-6
        rep.add(f"hypomonotonicity:{name}", rho, bound, rho <= bound)
    return rep


def suite_argmin(seed=0) -> an.CheckReport:
    rep = an.CheckReport()
    for name, lam in (("double_well", 0.1), ("quadratic", 0.5), ("abs", 0.5), ("pl_sine", 0.1)):
        fn = an.CATALOG_FUNCTIONS[name]
        lo, hi = fn.region
        rep.extend(an.check_argmin_equivalence(fn.value, lam, [np.linspace(lo, hi, 4001)], name=f"argmin:{name}"))
    ax = np.linspace(-2.0, 2.0, 201)
    rep.extend(an.check_argmin_equivalence(an.CATALOG_FUNCTIONS["double_well"].value, 0.1, [ax, ax],
                                           name="argmin:double_well_2d"))
    return rep


def cross_lipschitz_p1(seed, n_pairs=4000):
    """L_hat of d_x h1 in y on P1 at x=1, plus the analytic bound L_f' + L_g'/sigma1."""
    p = make_problem("P1")
    c = validate_penalty_coefficients(0.1, 0.01, 1.0, p.c0)

    def dxh1(x, y):
        return p.f_x(x, y) + p.g_x(x, y) / c.sigma1

    lo, hi = p.y_box[0]
    res = an.check_cross_lipschitz(dxh1, np.array([1.0]), an.local_pair_sampler(lo, hi, 1, 0.05), n_pairs,
                                   make_stream(seed, "cross_lip"))
    # g_x = -2(y^2 - x) has |d/dy| = 4|y| <= 8 on the box; f_x = 0
    return res, an.cross_lipschitz_bound(0.0, 8.0, c.sigma1)


def suite_cross_lipschitz(seed=0, n_seeds=5) -> an.CheckReport:
    vals = []
    for s in range(seed, seed + n_seeds):
        res, bound = cross_lipschitz_p1(s)
        vals.append(res.L_hat)
    vals = np.array(vals)
    spread = float((vals.max() - vals.min()) / vals.mean())
    rep = an.CheckReport()
    rep.add("cross_lipschitz:P1_finite_below_bound", float(vals.max()), bound + 1e-6,
            bool(np.all(np.isfinite(vals))) and vals.max() <= bound + 1e-6)
    rep.add("cross_lipschitz:P1_seed_spread", spread, 0.10, spread <= 0.10)
    return rep


def suite_pl(seed=0) -> an.CheckReport:
    rep = an.CheckReport()
    for name in ("quadratic", "pl_sine"):
        fn = an.CATALOG_FUNCTIONS[name]
        rep.extend(an.check_envelope_pl(fn, 0.1, _points(*fn.region, 50, seed, "pl")))
    return rep


def suite_continuity(seed=0) -> an.CheckReport:
    rep = an.CheckReport()
    for name in ("quadratic", "abs", "sin", "double_well", "pl_sine"):
        fn = an.CATALOG_FUNCTIONS[name]
        lam = 0.5 / fn.rho if fn.rho > 0 else 0.5
        rep.extend(an.check_envelope_continuity(fn, lam, _points(*fn.region, 30, seed, "cont")))
    return rep


def tau_sweep(seed=0, trials=1000, batch_sizes=(16, 256), H=150):
    mdp = random_cmdp(3, n_states=5, n_actions=3, gamma=0.9)
    y = make_stream(seed, "tau_y").normal(0.0, 1.0, mdp.d_p)
    rng = make_stream(seed, "tau_sd")
    # one pilot table to fix the offset unit, then the real sweep on a fresh stream
    pilot = an.tau_mismatch_rate(mdp, y, [0.0], (16,), 100, H, rng)
    unit = pilot.sample_sd / np.sqrt(16)
    offsets = np.array(TAU_OFFSETS) * unit
    return an.tau_mismatch_rate(mdp, y, offsets, batch_sizes, trials, H, make_stream(seed, "tau_sweep"))


def suite_tau(seed=0) -> an.CheckReport:
    table = tau_sweep(seed)
    rep = an.CheckReport()
    for i, off in enumerate(table.offsets):
        small, large = table.rates[i, 0], table.rates[i, -1]
        rep.add(f"tau_mismatch:offset={off:+.4f}", large, small, large <= small,
                f"B={table.batch_sizes[0]}: {small:.3f}, B={table.batch_sizes[-1]}: {large:.3f}")
    return rep


SUITES = {
    "envelope_gap": suite_envelope_gap,
    "hypomonotonicity": suite_hypomonotonicity,
    "argmin": suite_argmin,
    "cross_lipschitz": suite_cross_lipschitz,
    "pl": suite_pl,
    "continuity": suite_continuity,
    "tau": suite_tau,
    "planted": lambda seed=0: suite_envelope_gap(seed, planted=True),
}

DEFAULT_SUITE = ("envelope_gap", "hypomonotonicity", "argmin", "cross_lipschitz", "pl", "continuity", "tau")


def run_suites(names, seed=0) -> an.CheckReport:
    rep = an.CheckReport()
    for n in names:
        if n not in SUITES:
            raise KeyError(f"unknown check suite {n!r}")
        rep.extend(SUITES[n](seed=seed))
    return rep


def parse_suite(spec: str):
    """``default``, ``none`` or a comma-separated list of suite names."""
    if spec == "default":
        return list(DEFAULT_SUITE)
    if spec in ("none", ""):
        return []
    return [s.strip() for s in spec.split(",") if s.strip()]
