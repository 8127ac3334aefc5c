"""Numerical checks: Moreau envelope probes, weak-convexity estimates, rate fits.

Objectives passed to these routines are plain callables ``f(v) -> float`` on
1-D numpy arrays, optionally paired with a subgradient callable.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage, optimize

from .core import CbsoError


class Diverged(CbsoError, FloatingPointError):
    pass


class EmptyWindow(CbsoError, ValueError):
    pass


# ---------------------------------------------------------------- prox / envelope

@dataclass(frozen=True)
class ProxSolverConfig:
    max_iter: int = 500
    step_scale: Optional[float] = None  # defaults to lambda
    polish: bool = True
    bound: float = 1e8
    fd_step: float = 1e-7


@dataclass(frozen=True, eq=False)
class MoreauProbeResult:
    query_point: np.ndarray
    lam: float
    prox_point: np.ndarray
    envelope_value: float
    envelope_grad_norm: float
    solver_iters: int
    residual: float

    def recomputed_grad_norm(self) -> float:
        return float(np.linalg.norm(self.query_point - self.prox_point)) / self.lam


def _fd_subgrad(f, h):
    def sg(v):
        g = np.empty_like(v)
        for i in range(v.size):
            e = np.zeros_like(v)
            e[i] = h
            g[i] = (f(v + e) - f(v - e)) / (2 * h)
        return g
    return sg


def prox_point(objective: Callable, x, lam: float, solver_cfg: ProxSolverConfig = ProxSolverConfig(),
               subgrad: Optional[Callable] = None) -> MoreauProbeResult:
    """Approximate argmin_v f(v) + |x - v|^2/(2 lam).

    Subgradient descent from x with steps c/(k+1), best-iterate tracking, then an
    optional polish: bounded Brent in 1-D, finished by bisection on the optimality
    condition when a subgradient is supplied, Nelder-Mead otherwise.
    ``residual`` is the size of the last solver move (or final bracket).
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    has_subgrad = subgrad is not None
    subgrad = subgrad or _fd_subgrad(objective, solver_cfg.fd_step)
    c = solver_cfg.step_scale if solver_cfg.step_scale is not None else lam

    def F(v):
        return float(objective(v)) + float(np.dot(x - v, x - v)) / (2 * lam)

    v = x.copy()
    best, best_val = v.copy(), F(v)
    residual = 0.0
    it = 0
    for it in range(1, solver_cfg.max_iter + 1):
        g = np.asarray(subgrad(v), dtype=np.float64).reshape(-1) + (v - x) / lam
        v_new = v - (c / it) * g
        if not np.all(np.isfinite(v_new)) or np.linalg.norm(v_new) > solver_cfg.bound:
            raise Diverged(f"prox iterate left the bound after {it} steps")
        residual = float(np.linalg.norm(v_new - v))
        v = v_new
        val = F(v)
        if val < best_val:
            best, best_val = v.copy(), val
        if residual == 0.0:
            break
    if solver_cfg.polish:
        if x.size == 1:
            r = max(residual, 1e-6, float(np.abs(best - x)[0]) * 1e-3)
            lo, hi = best[0] - 10 * r, best[0] + 10 * r
            res = optimize.minimize_scalar(lambda u: F(np.array([u])), bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-13})
            cand = np.array([res.x])
            move = 2e-13
            if has_subgrad:
                cand, move = _bisect_optimality(subgrad, x, lam, lo, hi, cand, move)
        else:
            res = optimize.minimize(F, best, method="Nelder-Mead",
                                    options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 4000})
            cand = res.x
            move = float(np.max(np.abs(res.final_simplex[0] - res.final_simplex[0][0])))
        if F(cand) <= best_val + 4 * np.finfo(float).eps * max(1.0, abs(best_val)):
            best, best_val, residual = cand, F(cand), move
    env_grad = float(np.linalg.norm(x - best)) / lam
    return MoreauProbeResult(x, lam, best, best_val, env_grad, it, residual)


def _bisect_optimality(subgrad, x, lam, lo, hi, cand, move):
    """Bisect G(v) = subgrad(v) + (v - x)/lam on [lo, hi] when it changes sign there.

    Value-based polishing stalls near sqrt(eps) relative accuracy; G is monotone
    for lam < 1/rho, so bisection resolves the prox (or a kink) to machine precision.
    """
    def G(u):
        return float(np.asarray(subgrad(np.array([u]))).reshape(-1)[0]) + (u - x[0]) / lam

    if not (G(lo) < 0.0 < G(hi)):
        return cand, move
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if G(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return np.array([0.5 * (lo + hi)]), hi - lo


def grid_envelope(objective_values: np.ndarray, grid: np.ndarray, query: np.ndarray, lam: float):
    """Brute-force envelope on a 1-D grid: min_j f(g_j) + (q - g_j)^2/(2 lam), per query."""
    query = np.atleast_1d(query)
    env = np.empty(query.shape[0])
    for start in range(0, query.shape[0], 512):
        q = query[start:start + 512, None]
        env[start:start + 512] = np.min(objective_values[None, :] + (q - grid[None, :]) ** 2 / (2 * lam), axis=1)
    return env


# ---------------------------------------------------------------- reports

@dataclass
class CheckRow:
    name: str
    measured: float
    bound: float
    passed: bool
    detail: str = ""


@dataclass
class CheckReport:
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def add(self, name, measured, bound, passed, detail=""):
        self.rows.append(CheckRow(name, float(measured), float(bound), bool(passed), detail))
        return self

    def extend(self, other: "CheckReport"):
        self.rows.extend(other.rows)
        return self

    def to_table(self, delimiter=",") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        w.writerow(["check", "measured", "bound", "verdict"])
        for r in self.rows:
            w.writerow([r.name, format(r.measured, ".17g"), format(r.bound, ".17g"),
                        "pass" if r.passed else "fail"])
        return buf.getvalue()


def check_envelope_gap(objective: Callable, lipschitz_L: float, lam: float, sample_points,
                       solver_cfg: ProxSolverConfig = ProxSolverConfig(), subgrad=None, tol=1e-6,
                       name="envelope_gap") -> CheckReport:
    """f(x) - f_lam(x) <= L^2 lam / 2 at every sample point."""
    bound = 0.5 * lipschitz_L ** 2 * lam
    worst, worst_at = -np.inf, None
    for p in sample_points:
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        res = prox_point(objective, p, lam, solver_cfg, subgrad)
        gap = float(objective(p)) - res.envelope_value
        if gap > worst:
            worst, worst_at = gap, p
    return CheckReport().add(name, worst, bound + tol, worst <= bound + tol, f"worst at {worst_at}")


def estimate_hypomonotonicity(subgrad: Callable, sampler: Callable, n_pairs: int, rng) -> float:
    """max over sampled pairs of -<g_a - g_b, a - b>/|a - b|^2, clamped below at 0.

    ``sampler(rng)`` returns a pair (a, b); pairs closer than 1e-10 are skipped.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rho = 0.0
    for _ in range(n_pairs):
        a, b = sampler(rng)
        a, b = np.atleast_1d(a).astype(np.float64), np.atleast_1d(b).astype(np.float64)
        d = a - b
        nd2 = float(np.dot(d, d))
        if nd2 < 1e-20:
            continue
        ga = np.atleast_1d(subgrad(a))
        gb = np.atleast_1d(subgrad(b))
        rho = max(rho, -float(np.dot(ga - gb, d)) / nd2)
    return rho


def box_pair_sampler(lo, hi, dim=1):
    def sampler(rng):
        return rng.uniform(lo, hi, size=dim), rng.uniform(lo, hi, size=dim)
    return sampler


def envelope_on_grid(values: np.ndarray, axes, lam: float) -> np.ndarray:
    """Exact-on-grid inf-convolution of grid values with |.|^2/(2 lam) (1-D or 2-D)."""
    if len(axes) == 1:
        return grid_envelope(values, axes[0], axes[0], lam)
    # separable: min over the second axis, then the first
    a0, a1 = axes
    step1 = np.empty_like(values)
    for i in range(values.shape[0]):
        step1[i] = grid_envelope(values[i], a1, a1, lam)
    out = np.empty_like(values)
    for j in range(values.shape[1]):
        out[:, j] = grid_envelope(step1[:, j], a0, a0, lam)
    return out


def _grid_global_minima(values: np.ndarray, tol: float) -> np.ndarray:
    local = values == ndimage.minimum_filter(values, size=3, mode="nearest")
    glob = values <= values.min() + tol
    return np.argwhere(local & glob)


def check_argmin_equivalence(objective: Callable, lam: float, axes, name="argmin_equivalence") -> CheckReport:
    """Grid minima of f and of its envelope agree (value within grid tolerance, argmins within a cell).

    ``objective`` must accept an (..., d) array. ``axes`` is a list of 1-D grids.
    """
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    vals = np.asarray(objective(mesh), dtype=np.float64)
    env = envelope_on_grid(vals, axes, lam)
    cell = max(float(a[1] - a[0]) for a in axes)
    slope = max(float(np.max(np.abs(np.diff(vals, axis=k)))) for k in range(vals.ndim))
    tol = slope  # one-cell change in f
    value_gap = abs(float(vals.min()) - float(env.min()))
    mf, me = _grid_global_minima(vals, tol), _grid_global_minima(env, tol)

    def covered(src, dst):
        return all(np.min(np.max(np.abs(dst - p), axis=1)) <= 1 for p in src)

    ok_args = covered(mf, me) and covered(me, mf)
    rep = CheckReport()
    rep.add(f"{name}:min_value_gap", value_gap, tol, value_gap <= tol)
    rep.add(f"{name}:argmin_cells", float(not ok_args), 0.0, ok_args,
            f"f minima {len(mf)}, envelope minima {len(me)}, cell {cell:g}")
    return rep


@dataclass(frozen=True)
class CrossLipschitzResult:
    L_hat: float
    n_pairs_used: int
    analytic_bound: Optional[float] = None


def check_cross_lipschitz(grad_x: Callable, x, pair_sampler: Callable, n_pairs: int, rng,
                          analytic_bound: Optional[float] = None) -> CrossLipschitzResult:
    """L_hat = max over y pairs of |grad_x(x, y1) - grad_x(x, y2)| / |y1 - y2|."""
    L, used = 0.0, 0
    for _ in range(n_pairs):
        y1, y2 = pair_sampler(rng)
        dy = float(np.linalg.norm(np.asarray(y1) - np.asarray(y2)))
        if dy < 1e-10:
            continue
        used += 1
        L = max(L, float(np.linalg.norm(np.asarray(grad_x(x, y1)) - np.asarray(grad_x(x, y2)))) / dy)
    return CrossLipschitzResult(L, used, analytic_bound)


def cross_lipschitz_bound(L_f_prime: float, L_g_prime: float, sigma1: float) -> float:
    """Analytic L_{x,1} = L_f' + L_g'/sigma1."""
    return L_f_prime + L_g_prime / sigma1


def local_pair_sampler(lo, hi, dim, radius):
    def sampler(rng):
        y1 = rng.uniform(lo, hi, size=dim)
        u = rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        return y1, np.clip(y1 + rng.uniform(0.0, radius) * u, lo, hi)
    return sampler


# ---------------------------------------------------------------- hinge indicator mismatch

@dataclass(frozen=True)
class MismatchTable:
    offsets: np.ndarray
    batch_sizes: tuple
    rates: np.ndarray  # (n_offsets, n_batch_sizes)
    h_true: float
    sample_sd: float

    def rows(self):
        for i, off in enumerate(self.offsets):
            for j, B in enumerate(self.batch_sizes):
                yield float(off), int(B), float(self.rates[i, j])


def tau_mismatch_rate(mdp, y, offsets, batch_sizes, trials: int, H: int, rng, n_rollouts=1) -> MismatchTable:
    """Empirical P(1{h > c0} != 1{h_hat > c0}) per batch size, with c0 = h(y) - offset.

    All offsets reuse the same h_hat draws (common random numbers across c0).
    """
    from . import cmdp as _cmdp
    from .objectives import constraint_h_exact

    if trials < 100:
        raise ValueError("trials must be >= 100")
    h = constraint_h_exact(mdp, y)
    policy = _cmdp.SoftmaxPolicy.for_mdp(mdp, y)
    offsets = np.asarray(offsets, dtype=np.float64)
    rates = np.empty((len(offsets), len(batch_sizes)))
    sd = float("nan")
    for j, B in enumerate(batch_sizes):
        s, a = _cmdp.sample_occupancy_pairs(mdp, policy, H, B * trials, rng)
        q = _cmdp.mc_q_estimates(mdp, policy, mdp.cost, s, a, H, n_rollouts, rng)
        if j == 0:
            sd = float(q.std(ddof=1))
        h_hat = q.reshape(trials, B).mean(axis=1)
        for i, off in enumerate(offsets):
            c0 = h - off
            rates[i, j] = np.mean((h_hat > c0) != (h > c0))
    return MismatchTable(offsets, tuple(int(b) for b in batch_sizes), rates, h, sd)


# ---------------------------------------------------------------- rate fits

@dataclass(frozen=True)
class RateFit:
    series: list
    slope: float
    intercept: float
    r_squared: float


def fit_rate(series, window=None) -> RateFit:
    """Least-squares fit of log(value) on log(t) for points with t inside ``window``."""
    pts = [(float(t), float(v)) for t, v in series]
    if window is not None:
        lo, hi = window
        pts = [(t, v) for t, v in pts if lo <= t <= hi]
    if len(pts) < 2:
        raise EmptyWindow("need at least two points inside the window")
    t = np.array([p[0] for p in pts])
    v = np.array([p[1] for p in pts])
    if np.any(t <= 0) or np.any(v <= 0):
        raise ValueError("fit_rate needs positive t and values")
    lt, lv = np.log(t), np.log(v)
    slope, intercept = np.polyfit(lt, lv, 1)
    resid = lv - (slope * lt + intercept)
    ss_tot = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return RateFit(pts, float(slope), float(intercept), r2)


def running_average(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.cumsum(v) / np.arange(1, v.size + 1)


# ---------------------------------------------------------------- catalog functions

@dataclass(frozen=True, eq=False)
class CatalogFunction:
    """Test function with declared constants (None when not applicable)."""

    name: str
    value: Callable
    subgrad: Callable
    lipschitz: Optional[float]
    smooth_L: Optional[float]
    rho: float
    pl_mu: Optional[float]
    region: tuple
    minimizers: tuple


def _vec(fn):
    def wrapped(v):
        return fn(np.asarray(v, dtype=np.float64))
    return wrapped


CATALOG_FUNCTIONS = {
    "quadratic": CatalogFunction(
        "quadratic", _vec(lambda v: 0.5 * np.sum(v ** 2, axis=-1)), _vec(lambda v: v),
        lipschitz=None, smooth_L=1.0, rho=0.0, pl_mu=1.0, region=(-3.0, 3.0), minimizers=(0.0,)),
    "abs": CatalogFunction(
        "abs", _vec(lambda v: np.sum(np.abs(v), axis=-1)), _vec(np.sign),
        lipschitz=1.0, smooth_L=None, rho=0.0, pl_mu=None, region=(-3.0, 3.0), minimizers=(0.0,)),
    "double_well": CatalogFunction(
        "double_well", _vec(lambda v: np.sum((v ** 2 - 1.0) ** 2, axis=-1)), _vec(lambda v: 4 * v * (v ** 2 - 1)),
        lipschitz=None, smooth_L=None, rho=4.0, pl_mu=None, region=(-2.0, 2.0), minimizers=(-1.0, 1.0)),
    "sin": CatalogFunction(
        "sin", _vec(lambda v: np.sum(np.sin(v), axis=-1)), _vec(np.cos),
        lipschitz=1.0, smooth_L=1.0, rho=1.0, pl_mu=None, region=(-10.0, 10.0), minimizers=()),
    "neg_quadratic": CatalogFunction(
        "neg_quadratic", _vec(lambda v: -0.5 * np.sum(v ** 2, axis=-1)), _vec(lambda v: -v),
        lipschitz=None, smooth_L=1.0, rho=1.0, pl_mu=None, region=(-3.0, 3.0), minimizers=()),
    # x^2 + 3 sin^2 x: nonconvex, PL with mu = 1/32
    "pl_sine": CatalogFunction(
        "pl_sine", _vec(lambda v: np.sum(v ** 2 + 3 * np.sin(v) ** 2, axis=-1)),
        _vec(lambda v: 2 * v + 3 * np.sin(2 * v)),
        lipschitz=None, smooth_L=8.0, rho=4.0, pl_mu=1.0 / 32, region=(-4.0, 4.0), minimizers=(0.0,)),
}


def check_envelope_pl(fn: CatalogFunction, lam: float, points, tol=1e-6) -> CheckReport:
    """2 mu' (f_lam(x) - f*) <= |grad f_lam(x)|^2 with mu' = mu/(1 + mu lam)."""
    mu_env = fn.pl_mu / (1 + fn.pl_mu * lam)
    f_star = float(fn.value(np.array([fn.minimizers[0]])))
    worst = -np.inf
    for p in points:
        res = prox_point(fn.value, np.atleast_1d(p), lam, subgrad=fn.subgrad)
        worst = max(worst, 2 * mu_env * (res.envelope_value - f_star) - res.envelope_grad_norm ** 2)
    return CheckReport().add(f"envelope_pl:{fn.name}", worst, tol, worst <= tol)


def check_envelope_continuity(fn: CatalogFunction, lam: float, points, delta=1e-4, tol=1e-6) -> CheckReport:
    """|grad f_lam| moves by at most Lip * delta under delta query perturbations, lam < 1/rho.

    Lip = max(1/lam, rho/(1 - rho lam)) bounds the Lipschitz constant of grad f_lam.
    """
    if fn.rho * lam >= 1:
        raise ValueError("need lambda < 1/rho")
    lip = max(1.0 / lam, fn.rho / (1.0 - fn.rho * lam))
    worst = 0.0
    for p in points:
        a = prox_point(fn.value, np.atleast_1d(p), lam, subgrad=fn.subgrad)
        b = prox_point(fn.value, np.atleast_1d(p) + delta, lam, subgrad=fn.subgrad)
        worst = max(worst, abs(a.envelope_grad_norm - b.envelope_grad_norm))
    return CheckReport().add(f"envelope_continuity:{fn.name}", worst, lip * delta + tol, worst <= lip * delta + tol)


def default_lambda(rho_hat: float, cap: float = 1.0) -> float:
    """0.5/rho_hat, capped for (near-)convex objectives."""
    return cap if rho_hat <= 0.5 / cap else 0.5 / rho_hat


class BoxMoreauProbe:
    """Envelope-gradient probe for phi + indicator(box) with 1-D or small-d x.

    The prox is found by a grid scan of phi (tabulated once) followed by a
    local derivative-free refinement on the exact value. ``residual`` is the
    final bracket width; the solver floor on the gradient norm is residual/lam.
    """

    def __init__(self, value: Callable, box, lam: float, n=2001):
        self.value = value
        self.box = np.atleast_2d(np.asarray(box, dtype=np.float64))
        self.lam = float(lam)
        if self.box.shape[0] != 1:
            raise ValueError("BoxMoreauProbe supports one-dimensional x")
        self.grid = np.linspace(self.box[0, 0], self.box[0, 1], n)
        self.cell = float(self.grid[1] - self.grid[0])
        self.table = np.array([float(value(np.array([g]))) for g in self.grid])

    def probe(self, x) -> MoreauProbeResult:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        obj = self.table + (x[0] - self.grid) ** 2 / (2 * self.lam)
        j = int(np.argmin(obj))
        lo = max(self.grid[0], self.grid[j] - self.cell)
        hi = min(self.grid[-1], self.grid[j] + self.cell)

        def F(u):
            return float(self.value(np.array([u]))) + (x[0] - u) ** 2 / (2 * self.lam)

        res = optimize.minimize_scalar(F, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        v, fv = (res.x, res.fun) if res.fun <= obj[j] else (self.grid[j], obj[j])
        prox = np.array([v])
        return MoreauProbeResult(x, self.lam, prox, float(fv), abs(x[0] - v) / self.lam, int(res.nfev), 2e-10)

    def __call__(self, x) -> float:
        return self.probe(x).envelope_grad_norm
