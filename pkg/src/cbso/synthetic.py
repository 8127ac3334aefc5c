"""Low-dimensional constrained bilevel test problems with noisy gradient oracles.

The catalog (P1, P2, P3) is our own construction. Every function is
vectorised: ``x`` has shape (..., d_x), ``y`` shape (..., d_y); values come
back with shape (...) and gradients with shape (..., d).
"""
from __future__ import annotations

import csv
import functools
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize

from .core import CbsoError, PenaltyCoefficients


class UnknownProblem(CbsoError, KeyError):
    pass


class InfeasibleEverywhere(CbsoError, ValueError):
    pass


class GradientGateFailure(CbsoError, AssertionError):
    pass


GRAD_KINDS = ("f_x", "f_y", "g_x", "g_y", "h_y", "h_plus_y")


@dataclass(frozen=True, eq=False)
class SyntheticProblem:
    name: str
    d_x: int
    d_y: int
    f: Callable
    g: Callable
    h: Callable
    f_x: Callable
    f_y: Callable
    g_x: Callable
    g_y: Callable
    h_y: Callable
    c0: float
    noise: tuple = (0.1, 0.1, 0.1)
    x_box: np.ndarray = None
    y_box: np.ndarray = None
    description: str = ""

    def h_plus(self, y):
        return np.maximum(self.h(y) - self.c0, 0.0)

    def tau(self, y):
        hv = self.h(y) - self.c0
        return np.where(hv > 0, 1.0, np.where(hv < 0, 0.0, 0.5))

    def h1(self, x, y, coeffs: PenaltyCoefficients):
        return self.f(x, y) + (self.g(x, y) + self.h_plus(y) / coeffs.sigma3) / coeffs.sigma1

    def h2(self, x, z, coeffs: PenaltyCoefficients):
        return self.g(x, z) + self.h_plus(z) / coeffs.sigma2

    def h1_grad_y(self, x, y, coeffs):
        return self.f_y(x, y) + (self.g_y(x, y) + self.tau(y)[..., None] * self.h_y(y) / coeffs.sigma3) / coeffs.sigma1

    def h2_grad_y(self, x, z, coeffs):
        return self.g_y(x, z) + self.tau(z)[..., None] * self.h_y(z) / coeffs.sigma2

    def with_noise(self, noise) -> "SyntheticProblem":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw["noise"] = tuple(float(v) for v in noise)
        return SyntheticProblem(**kw)


def _col(a, i=0):
    return np.asarray(a, dtype=np.float64)[..., i]


def _p1() -> SyntheticProblem:
    def f(x, y):
        return (_col(y) - 1.0) ** 2 + 0.0 * _col(x)

    def g(x, y):
        return (_col(y) ** 2 - _col(x)) ** 2

    def h(y):
        return -_col(y)

    return SyntheticProblem(
        "P1", 1, 1, f, g, h,
        f_x=lambda x, y: np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1]) + (1,)),
        f_y=lambda x, y: (2.0 * (_col(y) - 1.0) + 0.0 * _col(x))[..., None],
        g_x=lambda x, y: (-2.0 * (_col(y) ** 2 - _col(x)))[..., None],
        g_y=lambda x, y: (4.0 * _col(y) * (_col(y) ** 2 - _col(x)))[..., None],
        h_y=lambda y: -np.ones(np.shape(y)[:-1] + (1,)),
        c0=0.0, noise=(0.1, 0.1, 0.1),
        x_box=np.array([[0.0, 2.0]]), y_box=np.array([[-2.0, 2.0]]),
        description="f=(y-1)^2, g=(y^2-x)^2, h=-y, c0=0: inner roots +-sqrt(x), constraint keeps +sqrt(x)",
    )


def _p2() -> SyntheticProblem:
    def f(x, y):
        return (_col(y) - 1.0) ** 2 + 0.1 * _col(x) ** 2

    def g(x, y):
        return (_col(y) - _col(x)) ** 2

    def h(y):
        return np.sin(3.0 * _col(y)) + _col(y) ** 2

    return SyntheticProblem(
        "P2", 1, 1, f, g, h,
        f_x=lambda x, y: (0.2 * _col(x) + 0.0 * _col(y))[..., None],
        f_y=lambda x, y: (2.0 * (_col(y) - 1.0) + 0.0 * _col(x))[..., None],
        g_x=lambda x, y: (-2.0 * (_col(y) - _col(x)))[..., None],
        g_y=lambda x, y: (2.0 * (_col(y) - _col(x)))[..., None],
        h_y=lambda y: (3.0 * np.cos(3.0 * _col(y)) + 2.0 * _col(y))[..., None],
        c0=0.8, noise=(0.1, 0.1, 0.1),
        x_box=np.array([[-1.5, 1.5]]), y_box=np.array([[-2.0, 2.0]]),
        description="f=(y-1)^2+0.1x^2, g=(y-x)^2, h=sin(3y)+y^2, c0=0.8 (nonconvex feasible set)",
    )


_P3_TARGET = np.array([1.0, 1.0])


def _p3() -> SyntheticProblem:
    def f(x, y):
        y = np.asarray(y, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        return np.sum((y - _P3_TARGET) ** 2, axis=-1) + 0.05 * np.sum(x ** 2, axis=-1)

    def g(x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return (np.sum((y - x) ** 2, axis=-1) + 0.3 * y[..., 0] * y[..., 1]
                + 0.25 * np.sum(np.cos(3.0 * y), axis=-1))

    def h(y):
        return np.sum(np.asarray(y, dtype=np.float64) ** 2, axis=-1)

    def f_x(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        return 0.1 * x

    def f_y(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        return 2.0 * (y - _P3_TARGET)

    def g_x(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        return -2.0 * (y - x)

    def g_y(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        cross = 0.3 * y[..., ::-1]
        return 2.0 * (y - x) + cross - 0.75 * np.sin(3.0 * y)

    return SyntheticProblem(
        "P3", 2, 2, f, g, h, f_x, f_y, g_x, g_y,
        h_y=lambda y: 2.0 * np.asarray(y, dtype=np.float64),
        c0=1.0, noise=(0.1, 0.1, 0.1),
        x_box=np.array([[-1.5, 1.5], [-1.5, 1.5]]), y_box=np.array([[-1.5, 1.5], [-1.5, 1.5]]),
        description="2-D: f=|y-(1,1)|^2+0.05|x|^2, g=|y-x|^2+0.3y1y2+0.25sum cos(3y), h=|y|^2, c0=1",
    )


CATALOG = {"P1": _p1, "P2": _p2, "P3": _p3}


def check_gradients(problem: SyntheticProblem, n_points=100, seed=0, step=1e-6, tol=1e-5) -> float:
    """Max |exact - central difference| over random box points; raises if above tol."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(problem.x_box[:, 0], problem.x_box[:, 1], size=(n_points, problem.d_x))
    ys = rng.uniform(problem.y_box[:, 0], problem.y_box[:, 1], size=(n_points, problem.d_y))
    worst = 0.0
    for kind, fn, wrt in (("f_x", problem.f, "x"), ("f_y", problem.f, "y"),
                          ("g_x", problem.g, "x"), ("g_y", problem.g, "y"), ("h_y", problem.h, "h")):
        exact = getattr(problem, kind)(ys) if wrt == "h" else getattr(problem, kind)(xs, ys)
        d = problem.d_x if wrt == "x" else problem.d_y
        fd = np.empty((n_points, d))
        for i in range(d):
            e = np.zeros(d)
            e[i] = step
            if wrt == "x":
                fd[:, i] = (fn(xs + e, ys) - fn(xs - e, ys)) / (2 * step)
            elif wrt == "y":
                fd[:, i] = (fn(xs, ys + e) - fn(xs, ys - e)) / (2 * step)
            else:
                fd[:, i] = (fn(ys + e) - fn(ys - e)) / (2 * step)
        err = float(np.max(np.abs(exact - fd)))
        worst = max(worst, err)
        if err > tol:
            raise GradientGateFailure(f"{problem.name}.{kind}: gradient mismatch {err:.3g} > {tol}")
    return worst


@functools.lru_cache(maxsize=None)
def _registered(name: str) -> SyntheticProblem:
    problem = CATALOG[name]()
    check_gradients(problem)
    return problem


def make_problem(name: str, noise=None) -> SyntheticProblem:
    if name not in CATALOG:
        raise UnknownProblem(f"unknown synthetic problem {name!r}; catalog: {sorted(CATALOG)}")
    problem = _registered(name)
    return problem if noise is None else problem.with_noise(noise)


def noisy_grad(problem: SyntheticProblem, which: str, x, y, rng: np.random.Generator, batch: int = 1):
    """Exact gradient plus N(0, sigma^2/batch) noise per component.

    Equivalent in distribution to averaging ``batch`` independent single-sample
    oracles. For ``h_plus_y`` the hinge indicator uses the exact h(y).
    """
    sf, sg, sh = problem.noise
    if which == "f_x":
        exact, sd = problem.f_x(x, y), sf
    elif which == "f_y":
        exact, sd = problem.f_y(x, y), sf
    elif which == "g_x":
        exact, sd = problem.g_x(x, y), sg
    elif which == "g_y":
        exact, sd = problem.g_y(x, y), sg
    elif which in ("h_y", "h_plus_y"):
        exact, sd = problem.h_y(y), sh
    else:
        raise ValueError(f"which must be one of {GRAD_KINDS}")
    exact = np.asarray(exact, dtype=np.float64)
    out = exact + (sd / np.sqrt(batch)) * rng.standard_normal(exact.shape) if sd > 0 else exact.copy()
    if which == "h_plus_y":
        out = problem.tau(y)[..., None] * out
    return out


# ---------------------------------------------------------------- grid oracle

def box_grid(box: np.ndarray, n: int):
    """Per-axis linspaces and the flattened product grid, shape (n^d, d)."""
    axes = [np.linspace(lo, hi, n) for lo, hi in box]
    pts = np.array(list(itertools.product(*axes))) if len(axes) > 1 else axes[0][:, None]
    return axes, pts


def feasible_mask(problem: SyntheticProblem, y_pts: np.ndarray, y_axes) -> np.ndarray:
    """Grid stand-in for the strict set h(y) < c0: h <= c0 - half the grid h-resolution."""
    hv = problem.h(y_pts)
    if len(y_axes) == 1:
        dh = np.max(np.abs(np.diff(hv)), initial=0.0)
    else:
        shaped = hv.reshape([len(a) for a in y_axes])
        dh = max(np.max(np.abs(np.diff(shaped, axis=k)), initial=0.0) for k in range(shaped.ndim))
    return hv <= problem.c0 - 0.5 * dh


@dataclass(frozen=True, eq=False)
class GridOracleResult:
    problem: str
    coeffs: tuple
    x_grid: np.ndarray
    y_grid: np.ndarray
    feasible_mask: np.ndarray
    y_star: np.ndarray
    y1_star: np.ndarray
    z_star: np.ndarray
    phi_table: np.ndarray
    f_table: np.ndarray
    best_x: np.ndarray
    best_x_original: np.ndarray
    x_axes: list = field(default_factory=list)
    y_axes: list = field(default_factory=list)

    @property
    def x_resolution(self) -> float:
        return max(float(a[1] - a[0]) for a in self.x_axes)

    @property
    def y_resolution(self) -> float:
        return max(float(a[1] - a[0]) for a in self.y_axes)

    def to_csv(self, path) -> None:
        dx, dy = self.x_grid.shape[1], self.y_star.shape[1]
        header = ([f"x{i}" for i in range(dx)] + [f"y_star{i}" for i in range(dy)]
                  + [f"y1_star{i}" for i in range(dy)] + [f"z_star{i}" for i in range(dy)]
                  + ["phi", "f_original"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.x_grid.shape[0]):
                row = np.concatenate([self.x_grid[i], self.y_star[i], self.y1_star[i], self.z_star[i],
                                      [self.phi_table[i], self.f_table[i]]])
                w.writerow([format(v, ".17g") for v in row])

    @staticmethod
    def read_csv(path) -> dict:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
        return {name: body[:, j] for j, name in enumerate(header)}


def grid_bilevel_oracle(problem: SyntheticProblem, coeffs: PenaltyCoefficients, n_x=201, n_y=2001,
                        chunk=64) -> GridOracleResult:
    """Exhaustive scan over the x box.

    Per x: y_star = feasible argmin of g; y1_star = argmin of h1 (defines Phi);
    z_star = argmin of h2 = g + h+/sigma2. Phi = h1(x, y1*) - h2(x, z*)/sigma1.
    """
    if problem.d_y > 2:
        raise ValueError("grid oracle supports 1-D or 2-D y only")
    x_axes, xs = box_grid(problem.x_box, n_x)
    y_axes, ys = box_grid(problem.y_box, n_y)
    mask = feasible_mask(problem, ys, y_axes)
    if not mask.any():
        raise InfeasibleEverywhere(f"{problem.name}: no grid y satisfies h(y) < {problem.c0}")
    hp = problem.h_plus(ys)
    fy = np.empty(len(xs), dtype=np.int64)
    f1 = np.empty(len(xs), dtype=np.int64)
    fz = np.empty(len(xs), dtype=np.int64)
    phi = np.empty(len(xs))
    forig = np.empty(len(xs))
    for start in range(0, len(xs), chunk):
        xc = xs[start:start + chunk, None, :]
        G = problem.g(xc, ys[None, :, :])
        F = problem.f(xc, ys[None, :, :])
        H1 = F + (G + hp / coeffs.sigma3) / coeffs.sigma1
        H2 = G + hp / coeffs.sigma2
        Gf = np.where(mask, G, np.inf)
        sl = slice(start, start + chunk)
        fy[sl] = np.argmin(Gf, axis=1)
        f1[sl] = np.argmin(H1, axis=1)
        fz[sl] = np.argmin(H2, axis=1)
        rows = np.arange(H1.shape[0])
        phi[sl] = H1[rows, f1[sl]] - H2[rows, fz[sl]] / coeffs.sigma1
        forig[sl] = F[rows, fy[sl]]
    return GridOracleResult(
        problem.name, (coeffs.sigma1, coeffs.sigma2, coeffs.sigma3), xs, ys, mask,
        ys[fy], ys[f1], ys[fz], phi, forig, xs[np.argmin(phi)], xs[np.argmin(forig)],
        x_axes, y_axes,
    )


@functools.lru_cache(maxsize=16)
def cached_grid_oracle(name: str, n_x: int, n_y: int, sigmas: tuple, noise=None) -> GridOracleResult:
    from .core import validate_penalty_coefficients
    problem = make_problem(name)
    return grid_bilevel_oracle(problem, validate_penalty_coefficients(*sigmas, problem.c0), n_x, n_y)


def sup_norms(problem: SyntheticProblem, n=201) -> tuple[float, float, float]:
    """(C_f, C_g, C_h) by grid max over the domain boxes; C_h = max|h| + |c0|."""
    _, xs = box_grid(problem.x_box, n if problem.d_x == 1 else max(41, n // 5))
    _, ys = box_grid(problem.y_box, n if problem.d_y == 1 else max(41, n // 5))
    c_f = c_g = 0.0
    for start in range(0, len(xs), 64):
        xc = xs[start:start + 64, None, :]
        c_f = max(c_f, float(np.max(np.abs(problem.f(xc, ys[None])))))
        c_g = max(c_g, float(np.max(np.abs(problem.g(xc, ys[None])))))
    c_h = float(np.max(np.abs(problem.h(ys)))) + abs(problem.c0)
    return c_f, c_g, c_h


# ---------------------------------------------------------------- exact Phi

class PhiEvaluator:
    """Phi(x) = min_y h1(x, y) - min_z h2(x, z)/sigma1, by grid scan plus local refinement."""

    def __init__(self, problem: SyntheticProblem, coeffs: PenaltyCoefficients, n_y=2001):
        self.problem = problem
        self.coeffs = coeffs
        self.y_axes, self.ys = box_grid(problem.y_box, n_y if problem.d_y == 1 else 161)
        self.hp = problem.h_plus(self.ys)
        self.dy = np.array([a[1] - a[0] for a in self.y_axes])

    def _refine(self, fn, y0):
        p = self.problem
        if p.d_y == 1:
            lo = max(y0[0] - self.dy[0], p.y_box[0, 0])
            hi = min(y0[0] + self.dy[0], p.y_box[0, 1])
            res = optimize.minimize_scalar(lambda v: float(fn(np.array([v]))), bounds=(lo, hi),
                                           method="bounded", options={"xatol": 1e-12})
            cand = np.array([res.x])
        else:
            simplex = np.vstack([y0, y0 + np.diag(self.dy)])
            res = optimize.minimize(lambda v: float(fn(v)), y0, method="Nelder-Mead",
                                    options={"initial_simplex": simplex, "xatol": 1e-11, "fatol": 1e-14,
                                             "maxiter": 2000})
            cand = res.x
        return cand if fn(cand) <= fn(y0) else y0

    def inner_solutions(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        p, c = self.problem, self.coeffs
        G = p.g(x, self.ys)
        H1 = p.f(x, self.ys) + (G + self.hp / c.sigma3) / c.sigma1
        H2 = G + self.hp / c.sigma2
        y1 = self._refine(lambda v: p.h1(x, v, c), self.ys[np.argmin(H1)])
        z = self._refine(lambda v: p.h2(x, v, c), self.ys[np.argmin(H2)])
        return y1, z

    def value(self, x) -> float:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        y1, z = self.inner_solutions(x)
        c = self.coeffs
        return float(self.problem.h1(x, y1, c) - self.problem.h2(x, z, c) / c.sigma1)

    def grad(self, x) -> np.ndarray:
        """Danskin-type gradient: f_x(x, y1*) + g_x(x, y1*)/sigma1 - g_x(x, z*)/sigma1."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        y1, z = self.inner_solutions(x)
        p, s1 = self.problem, self.coeffs.sigma1
        return p.f_x(x, y1) + p.g_x(x, y1) / s1 - p.g_x(x, z) / s1

    def __call__(self, x) -> float:
        return self.value(x)
