"""The CBSO loop: K inner subgradient steps on y and z, then one step on x, T times."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .core import (NonFiniteIterate, PenaltyCoefficients, RunRecord, StepSchedule, as_param_vector,
                   make_stream)


@dataclass(frozen=True)
class CbsoConfig:
    T: int
    K: int
    B: int
    coeffs: PenaltyCoefficients
    outer_schedule: StepSchedule
    inner_schedule: StepSchedule
    H: int = 1
    warm_start_inner: bool = True
    shared_batches: bool = False
    seed: int = 0
    probe_every: int = 0
    checkpoint_every: int = 0
    log_inner: bool = False
    timing: bool = False

    def __post_init__(self):
        for name in ("T", "K", "B", "H"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class InnerStep:
    t: int
    k: int
    beta: float
    h1_hat: float
    h2_hat: float
    tau_y: Optional[float]
    tau_z: Optional[float]

    def as_dict(self):
        return {"t": self.t, "k": self.k, "beta": self.beta, "h1_hat": self.h1_hat,
                "h2_hat": self.h2_hat, "tau_y": self.tau_y, "tau_z": self.tau_z}


@dataclass
class CbsoState:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    t: int = 0
    log: list = field(default_factory=list)
    inner_log: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    x_history: list = field(default_factory=list)


def _finite_or_raise(name, v, **state):
    if not np.all(np.isfinite(v)):
        state[name] = v
        raise NonFiniteIterate(f"non-finite {name} at t={state.get('t')}, k={state.get('k')}", state)


def run_inner_loop(x, y0, z0, cfg: CbsoConfig, problem, t: int = 0):
    """K projected subgradient steps on y (objective h1) and z (objective h2).

    Returns (y_K, z_K, trace). Step k uses beta_k = cfg.inner_schedule(k).
    """
    y, z = np.array(y0, dtype=np.float64), np.array(z0, dtype=np.float64)
    rng_y = make_stream(cfg.seed, "inner_y", t)
    rng_z = make_stream(cfg.seed, "inner_y" if cfg.shared_batches else "inner_z", t)
    trace = []
    for k in range(cfg.K):
        beta = cfg.inner_schedule(k)
        gy = problem.subgrad_y_h1(x, y, cfg.coeffs, cfg.B, rng_y)
        gz = problem.subgrad_y_h2(x, z, cfg.coeffs, cfg.B, rng_z)
        y_new = problem.project("y", y - beta * gy.vector)
        z_new = problem.project("z", z - beta * gz.vector)
        _finite_or_raise("y", y_new, t=t, k=k, x=x, y_prev=y, z=z)
        _finite_or_raise("z", z_new, t=t, k=k, x=x, y=y, z_prev=z)
        trace.append(InnerStep(t, k, beta, gy.extras.get("h1", float("nan")),
                               gz.extras.get("h2", float("nan")), gy.tau, gz.tau))
        y, z = y_new, z_new
    return y, z, trace


def run_cbso(cfg: CbsoConfig, problem, x0, y0, z0, probe: Optional[Callable] = None,
             on_record: Optional[Callable] = None, on_checkpoint: Optional[Callable] = None) -> CbsoState:
    """Run T outer iterations and return the final state (x_T is ``state.x``).

    ``probe(x)`` returns an envelope-gradient norm; it is called every
    ``cfg.probe_every`` iterations when given. One RunRecord per t is appended
    to ``state.log`` and passed to ``on_record``.
    """
    x = problem.project("x", as_param_vector(x0, "x0").copy())
    y = problem.project("y", as_param_vector(y0, "y0").copy())
    z = problem.project("z", as_param_vector(z0, "z0").copy())
    y_init, z_init = y.copy(), z.copy()
    state = CbsoState(x, y, z)
    for t in range(cfg.T):
        t_start = time.perf_counter()
        ys, zs = (state.y, state.z) if cfg.warm_start_inner else (y_init, z_init)
        y_K, z_K, trace = run_inner_loop(state.x, ys, zs, cfg, problem, t)
        if cfg.log_inner:
            state.inner_log.extend(trace)
        gx = problem.outer_grad(state.x, y_K, z_K, cfg.coeffs, cfg.B, make_stream(cfg.seed, "outer", t))
        eta = cfg.outer_schedule(t)
        x_new = problem.project("x", state.x - eta * gx.vector)
        _finite_or_raise("x", x_new, t=t, k=None, x_prev=state.x, y=y_K, z=z_K)

        ev = problem.evaluate(state.x, y_K, z_K, cfg.coeffs, make_stream(cfg.seed, "eval", t))
        env = None
        if probe is not None and cfg.probe_every > 0 and t % cfg.probe_every == 0:
            env = float(probe(state.x))
        extras = {"step_size": eta, "x": [float(v) for v in state.x]}
        extras.update({k: v for k, v in ev.items() if k not in ("h_of_y", "h1", "h2")})
        wall = int(round((time.perf_counter() - t_start) * 1000)) if cfg.timing else 0
        rec = RunRecord(t, float(np.linalg.norm(gx.vector)), ev["h_of_y"], ev["h1"], ev["h2"],
                        env, wall, extras)
        state.log.append(rec)
        state.step_sizes.append(eta)
        state.x_history.append(state.x.copy())
        if on_record is not None:
            on_record(rec)
        state.x, state.y, state.z, state.t = x_new, y_K, z_K, t + 1
        if on_checkpoint is not None and cfg.checkpoint_every > 0 and state.t % cfg.checkpoint_every == 0:
            on_checkpoint(state)
    return state


def with_overrides(cfg: CbsoConfig, **kw) -> CbsoConfig:
    return replace(cfg, **kw)
