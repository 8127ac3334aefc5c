"""INI experiment configs: defaults, ``section.key=value`` overrides and builders.

A resolved config is a :class:`configparser.ConfigParser` holding every key;
:func:`build_experiment` turns it into a driver config, a problem adapter and
initial points.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from .cmdp import CmdpSpec, load_cmdp, random_cmdp
from .core import CbsoError, PenaltyCoefficients, make_step_schedule, validate_penalty_coefficients
from .driver import CbsoConfig
from .objectives import Annotator, constraint_h_exact
from .problems import RlhfCmdpBilevel, SyntheticBilevel
from .synthetic import make_problem


class ConfigError(CbsoError, ValueError):
    pass


DEFAULTS = {
    "run": {
        "track": "synthetic", "problem": "P1", "T": "400", "K": "100", "B": "64", "H": "1", "seed": "0",
        "warm_start_inner": "true", "shared_batches": "false", "log_inner": "false", "timing": "false",
        "checkpoint_every": "0", "x0": "0.25", "y0": "0.5", "z0": "0.5",
    },
    "penalty": {"sigma1": "0.1", "sigma2": "0.01", "sigma3": "1.0"},
    "outer": {"kind": "outer_power", "c_a": "0.5", "a": "0.5", "eta": "1.0"},
    "inner": {"kind": "inner_harmonic", "c_a": "1.0", "a": "0.5", "eta": "0.02"},
    "probe": {"every": "0", "lam": "auto", "n_grid": "2001"},
    "synthetic": {"noise": "default"},
    "cmdp": {
        "file": "", "seed": "7", "n_states": "6", "n_actions": "3", "d_r": "3", "d_p": "8", "gamma": "0.8",
        "r_max": "1.0", "c0": "auto", "x_true": "1.0,-0.5,0.8", "annotator": "bt", "beta": "0.0",
        "n_rollouts": "1", "baseline": "loo", "eval_pairs": "64",
    },
}

# short names accepted by the sweep axis
AXIS_ALIASES = {
    "sigma1": "penalty.sigma1", "sigma2": "penalty.sigma2", "sigma3": "penalty.sigma3",
    "a": "outer.a", "c_a": "outer.c_a", "eta": "inner.eta", "B": "run.B", "K": "run.K", "T": "run.T",
    "seed": "run.seed",
}


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep T, K, B case
    return cp


def default_config() -> configparser.ConfigParser:
    cp = _parser()
    cp.read_dict(DEFAULTS)
    return cp


def shipped_config(name: str) -> str:
    """Text of a config bundled with the package (e.g. ``p1_reference.ini``)."""
    return resources.files("cbso").joinpath("configs", name).read_text(encoding="utf-8")


def parse_override(item: str) -> tuple[str, str, str]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, value = item.split("=", 1)
    key = AXIS_ALIASES.get(key.strip(), key.strip())
    if "." not in key:
        raise ConfigError(f"override key {key!r} must be section.key")
    section, name = key.split(".", 1)
    return section, name, value.strip()


def resolve_config(path: Optional[str] = None, overrides=(), text: Optional[str] = None) -> configparser.ConfigParser:
    """Defaults, then the file (or ``text``), then overrides. Unknown keys are errors."""
    cp = default_config()
    src = _parser()
    try:
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                src.read_file(fh, source=str(path))
        elif text is not None:
            src.read_string(text)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read config: {e}") from None
    items = [(s, k, v) for s in src.sections() for k, v in src.items(s)]
    items += [parse_override(o) for o in overrides]
    for section, key, value in items:
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        cp[section][key] = value
    return cp


def config_text(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------- typed getters

def _get(cp, section, key, conv, what):
    raw = cp[section][key]
    try:
        return conv(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}={raw!r} is not a valid {what}") from None


def get_int(cp, section, key) -> int:
    return _get(cp, section, key, int, "integer")


def get_float(cp, section, key) -> float:
    v = _get(cp, section, key, float, "number")
    if not math.isfinite(v):
        raise ConfigError(f"{section}.{key} must be finite")
    return v


def get_bool(cp, section, key) -> bool:
    try:
        return cp.getboolean(section, key)
    except ValueError:
        raise ConfigError(f"{section}.{key}={cp[section][key]!r} is not a boolean") from None


def get_vector(cp, section, key, dim: int) -> np.ndarray:
    raw = cp[section][key]
    try:
        v = np.array([float(s) for s in raw.split(",") if s.strip()], dtype=np.float64)
    except ValueError:
        raise ConfigError(f"{section}.{key}={raw!r} is not a comma-separated vector") from None
    if v.size == 1:
        return np.full(dim, v[0])
    if v.size != dim:
        raise ConfigError(f"{section}.{key} has {v.size} entries, expected {dim}")
    return v


# ---------------------------------------------------------------- builders

@dataclass
class Experiment:
    cfg: CbsoConfig
    problem: object
    x0: np.ndarray
    y0: np.ndarray
    z0: np.ndarray
    track: str
    name: str


def build_cmdp(cp) -> CmdpSpec:
    path = cp["cmdp"]["file"]
    if path:
        try:
            return load_cmdp(path)
        except OSError as e:
            raise ConfigError(f"cannot read CMDP file: {e}") from None
    return random_cmdp(get_int(cp, "cmdp", "seed"), n_states=get_int(cp, "cmdp", "n_states"),
                       n_actions=get_int(cp, "cmdp", "n_actions"), d_r=get_int(cp, "cmdp", "d_r"),
                       d_p=get_int(cp, "cmdp", "d_p"), gamma=get_float(cp, "cmdp", "gamma"),
                       r_max=get_float(cp, "cmdp", "r_max"))


def build_coeffs(cp, c0: float) -> PenaltyCoefficients:
    return validate_penalty_coefficients(get_float(cp, "penalty", "sigma1"), get_float(cp, "penalty", "sigma2"),
                                         get_float(cp, "penalty", "sigma3"), c0)


def build_experiment(cp) -> Experiment:
    """Everything ``run_cbso`` needs. Library validation errors become ConfigError."""
    try:
        return _build(cp)
    except ConfigError:
        raise
    except (CbsoError, ValueError, KeyError) as e:
        raise ConfigError(str(e)) from None


def _build(cp) -> Experiment:
    track = cp["run"]["track"]
    if track == "synthetic":
        name = cp["run"]["problem"]
        noise = cp["synthetic"]["noise"]
        base = make_problem(name, None if noise == "default" else (get_float(cp, "synthetic", "noise"),) * 3)
        problem = SyntheticBilevel(base)
        c0 = base.c0
    elif track == "cmdp_rlhf":
        mdp = build_cmdp(cp)
        name = cp["cmdp"]["file"] or f"random_cmdp_{cp['cmdp']['seed']}"
        y0 = get_vector(cp, "run", "y0", mdp.d_p)
        c0 = constraint_h_exact(mdp, y0) if cp["cmdp"]["c0"] == "auto" else get_float(cp, "cmdp", "c0")
        mdp = mdp.with_c0(c0)
        ann = Annotator(get_vector(cp, "cmdp", "x_true", mdp.d_r), cp["cmdp"]["annotator"])
        problem = RlhfCmdpBilevel(mdp, ann, get_int(cp, "run", "H"), beta=get_float(cp, "cmdp", "beta"),
                                  n_rollouts=get_int(cp, "cmdp", "n_rollouts"), baseline=cp["cmdp"]["baseline"],
                                  eval_pairs=get_int(cp, "cmdp", "eval_pairs"))
    else:
        raise ConfigError(f"run.track must be synthetic or cmdp_rlhf, got {track!r}")

    outer = dict(cp["outer"])
    inner = dict(cp["inner"])
    outer_kind, inner_kind = outer.pop("kind"), inner.pop("kind")
    outer_params = {k: get_float(cp, "outer", k) for k in outer}
    inner_params = {k: get_float(cp, "inner", k) for k in inner}
    cfg = CbsoConfig(
        T=get_int(cp, "run", "T"), K=get_int(cp, "run", "K"), B=get_int(cp, "run", "B"), H=get_int(cp, "run", "H"),
        coeffs=build_coeffs(cp, c0),
        outer_schedule=make_step_schedule(outer_kind, **outer_params),
        inner_schedule=make_step_schedule(inner_kind, **inner_params),
        warm_start_inner=get_bool(cp, "run", "warm_start_inner"),
        shared_batches=get_bool(cp, "run", "shared_batches"),
        seed=get_int(cp, "run", "seed"),
        probe_every=get_int(cp, "probe", "every"),
        checkpoint_every=get_int(cp, "run", "checkpoint_every"),
        log_inner=get_bool(cp, "run", "log_inner"),
        timing=get_bool(cp, "run", "timing"),
    )
    x0 = get_vector(cp, "run", "x0", problem.d_x)
    y0 = get_vector(cp, "run", "y0", problem.d_y)
    z0 = get_vector(cp, "run", "z0", problem.d_y)
    return Experiment(cfg, problem, x0, y0, z0, track, name)


def cmdp_sup_norms(problem: RlhfCmdpBilevel) -> tuple[float, float]:
    """Analytic sup bounds (C_f, C_g) for the CMDP track.

    |g| <= r_max/(1-gamma) when beta = 0; the BT loss of returns bounded by
    H*r_max is at most log(1 + exp(2 H r_max)).
    """
    mdp = problem.mdp
    if problem.beta != 0.0:
        raise ConfigError("sup-norm bound is only available for beta = 0")
    c_g = mdp.r_max / (1.0 - mdp.gamma)
    c_f = float(np.logaddexp(0.0, 2.0 * problem.H * mdp.r_max))
    return c_f, c_g


def build_probe(cp, exp: Experiment):
    """Envelope probe for ``run_cbso`` or None when probing is off.

    Only synthetic problems with scalar x are supported: Phi is tabulated on a
    grid of ``probe.n_grid`` points. ``probe.lam = auto`` uses 0.5/rho_hat from
    a hypomonotonicity warmup on Phi's gradient (capped at 1).
    """
    from .analysis import BoxMoreauProbe, box_pair_sampler, default_lambda, estimate_hypomonotonicity
    from .core import make_stream
    from .synthetic import PhiEvaluator

    if get_int(cp, "probe", "every") <= 0:
        return None
    if exp.track != "synthetic" or exp.problem.d_x != 1:
        raise ConfigError("envelope probes need a synthetic problem with one-dimensional x")
    base = exp.problem.problem
    phi = PhiEvaluator(base, exp.cfg.coeffs)
    if cp["probe"]["lam"] == "auto":
        lo, hi = base.x_box[0]
        rho = estimate_hypomonotonicity(phi.grad, box_pair_sampler(lo, hi), 200,
                                        make_stream(exp.cfg.seed, "probe_warmup"))
        lam = default_lambda(rho)
    else:
        lam = get_float(cp, "probe", "lam")
        if lam <= 0:
            raise ConfigError("probe.lam must be positive")
    return BoxMoreauProbe(phi.value, base.x_box, lam, n=get_int(cp, "probe", "n_grid"))
