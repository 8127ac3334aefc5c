from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from cbso.cmdp import CmdpSpec

# fixed example sequence so repeated test runs are reproducible
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")


def make_mdp(P, cost, gamma, init=None, c0=0.0, phi=None, psi=None, r_max=1.0):
    P = np.asarray(P, dtype=np.float64)
    S, A = P.shape[:2]
    init = np.full(S, 1.0 / S) if init is None else np.asarray(init, dtype=np.float64)
    phi = np.ones((S, A, 1)) if phi is None else np.asarray(phi, dtype=np.float64)
    psi = np.eye(S * A).reshape(S, A, S * A) if psi is None else np.asarray(psi, dtype=np.float64)
    return CmdpSpec(P, np.asarray(cost, dtype=np.float64), gamma, init, c0, phi, psi, r_max)


@pytest.fixture
def cycle_mdp():
    """Two states, one action, s0 -> s1 -> s0; signal [1, 0]; gamma 0.5."""
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 0] = 1.0
    return make_mdp(P, [[1.0], [0.0]], 0.5, init=[1.0, 0.0])


@pytest.fixture
def self_loop():
    """One state, two actions, both stay; cost 1 everywhere; gamma 0.9."""
    P = np.ones((1, 2, 1))
    return make_mdp(P, [[1.0, 1.0]], 0.9, init=[1.0])
