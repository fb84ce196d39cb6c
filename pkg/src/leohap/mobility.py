"""Gauss-Markov HAP mobility with reflective box boundaries."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GaussMarkovParams:
    memory: float           # alpha in [0, 1]
    mean_velocity: np.ndarray  # m/s, shape (3,)
    sigma: np.ndarray          # m/s, shape (3,)
    dt: float                  # s
    box_min: np.ndarray        # m, shape (3,)
    box_max: np.ndarray        # m, shape (3,)

    def __post_init__(self):
        if not 0.0 <= self.memory <= 1.0:
            raise ValueError(f"memory parameter must lie in [0, 1], got {self.memory}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if np.any(np.asarray(self.sigma) < 0):
            raise ValueError("velocity std must be nonnegative")
        if np.any(np.asarray(self.box_min) >= np.asarray(self.box_max)):
            raise ValueError("box_min must be < box_max on every axis")


@dataclass(frozen=True)
class HapState:
    p: np.ndarray  # m, shape (3,)
    v: np.ndarray  # m/s, shape (3,)


def reflect(p, v, box_min, box_max):
    """Mirror a position about any violated box face, negating that velocity
    component.  Repeats until the point is inside (single pass in practice)."""
    p = np.array(p, dtype=float)
    v = np.array(v, dtype=float)
    for ax in range(3):
        lo, hi = box_min[ax], box_max[ax]
        while p[ax] < lo or p[ax] > hi:
            if p[ax] < lo:
                p[ax] = 2.0 * lo - p[ax]
                v[ax] = -v[ax]
            else:
                p[ax] = 2.0 * hi - p[ax]
                v[ax] = -v[ax]
    return p, v


def step_hap(state: HapState, params: GaussMarkovParams, rng) -> HapState:
    """One Gauss-Markov velocity/position update followed by boundary reflection."""
    a = params.memory
    n = rng.standard_normal(3)
    v = a * state.v + (1.0 - a) * params.mean_velocity \
        + np.sqrt(1.0 - a * a) * params.sigma * n
    p = state.p + v * params.dt
    p, v = reflect(p, v, params.box_min, params.box_max)
    return HapState(p=p, v=v)
