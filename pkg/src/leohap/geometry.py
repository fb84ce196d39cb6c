"""Circular-orbit propagation and HAP-relative satellite visibility."""

import math
from dataclasses import dataclass

import numpy as np

R_EARTH = 6.371e6          # m, spherical Earth
GM_EARTH = 3.986004418e14  # m^3/s^2


@dataclass(frozen=True)
class OrbitalElements:
    """Circular-orbit parameters (eccentricity fixed at zero)."""

    inclination: float       # rad
    raan: float              # rad
    arg_perigee_init: float  # rad
    true_anomaly: float      # rad
    altitude_m: float

    def __post_init__(self):
        vals = (self.inclination, self.raan, self.arg_perigee_init,
                self.true_anomaly, self.altitude_m)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("orbital elements must be finite")
        if self.altitude_m <= 0:
            raise ValueError(f"altitude must be positive, got {self.altitude_m}")

    @property
    def radius(self) -> float:
        return self.altitude_m + R_EARTH

    @property
    def angular_rate(self) -> float:
        return math.sqrt(GM_EARTH / self.radius ** 3)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.angular_rate


@dataclass(frozen=True)
class VisibilityMask:
    """Per-satellite visibility flags plus the elevations they derive from."""

    flags: np.ndarray       # bool, length N_L
    elevations: np.ndarray  # rad, length N_L

    def visible_indices(self) -> np.ndarray:
        return np.flatnonzero(self.flags)

    def any_visible(self) -> bool:
        return bool(self.flags.any())

    def __len__(self) -> int:
        return len(self.flags)


def propagate_satellite(elements: OrbitalElements, t: float) -> np.ndarray:
    """Earth-centered Cartesian position of a circular-orbit satellite at time t.

    The in-plane angle advances at the Keplerian rate and is wrapped to one
    revolution before the trig evaluation, so positions are exactly periodic
    in the orbital period.
    """
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"time must be finite and >= 0, got {t}")
    h = elements.radius
    u = elements.arg_perigee_init + math.fmod(t * elements.angular_rate,
                                              2.0 * math.pi) + elements.true_anomaly
    cu, su = math.cos(u), math.sin(u)
    co, so = math.cos(elements.raan), math.sin(elements.raan)
    ci = math.cos(elements.inclination)
    si = math.sin(elements.inclination)
    return np.array([
        h * (cu * co - su * ci * so),
        h * (cu * so + su * ci * co),
        h * (su * si),
    ])


def elevation_angle(observer, target) -> float:
    """Elevation of `target` above the local horizontal plane at `observer`.

    Both arguments are Earth-centered Cartesian points.  Returns a value in
    [-pi/2, pi/2]; positive means above the observer's horizon.
    """
    obs = np.asarray(observer, dtype=float)
    tgt = np.asarray(target, dtype=float)
    r = np.linalg.norm(obs)
    if r == 0.0:
        raise ValueError("observer must not be at the Earth center")
    d = tgt - obs
    dn = np.linalg.norm(d)
    if dn == 0.0:
        raise ValueError("observer and target coincide")
    s = float(np.dot(obs / r, d / dn))
    return math.asin(min(1.0, max(-1.0, s)))


def visible_set(sat_positions, hap, theta_min: float) -> VisibilityMask:
    """Visibility mask of a constellation as seen from the HAP.

    A satellite is visible when its elevation from the HAP is >= theta_min
    (inclusive at the boundary).
    """
    n = len(sat_positions)
    elevations = np.empty(n)
    for i in range(n):
        elevations[i] = elevation_angle(hap, sat_positions[i])
    flags = elevations >= theta_min
    return VisibilityMask(flags=flags, elevations=elevations)
