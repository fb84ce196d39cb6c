"""Experiment configuration: file schema, defaults, and scenario building.

Config files are TOML or JSON with the sections `scenario`, `agent`,
`tuner`, and `run`.  The constellation is a list of entries that are either
explicit satellites {altitude_m, inclination_rad, raan_rad, phase_rad} or
generator shorthand {count, altitude_m, inclination_rad[, raan_rad]} that
spreads `count` satellites evenly in orbital phase.
"""

import json
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

import numpy as np

from .agent import Hyperparams
from .channel import FsoLinkParams, RfLinkParams
from .env import Cluster, ScenarioConfig
from .geometry import R_EARTH, OrbitalElements
from .mobility import GaussMarkovParams


@dataclass(frozen=True)
class TunerConfig:
    mode: str = "none"          # none | scripted | llm
    interval: int = 50          # episodes between tuning calls
    window: int = 20            # reward history length
    bounds_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("none", "scripted", "llm"):
            raise ValueError(f"unknown tuner mode {self.mode!r}")
        if self.interval < 1 or self.window < 1:
            raise ValueError("tuner interval and window must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    episodes: int = 1000
    seed: int = 0
    eval_episodes: int = 10
    checkpoint_every: int = 100


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig
    agent_hp: Hyperparams
    hidden: tuple
    tuner: TunerConfig
    run: RunConfig
    raw: dict  # normalized dict the above were built from


def _read_file(path) -> dict:
    text = open(path, "rb").read()
    if str(path).endswith(".json"):
        return json.loads(text)
    try:
        return tomllib.loads(text.decode())
    except tomllib.TOMLDecodeError:
        return json.loads(text)


def build_constellation(entries) -> list:
    sats = []
    for entry in entries:
        alt = float(entry["altitude_m"])
        inc = float(entry.get("inclination_rad", 0.0))
        raan = float(entry.get("raan_rad", 0.0))
        if "count" in entry:
            n = int(entry["count"])
            offset = float(entry.get("phase_offset_rad", 0.0))
            for j in range(n):
                sats.append(OrbitalElements(
                    inclination=inc, raan=raan, arg_perigee_init=0.0,
                    true_anomaly=offset + 2.0 * math.pi * j / n,
                    altitude_m=alt))
        else:
            sats.append(OrbitalElements(
                inclination=inc, raan=raan, arg_perigee_init=0.0,
                true_anomaly=float(entry.get("phase_rad", 0.0)), altitude_m=alt))
    return sats


def _tangent_basis(direction):
    """Two unit vectors orthogonal to `direction` (and each other)."""
    d = direction / np.linalg.norm(direction)
    helper = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(d, helper)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    return e1, e2


def build_clusters(entries, seed) -> list:
    """Materialize clusters; user positions not given explicitly are drawn
    uniformly in the tangent disc around the cluster center, deterministically
    from the run seed."""
    clusters = []
    for ci, entry in enumerate(entries):
        center = np.asarray(entry["center"], dtype=float)
        radius = float(entry.get("radius_m", 1000.0))
        if "user_positions" in entry:
            users = np.asarray(entry["user_positions"], dtype=float)
        else:
            n_users = int(entry["user_count"])
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=int(seed), spawn_key=(7001, ci)))
            e1, e2 = _tangent_basis(center)
            r = radius * np.sqrt(rng.random(n_users))
            phi = 2.0 * math.pi * rng.random(n_users)
            users = center[None, :] + r[:, None] * (
                np.cos(phi)[:, None] * e1[None, :]
                + np.sin(phi)[:, None] * e2[None, :])
        clusters.append(Cluster(center=center, radius_m=radius,
                                user_positions=users))
    return clusters


def build_scenario(sc: dict, seed: int) -> ScenarioConfig:
    satellites = build_constellation(sc["constellation"])
    hap = sc.get("hap", {})
    anchor = np.asarray(hap.get("anchor", [R_EARTH, 0.0, 0.0]), dtype=float)
    altitude = float(hap.get("altitude_m", 20000.0))
    start = anchor / np.linalg.norm(anchor) * (R_EARTH + altitude)
    half = np.asarray(hap.get("box_half_extents_m", [1000.0, 50000.0, 50000.0]),
                      dtype=float)
    slot_seconds = float(sc.get("slot_seconds", 10.0))
    gm = GaussMarkovParams(
        memory=float(hap.get("alpha", 0.85)),
        mean_velocity=np.asarray(hap.get("mean_velocity", [0.0, 0.0, 0.0]),
                                 dtype=float),
        sigma=np.asarray(hap.get("sigma", [5.0, 5.0, 0.5]), dtype=float),
        dt=slot_seconds,
        box_min=start - half,
        box_max=start + half)
    fso = FsoLinkParams(**sc.get("fso", {}))
    rf = RfLinkParams(**sc.get("rf", {}))
    theta_min = math.radians(float(sc.get("theta_min_deg", 10.0)))
    return ScenarioConfig(
        satellites=satellites,
        hap_start=start,
        gm=gm,
        clusters=build_clusters(sc["clusters"], seed),
        fso=fso,
        rf=rf,
        episode_steps=int(sc.get("episode_steps", 60)),
        slot_seconds=slot_seconds,
        theta_min=theta_min,
        eta_w=float(sc.get("eta_w", 1e-9)),
        zeta_w=float(sc.get("zeta_w", 1.0)),
        user_selection_mode=sc.get("user_selection_mode", "best_channel"),
        sat_score_scale=float(sc.get("sat_score_scale", 4.0)))


def load_config(path, seed=None, episodes=None, tuner_mode=None,
                tune_interval=None, tune_window=None) -> ExperimentConfig:
    """Parse a config file, applying CLI overrides before anything seeded is
    materialized."""
    data = _read_file(path)
    for section in ("scenario", "run"):
        if section not in data:
            raise ValueError(f"config {path}: missing [{section}] section")

    run_d = dict(data["run"])
    if seed is not None:
        run_d["seed"] = int(seed)
    if episodes is not None:
        run_d["episodes"] = int(episodes)
    run = RunConfig(
        episodes=int(run_d.get("episodes", 1000)),
        seed=int(run_d.get("seed", 0)),
        eval_episodes=int(run_d.get("eval_episodes", 10)),
        checkpoint_every=int(run_d.get("checkpoint_every", 100)))
    if run.episodes < 0:
        raise ValueError("episodes must be >= 0")

    agent_d = dict(data.get("agent", {}))
    hidden = tuple(agent_d.pop("hidden", (256, 256, 128)))
    agent_hp = Hyperparams(**agent_d)

    tuner_d = dict(data.get("tuner", {}))
    if tuner_mode is not None:
        tuner_d["mode"] = tuner_mode
    if tune_interval is not None:
        tuner_d["interval"] = int(tune_interval)
    if tune_window is not None:
        tuner_d["window"] = int(tune_window)
    tuner = TunerConfig(
        mode=tuner_d.get("mode", "none"),
        interval=int(tuner_d.get("interval", 50)),
        window=int(tuner_d.get("window", 20)),
        bounds_overrides={k: tuple(v)
                          for k, v in tuner_d.get("bounds", {}).items()})

    scenario = build_scenario(data["scenario"], run.seed)
    normalized = {"scenario": data["scenario"], "agent": data.get("agent", {}),
                  "tuner": data.get("tuner", {}),
                  "run": {"episodes": run.episodes, "seed": run.seed,
                          "eval_episodes": run.eval_episodes,
                          "checkpoint_every": run.checkpoint_every}}
    return ExperimentConfig(scenario=scenario, agent_hp=agent_hp,
                            hidden=hidden, tuner=tuner, run=run,
                            raw=normalized)
