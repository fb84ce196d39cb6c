"""Discrete-time MDP environment for the satellite -> HAP -> ground downlink.

Composes orbit propagation, HAP mobility and the channel models into
per-slot transitions with action decoding, reward and handover accounting.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel, geometry, mobility
from .channel import FsoLinkParams, RfLinkParams
from .geometry import OrbitalElements, VisibilityMask
from .mobility import GaussMarkovParams, HapState


class NoVisibleSatelliteError(RuntimeError):
    pass


class ActionContractError(ValueError):
    pass


@dataclass(frozen=True)
class Cluster:
    center: np.ndarray          # m, Earth-centered Cartesian, shape (3,)
    radius_m: float
    user_positions: np.ndarray  # m, shape (N_U, 3)

    @property
    def n_users(self) -> int:
        return len(self.user_positions)


@dataclass
class ScenarioConfig:
    satellites: list            # list[OrbitalElements]
    hap_start: np.ndarray       # m, shape (3,)
    gm: GaussMarkovParams
    clusters: list              # list[Cluster]
    fso: FsoLinkParams
    rf: RfLinkParams
    episode_steps: int = 60     # T
    slot_seconds: float = 10.0
    theta_min: float = math.radians(10.0)
    eta_w: float = 1e-9         # reward weight on rate (1 / Gbit/s)
    zeta_w: float = 1.0         # reward weight on handover
    user_selection_mode: str = "best_channel"  # or "policy"
    sat_score_scale: float = 4.0  # logit temperature for satellite sampling

    def __post_init__(self):
        if not self.satellites:
            raise ValueError("scenario needs at least one satellite")
        if not self.clusters:
            raise ValueError("scenario needs at least one cluster")
        if any(c.n_users == 0 for c in self.clusters):
            raise ValueError("every cluster must contain at least one user")
        if self.rf.n_subcarriers < len(self.clusters):
            raise ValueError("need at least one subcarrier per cluster")
        if self.episode_steps < 1:
            raise ValueError("episode must have at least one step")
        if self.user_selection_mode not in ("policy", "best_channel"):
            raise ValueError(f"unknown user_selection_mode {self.user_selection_mode!r}")

    @property
    def n_satellites(self) -> int:
        return len(self.satellites)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def users_per_cluster(self) -> list:
        return [c.n_users for c in self.clusters]

    @property
    def action_dim(self) -> int:
        return self.n_satellites + self.n_clusters + sum(self.users_per_cluster)

    @property
    def observation_dim(self) -> int:
        return 2 + 3 * self.n_satellites + 2 * self.n_clusters


@dataclass
class EnvState:
    t: int
    s_t: int
    n_handover: int
    delivered: np.ndarray        # bits per cluster, shape (N_C,)
    channel_amp: list            # per cluster: linear amplitudes, shape (N_U_i,)
    hap: HapState
    sat_positions: np.ndarray    # shape (N_L, 3)
    mask: VisibilityMask


@dataclass(frozen=True)
class Action:
    next_sat: int
    alloc: np.ndarray   # int subcarriers per cluster, sums to N_S
    users: np.ndarray   # selected user index per cluster (0-based)


def largest_remainder(weights, total: int) -> np.ndarray:
    """Round fractional quotas `weights/sum * total` to integers that sum to
    `total`; leftovers go to the largest remainders, ties to the lowest index."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    quota = w / w.sum() * total
    out = np.floor(quota).astype(int)
    rem = quota - out
    short = total - int(out.sum())
    order = np.lexsort((np.arange(len(w)), -rem))
    for idx in order[:short]:
        out[idx] += 1
    return out


def _softmax(x):
    z = x - np.max(x)
    e = np.exp(z)
    return e / e.sum()


class DownlinkEnv:
    """One environment instance owns its RNG streams; single-threaded."""

    def __init__(self, config: ScenarioConfig, seed):
        self.config = config
        if isinstance(seed, np.random.SeedSequence):
            ss = seed
        else:
            ss = np.random.SeedSequence(seed)
        fade_ss, hap_ss = ss.spawn(2)
        self._rng_fade = np.random.default_rng(fade_ss)
        self._rng_hap = np.random.default_rng(hap_ss)
        self.state = None
        # deterministic per-cluster path dB cache, refreshed each slot
        self._path_db = None

    # -- lifecycle ----------------------------------------------------------

    def reset(self) -> EnvState:
        cfg = self.config
        sat_positions = np.stack([geometry.propagate_satellite(e, 0.0)
                                  for e in cfg.satellites])
        hap = HapState(p=np.array(cfg.hap_start, dtype=float), v=np.zeros(3))
        mask = geometry.visible_set(sat_positions, hap.p, cfg.theta_min)
        if not mask.any_visible():
            raise NoVisibleSatelliteError(
                "no satellite visible at t=0; the scenario must guarantee "
                "initial coverage")
        vis = mask.visible_indices()
        s0 = int(vis[np.argmax(mask.elevations[vis])])
        state = EnvState(
            t=0, s_t=s0, n_handover=0,
            delivered=np.zeros(cfg.n_clusters),
            channel_amp=self._sample_channels(hap),
            hap=hap, sat_positions=sat_positions, mask=mask)
        self.state = state
        return state

    def _sample_channels(self, hap: HapState) -> list:
        """Block-fading draw for every user of every cluster at the current
        HAP position: linear amplitude = path gain * Nakagami fade."""
        cfg = self.config
        amps = []
        for c in cfg.clusters:
            d = np.linalg.norm(c.user_positions - hap.p, axis=1)
            path = np.array([channel.db_to_amplitude(channel.rf_gain_db(cfg.rf, di))
                             for di in d])
            g = channel.sample_nakagami(cfg.rf.nakagami_m, cfg.rf.nakagami_omega,
                                        self._rng_fade, size=len(d))
            amps.append(path * g)
        return amps

    # -- action decoding ----------------------------------------------------

    def decode_blocks(self, raw):
        """Split a raw policy vector into (sat scores, alloc, users) without
        touching the satellite choice."""
        cfg = self.config
        raw = np.asarray(raw, dtype=float)
        if len(raw) != cfg.action_dim:
            raise ActionContractError(
                f"raw action length {len(raw)} != {cfg.action_dim}")
        nl, nc = cfg.n_satellites, cfg.n_clusters
        sat_scores = raw[:nl]
        alloc = largest_remainder(_softmax(raw[nl:nl + nc]), cfg.rf.n_subcarriers)
        users = np.empty(nc, dtype=int)
        off = nl + nc
        for i, nu in enumerate(cfg.users_per_cluster):
            if self.config.user_selection_mode == "best_channel":
                users[i] = int(np.argmax(self.state.channel_amp[i]))
            else:
                users[i] = int(np.argmax(raw[off:off + nu]))
            off += nu
        return sat_scores, alloc, users

    def decode_action(self, raw, rng=None) -> Action:
        """Map a raw [-1, 1]^d vector to a feasible Action.

        The satellite block is restricted to the currently visible set:
        argmax when `rng` is None (evaluation), otherwise a categorical
        sample from the renormalized masked distribution (training).
        """
        sat_scores, alloc, users = self.decode_blocks(raw)
        mask = self.state.mask
        vis = mask.visible_indices()
        if len(vis) == 0:
            raise NoVisibleSatelliteError("no visible satellite")
        if rng is None:
            next_sat = int(vis[np.argmax(sat_scores[vis])])
        else:
            p = _softmax(self.config.sat_score_scale * sat_scores[vis])
            next_sat = int(rng.choice(vis, p=p))
        return Action(next_sat=next_sat, alloc=alloc, users=users)

    def fallback_action(self, raw) -> Action:
        """Action used when no satellite is visible: keep the current
        connection, decode the remaining blocks normally."""
        _, alloc, users = self.decode_blocks(raw)
        return Action(next_sat=self.state.s_t, alloc=alloc, users=users)

    def _validate_action(self, action: Action):
        cfg = self.config
        alloc = np.asarray(action.alloc)
        if len(alloc) != cfg.n_clusters or int(alloc.sum()) != cfg.rf.n_subcarriers:
            raise ActionContractError(
                f"subcarrier allocation {alloc.tolist()} must sum to "
                f"{cfg.rf.n_subcarriers}")
        if np.any(alloc < 0) or np.any(alloc > cfg.rf.n_subcarriers):
            raise ActionContractError("per-cluster allocation out of range")
        for i, (u, nu) in enumerate(zip(action.users, cfg.users_per_cluster)):
            if not 0 <= u < nu:
                raise ActionContractError(f"user index {u} out of range for cluster {i}")
        if self.state.mask.any_visible() and not self.state.mask.flags[action.next_sat]:
            raise ActionContractError(
                f"satellite {action.next_sat} is not visible at t={self.state.t}")

    # -- transition ---------------------------------------------------------

    def step(self, action: Action):
        cfg = self.config
        state = self.state
        self._validate_action(action)

        coverage_gap = not state.mask.any_visible()
        if coverage_gap:
            next_sat = state.s_t    # retain connection, no handover charge
            handover = False
        else:
            next_sat = int(action.next_sat)
            handover = next_sat != state.s_t
        n_handover = state.n_handover + (1 if handover else 0)

        if coverage_gap:
            r_fso = 0.0
        else:
            fades = channel.sample_gamma_gamma(cfg.fso.gg_alpha, cfg.fso.gg_beta,
                                               self._rng_fade,
                                               size=cfg.fso.n_apertures)
            r_fso = channel.fso_rate(cfg.fso.bandwidth_hz,
                                     channel.fso_snr(cfg.fso, fades))

        raw_rates = np.array([
            channel.rf_rate(int(action.alloc[i]), cfg.rf,
                            float(state.channel_amp[i][action.users[i]]))
            for i in range(cfg.n_clusters)])
        split = channel.effective_rates(r_fso, raw_rates)

        delivered = state.delivered + split.per_cluster * cfg.slot_seconds
        reward = cfg.eta_w * split.r_total - cfg.zeta_w * (1.0 if handover else 0.0)

        t_next = state.t + 1
        sat_positions = np.stack([
            geometry.propagate_satellite(e, t_next * cfg.slot_seconds)
            for e in cfg.satellites])
        hap = mobility.step_hap(state.hap, cfg.gm, self._rng_hap)
        mask = geometry.visible_set(sat_positions, hap.p, cfg.theta_min)

        next_state = EnvState(
            t=t_next, s_t=next_sat, n_handover=n_handover,
            delivered=delivered,
            channel_amp=self._sample_channels(hap),
            hap=hap, sat_positions=sat_positions, mask=mask)
        self.state = next_state

        info = {
            "t": state.t,
            "s_t": next_sat,
            "handover": handover,
            "n_handover": n_handover,
            "coverage_gap": coverage_gap,
            "r_fso": r_fso,
            "r_total": split.r_total,
            "per_cluster_rates": split.per_cluster.tolist(),
            "n": np.asarray(action.alloc).tolist(),
            "u": np.asarray(action.users).tolist(),
            "visible": state.mask.visible_indices().tolist(),
            "reward": reward,
            "done": t_next >= cfg.episode_steps,
        }
        return next_state, reward, info

    # -- observation --------------------------------------------------------

    def observe(self, state: EnvState = None) -> np.ndarray:
        """Fixed-length numeric encoding of the MDP state.

        Layout: [t/T, N_t/T] + per-satellite (flag, sin elevation) pairs +
        normalized delivered bits per cluster + best-user channel gain per
        cluster (dB, squashed to [-1, 1]) + current-satellite indicator.
        """
        if state is None:
            state = self.state
        cfg = self.config
        t_frac = state.t / cfg.episode_steps
        ho_frac = state.n_handover / cfg.episode_steps
        feats = [t_frac, ho_frac]
        for i in range(cfg.n_satellites):
            feats.append(1.0 if state.mask.flags[i] else 0.0)
            feats.append(math.sin(state.mask.elevations[i]))
        # delivered bits scaled to a per-slot rate of order one
        d_norm = state.delivered * cfg.eta_w / (cfg.episode_steps * cfg.slot_seconds)
        feats.extend(np.clip(d_norm, 0.0, 10.0))
        for i in range(cfg.n_clusters):
            amp = float(np.max(state.channel_amp[i]))
            db = 10.0 * math.log10(amp + 1e-30)
            feats.append(min(1.0, max(-1.0, db / 100.0)))
        for i in range(cfg.n_satellites):
            feats.append(1.0 if (state.mask.flags[i] and i == state.s_t) else 0.0)
        return np.asarray(feats, dtype=float)


def episode_objectives(trajectory):
    """Fold step infos of one complete episode into (f1_sum, f1_mean, f2)."""
    if not trajectory:
        raise ValueError("empty trajectory")
    totals = [rec["r_total"] for rec in trajectory]
    f1_sum = float(np.sum(totals))
    return f1_sum, f1_sum / len(totals), int(trajectory[-1]["n_handover"])
