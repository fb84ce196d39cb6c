"""Batch experiment driver: training, evaluation, heuristic baselines,
plot-data export, and trajectory-log validation.

All outputs are plain files (episode CSV, step JSONL, summary JSON,
checkpoints); with tuner mode `none` or `scripted` a fixed seed makes every
byte of them reproducible.  Wall-clock timings go to a separate file so the
episode CSV stays deterministic.
"""

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import tuner as tuner_mod
from .agent import (Hyperparams, ReplayBuffer, TqcAgent, epsilon_schedule)
from .config import ExperimentConfig
from .env import Action, DownlinkEnv, episode_objectives, largest_remainder

log = logging.getLogger(__name__)

EPISODE_FIELDS = ["episode", "total_reward", "f1_sum", "f1_mean", "f2",
                  "epsilon", "theta"]


def _theta_json(hp: Hyperparams) -> str:
    return json.dumps(asdict(hp), sort_keys=True)


def _trace_header(cfg: ExperimentConfig) -> dict:
    sc = cfg.scenario
    return {
        "type": "header",
        "n_satellites": sc.n_satellites,
        "n_subcarriers": sc.rf.n_subcarriers,
        "users_per_cluster": sc.users_per_cluster,
        "episode_steps": sc.episode_steps,
        "eta_w": sc.eta_w,
        "zeta_w": sc.zeta_w,
    }


class _Jsonl:
    def __init__(self, path):
        self.fh = open(path, "w")

    def write(self, record):
        self.fh.write(json.dumps(record) + "\n")

    def close(self):
        self.fh.close()


def _apply_tuner(cfg, agent, bounds, episode, reward_history, endpoint,
                 tuning_log):
    """Run one tuning call and apply the (possibly unchanged) result at the
    episode boundary."""
    window = reward_history[-cfg.tuner.window:]
    req = tuner_mod.TuningRequest(theta=agent.hp, history=list(window),
                                  progress=episode / cfg.run.episodes)
    prompt = tuner_mod.build_prompt(req, bounds)
    before = agent.hp
    if cfg.tuner.mode == "scripted":
        after = tuner_mod.scripted_tune(req, bounds)
        info = {"fallback": False, "clamped_keys": []}
        excerpt = "scripted"
    else:
        reply = tuner_mod.fetch_llm(prompt, endpoint)
        after, info = tuner_mod.parse_and_clamp(reply, before, bounds)
        excerpt = reply[:200]
    agent.hp = after
    tuning_log.write({
        "episode": episode,
        "prompt_hash": hashlib.sha256(prompt.encode()).hexdigest(),
        "reply_excerpt": excerpt,
        "theta_before": asdict(before),
        "theta_after": asdict(after),
        "clamped_keys": info.get("clamped_keys", []),
        "fallback": bool(info.get("fallback", False)),
    })


def run_training(cfg: ExperimentConfig, out_dir, trace=True):
    """Train the agent end to end, emitting episodes.csv, steps.jsonl,
    tuning.jsonl, timings.jsonl and periodic checkpoints under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = cfg.scenario
    env_ss, agent_ss, sample_ss, buffer_ss = \
        np.random.SeedSequence(cfg.run.seed).spawn(4)
    env = DownlinkEnv(sc, env_ss)
    agent = TqcAgent(sc.observation_dim, sc.action_dim, sc.n_satellites,
                     cfg.agent_hp, hidden=cfg.hidden, seed=agent_ss)
    sample_rng = np.random.default_rng(sample_ss)
    buffer_rng = np.random.default_rng(buffer_ss)
    buffer = ReplayBuffer(cfg.agent_hp.buffer_capacity, sc.observation_dim,
                          sc.action_dim, sc.n_satellites)

    bounds = tuner_mod.Bounds.defaults(cfg.agent_hp)
    limits = dict(bounds.limits)
    limits.update(cfg.tuner.bounds_overrides)
    bounds = tuner_mod.Bounds(limits=limits)
    endpoint = tuner_mod.EndpointConfig.from_env()

    ep_csv = open(out / "episodes.csv", "w", newline="")
    writer = csv.writer(ep_csv)
    writer.writerow(EPISODE_FIELDS)
    steps_log = _Jsonl(out / "steps.jsonl") if trace else None
    if steps_log:
        steps_log.write(_trace_header(cfg))
    tuning_log = _Jsonl(out / "tuning.jsonl")
    timing_log = _Jsonl(out / "timings.jsonl")

    reward_history = []
    for episode in range(1, cfg.run.episodes + 1):
        t0 = time.monotonic()
        eps = epsilon_schedule(episode - 1, cfg.run.episodes, agent.hp)
        state = env.reset()
        infos = []
        total_reward = 0.0
        for _ in range(sc.episode_steps):
            obs = env.observe(state)
            if state.mask.any_visible():
                raw = agent.act(obs, state.mask, state.s_t, eps, sample_rng,
                                score_scale=sc.sat_score_scale)
                action = env.decode_action(raw)
            else:
                raw, _, _ = agent.policy.sample(obs, sample_rng)
                raw = np.asarray(raw, dtype=float)
                action = env.fallback_action(raw)
            next_state, reward, info = env.step(action)
            next_obs = env.observe(next_state)
            buffer.add(obs, raw, reward, next_obs, next_state.mask.flags,
                       info["done"])
            for _ in range(agent.hp.updates_per_step):
                agent.train_step(buffer, buffer_rng)
            total_reward += reward
            infos.append(info)
            if steps_log:
                steps_log.write({"episode": episode, **info})
            state = next_state
        f1_sum, f1_mean, f2 = episode_objectives(infos)
        writer.writerow([episode, repr(total_reward), repr(f1_sum),
                         repr(f1_mean), f2, repr(eps), _theta_json(agent.hp)])
        reward_history.append(total_reward)
        timing_log.write({"episode": episode,
                          "wall_ms": (time.monotonic() - t0) * 1e3})
        if cfg.tuner.mode != "none" and episode % cfg.tuner.interval == 0:
            _apply_tuner(cfg, agent, bounds, episode, reward_history,
                         endpoint, tuning_log)
        if cfg.run.checkpoint_every and episode % cfg.run.checkpoint_every == 0:
            agent.save(out / f"checkpoint_ep{episode:05d}.npz")
    agent.save(out / "checkpoint_final.npz")
    ep_csv.close()
    if steps_log:
        steps_log.close()
    tuning_log.close()
    timing_log.close()
    return {"episodes_csv": str(out / "episodes.csv"),
            "checkpoint": str(out / "checkpoint_final.npz"),
            "rewards": reward_history}


# -- evaluation and baselines -----------------------------------------------


def _equal_alloc(n_clusters, n_subcarriers):
    return largest_remainder(np.ones(n_clusters), n_subcarriers)


def _run_policy_episodes(cfg, policy_fn, episodes, seed_tag, trace_path=None):
    """Roll `episodes` deterministic episodes with a per-step action policy
    `policy_fn(env, state, rng)`; returns per-episode (f1_sum, f1_mean, f2,
    total_reward)."""
    sc = cfg.scenario
    results = []
    trace = _Jsonl(trace_path) if trace_path else None
    if trace:
        trace.write(_trace_header(cfg))
    for i in range(episodes):
        env = DownlinkEnv(sc, np.random.SeedSequence(
            entropy=cfg.run.seed, spawn_key=(seed_tag, i)))
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=cfg.run.seed, spawn_key=(seed_tag, i, 1)))
        state = env.reset()
        infos = []
        total_reward = 0.0
        for _ in range(sc.episode_steps):
            action = policy_fn(env, state, rng)
            state, reward, info = env.step(action)
            total_reward += reward
            infos.append(info)
            if trace:
                trace.write({"episode": i + 1, **info})
        f1_sum, f1_mean, f2 = episode_objectives(infos)
        results.append((f1_sum, f1_mean, f2, total_reward))
    if trace:
        trace.close()
    return results


def _summarize(method, results):
    f1_means = np.array([r[1] for r in results])
    f2s = np.array([r[2] for r in results])
    rewards = np.array([r[3] for r in results])
    return {
        "method": method,
        "episodes": len(results),
        "f1_mean": float(f1_means.mean()),
        "f1_mean_std": float(f1_means.std()),
        "f2": float(f2s.mean()),
        "f2_std": float(f2s.std()),
        "reward_mean": float(rewards.mean()),
        "reward_std": float(rewards.std()),
    }


def _write_summary(out_dir, name, summary, results):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"summary_{name}.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    with open(out / f"episodes_{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "f1_sum", "f1_mean", "f2", "total_reward"])
        for i, (f1s, f1m, f2, rew) in enumerate(results, start=1):
            w.writerow([i, repr(f1s), repr(f1m), f2, repr(rew)])


def run_eval(cfg: ExperimentConfig, checkpoint, episodes=None, out_dir=None):
    """Evaluate a checkpoint with the deterministic policy (masked argmax,
    epsilon 0)."""
    sc = cfg.scenario
    agent = TqcAgent.load(checkpoint)
    if agent.obs_dim != sc.observation_dim or agent.act_dim != sc.action_dim:
        raise ValueError(
            f"checkpoint dimensions (obs {agent.obs_dim}, act {agent.act_dim}) "
            f"do not match the scenario (obs {sc.observation_dim}, "
            f"act {sc.action_dim})")
    episodes = episodes if episodes is not None else cfg.run.eval_episodes

    def policy_fn(env, state, rng):
        raw = agent.policy.mean_action(env.observe(state))
        if state.mask.any_visible():
            return env.decode_action(raw)
        return env.fallback_action(raw)

    trace_path = Path(out_dir) / "eval_steps.jsonl" if out_dir else None
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    results = _run_policy_episodes(cfg, policy_fn, episodes, seed_tag=9001,
                                   trace_path=trace_path)
    summary = _summarize("eval", results)
    if out_dir:
        _write_summary(out_dir, "eval", summary, results)
    return summary


BASELINE_TAGS = {"random": 9101, "greedy_elevation": 9102, "sticky": 9103}


def run_baseline(cfg: ExperimentConfig, name, episodes=None, out_dir=None):
    """Heuristic reference policies sharing the evaluation metric format."""
    if name not in BASELINE_TAGS:
        raise ValueError(f"unknown baseline {name!r}; valid names: "
                         f"{sorted(BASELINE_TAGS)}")
    sc = cfg.scenario
    episodes = episodes if episodes is not None else cfg.run.eval_episodes
    equal = _equal_alloc(sc.n_clusters, sc.rf.n_subcarriers)

    def best_users(state):
        return np.array([int(np.argmax(a)) for a in state.channel_amp])

    def policy_fn(env, state, rng):
        vis = state.mask.visible_indices()
        if len(vis) == 0:
            return Action(next_sat=state.s_t, alloc=equal.copy(),
                          users=best_users(state))
        if name == "random":
            sat = int(rng.choice(vis))
            users = np.array([int(rng.integers(0, n))
                              for n in sc.users_per_cluster])
        elif name == "greedy_elevation":
            sat = int(vis[np.argmax(state.mask.elevations[vis])])
            users = best_users(state)
        else:  # sticky
            if state.mask.flags[state.s_t]:
                sat = state.s_t
            else:
                sat = int(vis[np.argmax(state.mask.elevations[vis])])
            users = best_users(state)
        return Action(next_sat=sat, alloc=equal.copy(), users=users)

    trace_path = Path(out_dir) / f"{name}_steps.jsonl" if out_dir else None
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    results = _run_policy_episodes(cfg, policy_fn, episodes,
                                   seed_tag=BASELINE_TAGS[name],
                                   trace_path=trace_path)
    summary = _summarize(name, results)
    if out_dir:
        _write_summary(out_dir, name, summary, results)
    return summary


# -- plot data ---------------------------------------------------------------


def rolling_mean(values, window):
    """Trailing mean over up to `window` samples (shorter at the start)."""
    out = np.empty(len(values))
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out[i] = acc / min(i + 1, window)
    return out


def emit_plot_data(from_dir, out_dir=None, window=20):
    """CSV exports for external plotting: reward and handover curves from
    episodes.csv plus a bar summary of every summary_*.json found."""
    src = Path(from_dir)
    out = Path(out_dir) if out_dir else src
    out.mkdir(parents=True, exist_ok=True)
    episodes_csv = src / "episodes.csv"
    if not episodes_csv.exists():
        raise FileNotFoundError(f"missing episode log: {episodes_csv}")
    episodes, rewards, f2s = [], [], []
    with open(episodes_csv) as fh:
        for row in csv.DictReader(fh):
            episodes.append(int(row["episode"]))
            rewards.append(float(row["total_reward"]))
            f2s.append(int(row["f2"]))
    roll = rolling_mean(np.array(rewards), window)
    with open(out / "reward_vs_episode.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "total_reward", f"rolling_mean_{window}"])
        for e, r, rm in zip(episodes, rewards, roll):
            w.writerow([e, repr(r), repr(float(rm))])
    with open(out / "handover_vs_episode.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "f2"])
        for e, f2 in zip(episodes, f2s):
            w.writerow([e, f2])
    summaries = sorted(src.glob("summary_*.json"))
    with open(out / "bar_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "f1_mean", "f2"])
        for path in summaries:
            s = json.loads(path.read_text())
            w.writerow([s["method"], repr(s["f1_mean"]), repr(s["f2"])])
    return {"reward_csv": str(out / "reward_vs_episode.csv"),
            "handover_csv": str(out / "handover_vs_episode.csv"),
            "bar_csv": str(out / "bar_summary.csv")}


# -- trajectory validation ---------------------------------------------------


def validate_trace(path):
    """Audit a step JSONL trace against the action-feasibility constraints
    and the handover / reward bookkeeping.  Returns a list of violation
    strings (empty means clean)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing trace file: {path}")
    violations = []
    header = None
    prev = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            rec = json.loads(line)
            if rec.get("type") == "header":
                header = rec
                continue
            if header is None:
                violations.append(f"line {lineno}: records before header")
                break
            ep = rec["episode"]
            if sum(rec["n"]) != header["n_subcarriers"]:
                violations.append(
                    f"line {lineno}: subcarrier sum {sum(rec['n'])} != "
                    f"{header['n_subcarriers']}")
            for i, (u, nu) in enumerate(zip(rec["u"],
                                            header["users_per_cluster"])):
                if not 0 <= u < nu:
                    violations.append(
                        f"line {lineno}: user {u} out of range for cluster {i}")
            if rec["visible"] and rec["s_t"] not in rec["visible"] \
                    and not rec.get("coverage_gap"):
                violations.append(
                    f"line {lineno}: satellite {rec['s_t']} not visible")
            expect = header["eta_w"] * rec["r_total"] \
                - header["zeta_w"] * (1.0 if rec["handover"] else 0.0)
            if not math.isclose(rec["reward"], expect, rel_tol=1e-9,
                                abs_tol=1e-12):
                violations.append(
                    f"line {lineno}: reward {rec['reward']} != recomputed "
                    f"{expect}")
            last = prev.get(ep)
            if last is not None:
                recount_ho = rec["s_t"] != last["s_t"]
                if rec["handover"] != recount_ho:
                    violations.append(
                        f"line {lineno}: handover flag inconsistent with "
                        f"connection change")
                if rec["n_handover"] != last["n_handover"] + int(rec["handover"]):
                    violations.append(
                        f"line {lineno}: handover counter not cumulative")
            prev[ep] = rec
    return violations
