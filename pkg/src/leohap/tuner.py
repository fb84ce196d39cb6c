"""Hyperparameter meta-controller: scripted rules or a remote LLM endpoint.

Every failure mode on the LLM path (network, auth, chatty or malformed
replies) degrades to "no change"; training never blocks on the tuner.
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np
import requests

from .agent import Hyperparams

log = logging.getLogger(__name__)

PROMPT_VERSION = 1

# tunable keys -> (Hyperparams field, integer-valued)
TUNABLE = {
    "discount": ("discount", False),
    "learning_rate": ("learning_rate", False),
    "temperature": ("temperature", False),
    "soft_update": ("soft_update", False),
    "drop_per_critic": ("drop_per_critic", True),
    "e_decay": ("e_decay", False),
    "batch_size": ("batch_size", True),
}
# Changing the critic output width mid-training is ill-defined, so the
# quantile count is accepted in replies but clamped to its current value.
FROZEN = ("n_quantiles",)

DEFAULT_BOUNDS = {
    "discount": (0.9, 0.9999),
    "learning_rate": (1e-5, 1e-2),
    "temperature": (0.0, 1.0),
    "soft_update": (1e-3, 0.1),
    "drop_per_critic": (0.0, None),  # upper bound filled from n_quantiles - 1
    "e_decay": (0.05, 1.0),
    "batch_size": (32.0, 1024.0),
}


@dataclass(frozen=True)
class Bounds:
    limits: dict

    @classmethod
    def defaults(cls, hp: Hyperparams) -> "Bounds":
        limits = dict(DEFAULT_BOUNDS)
        limits["drop_per_critic"] = (0.0, float(hp.n_quantiles - 1))
        return cls(limits=limits)

    def clamp(self, key, value):
        lo, hi = self.limits[key]
        return min(max(value, lo), hi)


@dataclass(frozen=True)
class TuningRequest:
    theta: Hyperparams
    history: list       # last W episode rewards
    progress: float     # e / E in [0, 1]

    def __post_init__(self):
        if not 0.0 <= self.progress <= 1.0:
            raise ValueError(f"progress must lie in [0, 1], got {self.progress}")


@dataclass(frozen=True)
class EndpointConfig:
    url: str = ""
    api_key: str = ""
    model: str = ""
    timeout_s: float = 30.0

    @classmethod
    def from_env(cls) -> "EndpointConfig":
        return cls(url=os.environ.get("LLM_API_URL", ""),
                   api_key=os.environ.get("LLM_API_KEY", ""),
                   model=os.environ.get("LLM_MODEL", ""))


FETCH_FAILED = "<<fetch-failed>>"  # sentinel; never parses as JSON


def build_prompt(req: TuningRequest, bounds: Bounds) -> str:
    """Deterministic prompt: parameter table, reward history, progress, and
    the reply contract (one flat JSON object)."""
    lines = [
        f"You are tuning the hyperparameters of a reinforcement-learning run "
        f"(prompt v{PROMPT_VERSION}).",
        "",
        "Current hyperparameters (name = value, allowed range):",
    ]
    for key, (field_name, _) in TUNABLE.items():
        lo, hi = bounds.limits[key]
        lines.append(f"  {key} = {getattr(req.theta, field_name)!r}  "
                     f"(range [{lo!r}, {hi!r}])")
    lines.append(f"  n_quantiles = {req.theta.n_quantiles!r}  (frozen)")
    lines.append("")
    if req.history:
        hist = ", ".join(repr(float(r)) for r in req.history)
        lines.append(f"Recent episode rewards (oldest first): [{hist}]")
    else:
        lines.append("Recent episode rewards: no history yet")
    lines.append(f"Training progress: {req.progress!r} of 1.0")
    lines.append("")
    lines.append(
        "Reply with a single flat JSON object mapping parameter names to "
        "numbers, containing only the parameters you want to change. "
        "No other text.")
    return "\n".join(lines)


def extract_first_json(text: str):
    """First balanced JSON object embedded anywhere in the text, or None."""
    dec = json.JSONDecoder()
    idx = text.find("{")
    while idx != -1:
        try:
            obj, _ = dec.raw_decode(text, idx)
        except (ValueError, TypeError):
            idx = text.find("{", idx + 1)
            continue
        if isinstance(obj, dict):
            return obj
        idx = text.find("{", idx + 1)
    return None


def parse_and_clamp(reply: str, current: Hyperparams, bounds: Bounds):
    """Apply the first JSON object in `reply` to `current`, clamping every
    recognized numeric value to bounds.  Returns (new_hp, info); any
    structural failure returns `current` unchanged with fallback=True."""
    info = {"fallback": False, "clamped_keys": [], "applied_keys": [],
            "ignored_keys": []}
    obj = extract_first_json(reply) if isinstance(reply, str) else None
    if obj is None:
        info["fallback"] = True
        return current, info
    updates = {}
    for key, value in obj.items():
        if key in FROZEN:
            info["clamped_keys"].append(key)
            continue
        if key not in TUNABLE:
            info["ignored_keys"].append(key)
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            info["ignored_keys"].append(key)
            continue
        field_name, is_int = TUNABLE[key]
        clamped = bounds.clamp(key, float(value))
        if clamped != float(value):
            info["clamped_keys"].append(key)
        updates[field_name] = int(round(clamped)) if is_int else float(clamped)
        info["applied_keys"].append(key)
    if not updates:
        return current, info
    try:
        return replace(current, **updates), info
    except ValueError:
        # combination rejected by the Hyperparams invariants
        info["fallback"] = True
        info["applied_keys"] = []
        return current, info


def scripted_tune(req: TuningRequest, bounds: Bounds) -> Hyperparams:
    """Deterministic rule set: halve the learning rate on oscillating
    rewards; stretch the exploration decay on a plateau; else no change."""
    hp = req.theta
    hist = np.asarray(req.history, dtype=float)
    if len(hist) < 2:
        return hp
    mean = hist.mean()
    cv = hist.std() / (abs(mean) + 1e-12)
    if cv > 0.5:
        lr = bounds.clamp("learning_rate", hp.learning_rate / 2.0)
        return replace(hp, learning_rate=lr)
    half = len(hist) // 2
    first, last = hist[:half].mean(), hist[half:].mean()
    if abs(last - first) / (abs(first) + 1e-12) < 0.02:
        decay = bounds.clamp("e_decay", hp.e_decay * 1.1)
        return replace(hp, e_decay=decay)
    return hp


def fetch_llm(prompt: str, endpoint: EndpointConfig) -> str:
    """POST the prompt to an OpenAI-style chat endpoint; one retry; returns
    the assistant text, or FETCH_FAILED on any failure."""
    if not endpoint.url:
        log.warning("tuner: no LLM endpoint configured")
        return FETCH_FAILED
    payload = {
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": 0,
    }
    headers = {"Authorization": f"Bearer {endpoint.api_key}",
               "Content-Type": "application/json"}
    for attempt in range(2):
        try:
            resp = requests.post(endpoint.url, json=payload, headers=headers,
                                 timeout=endpoint.timeout_s)
            resp.raise_for_status()
            data = resp.json()
            return data["choices"][0]["message"]["content"]
        except Exception as exc:  # noqa: BLE001 - any transport failure degrades
            log.warning("tuner: LLM fetch attempt %d failed: %s", attempt + 1, exc)
    return FETCH_FAILED
