"""Truncated-quantile-critics learner with a tanh-squashed Gaussian policy,
visibility-masked satellite selection and epsilon exploration.

The continuous policy emits a raw vector in [-1, 1]^d; discrete decisions
come from the environment's action decoder.  Critics estimate return
quantiles, and targets drop the largest pooled quantiles to curb
overestimation.
"""

import json
from dataclasses import dataclass, asdict, replace

import numpy as np

from .nets import Adam, Mlp, soft_update

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6


@dataclass(frozen=True)
class Hyperparams:
    discount: float = 0.999
    learning_rate: float = 1e-4
    temperature: float = 0.2        # entropy coefficient
    soft_update: float = 0.005
    n_quantiles: int = 25           # per critic
    n_critics: int = 2
    drop_per_critic: int = 2
    epsilon0: float = 0.2
    e_decay: float = 0.3
    batch_size: int = 256
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    updates_per_step: int = 1
    huber_kappa: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")
        if not 0.0 < self.soft_update <= 1.0:
            raise ValueError("soft-update coefficient must lie in (0, 1]")
        if self.n_quantiles < 1 or self.n_critics < 1:
            raise ValueError("need at least one quantile and one critic")
        if not 0 <= self.drop_per_critic < self.n_quantiles:
            raise ValueError(
                f"drop_per_critic must lie in [0, {self.n_quantiles - 1}]")
        if not 0.0 <= self.epsilon0 <= 1.0:
            raise ValueError("epsilon0 must lie in [0, 1]")
        if not 0.0 < self.e_decay <= 1.0:
            raise ValueError("e_decay must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch size and buffer capacity must be positive")
        if self.warmup_steps < 0 or self.updates_per_step < 0:
            raise ValueError("warmup_steps and updates_per_step must be >= 0")

    @property
    def pooled_quantiles(self) -> int:
        return self.n_critics * self.n_quantiles

    @property
    def pooled_drop(self) -> int:
        return self.n_critics * self.drop_per_critic


def quantile_fractions(m: int) -> np.ndarray:
    """Midpoint quantile fractions tau_i = (2i - 1) / (2m)."""
    return (2.0 * np.arange(1, m + 1) - 1.0) / (2.0 * m)


def quantile_huber(tau, u, kappa=1.0):
    """Asymmetric Huber-smoothed pinball loss."""
    tau = np.asarray(tau, dtype=float)
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    huber = np.where(au <= kappa, 0.5 * u * u, kappa * (au - 0.5 * kappa))
    return np.abs(tau - (u < 0.0)) * huber


def _quantile_huber_grad_wrt_pred(tau, u, kappa=1.0):
    """d rho_tau(y - z) / d z  (u = y - z)."""
    au = np.abs(u)
    dhuber = np.where(au <= kappa, u, kappa * np.sign(u))
    return -np.abs(tau - (u < 0.0)) * dhuber


def truncated_mean(pooled, k: int):
    """Mean of the smallest N - k entries along the last axis."""
    pooled = np.asarray(pooled, dtype=float)
    n = pooled.shape[-1]
    if not 0 <= k < n:
        raise ValueError(f"truncation count {k} must lie in [0, {n - 1}]")
    kept = np.sort(pooled, axis=-1)[..., :n - k]
    return kept.mean(axis=-1)


def tqc_target(r, pooled_next, logp_next, hp: Hyperparams, done=False):
    """Distributional Bellman target: reward plus the discounted truncated
    quantile mean with the entropy bonus; zero bracket for terminal states."""
    pooled_next = np.asarray(pooled_next, dtype=float)
    k = hp.pooled_drop
    if k >= pooled_next.shape[-1]:
        raise ValueError("cannot drop all pooled quantiles")
    bracket = truncated_mean(pooled_next, k) - hp.temperature * np.asarray(logp_next)
    return np.asarray(r) + hp.discount * np.where(np.asarray(done, dtype=bool),
                                                  0.0, bracket)


def critic_loss(predicted, taus, y, kappa=1.0):
    """Per-critic quantile regression loss: mean over the batch of the sum of
    quantile-Huber terms against the scalar targets."""
    predicted = np.atleast_2d(np.asarray(predicted, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    u = y[:, None] - predicted
    return float(quantile_huber(taus[None, :], u, kappa).sum(axis=1).mean())


def epsilon_schedule(e: int, total_episodes: int, hp: Hyperparams) -> float:
    """Linear exploration decay reaching exactly zero at e_decay * E."""
    return max(hp.epsilon0 * (1.0 - e / (hp.e_decay * total_episodes)), 0.0)


def masked_satellite_probs(scores, visible, scale=1.0):
    """Renormalized satellite distribution restricted to the visible set."""
    z = scale * np.asarray(scores, dtype=float)[visible]
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def select_action(policy_raw, mask, current_sat, eps, rng, score_scale=1.0):
    """Sample the serving satellite from the masked policy distribution; with
    probability eps switch to a uniformly random visible alternative.  The
    satellite block of the raw action is overridden so that a downstream
    argmax decode lands on the chosen satellite."""
    visible = mask.visible_indices()
    if len(visible) == 0:
        raise ValueError("mask has no visible satellite")
    n_sats = len(mask)
    raw = np.array(policy_raw, dtype=float)
    probs = masked_satellite_probs(raw[:n_sats], visible, scale=score_scale)
    pick = int(rng.choice(visible, p=probs))
    if eps > 0.0 and rng.random() < eps:
        alternatives = visible[visible != pick]
        if len(alternatives) > 0:
            pick = int(rng.choice(alternatives))
    raw[:n_sats] = -1.0
    raw[pick] = 1.0
    return raw


class TanhGaussianPolicy:
    """Diagonal Gaussian in pre-squash space; actions are tanh(mu + sigma*n)."""

    def __init__(self, obs_dim, act_dim, hidden, rng=None, net=None):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.net = net if net is not None else Mlp(
            [obs_dim] + list(hidden) + [2 * act_dim], rng=rng)

    def _heads(self, out):
        mu = out[:, :self.act_dim]
        raw = out[:, self.act_dim:]
        t = np.tanh(raw)
        log_std = LOG_STD_MIN + 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (t + 1.0)
        return mu, log_std, t

    def mean_action(self, obs):
        out = self.net.forward(obs)
        mu, _, _ = self._heads(out)
        return np.tanh(mu)[0] if np.asarray(obs).ndim == 1 else np.tanh(mu)

    def sample(self, obs, rng):
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        noise = rng.standard_normal((obs.shape[0], self.act_dim))
        a, logp = self.evaluate(obs, noise)
        return a[0] if a.shape[0] == 1 else a, noise, logp

    def evaluate(self, obs, noise):
        """Deterministic reparameterized action and log-prob for given noise."""
        out = self.net.forward(obs)
        mu, log_std, _ = self._heads(out)
        std = np.exp(log_std)
        z = mu + std * noise
        a = np.tanh(z)
        logp = (-log_std - 0.5 * noise ** 2 - 0.5 * np.log(2.0 * np.pi)
                - np.log(1.0 - a ** 2 + SQUASH_EPS)).sum(axis=1)
        return a, logp


class ReplayBuffer:
    def __init__(self, capacity, obs_dim, act_dim, n_sats):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.next_mask = np.zeros((capacity, n_sats), dtype=bool)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._idx = 0

    def add(self, obs, act, rew, next_obs, next_mask, done):
        i = self._idx
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.next_mask[i] = next_mask
        self.done[i] = done
        self._idx = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size, rng):
        return rng.integers(0, self.size, size=batch_size)

    def __len__(self):
        return self.size


class TqcAgent:
    def __init__(self, obs_dim, act_dim, n_sats, hp: Hyperparams,
                 hidden=(256, 256, 128), seed=0):
        ss = seed if isinstance(seed, np.random.SeedSequence) \
            else np.random.SeedSequence(seed)
        init_ss, train_ss = ss.spawn(2)
        init_rng = np.random.default_rng(init_ss)
        self.rng = np.random.default_rng(train_ss)
        self.hp = hp
        self.obs_dim, self.act_dim, self.n_sats = obs_dim, act_dim, n_sats
        self.hidden = tuple(hidden)
        self.taus = quantile_fractions(hp.n_quantiles)

        self.policy = TanhGaussianPolicy(obs_dim, act_dim, hidden, rng=init_rng)
        critic_sizes = [obs_dim + act_dim] + list(hidden) + [hp.n_quantiles]
        self.critics = [Mlp(critic_sizes, rng=init_rng)
                        for _ in range(hp.n_critics)]
        self.targets = [c.copy() for c in self.critics]
        self.policy_opt = Adam(self.policy.net.parameters())
        self.critic_opts = [Adam(c.parameters()) for c in self.critics]
        self.buffer = None  # created by the training harness

    # -- acting -------------------------------------------------------------

    def act(self, obs, mask, current_sat, eps, rng, score_scale=1.0):
        """Stochastic raw action for training, satellite block overridden by
        the masked/epsilon selection rule."""
        raw, _, _ = self.policy.sample(obs, rng)
        return select_action(raw, mask, current_sat, eps, rng,
                             score_scale=score_scale)

    # -- losses with analytic gradients -------------------------------------

    def pooled_quantiles(self, nets, obs, act):
        obs = np.atleast_2d(obs)
        act = np.atleast_2d(act)
        x = np.concatenate([obs, act], axis=1)
        return np.concatenate([net.forward(x) for net in nets], axis=1)

    def critic_loss_and_grads(self, critic, obs, act, y):
        x = np.concatenate([np.atleast_2d(obs), np.atleast_2d(act)], axis=1)
        z, cache = critic.forward(x, want_cache=True)
        b = z.shape[0]
        u = np.asarray(y)[:, None] - z
        loss = float(quantile_huber(self.taus[None, :], u,
                                    self.hp.huber_kappa).sum(axis=1).mean())
        dz = _quantile_huber_grad_wrt_pred(self.taus[None, :], u,
                                           self.hp.huber_kappa) / b
        gw, gb, _ = critic.backward(cache, dz)
        return loss, gw + gb

    def policy_loss_and_grads(self, obs, noise):
        """Loss mean(alpha * logp - truncated quantile mean) and its gradient
        w.r.t. the policy parameters; the reparameterization path flows
        through the online critics' input gradients."""
        hp = self.hp
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        b, d = obs.shape[0], self.act_dim

        out, pol_cache = self.policy.net.forward(obs, want_cache=True)
        mu, log_std, t_raw = self.policy._heads(out)
        std = np.exp(log_std)
        z = mu + std * noise
        a = np.tanh(z)
        one_m_a2 = 1.0 - a ** 2
        logp = (-log_std - 0.5 * noise ** 2 - 0.5 * np.log(2.0 * np.pi)
                - np.log(one_m_a2 + SQUASH_EPS)).sum(axis=1)

        x = np.concatenate([obs, a], axis=1)
        pooled, caches = [], []
        for critic in self.critics:
            q, cache = critic.forward(x, want_cache=True)
            pooled.append(q)
            caches.append(cache)
        pooled_all = np.concatenate(pooled, axis=1)
        n = pooled_all.shape[1]
        k = hp.pooled_drop
        order = np.argsort(pooled_all, axis=1)
        kept_mask = np.zeros_like(pooled_all)
        np.put_along_axis(kept_mask, order[:, :n - k], 1.0, axis=1)
        q_trunc = (pooled_all * kept_mask).sum(axis=1) / (n - k)

        loss = float((hp.temperature * logp - q_trunc).mean())

        # dJ/da via the critics (discard their parameter grads)
        dj_da = np.zeros_like(a)
        m = hp.n_quantiles
        for ci, critic in enumerate(self.critics):
            dq = -kept_mask[:, ci * m:(ci + 1) * m] / ((n - k) * b)
            _, _, dx = critic.backward(caches[ci], dq)
            dj_da += dx[:, obs.shape[1]:]

        # chain through the squashed reparameterization
        dlogp_dz = 2.0 * a * one_m_a2 / (one_m_a2 + SQUASH_EPS)
        dj_dz = hp.temperature * dlogp_dz / b + dj_da * one_m_a2
        dj_dmu = dj_dz
        dj_dlogstd = dj_dz * std * noise - hp.temperature / b
        dj_draw = dj_dlogstd * 0.5 * (LOG_STD_MAX - LOG_STD_MIN) * (1.0 - t_raw ** 2)

        dy = np.concatenate([dj_dmu, dj_draw], axis=1)
        gw, gb, _ = self.policy.net.backward(pol_cache, dy)
        return loss, gw + gb

    # -- training -----------------------------------------------------------

    def compute_targets(self, rew, next_obs, done, rng):
        noise = rng.standard_normal((next_obs.shape[0], self.act_dim))
        a_next, logp_next = self.policy.evaluate(next_obs, noise)
        pooled = self.pooled_quantiles(self.targets, next_obs, a_next)
        return tqc_target(rew, pooled, logp_next, self.hp, done=done)

    def train_step(self, buffer: ReplayBuffer, rng):
        """One critic update per critic, one policy update, one soft update.
        No-op (returns None) before the buffer covers warmup and one batch."""
        hp = self.hp
        if len(buffer) < max(hp.batch_size, hp.warmup_steps):
            return None
        idx = buffer.sample_indices(hp.batch_size, rng)
        obs = buffer.obs[idx]
        act = buffer.act[idx]
        rew = buffer.rew[idx]
        next_obs = buffer.next_obs[idx]
        done = buffer.done[idx]

        y = self.compute_targets(rew, next_obs, done, rng)
        critic_losses = []
        for critic, opt in zip(self.critics, self.critic_opts):
            loss, grads = self.critic_loss_and_grads(critic, obs, act, y)
            opt.step(critic.parameters(), grads, hp.learning_rate)
            critic_losses.append(loss)

        noise = rng.standard_normal((obs.shape[0], self.act_dim))
        pol_loss, pol_grads = self.policy_loss_and_grads(obs, noise)
        self.policy_opt.step(self.policy.net.parameters(), pol_grads,
                             hp.learning_rate)

        for target, critic in zip(self.targets, self.critics):
            soft_update(target, critic, hp.soft_update)

        return {"critic_losses": critic_losses, "policy_loss": pol_loss}

    # -- checkpointing ------------------------------------------------------

    def save(self, path):
        arrays = {}
        def put(prefix, net):
            for i, w in enumerate(net.weights):
                arrays[f"{prefix}_w{i}"] = w
            for i, bb in enumerate(net.biases):
                arrays[f"{prefix}_b{i}"] = bb
        put("policy", self.policy.net)
        for ci, c in enumerate(self.critics):
            put(f"critic{ci}", c)
        for ci, c in enumerate(self.targets):
            put(f"target{ci}", c)
        meta = {
            "version": 1,
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "n_sats": self.n_sats,
            "hidden": list(self.hidden),
            "hyperparams": asdict(self.hp),
            "rng_state": self.rng.bit_generator.state,
        }
        arrays["meta_json"] = np.frombuffer(
            json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path):
        data = np.load(path)
        meta = json.loads(bytes(data["meta_json"]).decode())
        if meta["version"] != 1:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        hp = Hyperparams(**meta["hyperparams"])
        agent = cls(meta["obs_dim"], meta["act_dim"], meta["n_sats"], hp,
                    hidden=tuple(meta["hidden"]), seed=0)
        def fetch(prefix, net):
            net.weights = [np.array(data[f"{prefix}_w{i}"])
                           for i in range(net.n_layers)]
            net.biases = [np.array(data[f"{prefix}_b{i}"])
                          for i in range(net.n_layers)]
        fetch("policy", agent.policy.net)
        for ci, c in enumerate(agent.critics):
            fetch(f"critic{ci}", c)
        for ci, c in enumerate(agent.targets):
            fetch(f"target{ci}", c)
        agent.rng.bit_generator.state = meta["rng_state"]
        return agent
