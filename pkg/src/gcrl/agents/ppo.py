"""PPO with the clipped surrogate objective, GAE and a linearly decaying learning rate."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from gcrl.env import EnvConfig, GraphColoringEnv
from gcrl.graph import colors_used
from gcrl.metrics import EpisodeRecord, RunMetrics
from gcrl.nn import (
    AdamState,
    Gradients,
    Mlp,
    NumericError,
    ShapeError,
    adam_step,
    clip_grad_norm,
    log_softmax,
    sample_from_uniform,
)
from gcrl.seeding import stream


@dataclass
class PpoConfig:
    clip_eps: float = 0.2
    horizon: int = 2048
    batch_size: int = 128
    epochs: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.95
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    lr: float = 3e-4
    total_steps: int = 200_000
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True
    policy_out_gain: float = 1.0

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        problems = []
        if not 0.0 < self.clip_eps < 1.0:
            problems.append(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if self.horizon < 1 or self.batch_size < 1:
            problems.append("horizon and batch_size must be positive")
        if self.batch_size > self.horizon:
            problems.append(f"batch_size {self.batch_size} exceeds horizon {self.horizon}")
        if self.epochs < 1:
            problems.append("epochs must be positive")
        if self.total_steps < 0:
            problems.append("total_steps must be non-negative")
        if problems:
            raise ValueError("; ".join(problems))


def ppo_ratio(logp_new, logp_old):
    return np.exp(np.asarray(logp_new) - np.asarray(logp_old))


def clipped_objective(ratio, advantage, eps: float):
    """Per-sample ``min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


def clipped_objective_grad(ratio, advantage, eps: float) -> np.ndarray:
    """d/d(ratio) of :func:`clipped_objective`; zero where the clipped branch is active."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    unclipped = ratio * advantage <= np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage
    inside = (ratio > 1.0 - eps) & (ratio < 1.0 + eps)
    return np.where(unclipped | inside, advantage, 0.0)


def linear_lr(t: int, total: int, lr0: float) -> float:
    if total <= 0:
        return lr0
    t = min(max(t, 0), total)
    return lr0 * (1.0 - t / total)


class RolloutBuffer:
    """Fixed-horizon on-policy storage; ``dones[t]`` marks that step t ended an episode."""

    def __init__(self, horizon: int, obs_size: int):
        self.horizon = horizon
        self.obs = np.zeros((horizon, obs_size))
        self.actions = np.zeros(horizon, dtype=np.int64)
        self.logp = np.zeros(horizon)
        self.rewards = np.zeros(horizon)
        self.values = np.zeros(horizon)
        self.dones = np.zeros(horizon, dtype=bool)
        self.advantages = np.zeros(horizon)
        self.returns = np.zeros(horizon)
        self.pos = 0
        self.finalized = False

    def add(self, obs, action, logp, reward, value, done) -> None:
        i = self.pos
        self.obs[i] = obs
        self.actions[i] = action
        self.logp[i] = logp
        self.rewards[i] = reward
        self.values[i] = value
        self.dones[i] = done
        self.pos += 1
        self.finalized = False

    @property
    def full(self) -> bool:
        return self.pos == self.horizon

    def reset(self) -> None:
        self.pos = 0
        self.finalized = False


def compute_advantages(buf: RolloutBuffer, gamma: float, lam: float, bootstrap_value: float) -> None:
    """Fill ``buf.advantages`` with GAE(gamma, lam) and ``buf.returns = A + V``."""
    n = buf.pos
    gae = 0.0
    for t in reversed(range(n)):
        nonterminal = 0.0 if buf.dones[t] else 1.0
        next_value = bootstrap_value if t == n - 1 else buf.values[t + 1]
        delta = buf.rewards[t] + gamma * next_value * nonterminal - buf.values[t]
        gae = delta + gamma * lam * nonterminal * gae
        buf.advantages[t] = gae
    buf.returns[:n] = buf.advantages[:n] + buf.values[:n]
    buf.finalized = True


def categorical_entropy(logp: np.ndarray) -> np.ndarray:
    return -np.sum(np.exp(logp) * logp, axis=-1)


def ppo_loss_and_grads(
    policy: Mlp,
    value: Mlp,
    obs: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PpoConfig,
) -> tuple[dict, Gradients, Gradients]:
    """Loss = -mean(clip surrogate) + vf_coef * MSE(V, R) - ent_coef * mean(entropy)."""
    b = len(actions)
    rows = np.arange(b)
    logits, pcache = policy.forward(obs)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_logp)
    surrogate = clipped_objective(ratio, advantages, cfg.clip_eps)
    pg_loss = -surrogate.mean()

    # d(pg_loss)/d(logp) = -(1/b) * dS/dratio * ratio
    dlogp = -clipped_objective_grad(ratio, advantages, cfg.clip_eps) * ratio / b
    dlogits = -probs * dlogp[:, None]
    dlogits[rows, actions] += dlogp

    entropy = categorical_entropy(logp_all)
    if cfg.ent_coef:
        # dH/dz_j = -p_j (log p_j + H)
        dH = -probs * (logp_all + entropy[:, None])
        dlogits -= cfg.ent_coef * dH / b

    v, vcache = value.forward(obs)
    v = v[:, 0]
    v_loss = np.mean((returns - v) ** 2)
    dv = (cfg.vf_coef * 2.0 * (v - returns) / b)[:, None]

    loss = pg_loss + cfg.vf_coef * v_loss - cfg.ent_coef * entropy.mean()
    if not np.isfinite(loss):
        raise NumericError("PPO loss is not finite")
    pg = policy.backward(pcache, dlogits)
    vg = value.backward(vcache, dv)
    stats = {
        "loss": float(loss),
        "pg_loss": float(pg_loss),
        "value_loss": float(v_loss),
        "entropy": float(entropy.mean()),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_eps)),
        "mean_ratio": float(ratio.mean()),
        "surrogate": float(surrogate.mean()),
    }
    return stats, pg, vg


def make_nets(obs_size: int, num_actions: int, cfg: PpoConfig, rng: np.random.Generator) -> tuple[Mlp, Mlp]:
    policy = Mlp([obs_size, *cfg.hidden, num_actions], cfg.activation, rng, out_gain=cfg.policy_out_gain)
    value = Mlp([obs_size, *cfg.hidden, 1], cfg.activation, rng)
    return policy, value


class PpoTrainer:
    """Owns the policy/value networks, optimizers, environment and RNG for one run.

    ``learn(total)`` behaves like a fresh training call: the episode restarts
    and the learning rate decays linearly from ``cfg.lr`` to 0 over ``total``
    steps. Networks and optimizer moments carry over between calls.
    """

    def __init__(self, env_cfg: EnvConfig, cfg: PpoConfig, seed: int, run_id: str = "ppo"):
        self.env_cfg = env_cfg
        self.cfg = cfg
        self.seed = seed
        self.policy, self.value = make_nets(env_cfg.obs_size, env_cfg.num_actions, cfg, stream(seed, "init"))
        self.popt = AdamState.for_net(self.policy, cfg.lr)
        self.vopt = AdamState.for_net(self.value, cfg.lr)
        self.rng = stream(seed, "agent")
        self.env = GraphColoringEnv(env_cfg)
        self.metrics = RunMetrics(run_id, config={"ppo": asdict(self.cfg), "env": env_cfg.settings()})
        self.global_steps = 0
        self.episodes = 0
        self.updates = 0
        self.perm_id = 0
        self.call_total = 0
        self.call_steps = 0
        self.last_stats: dict = {}
        self._obs: np.ndarray | None = None
        self._ep_reward = 0.0
        self._ep_len = 0

    def set_graph(self, env_cfg: EnvConfig, perm_id: int) -> None:
        if env_cfg.obs_size != self.env_cfg.obs_size or env_cfg.num_actions != self.env_cfg.num_actions:
            raise ShapeError(
                f"environment shape ({env_cfg.obs_size}, {env_cfg.num_actions}) does not match "
                f"networks ({self.env_cfg.obs_size}, {self.env_cfg.num_actions})"
            )
        self.env_cfg = env_cfg
        self.env = GraphColoringEnv(env_cfg)
        self.perm_id = perm_id
        self._obs = None

    def start(self, total_steps: int) -> None:
        self.call_total = int(total_steps)
        self.call_steps = 0
        self._obs = self.env.reset()
        self._ep_reward = 0.0
        self._ep_len = 0

    def learn(self, total_steps: int) -> RunMetrics:
        self.start(total_steps)
        return self.run()

    @property
    def finished(self) -> bool:
        return self.call_steps >= self.call_total

    def run(self, stop_after_updates: int | None = None) -> RunMetrics:
        t0 = time.perf_counter()
        done_updates = 0
        while not self.finished:
            if stop_after_updates is not None and done_updates >= stop_after_updates:
                break
            buf = self.collect()
            self.update(buf)
            done_updates += 1
        self.metrics.wall_clock += time.perf_counter() - t0
        return self.metrics

    def act(self, obs: np.ndarray) -> tuple[int, float, float]:
        logp = log_softmax(self.policy(obs))
        a = sample_from_uniform(np.exp(logp), self.rng.random())
        return a, float(logp[a]), float(self.value(obs)[0])

    def collect(self) -> RolloutBuffer:
        if self._obs is None:
            self._obs = self.env.reset()
        buf = RolloutBuffer(self.cfg.horizon, self.env_cfg.obs_size)
        gamma = self.cfg.gamma
        obs = self._obs
        self.lr_now = linear_lr(self.call_steps, self.call_total, self.cfg.lr)
        while not buf.full:
            a, logp, v = self.act(obs)
            nxt, r, terminated, truncated, info = self.env.step(a)
            self.global_steps += 1
            self.call_steps += 1
            self._ep_reward += r
            self._ep_len += 1
            stored_r = r
            if truncated:
                # time-limit cut: bootstrap from the state the cap interrupted
                stored_r += gamma * float(self.value(nxt)[0])
            done = terminated or truncated
            buf.add(obs, a, logp, stored_r, v, done)
            if done:
                self.episodes += 1
                self.metrics.add(
                    EpisodeRecord(
                        episode=self.episodes,
                        env_steps=self.global_steps,
                        length=self._ep_len,
                        reward=self._ep_reward,
                        solved=bool(info["solved"]),
                        colors_used=colors_used(self.env.state.coloring),
                        perm_id=self.perm_id,
                    )
                )
                self._ep_reward = 0.0
                self._ep_len = 0
                nxt = self.env.reset()
            obs = nxt
        self._obs = obs
        bootstrap = float(self.value(obs)[0])
        compute_advantages(buf, gamma, self.cfg.gae_lambda, bootstrap)
        return buf

    def update(self, buf: RolloutBuffer) -> dict:
        if not buf.finalized:
            raise RuntimeError("rollout buffer must be finalized before an update")
        cfg = self.cfg
        self.popt.lr = self.vopt.lr = self.lr_now
        adv = buf.advantages[: buf.pos].copy()
        if cfg.normalize_advantages and len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        n = buf.pos
        stats: dict = {}
        for epoch in range(cfg.epochs):
            order = self.rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                stats, pg, vg = ppo_loss_and_grads(
                    self.policy,
                    self.value,
                    buf.obs[idx],
                    buf.actions[idx],
                    buf.logp[idx],
                    adv[idx],
                    buf.returns[idx],
                    cfg,
                )
                if epoch == 0 and start == 0:
                    stats["first_surrogate"] = stats["surrogate"]
                    stats["first_mean_ratio"] = stats["mean_ratio"]
                    first = {k: stats[k] for k in ("first_surrogate", "first_mean_ratio")}
                (pg, vg), _ = clip_grad_norm([pg, vg], cfg.max_grad_norm)
                adam_step(self.policy, pg, self.popt)
                adam_step(self.value, vg, self.vopt)
        self.updates += 1
        stats.update(first)
        stats["lr"] = self.lr_now
        self.last_stats = stats
        return stats


def train_ppo(env_cfg: EnvConfig, cfg: PpoConfig, seed: int, run_id: str = "ppo") -> tuple[tuple[Mlp, Mlp], RunMetrics]:
    trainer = PpoTrainer(env_cfg, cfg, seed, run_id)
    metrics = trainer.learn(cfg.total_steps)
    return (trainer.policy, trainer.value), metrics
