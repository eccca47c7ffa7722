"""DQN: one-hidden-layer Q-network, replay memory, optional target network."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from gcrl.agents.tabular import td_target
from gcrl.env import EnvConfig, GraphColoringEnv
from gcrl.graph import colors_used
from gcrl.metrics import EpisodeRecord, RunMetrics
from gcrl.nn import AdamState, Mlp, NumericError, adam_step, clip_grad_norm
from gcrl.seeding import stream


@dataclass
class DqnConfig:
    hidden: int = 128
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5
    batch_size: int = 32
    target_sync: int = 1000
    lr: float = 1e-4
    buffer_capacity: int = 50_000
    warmup: int = 1000
    train_freq: int = 1
    max_grad_norm: float = 0.5

    def __post_init__(self) -> None:
        problems = []
        for name in ("eps_start", "eps_end", "eps_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            problems.append(f"batch_size {self.batch_size} must be in [1, buffer_capacity={self.buffer_capacity}]")
        if self.target_sync < 0 or self.warmup < 0 or self.train_freq < 1 or self.hidden < 1:
            problems.append("target_sync/warmup must be >= 0, train_freq/hidden >= 1")
        if problems:
            raise ValueError("; ".join(problems))


def epsilon_at(progress: float, cfg: DqnConfig) -> float:
    """Linear decay from eps_start to eps_end over the first eps_fraction of training."""
    if cfg.eps_fraction <= 0:
        return cfg.eps_end
    frac = min(1.0, max(0.0, progress) / cfg.eps_fraction)
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


class ReplayBuffer:
    """Ring buffer of ``(obs, action, reward, next_obs, done)`` transitions."""

    def __init__(self, capacity: int, obs_size: int, rng: np.random.Generator):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_size), dtype=np.uint8)
        self.next_obs = np.zeros((capacity, obs_size), dtype=np.uint8)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0
        self.rng = rng

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward, next_obs, done) -> None:
        i = self.pos
        self.obs[i] = obs
        self.next_obs[i] = next_obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.dones[i] = done
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int) -> np.ndarray:
        if batch > self.size:
            raise ValueError(f"cannot sample {batch} distinct transitions from {self.size}")
        idx = self.rng.integers(0, self.size, size=batch)
        while len(np.unique(idx)) < batch:
            idx = self.rng.integers(0, self.size, size=batch)
        return idx

    def sample(self, batch: int):
        idx = self.sample_indices(batch)
        return (
            self.obs[idx].astype(np.float64),
            self.actions[idx],
            self.rewards[idx],
            self.next_obs[idx].astype(np.float64),
            self.dones[idx],
        )


def huber_grad(err: np.ndarray, delta: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean Huber loss of ``err`` and its gradient w.r.t. ``err``."""
    a = np.abs(err)
    loss = np.where(a <= delta, 0.5 * err**2, delta * (a - 0.5 * delta))
    return float(loss.mean()), np.clip(err, -delta, delta) / len(err)


class DivergenceError(NumericError):
    def __init__(self, msg: str, last_good: Mlp | None = None):
        super().__init__(msg)
        self.last_good = last_good


def train_dqn(
    env_cfg: EnvConfig,
    cfg: DqnConfig,
    seed: int,
    total_steps: int | None = None,
    episodes: int | None = None,
    run_id: str = "dqn",
) -> tuple[Mlp, RunMetrics]:
    """Train by env-step budget or episode budget (exactly one must be given).

    Exploration progress is measured in the same unit as the budget.
    """
    if (total_steps is None) == (episodes is None):
        raise ValueError("give exactly one of total_steps or episodes")
    q = Mlp([env_cfg.obs_size, cfg.hidden, env_cfg.num_actions], "relu", stream(seed, "init"))
    target = q.copy() if cfg.target_sync > 0 else None
    last_good = q.copy()
    opt = AdamState.for_net(q, cfg.lr)
    rng = stream(seed, "agent")
    buf = ReplayBuffer(cfg.buffer_capacity, env_cfg.obs_size, stream(seed, "shuffle"))
    env = GraphColoringEnv(env_cfg)
    metrics = RunMetrics(run_id, config={"dqn": asdict(cfg), "env": env_cfg.settings()})
    t0 = time.perf_counter()
    steps, ep = 0, 0
    rows = np.arange(cfg.batch_size)

    def budget_left() -> bool:
        return steps < total_steps if total_steps is not None else ep < episodes

    obs = env.reset()
    ep_reward = 0.0
    while budget_left():
        progress = steps / total_steps if total_steps else (ep / episodes if episodes else 1.0)
        eps = epsilon_at(progress, cfg)
        if rng.random() < eps:
            a = int(rng.integers(env_cfg.num_actions))
        else:
            a = int(np.argmax(q(obs)))
        nxt, r, terminated, truncated, info = env.step(a)
        steps += 1
        ep_reward += r
        buf.add(obs, a, r, nxt, terminated)
        obs = nxt
        if terminated or truncated:
            ep += 1
            metrics.add(EpisodeRecord(ep, steps, env.state.steps_taken, ep_reward, bool(info["solved"]),
                                      colors_used(env.state.coloring)))
            obs = env.reset()
            ep_reward = 0.0

        if steps > cfg.warmup and steps % cfg.train_freq == 0 and len(buf) >= cfg.batch_size:
            o, acts, rew, no, dn = buf.sample(cfg.batch_size)
            next_q = (target if target is not None else q)(no).max(axis=1)
            y = np.where(dn, rew, rew + cfg.gamma * next_q)
            out, cache = q.forward(o)
            loss, derr = huber_grad(out[rows, acts] - y)
            if not np.isfinite(loss):
                raise DivergenceError(f"DQN loss became non-finite at step {steps}", last_good)
            up = np.zeros_like(out)
            up[rows, acts] = derr
            (g,), _ = clip_grad_norm([q.backward(cache, up)], cfg.max_grad_norm)
            adam_step(q, g, opt)
        if target is not None and steps % cfg.target_sync == 0:
            target = q.copy()
            last_good = target
    metrics.wall_clock = time.perf_counter() - t0
    return q, metrics


__all__ = ["DqnConfig", "ReplayBuffer", "train_dqn", "td_target", "epsilon_at", "huber_grad"]
