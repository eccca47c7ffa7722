"""Tabular Q-learning over full color vectors."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from gcrl.agents.rollout import RolloutResult
from gcrl.env import EnvConfig, GraphColoringEnv
from gcrl.graph import GraphSizeError, colors_used
from gcrl.metrics import EpisodeRecord, RunMetrics
from gcrl.seeding import stream

MAX_TABULAR_NODES = 4


@dataclass
class QConfig:
    alpha: float = 0.5
    gamma: float = 0.9
    epsilon: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")


def state_key(colors) -> bytes:
    return np.asarray(colors, dtype=np.int64).tobytes()


@dataclass
class QTable:
    num_actions: int
    alpha: float = 0.5
    gamma: float = 0.9
    table: dict = field(default_factory=dict)

    def values(self, key) -> np.ndarray:
        """Q-values for ``key``; unseen states read as zeros without being stored."""
        q = self.table.get(key)
        return q if q is not None else np.zeros(self.num_actions)

    def __len__(self) -> int:
        return len(self.table)


def td_target(r: float, done: bool, gamma: float, max_next_q: float) -> float:
    return r if done else r + gamma * max_next_q


def q_update(q: QTable, s, a: int, r: float, s_next, done: bool = False) -> float:
    """Bellman blend ``(1-alpha) Q(s,a) + alpha (r + gamma max Q(s',.))``."""
    row = q.table.get(s)
    if row is None:
        row = q.table[s] = np.zeros(q.num_actions)
    target = td_target(r, done, q.gamma, float(np.max(q.values(s_next))))
    row[a] = (1.0 - q.alpha) * row[a] + q.alpha * target
    if not np.isfinite(row[a]):
        raise FloatingPointError("non-finite Q-value")
    return float(row[a])


def train_tabular(
    env_cfg: EnvConfig, episodes: int, qcfg: QConfig | None = None, seed: int = 0, run_id: str = "tabular"
) -> tuple[QTable, RunMetrics]:
    if env_cfg.n > MAX_TABULAR_NODES:
        raise GraphSizeError(
            f"tabular Q-learning is limited to {MAX_TABULAR_NODES} nodes ((m+1)^n states), got {env_cfg.n}"
        )
    qcfg = qcfg or QConfig()
    q = QTable(env_cfg.num_actions, qcfg.alpha, qcfg.gamma)
    rng = stream(seed, "agent")
    env = GraphColoringEnv(env_cfg)
    metrics = RunMetrics(run_id, config={"q": asdict(qcfg), "env": env_cfg.settings()})
    t0 = time.perf_counter()
    total_steps = 0
    for ep in range(1, episodes + 1):
        env.reset()
        key = state_key(env.state.coloring.colors)
        ep_reward, info, done = 0.0, {"solved": False}, False
        while not done:
            if rng.random() < qcfg.epsilon:
                a = int(rng.integers(env_cfg.num_actions))
            else:
                a = int(np.argmax(q.values(key)))
            _, r, terminated, truncated, info = env.step(a)
            nkey = state_key(env.state.coloring.colors)
            # truncation is a time limit, not a terminal state: keep bootstrapping
            q_update(q, key, a, r, nkey, done=terminated)
            key = nkey
            ep_reward += r
            total_steps += 1
            done = terminated or truncated
        metrics.add(
            EpisodeRecord(ep, total_steps, env.state.steps_taken, ep_reward, bool(info["solved"]),
                          colors_used(env.state.coloring))
        )
    metrics.wall_clock = time.perf_counter() - t0
    return q, metrics


def greedy_q_rollout(q: QTable, env_cfg: EnvConfig, max_steps: int | None = None) -> RolloutResult:
    env = GraphColoringEnv(env_cfg)
    env.reset()
    cap = env_cfg.max_episode_steps if max_steps is None else min(max_steps, env_cfg.max_episode_steps)
    solved = False
    while env.state.steps_taken < cap and not env.state.done:
        a = int(np.argmax(q.values(state_key(env.state.coloring.colors))))
        _, _, solved, _, _ = env.step(a)
    return RolloutResult(env.state.steps_taken, solved, colors_used(env.state.coloring))
