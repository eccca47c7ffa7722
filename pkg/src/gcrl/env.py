"""Episodic graph-coloring environment with gymnasium-style reset/step."""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields

import numpy as np

from gcrl.graph import ColoringState, Graph, NodeStatus, color_factor, is_solved, node_status


class ContractError(RuntimeError):
    """Raised when an operation is called outside its contract."""


class RewardMode(str, enum.Enum):
    DELTA = "delta"
    EDGE_SUM = "edge_sum"


@dataclass
class EnvConfig:
    graph: Graph
    max_colors: int | None = None
    reward_mode: RewardMode = RewardMode.DELTA
    max_episode_steps: int = 512
    r_correct: float = 5.0
    r_uncolor: float = -5.0
    r_conflict: float = -10.0
    r_base: float = -1.0
    divide_base: bool = True
    edge_ok: float = 1.0
    edge_bad: float = -1.0

    def __post_init__(self) -> None:
        n = self.graph.n
        if self.max_colors is None:
            self.max_colors = n
        self.reward_mode = RewardMode(self.reward_mode)
        if not 1 <= self.max_colors <= n:
            raise ValueError(f"max_colors must lie in [1, {n}], got {self.max_colors}")
        if self.max_episode_steps < n:
            raise ValueError(
                f"max_episode_steps={self.max_episode_steps} is below the node count {n}; "
                "no episode could ever be solved"
            )

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def m(self) -> int:
        return int(self.max_colors)

    @property
    def num_actions(self) -> int:
        return self.n * (self.m + 1)

    @property
    def obs_size(self) -> int:
        return self.n * self.n + self.n * (self.m + 1)

    def settings(self) -> dict:
        """Everything except the graph, as plain JSON-compatible values."""
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "graph"}
        out["reward_mode"] = self.reward_mode.value
        return out


@dataclass
class EnvState:
    coloring: ColoringState
    steps_taken: int = 0
    done: bool = False
    truncated: bool = False


def decode_action(raw: int, cfg: EnvConfig) -> tuple[int, int]:
    if not 0 <= raw < cfg.num_actions:
        raise IndexError(f"action {raw} outside [0, {cfg.num_actions})")
    return divmod(int(raw), cfg.m + 1)


def encode_action(node: int, color: int, cfg: EnvConfig) -> int:
    return node * (cfg.m + 1) + color


def reward_delta(
    g: Graph,
    prev: ColoringState | np.ndarray,
    nxt: ColoringState | np.ndarray,
    acted: int,
    cfg: EnvConfig | None = None,
) -> float:
    """Reward for a single move, judged by how the acted node's status changed."""
    p = prev.colors if isinstance(prev, ColoringState) else np.asarray(prev)
    q = nxt.colors if isinstance(nxt, ColoringState) else np.asarray(nxt)
    diff = np.flatnonzero(p != q)
    if len(diff) > 1 or (len(diff) == 1 and diff[0] != acted):
        raise ContractError(f"states must differ only at node {acted}, differ at {diff.tolist()}")
    r_base, r_correct, r_uncolor, r_conflict, divide_base = (
        (cfg.r_base, cfg.r_correct, cfg.r_uncolor, cfg.r_conflict, cfg.divide_base)
        if cfg is not None
        else (-1.0, 5.0, -5.0, -10.0, True)
    )
    before = node_status(g, p, acted)
    after = node_status(g, q, acted)
    if after is NodeStatus.CONFLICTED:
        bonus = r_conflict
    elif after is NodeStatus.CORRECT and before is not NodeStatus.CORRECT:
        bonus = r_correct
    elif before is NodeStatus.CORRECT and after is NodeStatus.UNCOLORED:
        bonus = r_uncolor
    else:
        bonus = 0.0
    cf = color_factor(q)
    if divide_base:
        return (r_base + bonus) / cf
    return r_base + bonus / cf


def reward_edge_sum(g: Graph, s: ColoringState | np.ndarray, cfg: EnvConfig | None = None) -> float:
    """Whole-state reward: +ok per properly colored edge, +bad per clash."""
    c = s.colors if isinstance(s, ColoringState) else np.asarray(s)
    ok, bad = (cfg.edge_ok, cfg.edge_bad) if cfg is not None else (1.0, -1.0)
    total = 0.0
    for u, v in g.edges():
        if c[u] == 0 or c[v] == 0:
            continue
        total += ok if c[u] != c[v] else bad
    return total / color_factor(c)


class GraphColoringEnv:
    """Color the nodes of a fixed graph one action at a time.

    Actions are flat integers ``node * (m + 1) + color``; color 0 removes a
    node's color. Observations concatenate the flattened adjacency matrix with
    one one-hot block of width ``m + 1`` per node.
    """

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self._adj_flat = cfg.graph.adj.reshape(-1).astype(np.float64)
        self.state: EnvState | None = None

    @property
    def graph(self) -> Graph:
        return self.cfg.graph

    def observation(self, coloring: ColoringState | None = None) -> np.ndarray:
        coloring = coloring if coloring is not None else self.state.coloring
        return encode_observation(self._adj_flat, coloring.colors, self.cfg.m)

    def reset(self) -> np.ndarray:
        self.state = EnvState(ColoringState.empty(self.cfg.n, self.cfg.m))
        return self.observation()

    def step(self, action: int) -> tuple[np.ndarray, float, bool, bool, dict]:
        """Apply one action; returns ``(obs, reward, terminated, truncated, info)``."""
        st = self.state
        if st is None:
            raise ContractError("reset() must be called before step()")
        if st.done:
            raise ContractError("cannot step an episode that is already done")
        node, color = decode_action(action, self.cfg)
        prev = st.coloring
        nxt = prev.copy()
        nxt.colors[node] = color
        if self.cfg.reward_mode is RewardMode.DELTA:
            reward = reward_delta(self.graph, prev, nxt, node, self.cfg)
        else:
            reward = reward_edge_sum(self.graph, nxt, self.cfg)
        solved = is_solved(self.graph, nxt)
        steps = st.steps_taken + 1
        truncated = (not solved) and steps >= self.cfg.max_episode_steps
        self.state = EnvState(nxt, steps, solved or truncated, truncated)
        info = {"solved": solved, "steps": steps}
        return self.observation(), float(reward), solved, truncated, info


def encode_observation(adj_flat: np.ndarray, colors: np.ndarray, m: int) -> np.ndarray:
    n = len(colors)
    onehot = np.zeros(n * (m + 1))
    onehot[np.arange(n) * (m + 1) + colors] = 1.0
    return np.concatenate([adj_flat, onehot])


def decode_observation(obs: np.ndarray, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of the observation encoding: ``(adjacency, colors)``."""
    adj = obs[: n * n].reshape(n, n)
    blocks = obs[n * n :].reshape(n, m + 1)
    return adj, np.argmax(blocks, axis=1)
