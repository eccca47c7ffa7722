"""Evaluation rollouts of a frozen policy network (no learning)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gcrl.env import EnvConfig, decode_action, encode_observation
from gcrl.graph import Graph, colors_used
from gcrl.nn import Mlp, ShapeError, log_softmax, sample_from_uniform


@dataclass(frozen=True)
class RolloutResult:
    steps: int
    solved: bool
    colors_used: int


class UniformStream:
    """Buffered uniforms from one generator, drawn in fixed-size blocks."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self._buf = rng.random(block)
        self._i = 0

    def next(self) -> float:
        if self._i == self.block:
            self._buf = self.rng.random(self.block)
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return float(u)


def check_policy_shape(policy: Mlp, cfg: EnvConfig) -> None:
    want_in, want_out = cfg.obs_size, cfg.num_actions
    got_in, got_out = policy.layer_sizes[0], policy.layer_sizes[-1]
    if (got_in, got_out) != (want_in, want_out):
        raise ShapeError(
            f"policy expects observation length {got_in} and {got_out} actions; "
            f"graph with n={cfg.n}, m={cfg.m} needs observation length {want_in} and {want_out} actions"
        )


def greedy_rollout(
    policy: Mlp,
    cfg: EnvConfig,
    max_steps: int | None = None,
    mode: str = "argmax",
    seed: int | np.random.Generator = 0,
) -> RolloutResult:
    """Play one episode; ``mode`` is ``"argmax"`` or ``"sample"`` over the policy outputs."""
    check_policy_shape(policy, cfg)
    if mode not in ("argmax", "sample"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    cap = cfg.max_episode_steps if max_steps is None else max_steps
    adj_flat = cfg.graph.adj.reshape(-1).astype(np.float64)
    colors = np.zeros(cfg.n, dtype=np.int64)
    uniforms = UniformStream(seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed))
    steps, solved = 0, False
    # runs past the env's own step cap when max_steps asks for it
    while steps < cap:
        out = policy(encode_observation(adj_flat, colors, cfg.m))
        if mode == "argmax":
            a = int(np.argmax(out))
        else:
            a = sample_from_uniform(np.exp(log_softmax(out)), uniforms.next())
        node, color = decode_action(a, cfg)
        colors[node] = color
        steps += 1
        if _solved(cfg.graph.adj, colors):
            solved = True
            break
    return RolloutResult(steps, solved, colors_used(colors))


def _solved(adj: np.ndarray, colors: np.ndarray) -> bool:
    if np.any(colors == 0):
        return False
    return not np.any((colors[:, None] == colors[None, :]) & (adj == 1))


def batch_rollouts(
    policy: Mlp,
    graphs: Sequence[Graph],
    m: int,
    cap: int,
    rngs: Sequence[np.random.Generator],
    mode: str = "sample",
) -> list[RolloutResult]:
    """Run one sampling episode per graph in lockstep with batched forward passes.

    Lane ``i`` consumes ``rngs[i]`` the same way :func:`greedy_rollout` does, so a
    lane reproduces the standalone rollout for that generator (up to BLAS
    summation order in the batched matmul).
    """
    k = len(graphs)
    if k == 0:
        return []
    n = graphs[0].n
    adj = np.stack([g.adj for g in graphs]).astype(bool)
    adj_flat = adj.reshape(k, -1).astype(np.float64)
    colors = np.zeros((k, n), dtype=np.int64)
    steps = np.zeros(k, dtype=np.int64)
    solved = np.zeros(k, dtype=bool)
    active = np.arange(k)
    streams = [UniformStream(r) for r in rngs]
    width = m + 1
    while len(active):
        onehot = np.zeros((len(active), n * width))
        onehot[np.arange(len(active))[:, None], np.arange(n) * width + colors[active]] = 1.0
        obs = np.concatenate([adj_flat[active], onehot], axis=1)
        out = policy(obs)
        if mode == "argmax":
            acts = np.argmax(out, axis=1)
        else:
            probs = np.exp(log_softmax(out))
            acts = np.array([sample_from_uniform(probs[j], streams[i].next()) for j, i in enumerate(active)])
        nodes, cols = np.divmod(acts, width)
        colors[active, nodes] = cols
        steps[active] += 1
        c = colors[active]
        clash = np.any((c[:, :, None] == c[:, None, :]) & adj[active], axis=(1, 2))
        done_now = np.all(c > 0, axis=1) & ~clash
        solved[active] = done_now
        active = active[~done_now & (steps[active] < cap)]
    return [RolloutResult(int(steps[i]), bool(solved[i]), colors_used(colors[i])) for i in range(k)]
