"""Training runs, permutation sweeps and the sequential fine-tuning protocol."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from gcrl.agents.dqn import train_dqn
from gcrl.agents.ppo import PpoTrainer
from gcrl.agents.rollout import RolloutResult, batch_rollouts, check_policy_shape, greedy_rollout
from gcrl.agents.tabular import greedy_q_rollout, train_tabular
from gcrl.checkpoint import (
    CheckpointError,
    load_ppo,
    save_dqn,
    save_ppo,
    save_tabular,
    sha_of,
    write_sidecar,
)
from gcrl.config import RunConfig
from gcrl.env import EnvConfig
from gcrl.graph import Graph, Permutation, apply_permutation, chromatic_number, permute
from gcrl.metrics import RunMetrics, save_metrics_csv, save_rolling_csv, summarize
from gcrl.nn import Mlp
from gcrl.seeding import stream

log = logging.getLogger(__name__)

SWEEP_CAP = 65_536


def _public(cfg: RunConfig) -> dict:
    # the output directory is where a run lives, not part of what it is
    return {k: v for k, v in cfg.raw.items() if k != "out"}


def config_hash(cfg: RunConfig) -> str:
    return sha_of(_public(cfg))


def verify_acceptance_graph(g: Graph, n: int = 8, k: int = 4) -> None:
    got_k, _ = chromatic_number(g)
    if g.n != n or got_k != k:
        raise ValueError(f"acceptance graph must have n={n} and chromatic number {k}; got n={g.n}, k={got_k}")


def _final_stats(metrics: RunMetrics, window: int) -> dict:
    if not metrics.records:
        return {"episodes": 0}
    lengths = metrics.lengths()[-window:]
    rewards = metrics.rewards()[-window:]
    return {
        "episodes": len(metrics.records),
        "env_steps": metrics.records[-1].env_steps,
        "window": window,
        "mean_length": float(lengths.mean()),
        "median_length": float(np.median(lengths)),
        "mean_reward": float(rewards.mean()),
        "solved_fraction": float(np.mean([r.solved for r in metrics.records[-window:]])),
    }


def _write_outputs(out: Path, cfg: RunConfig, metrics: RunMetrics) -> dict:
    save_metrics_csv(out / "metrics.csv", metrics)
    save_rolling_csv(out / "rolling.csv", summarize(metrics, cfg.window))
    stats = _final_stats(metrics, cfg.window)
    summary = {"run_id": metrics.run_id, "agent": cfg.agent, "config_hash": config_hash(cfg),
               "graph_hash": cfg.graph.digest(), "final": stats}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    (out / "run_meta.json").write_text(
        json.dumps({"wall_clock_seconds": metrics.wall_clock}, indent=1) + "\n", encoding="utf-8"
    )
    return stats


def run_training(
    cfg: RunConfig,
    out: str | Path | None = None,
    resume: bool = False,
    stop_after_updates: int | None = None,
) -> RunMetrics:
    """Train the configured agent and persist metrics, checkpoint and summary under ``out``.

    ``stop_after_updates`` halts a PPO run early (leaving a resumable
    checkpoint); used to exercise resume.
    """
    if resume and cfg.agent != "ppo":
        raise CheckpointError(f"resume is only supported for ppo runs, not {cfg.agent}")
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ERROR").unlink(missing_ok=True)
    ckpt = out / "checkpoint.npz"
    env_cfg = cfg.env_config()
    metrics: RunMetrics | None = None
    try:
        if cfg.agent == "ppo":
            if resume and ckpt.exists():
                trainer = load_ppo(ckpt)
                side = json.loads((out / "checkpoint.json").read_text(encoding="utf-8"))
                if side["config_hash"] != config_hash(cfg):
                    raise CheckpointError("checkpoint was produced by a different configuration")
            else:
                trainer = PpoTrainer(env_cfg, cfg.ppo_config(), cfg.seed, cfg.run_id)
                trainer.metrics.config = dict(cfg.raw)
                trainer.start(cfg.total_steps)
            metrics = trainer.metrics
            done_updates = 0
            while not trainer.finished:
                if stop_after_updates is not None and done_updates >= stop_after_updates:
                    break
                trainer.run(stop_after_updates=1)
                done_updates += 1
                if trainer.updates % cfg.checkpoint_every == 0:
                    _save_ppo(out, cfg, trainer)
            _save_ppo(out, cfg, trainer)
        elif cfg.agent == "dqn":
            q, metrics = train_dqn(env_cfg, cfg.dqn_config(), cfg.seed, cfg.total_steps, cfg.episodes, cfg.run_id)
            metrics.config = dict(cfg.raw)
            save_dqn(ckpt, q, env_cfg, {"seed": cfg.seed, "run_id": cfg.run_id})
            steps = metrics.records[-1].env_steps if metrics.records else 0
            write_sidecar(out / "checkpoint.json", _public(cfg), cfg.graph, None, steps)
        else:
            table, metrics = train_tabular(env_cfg, cfg.episodes, cfg.q_config(), cfg.seed, cfg.run_id)
            metrics.config = dict(cfg.raw)
            save_tabular(ckpt, table, env_cfg, {"seed": cfg.seed, "run_id": cfg.run_id})
            steps = metrics.records[-1].env_steps if metrics.records else 0
            write_sidecar(out / "checkpoint.json", _public(cfg), cfg.graph, None, steps)
    except Exception as exc:
        if metrics is not None:
            save_metrics_csv(out / "metrics.csv", metrics)
        (out / "ERROR").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    _write_outputs(out, cfg, metrics)
    return metrics


def _save_ppo(out: Path, cfg: RunConfig, trainer: PpoTrainer) -> None:
    save_ppo(out / "checkpoint.npz", trainer)
    side = _public(cfg)
    write_sidecar(out / "checkpoint.json", side, cfg.graph, trainer.rng.bit_generator.state, trainer.global_steps)


@dataclass
class PermSweepSummary:
    steps: list[int]
    solved: list[bool]
    colors_used: list[int] = field(default_factory=list)
    perms: list[tuple[int, ...]] = field(default_factory=list)
    cap: int = SWEEP_CAP
    seed: int = 0
    mode: str = "sample"

    @property
    def count(self) -> int:
        return len(self.steps)

    @property
    def mean(self) -> float | None:
        return float(np.mean(self.steps)) if self.steps else None

    @property
    def median(self) -> float | None:
        return float(np.median(self.steps)) if self.steps else None

    @property
    def min(self) -> int | None:
        return int(np.min(self.steps)) if self.steps else None

    @property
    def max(self) -> int | None:
        return int(np.max(self.steps)) if self.steps else None

    @property
    def solved_fraction(self) -> float | None:
        return float(np.mean(self.solved)) if self.solved else None

    @property
    def capped(self) -> int:
        return sum(1 for s in self.solved if not s)

    def stats(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "median": self.median,
            "min": self.min,
            "max": self.max,
            "solved_fraction": self.solved_fraction,
            "capped": self.capped,
        }

    def to_dict(self, config_hash: str = "") -> dict:
        return {
            **self.stats(),
            "cap": self.cap,
            "seed": self.seed,
            "mode": self.mode,
            "config_hash": config_hash,
            "steps": list(self.steps),
            "solved": list(self.solved),
            "colors_used": list(self.colors_used),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PermSweepSummary":
        return cls(list(d["steps"]), list(d["solved"]), list(d.get("colors_used", [])), [],
                   d.get("cap", SWEEP_CAP), d.get("seed", 0), d.get("mode", "sample"))

    def format(self) -> str:
        if not self.count:
            return "permutations: 0"
        return (
            f"permutations: {self.count}  mean: {self.mean:.1f}  median: {self.median:.1f}  "
            f"min: {self.min}  max: {self.max}  solved_fraction: {self.solved_fraction:.3f}"
        )


def sweep_permutation(g: Graph, seed: int, i: int, include_identity: bool) -> Permutation:
    if include_identity and i == 0:
        return Permutation.identity(g.n)
    _, p = permute(g, stream(seed, "perm", i))
    return p


def permutation_sweep(
    policy: Mlp,
    graph: Graph,
    count: int,
    cap: int = SWEEP_CAP,
    seed: int = 0,
    mode: str = "sample",
    m: int | None = None,
    include_identity: bool = False,
) -> PermSweepSummary:
    """Roll the frozen policy once on each of ``count`` seeded relabelings of ``graph``.

    Permutation ``i`` and its action stream derive from ``(seed, i)`` alone, so
    any single entry can be re-derived. Capped episodes count as ``cap`` steps.
    """
    m = graph.n if m is None else m
    check_policy_shape(policy, EnvConfig(graph, max_colors=m, max_episode_steps=max(graph.n, cap)))
    perms = [sweep_permutation(graph, seed, i, include_identity) for i in range(count)]
    graphs = [apply_permutation(graph, p) for p in perms]
    rngs = [stream(seed, "rollout", i) for i in range(count)]
    results = batch_rollouts(policy, graphs, m, cap, rngs, mode)
    return PermSweepSummary(
        steps=[r.steps for r in results],
        solved=[r.solved for r in results],
        colors_used=[r.colors_used for r in results],
        perms=[p.perm for p in perms],
        cap=cap,
        seed=seed,
        mode=mode,
    )


def save_sweep(out: str | Path, summary: PermSweepSummary, config_hash: str = "") -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["perm_id", "steps", "solved", "colors_used", "perm"])
        for i, (s, ok) in enumerate(zip(summary.steps, summary.solved)):
            cu = summary.colors_used[i] if summary.colors_used else ""
            perm = " ".join(map(str, summary.perms[i])) if summary.perms else ""
            w.writerow([i, s, int(ok), cu, perm])
    (out / "sweep_summary.json").write_text(
        json.dumps(summary.to_dict(config_hash), sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def in_distribution_lengths(
    policy: Mlp, env_cfg: EnvConfig, episodes: int = 20, cap: int = SWEEP_CAP, seed: int = 0
) -> list[RolloutResult]:
    """Sampling rollouts on the unpermuted graph, one derived seed per episode."""
    return [greedy_rollout(policy, env_cfg, cap, "sample", stream(seed, "rollout", 10_000 + i))
            for i in range(episodes)]


def finetune_permutations(
    trainer: PpoTrainer,
    graph: Graph,
    num_perms: int = 16,
    steps_each: int = 50_000,
    seed: int = 0,
) -> tuple[PpoTrainer, RunMetrics]:
    """Continue PPO on ``num_perms`` relabelings in sequence, ``steps_each`` steps apiece.

    Segment 0 is the unpermuted graph. Each segment is a fresh training call:
    the episode restarts and the learning rate decays from its initial value
    again; network weights and optimizer moments carry over.
    """
    settings = {k: v for k, v in trainer.env_cfg.settings().items()}
    metrics = RunMetrics(f"{trainer.metrics.run_id}-finetune",
                         config={"num_perms": num_perms, "steps_each": steps_each, "seed": seed})
    trainer.metrics = metrics
    for i in range(num_perms):
        if i == 0:
            g = graph
        else:
            g, _ = permute(graph, stream(seed, "perm", 100_000 + i))
        trainer.set_graph(EnvConfig(g, **settings), perm_id=i)
        trainer.learn(steps_each)
        seg = metrics.segment(i)
        if seg:
            log.info("segment %d: %d episodes, tail mean length %.2f", i, len(seg),
                     float(np.mean([r.length for r in seg[-100:]])))
    return trainer, metrics


def segment_tail_means(metrics: RunMetrics, num_perms: int, window: int = 100) -> list[float]:
    out = []
    for i in range(num_perms):
        seg = metrics.segment(i)
        out.append(float(np.mean([r.length for r in seg[-window:]])) if seg else math.nan)
    return out


def evaluate_tabular(path: str | Path, env_cfg: EnvConfig):
    from gcrl.checkpoint import load_tabular

    return greedy_q_rollout(load_tabular(path), env_cfg)


__all__: Sequence[str] = [
    "run_training",
    "permutation_sweep",
    "finetune_permutations",
    "PermSweepSummary",
    "save_sweep",
    "in_distribution_lengths",
    "verify_acceptance_graph",
    "segment_tail_means",
]
