"""Run configuration: a flat JSON object with dotted section keys.

Example::

    {"agent": "ppo", "graph": "graphs/acceptance8.adj", "seed": 0,
     "total_steps": 200000, "ppo.batch_size": 128, "env.max_episode_steps": 512}

Every problem is collected and reported together before any compute starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from gcrl.agents.dqn import DqnConfig
from gcrl.agents.ppo import PpoConfig
from gcrl.agents.tabular import QConfig
from gcrl.env import EnvConfig, RewardMode
from gcrl.graph import Graph, GraphParseError, GraphValidationError, load_adjlist

AGENTS = ("ppo", "dqn", "tabular")
BUILTIN_GRAPHS = {"acceptance8": "acceptance8.adj", "dqn5": "dqn5.adj"}

TOP_LEVEL: dict[str, Any] = {
    "agent": str,
    "graph": str,
    "seed": int,
    "run_id": str,
    "out": str,
    "total_steps": int,
    "episodes": int,
    "window": int,
    "checkpoint_every": int,
}

_ENV_DEFAULTS = {f.name: f.default for f in fields(EnvConfig) if f.name != "graph"}
_SECTIONS = {
    "env": _ENV_DEFAULTS,
    "ppo": {f.name: f.default for f in fields(PpoConfig) if f.name != "total_steps"},
    "dqn": {f.name: f.default for f in fields(DqnConfig)},
    "tabular": {f.name: f.default for f in fields(QConfig)},
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid run configuration:\n  - " + "\n  - ".join(problems))


def builtin_graph_text(name: str) -> str:
    from importlib.resources import files

    return (files("gcrl") / "data" / BUILTIN_GRAPHS[name]).read_text(encoding="utf-8")


def load_graph_ref(ref: str, base: Path | None = None) -> Graph:
    """Load ``builtin:<name>`` or an adjacency-list path (relative to ``base``)."""
    if ref.startswith("builtin:"):
        name = ref.split(":", 1)[1]
        if name not in BUILTIN_GRAPHS:
            raise FileNotFoundError(f"unknown builtin graph {name!r}; choose from {sorted(BUILTIN_GRAPHS)}")
        return load_adjlist(builtin_graph_text(name))
    p = Path(ref)
    if not p.is_absolute() and base is not None:
        p = base / p
    return load_adjlist(p.read_text(encoding="utf-8"))


def _check_type(key: str, value: Any, expected: Any, problems: list[str]) -> Any:
    if expected is bool:
        if not isinstance(value, bool):
            problems.append(f"{key}: expected true/false, got {value!r}")
        return value
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{key}: expected an integer, got {value!r}")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{key}: expected a number, got {value!r}")
            return value
        return float(value)
    if expected is str:
        if not isinstance(value, str):
            problems.append(f"{key}: expected a string, got {value!r}")
        return value
    if expected is tuple:
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and v > 0 for v in value):
            problems.append(f"{key}: expected a list of positive integers, got {value!r}")
        return tuple(value) if isinstance(value, (list, tuple)) else value
    return value


def _expected_type(default: Any) -> Any:
    if isinstance(default, RewardMode):
        return str
    if default is None:
        return int
    return type(default)


@dataclass
class RunConfig:
    agent: str
    graph_ref: str
    graph: Graph
    seed: int = 0
    run_id: str = ""
    out: str = "runs"
    total_steps: int | None = None
    episodes: int | None = None
    window: int = 100
    checkpoint_every: int = 10
    env: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def env_config(self, graph: Graph | None = None) -> EnvConfig:
        return EnvConfig(graph if graph is not None else self.graph, **self.env)

    def ppo_config(self) -> PpoConfig:
        return PpoConfig(total_steps=self.total_steps or 0, **self.hyper)

    def dqn_config(self) -> DqnConfig:
        return DqnConfig(**self.hyper)

    def q_config(self) -> QConfig:
        return QConfig(**self.hyper)


def parse_config(data: dict, base: Path | None = None) -> RunConfig:
    """Validate a flat config mapping; raises :class:`ConfigError` listing every problem."""
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["configuration must be a JSON object"])
    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {s: {} for s in _SECTIONS}
    for key, value in data.items():
        if key in TOP_LEVEL:
            top[key] = _check_type(key, value, TOP_LEVEL[key], problems)
            continue
        sec, _, name = key.partition(".")
        if sec in _SECTIONS and name in _SECTIONS[sec]:
            expected = _expected_type(_SECTIONS[sec][name])
            sections[sec][name] = _check_type(key, value, expected, problems)
        else:
            problems.append(f"unknown key {key!r}")

    agent = top.get("agent")
    if agent is None:
        problems.append("missing required key 'agent'")
    elif agent not in AGENTS:
        problems.append(f"agent must be one of {AGENTS}, got {agent!r}")
    for sec in AGENTS:
        if sections[sec] and agent in AGENTS and sec != agent:
            problems.append(f"'{sec}.*' keys given but agent is {agent!r}")

    total, episodes = top.get("total_steps"), top.get("episodes")
    for k in ("total_steps", "episodes"):
        v = top.get(k)
        if isinstance(v, int) and v < 0:
            problems.append(f"{k} must be non-negative")
    if agent == "ppo" and total is None:
        problems.append("ppo requires 'total_steps'")
    if agent == "ppo" and episodes is not None:
        problems.append("ppo is budgeted in 'total_steps', not 'episodes'")
    if agent == "tabular" and episodes is None:
        problems.append("tabular requires 'episodes'")
    if agent == "dqn" and (total is None) == (episodes is None):
        problems.append("dqn requires exactly one of 'total_steps' or 'episodes'")
    if top.get("window", 1) < 1:
        problems.append("window must be at least 1")
    if top.get("checkpoint_every", 1) < 1:
        problems.append("checkpoint_every must be at least 1")

    graph = None
    ref = top.get("graph")
    if ref is None:
        problems.append("missing required key 'graph'")
    elif isinstance(ref, str):
        try:
            graph = load_graph_ref(ref, base)
        except FileNotFoundError as exc:
            problems.append(f"graph: file not found: {exc.filename or exc}")
        except (GraphParseError, GraphValidationError) as exc:
            problems.append(f"graph: {exc}")

    env = sections["env"]
    if "reward_mode" in env:
        try:
            RewardMode(env["reward_mode"])
        except ValueError:
            problems.append(f"env.reward_mode must be one of {[m.value for m in RewardMode]}")
    if graph is not None and not problems:
        try:
            EnvConfig(graph, **env)
        except ValueError as exc:
            problems.append(f"env: {exc}")

    hyper = sections.get(agent, {}) if agent in AGENTS else {}
    if agent in AGENTS and not problems:
        try:
            {"ppo": lambda: PpoConfig(total_steps=total or 0, **hyper),
             "dqn": lambda: DqnConfig(**hyper),
             "tabular": lambda: QConfig(**hyper)}[agent]()
        except ValueError as exc:
            problems.append(f"{agent}: {exc}")

    if problems:
        raise ConfigError(problems)
    return RunConfig(
        agent=agent,
        graph_ref=ref,
        graph=graph,
        seed=top.get("seed", 0),
        run_id=top.get("run_id") or f"{agent}-s{top.get('seed', 0)}",
        out=top.get("out", "runs"),
        total_steps=total,
        episodes=episodes,
        window=top.get("window", 100),
        checkpoint_every=top.get("checkpoint_every", 10),
        env=env,
        hyper=hyper,
        raw=dict(data),
    )


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from None
    if overrides and isinstance(data, dict):
        data.update(overrides)
    return parse_config(data, base=path.parent)
