"""Versioned checkpoint container and (de)serialization of trainers.

A checkpoint is a zip archive holding ``meta.json`` plus one ``.npy`` member
per array. Member timestamps are fixed so identical state gives identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from gcrl.agents.ppo import PpoConfig, PpoTrainer
from gcrl.agents.tabular import QTable
from gcrl.env import EnvConfig, EnvState
from gcrl.graph import ColoringState, Graph
from gcrl.metrics import EpisodeRecord
from gcrl.nn import AdamState, Mlp
from gcrl.seeding import restore_rng

FORMAT = "gcrl-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def save_container(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    meta = {"format": FORMAT, "version": VERSION, **meta}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1), compress_type=zipfile.ZIP_DEFLATED)
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH), buf.getvalue(),
                        compress_type=zipfile.ZIP_DEFLATED)


def load_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, FileNotFoundError) as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path} is not a {FORMAT} file")
        if meta.get("version") != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
    return meta, arrays


def net_to_dict(prefix: str, net: Mlp, meta: dict, arrays: dict) -> None:
    meta[prefix] = {"layer_sizes": net.layer_sizes, "activation": net.activation}
    for i, p in enumerate(net.params()):
        arrays[f"{prefix}.{i}"] = p


def net_from_dict(prefix: str, meta: dict, arrays: dict) -> Mlp:
    layout = meta[prefix]
    net = Mlp(layout["layer_sizes"], layout["activation"])
    net.set_params([arrays[f"{prefix}.{i}"] for i in range(2 * (len(layout["layer_sizes"]) - 1))])
    net.version = 0
    return net


def adam_to_dict(prefix: str, opt: AdamState, meta: dict, arrays: dict) -> None:
    meta[prefix] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "t": opt.t,
                    "n": len(opt.m)}
    for i, (m, v) in enumerate(zip(opt.m, opt.v)):
        arrays[f"{prefix}.m{i}"] = m
        arrays[f"{prefix}.v{i}"] = v


def adam_from_dict(prefix: str, meta: dict, arrays: dict) -> AdamState:
    s = meta[prefix]
    return AdamState(
        lr=s["lr"], beta1=s["beta1"], beta2=s["beta2"], eps=s["eps"], t=s["t"],
        m=[arrays[f"{prefix}.m{i}"].copy() for i in range(s["n"])],
        v=[arrays[f"{prefix}.v{i}"].copy() for i in range(s["n"])],
    )


def _records_to_arrays(records: list[EpisodeRecord], arrays: dict) -> None:
    arrays["records.int"] = np.array(
        [[r.episode, r.env_steps, r.length, int(r.solved), r.colors_used, r.perm_id] for r in records],
        dtype=np.int64,
    ).reshape(-1, 6)
    arrays["records.reward"] = np.array([r.reward for r in records], dtype=np.float64)


def _records_from_arrays(arrays: dict) -> list[EpisodeRecord]:
    ints, rewards = arrays["records.int"], arrays["records.reward"]
    return [
        EpisodeRecord(int(a[0]), int(a[1]), int(a[2]), float(rw), bool(a[3]), int(a[4]), int(a[5]))
        for a, rw in zip(ints, rewards)
    ]


def _env_cfg_from(meta: dict, arrays: dict) -> EnvConfig:
    return EnvConfig(Graph(arrays["graph"]), **meta["env"])


def save_ppo(path: str | Path, tr: PpoTrainer) -> None:
    from dataclasses import asdict

    meta: dict = {
        "kind": "ppo",
        "seed": tr.seed,
        "run_id": tr.metrics.run_id,
        "ppo": {**asdict(tr.cfg), "hidden": list(tr.cfg.hidden)},
        "env": tr.env_cfg.settings(),
        "rng": tr.rng.bit_generator.state,
        "counters": {
            "global_steps": tr.global_steps,
            "episodes": tr.episodes,
            "updates": tr.updates,
            "perm_id": tr.perm_id,
            "call_total": tr.call_total,
            "call_steps": tr.call_steps,
            "ep_len": tr._ep_len,
            "ep_reward": tr._ep_reward,
        },
        "config": tr.metrics.config,
    }
    arrays: dict = {"graph": np.asarray(tr.env_cfg.graph.adj)}
    st = tr.env.state
    meta["episode"] = None if st is None else {"steps_taken": st.steps_taken}
    if st is not None:
        arrays["episode.colors"] = st.coloring.colors
    net_to_dict("policy", tr.policy, meta, arrays)
    net_to_dict("value", tr.value, meta, arrays)
    adam_to_dict("popt", tr.popt, meta, arrays)
    adam_to_dict("vopt", tr.vopt, meta, arrays)
    _records_to_arrays(tr.metrics.records, arrays)
    save_container(path, meta, arrays)


def load_ppo(path: str | Path) -> PpoTrainer:
    meta, arrays = load_container(path)
    if meta.get("kind") != "ppo":
        raise CheckpointError(f"expected a PPO checkpoint, found kind {meta.get('kind')!r}")
    cfg = PpoConfig(**meta["ppo"])
    env_cfg = _env_cfg_from(meta, arrays)
    tr = PpoTrainer(env_cfg, cfg, meta["seed"], meta["run_id"])
    tr.policy = net_from_dict("policy", meta, arrays)
    tr.value = net_from_dict("value", meta, arrays)
    tr.popt = adam_from_dict("popt", meta, arrays)
    tr.vopt = adam_from_dict("vopt", meta, arrays)
    tr.rng = restore_rng(meta["rng"])
    c = meta["counters"]
    tr.global_steps, tr.episodes, tr.updates = c["global_steps"], c["episodes"], c["updates"]
    tr.perm_id, tr.call_total, tr.call_steps = c["perm_id"], c["call_total"], c["call_steps"]
    tr._ep_len, tr._ep_reward = c["ep_len"], c["ep_reward"]
    tr.metrics.records = _records_from_arrays(arrays)
    tr.metrics.config = meta["config"]
    if meta["episode"] is not None:
        coloring = ColoringState(arrays["episode.colors"].copy(), env_cfg.m)
        tr.env.state = EnvState(coloring, meta["episode"]["steps_taken"])
        tr._obs = tr.env.observation()
    return tr


def save_dqn(path: str | Path, q: Mlp, env_cfg: EnvConfig, meta_extra: dict) -> None:
    meta = {"kind": "dqn", "env": env_cfg.settings(), **meta_extra}
    arrays = {"graph": np.asarray(env_cfg.graph.adj)}
    net_to_dict("policy", q, meta, arrays)
    save_container(path, meta, arrays)


def save_tabular(path: str | Path, q: QTable, env_cfg: EnvConfig, meta_extra: dict) -> None:
    keys = sorted(q.table)
    n = env_cfg.n
    meta = {"kind": "tabular", "env": env_cfg.settings(), "alpha": q.alpha, "gamma": q.gamma,
            "num_actions": q.num_actions, **meta_extra}
    arrays = {
        "graph": np.asarray(env_cfg.graph.adj),
        "states": np.array([np.frombuffer(k, dtype=np.int64) for k in keys], dtype=np.int64).reshape(-1, n),
        "qvalues": np.array([q.table[k] for k in keys], dtype=np.float64).reshape(-1, q.num_actions),
    }
    save_container(path, meta, arrays)


def load_tabular(path: str | Path) -> QTable:
    meta, arrays = load_container(path)
    if meta.get("kind") != "tabular":
        raise CheckpointError(f"expected a tabular checkpoint, found kind {meta.get('kind')!r}")
    q = QTable(meta["num_actions"], meta["alpha"], meta["gamma"])
    for s, row in zip(arrays["states"], arrays["qvalues"]):
        q.table[s.astype(np.int64).tobytes()] = row.copy()
    return q


def load_policy(path: str | Path) -> tuple[str, Mlp, dict]:
    """Network used for acting (PPO policy or DQN Q-net), with its kind and metadata."""
    meta, arrays = load_container(path)
    kind = meta.get("kind")
    if kind not in ("ppo", "dqn"):
        raise CheckpointError(f"checkpoint kind {kind!r} has no policy network")
    return kind, net_from_dict("policy", meta, arrays), meta


def checkpoint_kind(path: str | Path) -> str:
    return load_container(path)[0].get("kind", "")


def sha_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def write_sidecar(path: str | Path, config: dict, graph: Graph, rng_state, steps: int) -> None:
    side = {
        "config_hash": sha_of(config),
        "graph_hash": graph.digest(),
        "rng_state": rng_state,
        "steps_completed": steps,
    }
    Path(path).write_text(json.dumps(side, sort_keys=True, indent=1) + "\n", encoding="utf-8")
