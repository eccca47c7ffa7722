"""Command-line driver: ``gcrl {oracle,train,sweep,finetune,gen}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from gcrl.checkpoint import CheckpointError, checkpoint_kind, load_policy, load_ppo, save_ppo, write_sidecar
from gcrl.config import ConfigError, load_config, load_graph_ref
from gcrl.env import EnvConfig
from gcrl.experiments import (
    SWEEP_CAP,
    finetune_permutations,
    permutation_sweep,
    run_training,
    save_sweep,
    segment_tail_means,
)
from gcrl.graph import (
    GraphParseError,
    GraphSizeError,
    GraphValidationError,
    chromatic_number,
    complete_graph,
    cycle_graph,
    dump_adjlist,
    path_graph,
    random_graph,
)
from gcrl.metrics import save_metrics_csv
from gcrl.nn import ShapeError

log = logging.getLogger("gcrl")


class CliError(Exception):
    pass


def _print(args, *parts) -> None:
    if not args.quiet:
        print(*parts)


def _read_graph(ref: str):
    try:
        return load_graph_ref(ref)
    except FileNotFoundError:
        raise CliError(f"graph file not found: {ref}") from None
    except (GraphParseError, GraphValidationError) as exc:
        raise CliError(f"{ref}: {exc}") from None


def cmd_oracle(args) -> int:
    g = _read_graph(args.graph)
    try:
        k, witness = chromatic_number(g)
    except GraphSizeError as exc:
        raise CliError(str(exc)) from None
    print(f"chromatic_number: {k}")
    print("coloring: " + " ".join(str(int(c)) for c in witness.colors))
    return 0


def _overrides(args) -> dict:
    over = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise CliError(f"--set expects key=value, got {item!r}")
        try:
            over[key] = json.loads(value)
        except json.JSONDecodeError:
            over[key] = value
    if args.seed is not None:
        over["seed"] = args.seed
    return over


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out) if args.out else Path(cfg.out)
    run_training(cfg, out, resume=args.resume, stop_after_updates=args.stop_after_updates)
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))["final"]
    if summary.get("episodes"):
        _print(args, f"episodes: {summary['episodes']}  env_steps: {summary['env_steps']}  "
                     f"mean_length[{summary['window']}]: {summary['mean_length']:.2f}  "
                     f"median_length: {summary['median_length']:.1f}  "
                     f"mean_reward: {summary['mean_reward']:.3f}")
    else:
        _print(args, "episodes: 0")
    _print(args, f"wrote {out}/metrics.csv, {out}/checkpoint.npz, {out}/summary.json")
    return 0


def cmd_sweep(args) -> int:
    g = _read_graph(args.graph)
    try:
        kind, policy, meta = load_policy(args.checkpoint)
    except CheckpointError as exc:
        raise CliError(str(exc)) from None
    m = meta["env"].get("max_colors") or g.n
    m = min(m, g.n)
    seed = args.seed if args.seed is not None else 0
    try:
        summary = permutation_sweep(policy, g, args.count, args.cap, seed, args.mode, m,
                                    include_identity=args.include_identity)
    except ShapeError as exc:
        raise CliError(f"checkpoint/graph mismatch: {exc}") from None
    out = Path(args.out or ".")
    save_sweep(out, summary, config_hash=meta.get("run_id", ""))
    _print(args, summary.format())
    _print(args, f"wrote {out}/sweep.csv, {out}/sweep_summary.json")
    return 0


def cmd_finetune(args) -> int:
    try:
        kind = checkpoint_kind(args.checkpoint)
    except CheckpointError as exc:
        raise CliError(str(exc)) from None
    if kind != "ppo":
        raise CliError("fine-tuning requires a PPO checkpoint")
    g = _read_graph(args.graph)
    trainer = load_ppo(args.checkpoint)
    seed = args.seed if args.seed is not None else 0
    try:
        trainer, metrics = finetune_permutations(trainer, g, args.perms, args.steps, seed)
    except ShapeError as exc:
        raise CliError(f"checkpoint/graph mismatch: {exc}") from None
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    # reattach the canonical labeling so the saved env matches the input graph
    trainer.set_graph(EnvConfig(g, **trainer.env_cfg.settings()), perm_id=0)
    trainer.start(0)
    save_ppo(out / "finetuned.npz", trainer)
    write_sidecar(out / "finetuned.json", {"perms": args.perms, "steps": args.steps, "seed": seed,
                                           "source": str(args.checkpoint)},
                  g, trainer.rng.bit_generator.state, trainer.global_steps)
    save_metrics_csv(out / "finetune_metrics.csv", metrics)
    for i, v in enumerate(segment_tail_means(metrics, args.perms)):
        _print(args, f"segment {i:2d}: tail mean length {v:.2f}" if v == v else f"segment {i:2d}: no episodes")
    _print(args, f"wrote {out}/finetuned.npz, {out}/finetune_metrics.csv")
    return 0


def cmd_gen(args) -> int:
    if args.n < 1:
        raise CliError("--n must be at least 1")
    if args.kind == "complete":
        g = complete_graph(args.n)
    elif args.kind == "cycle":
        if args.n < 3:
            raise CliError("a cycle needs --n >= 3")
        g = cycle_graph(args.n)
    elif args.kind == "path":
        g = path_graph(args.n)
    else:
        if not 0.0 <= args.p <= 1.0:
            raise CliError("--p must lie in [0, 1]")
        g = random_graph(args.n, args.p, args.seed if args.seed is not None else 0)
    text = dump_adjlist(g)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        _print(args, f"wrote {args.output} ({g.n} nodes, {g.num_edges} edges)")
    else:
        sys.stdout.write(text)
    return 0


_GLOBAL_FLAGS = ("seed", "out", "quiet")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # unset subcommand copies stay absent so they cannot clobber the global ones
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (overrides config)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress progress output")

    p = argparse.ArgumentParser(prog="gcrl", description="Graph-coloring RL laboratory")
    # copies of the common flags accepted before the subcommand; merged in main()
    p.add_argument("--seed", dest="global_seed", type=int, metavar="SEED", help="master seed (overrides config)")
    p.add_argument("--out", dest="global_out", metavar="OUT", help="output directory")
    p.add_argument("--quiet", dest="global_quiet", action="store_const", const=True, help="suppress progress output")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("oracle", parents=[common], help="exact chromatic number of a graph file")
    s.add_argument("graph")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("train", parents=[common], help="train an agent from a JSON run config")
    s.add_argument("config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    s.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    s.add_argument("--stop-after-updates", type=int, default=None, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", parents=[common], help="evaluate a policy on random relabelings")
    s.add_argument("checkpoint")
    s.add_argument("graph")
    s.add_argument("--count", type=int, default=1000)
    s.add_argument("--cap", type=int, default=SWEEP_CAP)
    s.add_argument("--mode", choices=("sample", "argmax"), default="sample")
    s.add_argument("--include-identity", action="store_true", help="make permutation 0 the identity")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("finetune", parents=[common], help="sequential fine-tuning on relabelings")
    s.add_argument("checkpoint")
    s.add_argument("graph")
    s.add_argument("--perms", type=int, default=16)
    s.add_argument("--steps", type=int, default=50_000)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("gen", parents=[common], help="write a generated graph as an adjacency list")
    s.add_argument("--kind", choices=("complete", "cycle", "path", "random"), required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=float, default=0.5)
    s.add_argument("-o", "--output", default=None, help="file to write (default: stdout)")
    s.set_defaults(func=cmd_gen)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    for flag in _GLOBAL_FLAGS:
        glob = getattr(args, f"global_{flag}")
        if not hasattr(args, flag):
            setattr(args, flag, glob if glob is not None else (False if flag == "quiet" else None))
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (CliError, CheckpointError, ConfigError, GraphSizeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
