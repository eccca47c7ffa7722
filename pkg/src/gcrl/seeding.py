"""Named random sub-streams derived from one integer seed."""

from __future__ import annotations

import numpy as np

STREAMS = {"env": 0, "agent": 1, "sweep": 2, "init": 3, "shuffle": 4, "perm": 5, "rollout": 6}


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *extra)``; stable across runs."""
    return np.random.default_rng([int(seed), STREAMS[name], *(int(e) for e in extra)])


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)
