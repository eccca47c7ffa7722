"""Per-episode run metrics, their CSV form, and rolling summaries."""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_HEADER = ["run_id", "episode", "env_steps", "length", "reward", "solved", "colors_used", "perm_id"]


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    env_steps: int
    length: int
    reward: float
    solved: bool
    colors_used: int
    perm_id: int = 0


@dataclass
class RunMetrics:
    run_id: str
    records: list[EpisodeRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def add(self, rec: EpisodeRecord) -> None:
        if self.records:
            if rec.env_steps < self.records[-1].env_steps:
                raise ValueError("env_steps must be non-decreasing across records")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def lengths(self) -> np.ndarray:
        return np.array([r.length for r in self.records], dtype=np.int64)

    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.records], dtype=np.float64)

    def tail_mean_length(self, k: int = 100) -> float:
        lengths = self.lengths()
        if len(lengths) == 0:
            return float("nan")
        return float(lengths[-k:].mean())

    def segment(self, perm_id: int) -> list[EpisodeRecord]:
        return [r for r in self.records if r.perm_id == perm_id]

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_metrics_csv(buf, [self])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _row(run_id: str, r: EpisodeRecord) -> list[str]:
    return [
        run_id,
        str(r.episode),
        str(r.env_steps),
        str(r.length),
        _fmt(r.reward),
        "1" if r.solved else "0",
        str(r.colors_used),
        str(r.perm_id),
    ]


def write_metrics_csv(fh, runs: list[RunMetrics]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for run in runs:
        for r in run.records:
            w.writerow(_row(run.run_id, r))


def save_metrics_csv(path: str | Path, runs: RunMetrics | list[RunMetrics]) -> None:
    runs = [runs] if isinstance(runs, RunMetrics) else runs
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_metrics_csv(fh, runs)


def load_metrics_csv(path: str | Path) -> dict[str, RunMetrics]:
    runs: dict[str, RunMetrics] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected metrics header {reader.fieldnames}")
        for row in reader:
            run = runs.setdefault(row["run_id"], RunMetrics(row["run_id"]))
            run.records.append(
                EpisodeRecord(
                    episode=int(row["episode"]),
                    env_steps=int(row["env_steps"]),
                    length=int(row["length"]),
                    reward=float(row["reward"]),
                    solved=row["solved"] == "1",
                    colors_used=int(row["colors_used"]),
                    perm_id=int(row["perm_id"]),
                )
            )
    return runs


class MetricsSink:
    """Thread-safe collector of runs keyed by run id."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._runs: dict[str, RunMetrics] = {}

    def append(self, run_id: str, rec: EpisodeRecord) -> None:
        with self._lock:
            self._runs.setdefault(run_id, RunMetrics(run_id)).add(rec)

    def runs(self) -> list[RunMetrics]:
        with self._lock:
            return [self._runs[k] for k in sorted(self._runs)]


@dataclass
class RollingSeries:
    env_steps: np.ndarray
    mean_length: np.ndarray
    median_length: np.ndarray
    mean_reward: np.ndarray
    median_reward: np.ndarray


def rolling(values: np.ndarray, window: int, fn) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return np.array([fn(values[max(0, i - window + 1) : i + 1]) for i in range(len(values))])


def summarize(metrics: RunMetrics, window: int = 100) -> RollingSeries:
    """Trailing-window mean/median of episode length and reward."""
    if window < 1:
        raise ValueError("window must be at least 1")
    lengths = metrics.lengths()
    rewards = metrics.rewards()
    return RollingSeries(
        env_steps=np.array([r.env_steps for r in metrics.records], dtype=np.int64),
        mean_length=rolling(lengths, window, np.mean),
        median_length=rolling(lengths, window, np.median),
        mean_reward=rolling(rewards, window, np.mean),
        median_reward=rolling(rewards, window, np.median),
    )


def save_rolling_csv(path: str | Path, series: RollingSeries) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["env_steps", "mean_length", "median_length", "mean_reward", "median_reward"])
        for row in zip(series.env_steps, series.mean_length, series.median_length,
                       series.mean_reward, series.median_reward):
            w.writerow([str(int(row[0]))] + [_fmt(float(x)) for x in row[1:]])
