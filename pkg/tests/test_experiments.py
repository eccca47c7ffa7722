import json
import threading

import numpy as np
import pytest

from gcrl.agents.ppo import PpoConfig, PpoTrainer
from gcrl.agents.rollout import greedy_rollout
from gcrl.checkpoint import load_container, load_ppo, save_ppo
from gcrl.config import ConfigError, load_graph_ref, parse_config
from gcrl.env import EnvConfig
from gcrl.experiments import (
    PermSweepSummary,
    finetune_permutations,
    permutation_sweep,
    run_training,
    save_sweep,
    sweep_permutation,
    verify_acceptance_graph,
)
from gcrl.graph import Permutation, apply_permutation, chromatic_number, complete_graph, random_graph
from gcrl.metrics import CSV_HEADER, EpisodeRecord, MetricsSink, RunMetrics, load_metrics_csv, summarize
from gcrl.seeding import stream

K3 = complete_graph(3)
SMALL = {"ppo.horizon": 256, "ppo.batch_size": 64, "ppo.epochs": 2}


def small_cfg(tmp_path, **extra):
    data = {"agent": "ppo", "graph": "builtin:acceptance8", "seed": 3, "total_steps": 768, **SMALL, **extra}
    return parse_config(data, tmp_path)


def metrics_of(lengths):
    m = RunMetrics("r")
    for i, n in enumerate(lengths):
        m.add(EpisodeRecord(i + 1, sum(lengths[: i + 1]), n, -float(n), True, 2))
    return m


class TestSummarize:
    def test_window_one(self):
        s = summarize(metrics_of([5, 2, 9]), 1)
        assert s.mean_length.tolist() == [5, 2, 9]

    def test_constant(self):
        s = summarize(metrics_of([4] * 6), 3)
        assert s.mean_length.tolist() == [4] * 6

    def test_example(self):
        s = summarize(metrics_of([10, 2, 3]), 2)
        assert s.mean_length.tolist() == [10, 6, 2.5]
        assert s.median_length.tolist() == [10, 6, 2.5]

    def test_bad_window(self):
        with pytest.raises(ValueError):
            summarize(metrics_of([1]), 0)


class TestMetricsFile:
    def test_format(self, tmp_path):
        m = RunMetrics("run-a")
        m.add(EpisodeRecord(1, 8, 8, 1 / 3, True, 4, 0))
        m.add(EpisodeRecord(2, 20, 12, -123456.789, False, 3, 2))
        text = m.to_csv()
        lines = text.split("\n")
        assert lines[0] == ",".join(CSV_HEADER)
        assert lines[1] == "run-a,1,8,8,0.333333,1,4,0"
        assert lines[2] == "run-a,2,20,12,-123457,0,3,2"
        assert "\r" not in text

    def test_round_trip(self, tmp_path):
        m = metrics_of([3, 4, 5])
        path = tmp_path / "m.csv"
        path.write_text(m.to_csv())
        back = load_metrics_csv(path)["r"]
        assert back.to_csv() == m.to_csv()

    def test_monotone_steps(self):
        m = metrics_of([3])
        with pytest.raises(ValueError):
            m.add(EpisodeRecord(2, 1, 1, 0.0, True, 1))

    def test_sink_concurrent(self):
        sink = MetricsSink()

        def worker(k):
            for i in range(200):
                sink.append(f"run{k}", EpisodeRecord(i, i, 1, 0.0, True, 1))

        threads = [threading.Thread(target=worker, args=(k,)) for k in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        runs = sink.runs()
        assert [r.run_id for r in runs] == ["run0", "run1", "run2", "run3"]
        assert all(len(r) == 200 for r in runs)


class TestConfig:
    def test_valid(self, tmp_path):
        cfg = small_cfg(tmp_path)
        assert cfg.ppo_config().horizon == 256 and cfg.env_config().m == 8

    def test_all_errors_reported(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            parse_config({"agent": "ppo", "graph": "nope.adj", "ppo.clip": 0.1, "seed": "x"}, tmp_path)
        text = "\n".join(exc.value.problems)
        assert "unknown key 'ppo.clip'" in text
        assert "seed" in text and "total_steps" in text and "not found" in text
        assert len(exc.value.problems) == 4

    def test_cross_section_keys_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="dqn"):
            parse_config({"agent": "ppo", "graph": "builtin:dqn5", "total_steps": 10, "dqn.hidden": 4})

    def test_env_validation(self, tmp_path):
        with pytest.raises(ConfigError, match="node count"):
            small_cfg(tmp_path, **{"env.max_episode_steps": 3})

    def test_relative_graph_path(self, tmp_path):
        (tmp_path / "k3.adj").write_text("0 1 2\n1 2\n2\n")
        cfg = parse_config({"agent": "tabular", "graph": "k3.adj", "episodes": 3}, tmp_path)
        assert cfg.graph == K3


def test_acceptance_graph_verified():
    g = load_graph_ref("builtin:acceptance8")
    verify_acceptance_graph(g)
    assert g.n == 8 and chromatic_number(g)[0] == 4
    with pytest.raises(ValueError):
        verify_acceptance_graph(random_graph(8, 0.1, 0))


@pytest.fixture(scope="module")
def policy():
    tr = PpoTrainer(EnvConfig(K3), PpoConfig(horizon=512, batch_size=128), 0)
    tr.learn(15_000)
    return tr.policy


class TestSweep:
    def test_empty(self, policy):
        s = permutation_sweep(policy, K3, 0, cap=100)
        assert s.count == 0 and s.mean is None and s.stats()["count"] == 0

    def test_identity_only(self, policy):
        s = permutation_sweep(policy, K3, 1, cap=1000, include_identity=True, mode="argmax")
        assert s.perms == [(0, 1, 2)] and s.steps == [3] and s.solved == [True]

    def test_rederivable_and_reproducible(self, policy):
        g = random_graph(4, 0.6, 1)
        from gcrl.agents.ppo import make_nets

        net, _ = make_nets(EnvConfig(g).obs_size, EnvConfig(g).num_actions, PpoConfig(), np.random.default_rng(0))
        a = permutation_sweep(net, g, 12, cap=2000, seed=9)
        b = permutation_sweep(net, g, 12, cap=2000, seed=9)
        assert a.steps == b.steps and a.perms == b.perms
        for i in (0, 5, 11):
            p = sweep_permutation(g, 9, i, False)
            assert p.perm == a.perms[i]
            h = apply_permutation(g, p)
            single = greedy_rollout(net, EnvConfig(h, max_episode_steps=2000), 2000, "sample",
                                    stream(9, "rollout", i))
            assert single.steps == a.steps[i]

    def test_summary_invariants_and_persistence(self, tmp_path):
        s = PermSweepSummary(steps=[5, 100, 7, 65536, 9], solved=[True, True, True, False, True], cap=65536)
        assert s.min <= s.median <= s.max
        assert s.mean == pytest.approx(np.mean([5, 100, 7, 65536, 9]))
        assert s.capped == 1 and s.solved_fraction == 0.8
        save_sweep(tmp_path, s, "abc")
        d = json.loads((tmp_path / "sweep_summary.json").read_text())
        back = PermSweepSummary.from_dict(d)
        assert back.stats() == {k: d[k] for k in back.stats()}
        assert (tmp_path / "sweep.csv").read_text().splitlines()[0] == "perm_id,steps,solved,colors_used,perm"

    def test_shape_check(self, policy):
        from gcrl.nn import ShapeError

        with pytest.raises(ShapeError):
            permutation_sweep(policy, complete_graph(4), 3)


class TestFinetune:
    def test_zero_steps_unchanged(self):
        tr = PpoTrainer(EnvConfig(K3), PpoConfig(horizon=256, batch_size=64), 0)
        before = [p.copy() for p in tr.policy.params()]
        _, metrics = finetune_permutations(tr, K3, 16, 0, seed=1)
        assert len(metrics) == 0
        assert all(np.array_equal(a, b) for a, b in zip(before, tr.policy.params()))

    def test_segments_tagged(self):
        g = random_graph(4, 0.6, 1)
        tr = PpoTrainer(EnvConfig(g), PpoConfig(horizon=256, batch_size=64, epochs=2), 0)
        _, metrics = finetune_permutations(tr, g, 3, 512, seed=1)
        assert {r.perm_id for r in metrics.records} == {0, 1, 2}
        ids = [r.perm_id for r in metrics.records]
        assert ids == sorted(ids)
        assert tr.global_steps == 3 * 512 and tr.updates == 6


class TestRunTraining:
    def test_artifacts_and_determinism(self, tmp_path):
        cfg = small_cfg(tmp_path)
        run_training(cfg, tmp_path / "a")
        run_training(cfg, tmp_path / "b")
        for name in ("metrics.csv", "checkpoint.npz", "summary.json", "rolling.csv", "checkpoint.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        meta, _ = load_container(tmp_path / "a" / "checkpoint.npz")
        assert meta["kind"] == "ppo" and meta["counters"]["global_steps"] == 768

    def test_zero_steps(self, tmp_path):
        m = run_training(small_cfg(tmp_path, total_steps=0), tmp_path / "z")
        assert len(m) == 0
        assert (tmp_path / "z" / "checkpoint.npz").exists()
        assert (tmp_path / "z" / "metrics.csv").read_text() == ",".join(CSV_HEADER) + "\n"

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = small_cfg(tmp_path, total_steps=1280, **{"env.max_episode_steps": 40})
        full = run_training(cfg, tmp_path / "full")
        run_training(cfg, tmp_path / "part", stop_after_updates=2)
        partial = load_metrics_csv(tmp_path / "part" / "metrics.csv")
        assert len(partial[cfg.run_id]) < len(full)
        resumed = run_training(cfg, tmp_path / "part", resume=True)
        assert resumed.to_csv() == full.to_csv()
        assert (tmp_path / "part" / "checkpoint.npz").read_bytes() == (tmp_path / "full" / "checkpoint.npz").read_bytes()

    def test_other_agents(self, tmp_path):
        t = parse_config({"agent": "tabular", "graph": "builtin:dqn5", "episodes": 1}, tmp_path)
        from gcrl.graph import GraphSizeError

        with pytest.raises(GraphSizeError):
            run_training(t, tmp_path / "t")
        assert (tmp_path / "t" / "ERROR").exists()
        d = parse_config({"agent": "dqn", "graph": "builtin:dqn5", "total_steps": 600, "dqn.warmup": 100}, tmp_path)
        m = run_training(d, tmp_path / "d")
        assert len(m) >= 1 and (tmp_path / "d" / "checkpoint.npz").exists()
        from gcrl.checkpoint import CheckpointError

        with pytest.raises(CheckpointError, match="only supported for ppo"):
            run_training(d, tmp_path / "d", resume=True)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    tr = PpoTrainer(EnvConfig(K3, max_episode_steps=30), PpoConfig(horizon=256, batch_size=64, epochs=2), 2)
    tr.start(1024)
    tr.run(stop_after_updates=2)
    save_ppo(tmp_path / "c.npz", tr)
    back = load_ppo(tmp_path / "c.npz")
    for a, b in zip(tr.policy.params() + tr.value.params(), back.policy.params() + back.value.params()):
        assert a.tobytes() == b.tobytes()
    for a, b in zip(tr.popt.m + tr.popt.v, back.popt.m + back.popt.v):
        assert a.tobytes() == b.tobytes()
    assert back.popt.t == tr.popt.t and back.rng.bit_generator.state == tr.rng.bit_generator.state
    assert back.global_steps == tr.global_steps and back.metrics.to_csv() == tr.metrics.to_csv()
    save_ppo(tmp_path / "d.npz", back)
    assert (tmp_path / "c.npz").read_bytes() == (tmp_path / "d.npz").read_bytes()


def test_permutation_type():
    with pytest.raises(ValueError):
        Permutation((0, 0, 1))
