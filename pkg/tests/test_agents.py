import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcrl.agents.dqn import DqnConfig, ReplayBuffer, epsilon_at, huber_grad, train_dqn
from gcrl.agents.ppo import (
    PpoConfig,
    PpoTrainer,
    RolloutBuffer,
    clipped_objective,
    clipped_objective_grad,
    compute_advantages,
    linear_lr,
    make_nets,
    ppo_loss_and_grads,
    ppo_ratio,
    train_ppo,
)
from gcrl.agents.rollout import batch_rollouts, greedy_rollout
from gcrl.agents.tabular import QConfig, QTable, greedy_q_rollout, q_update, td_target, train_tabular
from gcrl.env import EnvConfig, GraphColoringEnv
from gcrl.graph import Graph, GraphSizeError, complete_graph, permute, random_graph
from gcrl.nn import Mlp, ShapeError, log_softmax

K3 = complete_graph(3)
SMALL_PPO = dict(horizon=256, batch_size=64, epochs=4)


class TestTabular:
    def test_bellman_from_zero(self):
        q = QTable(4, alpha=0.5, gamma=0.9)
        assert q_update(q, "s", 1, 1.0, "s2") == 0.5

    def test_alpha_one(self):
        q = QTable(2, alpha=1.0, gamma=0.9)
        q.table["s2"] = np.array([3.0, -1.0])
        assert q_update(q, "s", 0, -1.0, "s2") == pytest.approx(-1.0 + 0.9 * 3.0)

    def test_alpha_zero_keeps_value(self):
        q = QTable(2, alpha=1.0, gamma=0.9)
        q.table["s"] = np.array([2.5, 0.0])
        q.alpha = 0.0
        assert q_update(q, "s", 0, 100.0, "s") == 2.5

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.01, 1), st.floats(0, 1), st.floats(-10, 10))
    def test_contraction(self, q_old, r, alpha, gamma, next_max):
        q = QTable(2, alpha, gamma)
        q.table["s"] = np.array([q_old, q_old])
        q.table["t"] = np.array([next_max, next_max - 1])
        target = r + gamma * next_max
        new = q_update(q, "s", 0, r, "t")
        assert abs(new - target) == pytest.approx((1 - alpha) * abs(q_old - target), abs=1e-9)

    def test_config_ranges(self):
        with pytest.raises(ValueError):
            QConfig(alpha=0.0)
        with pytest.raises(ValueError):
            QConfig(gamma=1.5)

    def test_size_guard(self):
        with pytest.raises(GraphSizeError):
            train_tabular(EnvConfig(random_graph(5, 0.5, 0)), 1)

    def test_k3_converges_to_n_steps(self):
        q, metrics = train_tabular(EnvConfig(K3), 5000, QConfig(), seed=0)
        res = greedy_q_rollout(q, EnvConfig(K3))
        assert res.solved and res.steps == 3
        assert len(metrics) == 5000 and all(1 <= r.length <= 512 for r in metrics.records)

    def test_untrained_hits_cap(self):
        q, metrics = train_tabular(EnvConfig(K3), 0)
        res = greedy_q_rollout(q, EnvConfig(K3))
        assert not res.solved and res.steps == 512 and len(metrics) == 0

    def test_single_node(self):
        g = Graph(np.zeros((1, 1)))
        q, _ = train_tabular(EnvConfig(g), 50)
        assert greedy_q_rollout(q, EnvConfig(g)).steps == 1

    def test_reproducible(self):
        a = train_tabular(EnvConfig(K3), 200, seed=3)[1]
        b = train_tabular(EnvConfig(K3), 200, seed=3)[1]
        assert a.to_csv() == b.to_csv()


class TestTdTarget:
    def test_examples(self):
        assert td_target(4.0, True, 0.99, 123.0) == 4.0
        assert td_target(-1.0, False, 0.99, 10.0) == pytest.approx(8.9)
        assert td_target(2.0, False, 0.0, 50.0) == 2.0

    @given(st.floats(-20, 20), st.floats(0, 1), st.floats(-1e6, 1e6))
    def test_done_ignores_next(self, r, gamma, nxt):
        assert td_target(r, True, gamma, nxt) == r


class TestDqn:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            DqnConfig(batch_size=100, buffer_capacity=10)
        with pytest.raises(ValueError):
            DqnConfig(eps_end=1.5)

    def test_epsilon_schedule(self):
        cfg = DqnConfig()
        assert epsilon_at(0.0, cfg) == 1.0
        assert epsilon_at(0.25, cfg) == pytest.approx(0.525)
        assert epsilon_at(0.5, cfg) == pytest.approx(0.05)
        assert epsilon_at(1.0, cfg) == pytest.approx(0.05)
        assert all(0 <= epsilon_at(p, cfg) <= 1 for p in np.linspace(0, 1, 50))

    def test_replay_ring_and_sampling(self):
        buf = ReplayBuffer(5, 3, np.random.default_rng(0))
        for i in range(8):
            buf.add(np.full(3, i % 2), i, float(i), np.zeros(3), False)
        assert len(buf) == 5
        assert sorted(buf.actions.tolist()) == [3, 4, 5, 6, 7]
        for _ in range(50):
            idx = buf.sample_indices(5)
            assert len(set(idx.tolist())) == 5
        with pytest.raises(ValueError):
            buf.sample_indices(6)

    def test_huber(self):
        loss, g = huber_grad(np.array([0.5, -3.0]))
        assert loss == pytest.approx((0.125 + 2.5) / 2)
        assert g.tolist() == [0.25, -0.5]

    def test_warmup_beyond_budget_means_no_updates(self):
        cfg = DqnConfig(warmup=10_000)
        net, metrics = train_dqn(EnvConfig(K3), cfg, seed=1, total_steps=500)
        init = Mlp([21, 128, 12], "relu", __import__("gcrl.seeding", fromlist=["stream"]).stream(1, "init"))
        assert all(np.array_equal(a, b) for a, b in zip(net.params(), init.params()))
        assert metrics.records[-1].env_steps <= 500

    def test_budget_arguments(self):
        with pytest.raises(ValueError):
            train_dqn(EnvConfig(K3), DqnConfig(), 0)
        _, m = train_dqn(EnvConfig(K3), DqnConfig(warmup=50), 0, episodes=5)
        assert len(m) == 5

    def test_k3_beats_random_baseline(self):
        cfg = EnvConfig(K3, max_episode_steps=200)
        rng = np.random.default_rng(0)
        lengths = []
        for _ in range(300):
            env = GraphColoringEnv(cfg)
            env.reset()
            while not env.state.done:
                env.step(int(rng.integers(cfg.num_actions)))
            lengths.append(env.state.steps_taken)
        random_baseline = float(np.mean(lengths))
        _, metrics = train_dqn(cfg, DqnConfig(warmup=500, target_sync=500), seed=0, total_steps=20_000)
        assert metrics.tail_mean_length(100) < random_baseline / 2

    def test_reproducible(self):
        a = train_dqn(EnvConfig(K3), DqnConfig(warmup=100), 4, total_steps=1500)[1]
        b = train_dqn(EnvConfig(K3), DqnConfig(warmup=100), 4, total_steps=1500)[1]
        assert a.to_csv() == b.to_csv()


class TestPpoPieces:
    def test_ratio(self):
        assert ppo_ratio(-1.2, -1.2) == 1.0
        assert ppo_ratio(np.log(2) - 0.3, -0.3) == pytest.approx(2.0)
        assert ppo_ratio(-0.3 - np.log(4), -0.3) == pytest.approx(0.25)

    def test_clipped_objective_examples(self):
        assert clipped_objective(1.0, 2.0, 0.2) == 2.0
        assert clipped_objective(1.5, 1.0, 0.2) == pytest.approx(1.2)
        assert clipped_objective(0.5, -1.0, 0.2) == pytest.approx(-0.8)

    @given(st.floats(0.0, 5.0), st.floats(-10, 10), st.floats(0.01, 0.99))
    def test_never_exceeds_unclipped(self, r, a, eps):
        assert clipped_objective(r, a, eps) <= r * a + 1e-12

    @given(st.floats(0.01, 3.0), st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3), st.floats(0.05, 0.5))
    def test_flat_beyond_clip(self, r, a, eps):
        h = 1e-6
        slope = (clipped_objective(r + h, a, eps) - clipped_objective(r - h, a, eps)) / (2 * h)
        if a > 0 and r > 1 + eps + h:
            assert slope == pytest.approx(0.0, abs=1e-6)
        if a < 0 and r < 1 - eps - h:
            assert slope == pytest.approx(0.0, abs=1e-6)
        if 1 - eps + h < r < 1 + eps - h:
            assert slope == pytest.approx(a, abs=1e-6)
        assert clipped_objective_grad(r, a, eps) == pytest.approx(slope, abs=1e-5)

    def test_linear_lr(self):
        assert linear_lr(0, 1000, 3e-4) == 3e-4
        assert linear_lr(1000, 1000, 3e-4) == 0.0
        assert linear_lr(500, 1000, 3e-4) == pytest.approx(1.5e-4)

    def test_config_defaults(self):
        cfg = PpoConfig()
        assert (cfg.clip_eps, cfg.batch_size, cfg.lr, cfg.horizon, cfg.epochs) == (0.2, 128, 3e-4, 2048, 10)
        assert (cfg.gamma, cfg.gae_lambda, cfg.vf_coef, cfg.ent_coef) == (0.99, 0.95, 0.5, 0.0)
        with pytest.raises(ValueError):
            PpoConfig(clip_eps=1.0)
        with pytest.raises(ValueError):
            PpoConfig(batch_size=4096)


def buffer_from(rewards, values, dones):
    buf = RolloutBuffer(len(rewards), 1)
    for r, v, d in zip(rewards, values, dones):
        buf.add(np.zeros(1), 0, 0.0, r, v, d)
    return buf


class TestAdvantages:
    def test_one_step_td(self):
        buf = buffer_from([2.0], [0.5], [False])
        compute_advantages(buf, 0.9, 0.0, bootstrap_value=3.0)
        assert buf.advantages[0] == pytest.approx(2.0 + 0.9 * 3.0 - 0.5)

    def test_zero(self):
        buf = buffer_from([0.0] * 5, [0.0] * 5, [False, True, False, False, True])
        compute_advantages(buf, 0.99, 0.95, 0.0)
        assert np.all(buf.advantages == 0)

    def test_two_step_episode(self):
        buf = buffer_from([1.0, 1.0], [0.0, 0.0], [False, True])
        compute_advantages(buf, 1.0, 1.0, bootstrap_value=100.0)
        assert buf.advantages.tolist() == [2.0, 1.0]
        assert buf.returns.tolist() == [2.0, 1.0]

    def test_boundary_resets(self):
        buf = buffer_from([1.0, 5.0], [0.0, 0.0], [True, False])
        compute_advantages(buf, 1.0, 1.0, bootstrap_value=0.0)
        assert buf.advantages.tolist() == [1.0, 5.0]

    def test_matches_discounted_sum_when_lambda_one(self):
        rng = np.random.default_rng(0)
        r = rng.normal(size=6)
        v = rng.normal(size=6)
        buf = buffer_from(r, v, [False] * 5 + [True])
        compute_advantages(buf, 0.9, 1.0, 0.0)
        ret = [sum(0.9**k * r[t + k] for k in range(6 - t)) for t in range(6)]
        assert np.allclose(buf.returns, ret)


def _ppo_batch(seed=0, b=16, noise=0.3):
    rng = np.random.default_rng(seed)
    cfg = PpoConfig(ent_coef=0.01)
    policy, value = make_nets(9, 5, cfg, rng)
    obs = rng.normal(size=(b, 9))
    actions = rng.integers(0, 5, size=b)
    logp = log_softmax(policy(obs))[np.arange(b), actions]
    old = logp + rng.normal(scale=noise, size=b)
    return cfg, policy, value, obs, actions, old, rng.normal(size=b), rng.normal(size=b)


def test_ppo_loss_gradients_match_finite_differences():
    cfg, policy, value, obs, actions, old, adv, ret = _ppo_batch()
    _, pg, vg = ppo_loss_and_grads(policy, value, obs, actions, old, adv, ret, cfg)
    eps = 1e-6
    for net, grads in ((policy, pg), (value, vg)):
        for p, g in zip(net.params(), grads.flat()):
            for idx in list(np.ndindex(p.shape))[::7]:
                orig = p[idx]
                p[idx] = orig + eps
                lp = ppo_loss_and_grads(policy, value, obs, actions, old, adv, ret, cfg)[0]["loss"]
                p[idx] = orig - eps
                lm = ppo_loss_and_grads(policy, value, obs, actions, old, adv, ret, cfg)[0]["loss"]
                p[idx] = orig
                assert g[idx] == pytest.approx((lp - lm) / (2 * eps), abs=1e-7, rel=1e-5)


def test_first_epoch_surrogate_is_mean_advantage():
    cfg, policy, value, obs, actions, _, adv, ret = _ppo_batch()
    logp = log_softmax(policy(obs))[np.arange(len(actions)), actions]
    stats, _, _ = ppo_loss_and_grads(policy, value, obs, actions, logp, adv, ret, cfg)
    assert stats["mean_ratio"] == 1.0
    assert stats["surrogate"] == pytest.approx(adv.mean(), abs=1e-12)


class TestPpoTrainer:
    def test_one_horizon_one_update(self):
        cfg = PpoConfig(total_steps=256, **SMALL_PPO)
        tr = PpoTrainer(EnvConfig(K3), cfg, seed=0)
        tr.learn(cfg.total_steps)
        assert tr.updates == 1 and tr.global_steps == 256
        assert tr.last_stats["first_mean_ratio"] == 1.0
        assert tr.last_stats["lr"] == 3e-4

    def test_zero_steps(self):
        (policy, _), metrics = train_ppo(EnvConfig(K3), PpoConfig(total_steps=0), seed=0)
        assert len(metrics) == 0

    def test_reproducible(self):
        cfg = PpoConfig(total_steps=768, **SMALL_PPO)
        a = train_ppo(EnvConfig(K3), cfg, 5)[1].to_csv()
        b = train_ppo(EnvConfig(K3), cfg, 5)[1].to_csv()
        c = train_ppo(EnvConfig(K3), cfg, 6)[1].to_csv()
        assert a == b and a != c

    def test_learns_k3(self):
        cfg = PpoConfig(total_steps=20_000, horizon=512, batch_size=128)
        (policy, _), metrics = train_ppo(EnvConfig(K3), cfg, 0)
        assert metrics.tail_mean_length(100) < 4.0
        assert greedy_rollout(policy, EnvConfig(K3), 50, "argmax").steps == 3

    def test_metrics_invariants(self):
        cfg = PpoConfig(total_steps=1024, **SMALL_PPO)
        _, m = train_ppo(EnvConfig(K3, max_episode_steps=20), cfg, 1)
        steps = [r.env_steps for r in m.records]
        assert steps == sorted(steps)
        assert all(1 <= r.length <= 20 for r in m.records)
        assert any(not r.solved for r in m.records) or all(r.solved for r in m.records)

    def test_set_graph_shape_check(self):
        tr = PpoTrainer(EnvConfig(K3), PpoConfig(**SMALL_PPO), 0)
        with pytest.raises(ShapeError):
            tr.set_graph(EnvConfig(complete_graph(4)), 1)


class TestRollout:
    def test_argmax_deterministic(self):
        policy, _ = make_nets(21, 12, PpoConfig(), np.random.default_rng(0))
        a = greedy_rollout(policy, EnvConfig(K3), 100, "argmax")
        b = greedy_rollout(policy, EnvConfig(K3), 100, "argmax")
        assert a == b

    def test_cap_one(self):
        policy, _ = make_nets(21, 12, PpoConfig(), np.random.default_rng(0))
        res = greedy_rollout(policy, EnvConfig(K3), 1, "sample", 3)
        assert res.steps == 1 and not res.solved

    def test_shape_mismatch(self):
        policy, _ = make_nets(21, 12, PpoConfig(), np.random.default_rng(0))
        with pytest.raises(ShapeError, match="observation length"):
            greedy_rollout(policy, EnvConfig(complete_graph(4)))

    def test_batch_matches_single(self):
        g = random_graph(5, 0.5, 2)
        policy, _ = make_nets(EnvConfig(g).obs_size, EnvConfig(g).num_actions, PpoConfig(), np.random.default_rng(1))
        graphs = [permute(g, i)[0] for i in range(6)]
        batch = batch_rollouts(policy, graphs, 5, 3000, [np.random.default_rng(100 + i) for i in range(6)])
        single = [greedy_rollout(policy, EnvConfig(h, max_episode_steps=3000), 3000, "sample",
                                 np.random.default_rng(100 + i)) for i, h in enumerate(graphs)]
        assert batch == single
