import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qcrl import nn
from qcrl.agent import (
    AgentConfig,
    DqnAgent,
    DqnConfig,
    InsufficientBuffer,
    OUProcess,
    ReplayBuffer,
    Transition,
    dqn_train_step,
    linear_schedule,
    make_action_grid,
    make_bundle,
    ou_sample,
    predict_reward,
    run_episode,
    select_action,
    td_target,
    train_step,
)
from qcrl.agent.ddpg import RunningStats, bundle_state, load_bundle_state
from qcrl.agent.dqn import dqn_state, load_dqn_state
from qcrl.bench.tasks import get_task

SMALL = dict(actor_widths=(16, 16), critic_widths=(16, 16), aux_widths=(8,), batch_size=8)


def bundle(algo="at_drl", seed=0, obs=4, act=1, **kw):
    cfg = AgentConfig(**{**SMALL, **kw})
    return make_bundle(obs, act, cfg, np.random.default_rng(seed), algo, np.random.default_rng(seed + 1))


def filled_buffer(n=64, obs=4, act=1, seed=0, reward=None, done=False):
    rng = np.random.default_rng(seed)
    buf = ReplayBuffer(1000, obs, act, np.random.default_rng(seed + 1))
    for _ in range(n):
        a = rng.uniform(-1, 1, act)
        r = rng.normal() * 100 if reward is None else reward(a)
        buf.add(rng.normal(size=obs), a, r, rng.normal(size=obs), done, 0.0)
    return buf


def constant_net(params, value):
    params.theta[...] = 0.0
    params.biases[-1][...] = value


class TestOU:
    def test_noiseless_decay(self):
        p = OUProcess(1, theta=0.15, mu=0.0, sigma=0.0, dt=1.0, initial=1.0)
        assert ou_sample(p, np.random.default_rng(0))[0] == pytest.approx(0.85, abs=1e-15)

    def test_constant(self):
        p = OUProcess(2, theta=0.0, sigma=0.0, initial=0.3)
        rng = np.random.default_rng(0)
        for _ in range(5):
            np.testing.assert_array_equal(ou_sample(p, rng), [0.3, 0.3])

    def test_stationary_variance(self):
        p = OUProcess(1, theta=0.15, sigma=0.2, dt=1.0)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            p.sample(rng)
        xs = np.array([p.sample(rng)[0] for _ in range(100_000)])
        expected = 0.2**2 / (1 - 0.85**2)
        assert p.stationary_variance() == pytest.approx(expected)
        assert xs.var() == pytest.approx(expected, rel=0.05)

    def test_reset(self):
        p = OUProcess(3, initial=0.0)
        p.sample(np.random.default_rng(0))
        p.reset()
        np.testing.assert_array_equal(p.current, np.zeros(3))

    def test_invalid(self):
        with pytest.raises(ValueError):
            OUProcess(1, theta=-1.0)

    def test_linear_schedule(self):
        assert linear_schedule(0.2, 0.05, 0.0) == 0.2
        assert linear_schedule(0.2, 0.05, 0.5) == pytest.approx(0.125)
        assert linear_schedule(0.2, 0.05, 3.0) == 0.05


class TestReplay:
    def test_ring_overwrite(self):
        buf = ReplayBuffer(3, 1, 1, np.random.default_rng(0))
        for i in range(5):
            buf.add([i], [0], float(i), [i], False)
        assert len(buf) == 3
        assert sorted(buf.reward) == [2.0, 3.0, 4.0]

    def test_push_transition(self):
        buf = ReplayBuffer(2, 2, 1, np.random.default_rng(0))
        buf.push(Transition(np.ones(2), np.array([0.5]), 3.0, np.zeros(2), True, 2.5))
        b = buf.sample(1)
        assert b.reward[0] == 3.0 and b.done[0] == 1.0 and b.predicted_reward[0] == 2.5

    def test_insufficient(self):
        buf = ReplayBuffer(10, 1, 1, np.random.default_rng(0))
        buf.add([0], [0], 0.0, [0], False)
        with pytest.raises(InsufficientBuffer):
            buf.sample(2)

    def test_no_duplicates_in_batch(self):
        buf = filled_buffer(20)
        for _ in range(50):
            idx = buf.sample_indices(20)
            assert len(set(idx.tolist())) == 20

    def test_uniformity(self):
        buf = ReplayBuffer(100, 1, 1, np.random.default_rng(123))
        for i in range(100):
            buf.add([i], [0], float(i), [i], False)
        counts = np.zeros(100)
        for _ in range(10_000):
            np.add.at(counts, buf.sample_indices(10), 1)
        n, p = 100_000, 0.01
        sd = math.sqrt(n * p * (1 - p))
        # a per-element 3 sd bound alone fails ~24% of the time for a perfect
        # sampler over 100 elements, so pair a joint test with a 4 sd bound
        assert stats.chisquare(counts).pvalue > 1e-3
        assert np.all(np.abs(counts - n * p) <= 4 * sd)
        assert np.mean(np.abs(counts - n * p) <= 3 * sd) >= 0.98


class TestSelectAction:
    def test_greedy_deterministic(self):
        b = bundle()
        s = np.ones(4)
        np.testing.assert_array_equal(select_action(b, s), select_action(b, s))

    def test_zero_noise_equals_greedy(self):
        b = bundle()
        s = np.linspace(-1, 1, 4)
        noise = OUProcess(1, theta=0.0, sigma=0.0, initial=0.0)
        np.testing.assert_array_equal(select_action(b, s, noise, explore=True), select_action(b, s))

    def test_clamped(self):
        b = bundle()
        constant_net(b.actor, math.atanh(0.95))
        noise = OUProcess(1, theta=0.0, sigma=0.0, initial=0.2)
        assert select_action(b, np.zeros(4), noise, explore=True)[0] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(nn.ShapeMismatch):
            select_action(bundle(), np.zeros(5))


class TestPredictReward:
    def test_zero_head(self):
        b = bundle()
        b.aux_head.theta[...] = 0.0
        assert predict_reward(b, np.ones(4), [0.3]) == 0.0

    def test_reproducible(self):
        b1, b2 = bundle(seed=3), bundle(seed=3)
        s, a = np.linspace(0, 1, 4), [0.1]
        assert predict_reward(b1, s, a) == predict_reward(b2, s, a)

    def test_constant_reward_regression(self):
        b = bundle(seed=0, batch_size=64)
        buf = filled_buffer(200, reward=lambda a: 7.0)
        for _ in range(500):
            train_step(b, buf)
        rng = np.random.default_rng(9)
        for _ in range(20):
            assert abs(predict_reward(b, rng.normal(size=4), rng.uniform(-1, 1, 1)) - 7.0) <= 0.5

    def test_action_dependent_regression(self):
        b = bundle(seed=1, batch_size=64)
        buf = filled_buffer(500, reward=lambda a: 7.0 + 3.0 * a[0], seed=1)
        for _ in range(1500):
            train_step(b, buf)
        rng = np.random.default_rng(10)
        errs = []
        for _ in range(50):
            a = rng.uniform(-1, 1, 1)
            errs.append(abs(predict_reward(b, rng.normal(size=4), a) - (7.0 + 3.0 * a[0])))
        assert np.mean(errs) <= 0.5

    def test_shape_mismatch(self):
        with pytest.raises(nn.ShapeMismatch):
            predict_reward(bundle(), np.zeros(4), [0.0, 0.0])


class TestRunningStats:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=20), min_size=1, max_size=10))
    def test_matches_numpy(self, chunks):
        rs = RunningStats()
        for c in chunks:
            rs.update(c)
        allx = np.concatenate([np.array(c) for c in chunks])
        assert rs.count == allx.size
        assert rs.mean == pytest.approx(allx.mean(), abs=1e-6)
        assert rs.std(1e-12) == pytest.approx(max(allx.std(), 1e-12), rel=1e-6, abs=1e-5)


class TestTdTarget:
    def batch(self, reward, done):
        buf = ReplayBuffer(1, 4, 1, np.random.default_rng(0))
        buf.add(np.ones(4), [0.2], reward, np.ones(4), done)
        return buf.sample(1)

    def test_terminal(self):
        b = bundle(reward_scale=1.0)
        assert td_target(b, self.batch(10.0, True))[0] == 10.0

    def test_bootstrap(self):
        b = bundle(reward_scale=1.0, gamma=0.99)
        constant_net(b.target_critic, 2.0)
        assert td_target(b, self.batch(1.0, False))[0] == pytest.approx(2.98, abs=1e-12)

    def test_gamma_zero(self):
        b = bundle(reward_scale=1.0, gamma=0.0)
        assert td_target(b, self.batch(3.5, False))[0] == 3.5

    def test_reward_scale(self):
        b = bundle(reward_scale=1e-3)
        assert td_target(b, self.batch(10000.0, True))[0] == pytest.approx(10.0)

    def test_online_critic_irrelevant(self):
        b = bundle()
        batch = filled_buffer(16).sample(8)
        y = td_target(b, batch)
        b.critic.theta += np.random.default_rng(0).normal(size=b.critic.size)
        b.actor.theta += np.random.default_rng(1).normal(size=b.actor.size)
        np.testing.assert_array_equal(td_target(b, batch), y)


class TestTrainStep:
    def test_insufficient(self):
        with pytest.raises(InsufficientBuffer):
            train_step(bundle(), filled_buffer(4))

    def test_ddpg_reports_no_aux(self):
        b = bundle("ddpg")
        actor0, critic0 = b.actor.theta.copy(), b.critic.theta.copy()
        m = train_step(b, filled_buffer())
        assert m.aux_loss is None
        assert not np.array_equal(b.actor.theta, actor0)
        assert not np.array_equal(b.critic.theta, critic0)

    def test_at_drl_reports_aux(self):
        m = train_step(bundle("at_drl"), filled_buffer())
        assert m.aux_loss is not None and m.aux_loss > 0

    def test_tau_zero_freezes_targets(self):
        b = bundle(tau=0.0)
        ta, tc = b.target_actor.theta.copy(), b.target_critic.theta.copy()
        train_step(b, filled_buffer())
        np.testing.assert_array_equal(b.target_actor.theta, ta)
        np.testing.assert_array_equal(b.target_critic.theta, tc)

    @pytest.mark.parametrize("algo", ["ddpg", "at_drl"])
    def test_target_lag_exact(self, algo):
        b = bundle(algo, tau=0.01)
        buf = filled_buffer()
        for _ in range(3):
            train_step(b, buf)
        ta, tc = b.target_actor.theta.copy(), b.target_critic.theta.copy()
        train_step(b, buf)
        np.testing.assert_array_equal(b.target_actor.theta, 0.01 * b.actor.theta + 0.99 * ta)
        np.testing.assert_array_equal(b.target_critic.theta, 0.01 * b.critic.theta + 0.99 * tc)

    def test_aux_isolation(self):
        b = bundle("ddpg")
        head = b.aux_head.theta.copy()
        buf = filled_buffer()
        for _ in range(5):
            train_step(b, buf)
        np.testing.assert_array_equal(b.aux_head.theta, head)
        assert b.reward_stats.count == 0

    def test_shared_trunk_coupling(self):
        b = bundle("at_drl", lr_critic=0.0, aux_weight=1.0)
        b.critic.theta[...] = 0.0  # dQ/da = 0, so the main actor gradient vanishes
        actor0 = b.actor.theta.copy()
        m = train_step(b, filled_buffer())
        assert m.aux_loss > 0
        k = b.actor.prefix_size()
        assert np.any(b.actor.theta[:k] != actor0[:k])
        np.testing.assert_array_equal(b.actor.theta[k:], actor0[k:])

    def test_no_coupling_without_aux(self):
        b = bundle("ddpg", lr_critic=0.0)
        b.critic.theta[...] = 0.0
        actor0 = b.actor.theta.copy()
        train_step(b, filled_buffer())
        np.testing.assert_array_equal(b.actor.theta, actor0)

    def test_single_transition_fixed_point(self):
        b = bundle("ddpg", batch_size=1, reward_scale=1.0)
        buf = ReplayBuffer(1, 4, 1, np.random.default_rng(0))
        s, a = np.array([0.5, -0.5, 0.2, 0.1]), np.array([0.3])
        buf.add(s, a, 1.0, s, True)
        for _ in range(2000):
            train_step(b, buf)
        q, _ = nn.forward(b.critic, np.concatenate([s, a]))
        assert abs(q[0] - 1.0) <= 0.01

    def test_deterministic(self):
        def run():
            b = bundle("at_drl", seed=4)
            buf = filled_buffer(seed=4)
            for _ in range(10):
                train_step(b, buf)
            return b.actor.theta, b.critic.theta, b.aux_head.theta

        for x, y in zip(run(), run()):
            np.testing.assert_array_equal(x, y)

    def test_checkpoint_state_round_trip(self):
        b = bundle("at_drl", seed=2)
        buf = filled_buffer(seed=2)
        for _ in range(5):
            train_step(b, buf)
        meta, arrays = bundle_state(b)
        c = bundle("at_drl", seed=99)
        load_bundle_state(c, meta, {k: v.copy() for k, v in arrays.items()})
        state = buf.rng.bit_generator.state
        train_step(b, buf)
        buf.rng.bit_generator.state = state
        train_step(c, buf)
        np.testing.assert_array_equal(b.actor.theta, c.actor.theta)
        np.testing.assert_array_equal(b.aux_head.theta, c.aux_head.theta)


class TestDqn:
    def test_grid_sizes(self):
        assert make_action_grid(1).shape == (11, 1)
        assert make_action_grid(2).shape == (25, 2)
        assert make_action_grid(4).shape == (81, 4)
        assert make_action_grid(8).shape == (6561, 8)

    def test_grid_cap(self, caplog):
        g = make_action_grid(9)
        assert g.shape == (6561, 9)
        assert "truncated" in caplog.text

    def test_grid_values(self):
        np.testing.assert_allclose(make_action_grid(1)[:, 0], np.linspace(-1, 1, 11))

    def agent(self, grid=None, **kw):
        cfg = DqnConfig(**kw)
        grid = make_action_grid(1) if grid is None else grid
        return DqnAgent(4, grid, cfg, np.random.default_rng(0), np.random.default_rng(1))

    def test_constant_reward_fixed_point(self):
        ag = self.agent(gamma=0.0, reward_scale=1.0)
        rng = np.random.default_rng(2)
        buf = ReplayBuffer(1000, 4, 1, np.random.default_rng(3))
        for _ in range(500):
            buf.add(rng.normal(size=4), [float(rng.integers(11))], 1.0, rng.normal(size=4), False)
        for _ in range(3000):
            dqn_train_step(ag, buf)
        q, _ = nn.forward(ag.qnet, buf.state[:100])
        assert np.max(np.abs(q - 1.0)) <= 0.05

    def test_terminal_targets_equal_rewards(self):
        ag = self.agent(reward_scale=1.0, batch_size=1, lr=0.05)
        buf = ReplayBuffer(1, 4, 1, np.random.default_rng(0))
        s = np.ones(4)
        buf.add(s, [3.0], 2.5, s, True)
        for _ in range(1000):
            dqn_train_step(ag, buf)
        q, _ = nn.forward(ag.qnet, s)
        assert q[3] == pytest.approx(2.5, abs=0.01)

    def test_single_action_constant_policy(self):
        ag = self.agent(grid=np.array([[0.4]]))
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, idx = ag.act(rng.normal(size=4), explore=True)
            assert a[0] == 0.4 and idx[0] == 0

    def test_target_copy_period(self):
        ag = self.agent(target_period=5)
        buf = filled_buffer(64)
        buf.action[:] = 0.0
        t0 = ag.target.theta.copy()
        for _ in range(4):
            dqn_train_step(ag, buf)
        np.testing.assert_array_equal(ag.target.theta, t0)
        dqn_train_step(ag, buf)
        np.testing.assert_array_equal(ag.target.theta, ag.qnet.theta)

    def test_insufficient(self):
        with pytest.raises(InsufficientBuffer):
            dqn_train_step(self.agent(), filled_buffer(4))

    def test_state_round_trip(self):
        ag = self.agent()
        buf = filled_buffer(64)
        buf.action[:] = 1.0
        for _ in range(3):
            dqn_train_step(ag, buf)
        meta, arrays = dqn_state(ag)
        other = self.agent()
        load_dqn_state(other, meta, arrays)
        np.testing.assert_array_equal(other.qnet.theta, ag.qnet.theta)
        np.testing.assert_array_equal(other.target.theta, ag.target.theta)
        assert other.updates == 3


class TestRunEpisode:
    def test_greedy_untrained_is_free_rabi(self):
        env = get_task("oq_10").make_env()
        b = make_bundle(env.obs_dim, env.act_dim, AgentConfig(), np.random.default_rng(0))
        s = run_episode(b, env, buffer=None, explore=False)
        assert s.steps == 10
        assert s.final_fidelity == pytest.approx(1.0, abs=1e-3)

    def test_one_step_episode(self):
        env = get_task("oq_10").with_overrides(n_max=1).make_env()
        b = bundle(obs=env.obs_dim)
        buf = ReplayBuffer(10, env.obs_dim, 1, np.random.default_rng(0))
        s = run_episode(b, env, buf, explore=True, train_during=False)
        assert s.steps == 1 and len(buf) == 1

    def test_evaluation_leaves_buffer_alone(self):
        env = get_task("oq_10").make_env()
        b = bundle(obs=env.obs_dim)
        run_episode(b, env, None, explore=False)
        assert b.updates == 0

    def test_deterministic(self):
        def run():
            env = get_task("oq_sup1").make_env()
            b = bundle(obs=env.obs_dim, seed=5, learning_starts=0)
            buf = ReplayBuffer(1000, env.obs_dim, 1, np.random.default_rng(6))
            return [run_episode(b, env, buf, explore=True, learning_starts=8) for _ in range(3)]

        a, b = run(), run()
        for x, y in zip(a, b):
            assert (x.final_fidelity, x.episode_return, x.steps) == (y.final_fidelity, y.episode_return, y.steps)

    def test_stored_actions_bounded(self):
        env = get_task("oq_10").make_env()
        b = bundle(obs=env.obs_dim, ou_sigma=3.0)
        b.noise.sigma = 3.0
        buf = ReplayBuffer(1000, env.obs_dim, 1, np.random.default_rng(0))
        for _ in range(10):
            run_episode(b, env, buf, explore=True, train_during=False)
        assert np.all(np.abs(buf.action[: len(buf)]) <= 1.0)
        assert np.max(np.abs(buf.action[: len(buf)])) == 1.0

    def test_ou_reset_each_episode(self):
        env = get_task("oq_10").make_env()
        b = bundle(obs=env.obs_dim)
        b.noise.current[...] = 0.7
        run_episode(b, env, None, explore=False)
        np.testing.assert_array_equal(b.noise.current, [0.0])

    def test_dqn_episode(self):
        env = get_task("oq_10").make_env()
        ag = DqnAgent(env.obs_dim, make_action_grid(1), DqnConfig(), np.random.default_rng(0))
        buf = ReplayBuffer(100, env.obs_dim, 1, np.random.default_rng(1))
        s = run_episode(ag, env, buf, explore=True, train_during=False)
        assert 1 <= s.steps <= 20
        assert np.all(np.isin(buf.action[: len(buf), 0], np.arange(11)))
