"""Trajectory Balance loss, replay buffer, rollouts, and the sampler front end."""

import numpy as np
import pytest

from deldesign.core import CycleSpec, DesignState, SizeConstraint, library_size
from deldesign.env_flat import FlatEnv, Trajectory
from deldesign.errors import ConfigError, InvalidTrajectoryError
from deldesign.gflownet import (
    GFNConfig,
    GFlowNetSampler,
    ReplayBuffer,
    TBModel,
    replay_push_sample,
    sample_trajectories,
    tb_loss,
    tb_loss_batch,
    terminal_log_rewards,
    train_gfn,
)
from deldesign.reward import ScoreTable


SPEC222 = CycleSpec((2, 2, 2))
C14 = SizeConstraint(1, 4)


def make_env():
    return FlatEnv(SPEC222, C14)


def make_model(env, seed=0, hidden=6, layers=2):
    return TBModel(env, hidden, layers, np.random.default_rng(seed))


def random_table(seed=0):
    return ScoreTable(np.random.default_rng(seed).random((2, 2, 2)))


def rollout(env, model, seed=0, n=1):
    return sample_trajectories(model, env, n, 0.5, np.random.default_rng(seed))


class TestGFNConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            GFNConfig(epsilon=1.5)
        with pytest.raises(ConfigError):
            GFNConfig(iterations=0)
        with pytest.raises(ConfigError):
            GFNConfig(beta=-1.0)

    def test_reference_defaults(self):
        # [PAPER] defaults of the reference training setting
        cfg = GFNConfig()
        assert cfg.iterations == 5000
        assert cfg.learning_rate == 1e-4
        assert cfg.batch_size == 50 and cfg.replay_batch == 50
        assert cfg.replay_capacity == 1000
        assert cfg.beta == 64.0 and cfg.epsilon == 0.1
        assert cfg.hidden_dim == 512 and cfg.n_layers == 5


class TestReplayBuffer:
    def test_capacity_two_keeps_top(self):
        # [DERIVED] push rewards 1, 5, 3 into capacity 2 -> {5, 3} retained
        buf = ReplayBuffer(capacity=2)
        trajs = ["t1", "t5", "t3"]
        buf.push(trajs, [1.0, 5.0, 3.0])
        kept = sorted(lr for lr, _, _ in buf.entries)
        assert kept == [3.0, 5.0]

    def test_rank_draw_frequencies(self):
        # [DERIVED] 1/rank priorities over 4 entries: p = (1, 1/2, 1/3, 1/4)/H4
        buf = ReplayBuffer(capacity=4)
        buf.push(["a", "b", "c", "d"], [4.0, 3.0, 2.0, 1.0])
        rng = np.random.default_rng(0)
        n = 200_000
        trajs, lrs = buf.sample(n, rng)
        h4 = 1 + 1 / 2 + 1 / 3 + 1 / 4
        for rank, lr in enumerate([4.0, 3.0, 2.0, 1.0], start=1):
            freq = np.mean(lrs == lr)
            assert freq == pytest.approx(1 / rank / h4, abs=0.02)

    def test_ties_keep_insertion_order(self):
        buf = ReplayBuffer(capacity=3)
        buf.push(["x", "y"], [2.0, 2.0])
        assert [e[2] for e in buf.entries] == ["x", "y"]

    def test_empty_sample(self):
        trajs, lrs = ReplayBuffer().sample(5, np.random.default_rng(0))
        assert trajs == [] and len(lrs) == 0

    def test_push_sample_wrapper(self):
        buf = ReplayBuffer(capacity=2)
        trajs, lrs = replay_push_sample(buf, ["a"], [1.0], 3, np.random.default_rng(0))
        assert trajs == ["a", "a", "a"]


class TestRollouts:
    def test_terminal_states_feasible(self):
        env = make_env()
        model = make_model(env)
        trajs = rollout(env, model, n=40)
        for t in trajs:
            size = library_size(t.terminal_state(), SPEC222)
            assert C14.contains(size)
            assert t.actions[-1] == env.stop_action
            # every earlier action is a flip recorded with a valid mask
            assert all(t.masks[i][t.actions[i]] for i in range(len(t)))

    def test_epsilon_one_is_uniform_over_valid(self):
        # [DERIVED] with epsilon=1 the first action is uniform over the 6 flips
        env = make_env()
        model = make_model(env)
        rng = np.random.default_rng(1)
        trajs = sample_trajectories(model, env, 6000, 1.0, rng)
        first = np.array([t.actions[0] for t in trajs])
        counts = np.bincount(first, minlength=7)
        assert counts[6] == 0  # Stop masked at the empty state
        np.testing.assert_allclose(counts[:6] / 6000, 1 / 6, atol=0.03)

    def test_backward_log_matches_set_bits(self):
        env = make_env()
        model = make_model(env)
        (t,) = rollout(env, model, seed=2)
        assert len(t.bwd_added) == int(t.terminal_bits.sum())
        # each logged bwd state contains its own added bit
        for bits, added in zip(t.bwd_bits, t.bwd_added):
            assert bits[added] == 1

    def test_dead_end_restart_tight_window(self):
        # [DERIVED] min=max forces restarts but never a crash; terminals valid
        env = FlatEnv(CycleSpec((2, 2, 3)), SizeConstraint(4, 4))
        model = TBModel(env, 6, 2, np.random.default_rng(0))
        trajs = sample_trajectories(model, env, 50, 1.0, np.random.default_rng(3))
        for t in trajs:
            assert library_size(t.terminal_state(), CycleSpec((2, 2, 3))) == 4


class TestTerminalLogRewards:
    def test_matches_mean_times_beta(self):
        # [TRIVIAL] log R = beta * mean score of the terminal library
        table = random_table()
        env = make_env()
        model = make_model(env)
        trajs = rollout(env, model, n=10)
        lrs = terminal_log_rewards(trajs, table, beta=8.0)
        from deldesign.reward import mean_score

        for t, lr in zip(trajs, lrs):
            assert lr == pytest.approx(8.0 * mean_score(t.terminal_state(), table))


class TestTBLoss:
    def test_residual_identity(self):
        # [DERIVED] loss equals (log_Z + sum log P_F - log R - sum log P_B)^2
        env = make_env()
        model = make_model(env)
        (t,) = rollout(env, model)
        from deldesign.neural import masked_log_softmax

        logits, _ = model.pf.forward(t.obs.astype(float))
        lf = masked_log_softmax(logits, t.masks)
        sum_f = lf[np.arange(len(t)), t.actions].sum()
        xb = env.backward_observe(t.bwd_bits)
        mb = env.backward_mask(t.bwd_bits)
        logits_b, _ = model.pb.forward(xb)
        lb = masked_log_softmax(logits_b, mb)
        sum_b = lb[np.arange(len(t.bwd_added)), t.bwd_added].sum()
        log_r = 1.7
        delta = float(model.log_z) + sum_f - log_r - sum_b
        loss, _ = tb_loss(model, t, log_r, env)
        assert loss == pytest.approx(delta**2, rel=1e-12)

    def test_log_z_gradient_exact(self):
        # [DERIVED] dLoss/dlog_Z = 2 * mean residual
        env = make_env()
        model = make_model(env)
        trajs = rollout(env, model, n=3)
        lrs = np.array([0.3, 1.1, -0.4])
        loss, grads = tb_loss_batch(model, trajs, lrs, env)
        eps = 1e-6
        model.log_z = model.log_z + eps
        lp, _ = tb_loss_batch(model, trajs, lrs, env)
        model.log_z = model.log_z - 2 * eps
        lm, _ = tb_loss_batch(model, trajs, lrs, env)
        assert float(grads[-1]) == pytest.approx((lp - lm) / (2 * eps), rel=1e-6)

    def test_gradients_match_finite_differences(self):
        # [DERIVED] central FD over every policy parameter, h = 1e-5
        env = make_env()
        model = make_model(env, hidden=5, layers=2)
        rng = np.random.default_rng(11)
        for net in (model.pf, model.pb):
            net.set_flat(net.get_flat() + 0.1 * rng.normal(size=net.get_flat().size))
        trajs = rollout(env, model, seed=4, n=3)
        lrs = np.array([0.5, -0.2, 1.0])
        loss, grads = tb_loss_batch(model, trajs, lrs, env)
        analytic = np.concatenate([g.ravel() for g in grads[:-1]])

        nf = len(model.pf.get_flat())
        flat0 = np.concatenate([model.pf.get_flat(), model.pb.get_flat()])

        def set_params(flat):
            model.pf.set_flat(flat[:nf])
            model.pb.set_flat(flat[nf:])

        h = 1e-5
        numeric = np.empty_like(flat0)
        for i in range(len(flat0)):
            fp = flat0.copy(); fp[i] += h
            set_params(fp)
            lp, _ = tb_loss_batch(model, trajs, lrs, env)
            fm = flat0.copy(); fm[i] -= h
            set_params(fm)
            lm, _ = tb_loss_batch(model, trajs, lrs, env)
            numeric[i] = (lp - lm) / (2 * h)
        set_params(flat0)
        scale = np.maximum(np.abs(numeric), 1e-3)
        np.testing.assert_allclose(analytic / scale, numeric / scale, atol=1e-6)

    def test_chunked_equals_full(self):
        # [DERIVED] chunked accumulation is exact
        env = make_env()
        model = make_model(env)
        trajs = rollout(env, model, seed=5, n=8)
        lrs = np.linspace(-1, 1, 8)
        l_full, g_full = tb_loss_batch(model, trajs, lrs, env)
        l_chunk, g_chunk = tb_loss_batch(model, trajs, lrs, env, max_chunk_steps=4)
        assert l_chunk == pytest.approx(l_full, rel=1e-12)
        for a, b in zip(g_full, g_chunk):
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)

    def test_zero_probability_action_raises(self):
        env = make_env()
        model = make_model(env)
        (t,) = rollout(env, model, seed=6)
        bad_masks = t.masks.copy()
        bad_masks[0, t.actions[0]] = False
        bad_masks[0, (t.actions[0] + 1) % 6] = True
        bad = Trajectory(t.obs, bad_masks, t.actions, t.terminal_bits, t.bwd_bits, t.bwd_added)
        with pytest.raises(InvalidTrajectoryError):
            tb_loss(model, bad, 0.0, env)


class TestTraining:
    def test_short_run_returns_log(self):
        cfg = GFNConfig(iterations=5, batch_size=4, replay_batch=4,
                        replay_capacity=8, hidden_dim=8, n_layers=2, beta=4.0)
        env = make_env()
        model, log = train_gfn(cfg, env, random_table())
        assert len(log) == 5
        assert all(np.isfinite(rec["loss"]) for rec in log)
        assert {"iteration", "loss", "mean_log_reward", "log_z"} <= set(log[0])

    def test_sampler_estimator_round_trip(self):
        g = GFlowNetSampler(
            1, 4, iterations=5, batch_size=4, replay_batch=4, replay_capacity=8,
            hidden_dim=8, n_layers=2, beta=4.0, random_state=0,
        )
        params = g.get_params()
        assert params["min_size"] == 1 and params["beta"] == 4.0
        g.fit(random_table().values)
        s = g.sample(20, random_state=1)
        assert len(s) == 20
        for entry in s:
            assert C14.contains(library_size(entry.state, SPEC222))
            assert entry.log_reward == pytest.approx(4.0 * entry.mean_score)

    def test_hierarchical_sampler_runs(self):
        g = GFlowNetSampler(
            1, 4, hierarchical=True, iterations=3, batch_size=4, replay_batch=4,
            replay_capacity=8, hidden_dim=8, n_layers=2, beta=4.0,
        )
        g.fit(random_table().values)
        s = g.sample(10)
        assert all(C14.contains(library_size(e.state, SPEC222)) for e in s)
