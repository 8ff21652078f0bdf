"""Trajectory Balance training and sampling for flat and hierarchical MDPs.

The model holds a forward policy, a backward policy (a choice of which
selected block to remove; hierarchical micro-step unwinds are deterministic
and contribute log 1), and a learnable log-partition scalar.  Training
minimizes the squared trajectory-balance residual

    (log_Z + sum_t log P_F(a_t|s_t) - log R(x) - sum_t log P_B(s_t-1|s_t))^2

over batches mixing fresh rollouts with draws from a rank-prioritized replay
buffer of high-reward trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .core import DesignState, SampleEntry, SampleSet, SizeConstraint
from .env_flat import FlatEnv, Trajectory
from .env_hier import ClusterMap, HierEnv
from .errors import ConfigError, InvalidTrajectoryError, NumericError
from .neural import MLP, Adam, masked_log_softmax
from .reward import ScoreTable
from .validation import as_rng, as_score_table


@dataclass
class GFNConfig:
    """Training hyperparameters (defaults follow the reference setting)."""

    iterations: int = 5000
    learning_rate: float = 1e-4
    batch_size: int = 50
    replay_batch: int = 50
    replay_capacity: int = 1000
    beta: float = 64.0
    epsilon: float = 0.1
    seed: int = 0
    hidden_dim: int = 512
    n_layers: int = 5
    # Adam's per-step displacement is capped near lr, so log_Z (which may need
    # to travel tens of units) learns on its own, faster schedule.
    log_z_lr_multiplier: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        for name in ("iterations", "learning_rate", "batch_size", "replay_batch",
                     "replay_capacity", "beta", "hidden_dim", "n_layers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


class TBModel:
    """Forward policy, backward policy, and learnable log_Z."""

    def __init__(self, env, hidden_dim: int, n_layers: int, rng):
        hidden = [hidden_dim] * (n_layers - 1)
        self.pf = MLP([env.obs_dim, *hidden, env.n_actions], rng)
        self.pb = MLP([env.obs_dim, *hidden, env.backward_dim], rng)
        self.log_z = np.zeros(())

    def parameters(self) -> list[np.ndarray]:
        return self.pf.params + self.pb.params + [self.log_z]

    def state_arrays(self) -> dict:
        out = {"log_z": self.log_z}
        for i, p in enumerate(self.pf.params):
            out[f"pf{i}"] = p
        for i, p in enumerate(self.pb.params):
            out[f"pb{i}"] = p
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.log_z = np.asarray(arrays["log_z"])
        self.pf.params = [arrays[f"pf{i}"] for i in range(len(self.pf.params))]
        self.pb.params = [arrays[f"pb{i}"] for i in range(len(self.pb.params))]


class ReplayBuffer:
    """Keeps the highest-log-reward trajectories; samples by rank priority."""

    def __init__(self, capacity: int = 1000):
        self.capacity = capacity
        self.entries: list[tuple[float, int, Trajectory]] = []
        self._counter = 0

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, trajectories, log_rewards) -> None:
        for traj, lr in zip(trajectories, log_rewards):
            self.entries.append((float(lr), self._counter, traj))
            self._counter += 1
        self.entries.sort(key=lambda e: (-e[0], e[1]))
        del self.entries[self.capacity :]

    def sample(self, k: int, rng) -> tuple[list[Trajectory], np.ndarray]:
        """k draws with replacement, probability proportional to 1/rank."""
        if not self.entries:
            return [], np.zeros(0)
        w = 1.0 / np.arange(1, len(self.entries) + 1)
        idx = rng.choice(len(self.entries), size=k, p=w / w.sum())
        trajs = [self.entries[i][2] for i in idx]
        lrs = np.array([self.entries[i][0] for i in idx])
        return trajs, lrs


def replay_push_sample(buffer: ReplayBuffer, trajectories, log_rewards, k: int, rng):
    """Push new trajectories, then draw k by rank priority."""
    buffer.push(trajectories, log_rewards)
    return buffer.sample(k, rng)


# rollouts -------------------------------------------------------------------


def sample_trajectories(model: TBModel, env, n: int, epsilon: float, rng) -> list[Trajectory]:
    """Batched rollouts: all active rows advance one (micro-)step per pass."""
    batch = env.init_batch(n)
    active = np.arange(n)
    steps = [[] for _ in range(n)]  # (obs uint8, mask, action)
    adds_log = [[] for _ in range(n)]  # (bits_after uint8, flat bit)
    terminal = [None] * n
    while len(active):
        masks = env.masks(batch, active)
        # Tight size windows admit reachable dead ends (no valid flip, Stop
        # still masked).  Restart those rollouts from the empty state.
        dead = ~masks.any(axis=1)
        if dead.any():
            rows = active[dead]
            env.reset_rows(batch, rows)
            for row in rows:
                steps[row].clear()
                adds_log[row].clear()
            masks = env.masks(batch, active)
        obs = env.observe(batch, active)
        logits, _ = model.pf.forward(obs)
        logp = masked_log_softmax(logits, masks)
        if epsilon > 0:
            explore = rng.random(len(active)) < epsilon
            if explore.any():
                uniform = masked_log_softmax(np.zeros_like(logits[explore]), masks[explore])
                logp = logp.copy()
                logp[explore] = uniform
        gumbel = rng.gumbel(size=logp.shape)
        actions = np.argmax(np.where(masks, logp + gumbel, -np.inf), axis=1)
        obs_u8 = obs.astype(np.uint8)
        for i, row in enumerate(active):
            steps[row].append((obs_u8[i], masks[i], int(actions[i])))
        stop = actions == env.stop_action
        go_rows = active[~stop]
        go_actions = actions[~stop]
        if len(go_rows):
            adds, flat = env.added_bits(batch, go_rows, go_actions)
            env.apply(batch, go_rows, go_actions)
            for i in np.nonzero(adds)[0]:
                row = go_rows[i]
                adds_log[row].append((batch["bits"][row].copy(), int(flat[i])))
        for row in active[stop]:
            terminal[row] = batch["bits"][row].copy()
        active = go_rows
    out = []
    for row in range(n):
        obs_m = np.stack([s[0] for s in steps[row]])
        mask_m = np.stack([s[1] for s in steps[row]])
        act_m = np.array([s[2] for s in steps[row]], dtype=np.int64)
        if adds_log[row]:
            bwd_bits = np.stack([a[0] for a in adds_log[row]])
            bwd_added = np.array([a[1] for a in adds_log[row]], dtype=np.int64)
        else:
            bwd_bits = np.zeros((0, env.total_bits), dtype=np.uint8)
            bwd_added = np.zeros(0, dtype=np.int64)
        out.append(Trajectory(obs_m, mask_m, act_m, terminal[row], bwd_bits, bwd_added))
    return out


def sample_trajectory(model: TBModel, env, epsilon: float, rng) -> Trajectory:
    return sample_trajectories(model, env, 1, epsilon, rng)[0]


def terminal_log_rewards(trajectories, table: ScoreTable, beta: float) -> np.ndarray:
    """beta * mean score of each trajectory's terminal library."""
    spec = table.spec()
    slices = spec.slices()
    out = np.empty(len(trajectories))
    for i, traj in enumerate(trajectories):
        sel = [np.nonzero(traj.terminal_bits[sl])[0] for sl in slices]
        out[i] = beta * table.values[np.ix_(*sel)].mean()
    return out


# trajectory-balance loss -----------------------------------------------------


def tb_loss_batch(model: TBModel, trajectories, log_rewards, env, max_chunk_steps: int | None = None):
    """Mean squared TB residual over a batch, with exact gradients.

    Returns (loss, grads) where grads aligns with ``model.parameters()``.
    Residuals are per-trajectory, so the batch can be processed in chunks
    (bounded activation memory) with exact gradient accumulation;
    ``max_chunk_steps`` caps the forward-pass row count per chunk.
    """
    if max_chunk_steps is not None:
        return _tb_loss_chunked(model, trajectories, log_rewards, env, max_chunk_steps)
    return _tb_loss_full(model, trajectories, log_rewards, env, len(trajectories))


def _tb_loss_chunked(model, trajectories, log_rewards, env, max_chunk_steps):
    n = len(trajectories)
    log_rewards = np.asarray(log_rewards)
    loss = 0.0
    grads = None
    start = 0
    while start < n:
        end = start + 1
        steps = len(trajectories[start])
        while end < n and steps + len(trajectories[end]) <= max_chunk_steps:
            steps += len(trajectories[end])
            end += 1
        l, g = _tb_loss_full(model, trajectories[start:end], log_rewards[start:end], env, n)
        loss += l
        if grads is None:
            grads = g
        else:
            for acc, gi in zip(grads, g):
                acc += gi
        start = end
    return loss, grads


def _tb_loss_full(model: TBModel, trajectories, log_rewards, env, n_total: int):
    n = len(trajectories)
    xf = np.concatenate([t.obs for t in trajectories]).astype(np.float64)
    mf = np.concatenate([t.masks for t in trajectories])
    af = np.concatenate([t.actions for t in trajectories])
    tid_f = np.repeat(np.arange(n), [len(t) for t in trajectories])

    bwd_bits = np.concatenate([t.bwd_bits for t in trajectories])
    ab = np.concatenate([t.bwd_added for t in trajectories])
    xb = env.backward_observe(bwd_bits)
    mb = env.backward_mask(bwd_bits)
    tid_b = np.repeat(np.arange(n), [len(t.bwd_added) for t in trajectories])

    logits_f, cache_f = model.pf.forward(xf)
    logp_f = masked_log_softmax(logits_f, mf)
    chosen_f = logp_f[np.arange(len(af)), af]
    logits_b, cache_b = model.pb.forward(xb)
    logp_b = masked_log_softmax(logits_b, mb)
    chosen_b = logp_b[np.arange(len(ab)), ab]
    if not np.all(np.isfinite(chosen_f)) or not np.all(np.isfinite(chosen_b)):
        raise InvalidTrajectoryError("trajectory contains a zero-probability action")

    sum_f = np.bincount(tid_f, weights=chosen_f, minlength=n)
    sum_b = np.bincount(tid_b, weights=chosen_b, minlength=n)
    delta = float(model.log_z) + sum_f - np.asarray(log_rewards) - sum_b
    loss = float(np.sum(delta**2)) / n_total
    g = 2.0 * delta / n_total

    probs_f = np.where(mf, np.exp(logp_f), 0.0)
    dlogits_f = -probs_f
    dlogits_f[np.arange(len(af)), af] += 1.0
    dlogits_f *= g[tid_f][:, None]
    grads_f, _ = model.pf.backward(cache_f, dlogits_f)

    probs_b = np.where(mb, np.exp(logp_b), 0.0)
    dlogits_b = -probs_b
    dlogits_b[np.arange(len(ab)), ab] += 1.0
    dlogits_b *= -g[tid_b][:, None]
    grads_b, _ = model.pb.backward(cache_b, dlogits_b)

    dlog_z = np.array(g.sum())
    return loss, grads_f + grads_b + [dlog_z]


def tb_loss(model: TBModel, trajectory: Trajectory, log_reward: float, env):
    """Single-trajectory TB loss and gradients."""
    return tb_loss_batch(model, [trajectory], [log_reward], env)


# training ---------------------------------------------------------------------


def train_gfn(cfg: GFNConfig, env, table: ScoreTable, rng=None):
    """Train a TBModel; returns (model, training log).

    Each iteration rolls out ``batch_size`` fresh trajectories with
    epsilon-uniform exploration, mixes in ``replay_batch`` buffer draws (or
    extra fresh rollouts while the buffer is warming up), and takes one Adam
    step on the mean TB loss.
    """
    rng = as_rng(cfg.seed if rng is None else rng)
    table.check_spec(env.spec)
    model = TBModel(env, cfg.hidden_dim, cfg.n_layers, rng)
    policy_params = model.pf.params + model.pb.params
    opt = Adam(policy_params, lr=cfg.learning_rate)
    opt_z = Adam([model.log_z], lr=cfg.learning_rate * cfg.log_z_lr_multiplier)
    buffer = ReplayBuffer(cfg.replay_capacity)
    log = []
    for it in range(cfg.iterations):
        fresh = sample_trajectories(model, env, cfg.batch_size, cfg.epsilon, rng)
        fresh_lr = terminal_log_rewards(fresh, table, cfg.beta)
        if len(buffer) >= cfg.replay_batch:
            replay, replay_lr = buffer.sample(cfg.replay_batch, rng)
        else:
            replay = sample_trajectories(model, env, cfg.replay_batch, cfg.epsilon, rng)
            replay_lr = terminal_log_rewards(replay, table, cfg.beta)
        trajs = fresh + replay
        lrs = np.concatenate([fresh_lr, replay_lr])
        loss, grads = tb_loss_batch(model, trajs, lrs, env, max_chunk_steps=4096)
        if not np.isfinite(loss):
            raise NumericError(f"TB loss diverged at iteration {it}")
        opt.step(policy_params, grads[:-1])
        opt_z.step([model.log_z], grads[-1:])
        buffer.push(fresh, fresh_lr)
        log.append(
            {
                "iteration": it,
                "loss": loss,
                "mean_log_reward": float(fresh_lr.mean()),
                "log_z": float(model.log_z),
            }
        )
    return model, log


def sample_library_set(
    model: TBModel, env, table: ScoreTable, n: int, beta: float, rng, chunk: int = 500
) -> SampleSet:
    """n terminal designs from the pure (epsilon = 0) policy, with rewards."""
    rng = as_rng(rng)
    entries = []
    remaining = n
    while remaining > 0:
        m = min(chunk, remaining)
        trajs = sample_trajectories(model, env, m, 0.0, rng)
        lrs = terminal_log_rewards(trajs, table, beta)
        for traj, lr in zip(trajs, lrs):
            entries.append(SampleEntry(traj.terminal_state(), float(lr), float(lr / beta)))
        remaining -= m
    return SampleSet(entries)


# estimator wrapper -------------------------------------------------------------


class GFlowNetSampler(BaseEstimator):
    """Estimator-style front end: ``fit(score_table)`` then ``sample(n)``."""

    def __init__(
        self,
        min_size: int,
        max_size: int,
        hierarchical: bool = False,
        cluster_map: ClusterMap | None = None,
        iterations: int = 5000,
        learning_rate: float = 1e-4,
        batch_size: int = 50,
        replay_batch: int = 50,
        replay_capacity: int = 1000,
        beta: float = 64.0,
        epsilon: float = 0.1,
        hidden_dim: int = 512,
        n_layers: int = 5,
        log_z_lr_multiplier: float = 100.0,
        random_state: int = 0,
    ):
        self.min_size = min_size
        self.max_size = max_size
        self.hierarchical = hierarchical
        self.cluster_map = cluster_map
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.replay_batch = replay_batch
        self.replay_capacity = replay_capacity
        self.beta = beta
        self.epsilon = epsilon
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.log_z_lr_multiplier = log_z_lr_multiplier
        self.random_state = random_state

    def _config(self) -> GFNConfig:
        return GFNConfig(
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            replay_batch=self.replay_batch,
            replay_capacity=self.replay_capacity,
            beta=self.beta,
            epsilon=self.epsilon,
            seed=self.random_state,
            hidden_dim=self.hidden_dim,
            n_layers=self.n_layers,
            log_z_lr_multiplier=self.log_z_lr_multiplier,
        )

    def make_env(self, table: ScoreTable):
        spec = table.spec()
        constraint = SizeConstraint(self.min_size, self.max_size)
        if self.hierarchical:
            cmap = self.cluster_map or ClusterMap.singletons(spec)
            return HierEnv(spec, constraint, cmap)
        return FlatEnv(spec, constraint)

    def fit(self, X, y=None):
        table = as_score_table(X)
        self.table_ = table
        self.env_ = self.make_env(table)
        self.model_, self.history_ = train_gfn(self._config(), self.env_, table)
        return self

    def sample(self, n: int, random_state=None) -> SampleSet:
        rng = as_rng(self.random_state if random_state is None else random_state)
        return sample_library_set(self.model_, self.env_, self.table_, n, self.beta, rng)
