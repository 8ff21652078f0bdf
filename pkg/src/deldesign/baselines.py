"""Comparison samplers: random rollouts, greedy marginals, MCMC, and PPO."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .core import (
    CycleSpec,
    DesignState,
    SampleEntry,
    SampleSet,
    SizeConstraint,
    encode_selection,
    feasible_count_triples,
)
from .env_flat import FlatEnv
from .errors import ConfigError, NumericError
from .neural import MLP, Adam, masked_log_softmax
from .reward import ScoreAccumulator, ScoreTable
from .validation import as_rng, as_score_table

# random ----------------------------------------------------------------------


def sample_random(
    env: FlatEnv, table: ScoreTable, n: int, rng, beta: float = 64.0, chunk: int = 1000
) -> SampleSet:
    """Uniform-over-valid-actions rollouts in the flat MDP (Stop included)."""
    rng = as_rng(rng)
    entries = []
    remaining = n
    spec = env.spec
    slices = spec.slices()
    while remaining > 0:
        m = min(chunk, remaining)
        batch = env.init_batch(m)
        active = np.arange(m)
        while len(active):
            masks = env.masks(batch, active)
            dead = ~masks.any(axis=1)
            if dead.any():  # restart dead-ended rollouts (see sample_trajectories)
                env.reset_rows(batch, active[dead])
                masks = env.masks(batch, active)
            gumbel = rng.gumbel(size=masks.shape)
            actions = np.argmax(np.where(masks, gumbel, -np.inf), axis=1)
            stop = actions == env.stop_action
            go = active[~stop]
            if len(go):
                env.apply(batch, go, actions[~stop])
            active = go
        for i in range(m):
            sel = [np.nonzero(batch["bits"][i][sl])[0] for sl in slices]
            mean = float(table.values[np.ix_(*sel)].mean())
            entries.append(
                SampleEntry(DesignState.from_array(batch["bits"][i]), beta * mean, mean)
            )
        remaining -= m
    return SampleSet(entries)


# greedy ----------------------------------------------------------------------


def block_marginals(table: ScoreTable) -> list[np.ndarray]:
    """Per-cycle mean score of all molecules containing each block."""
    v = table.values
    return [v.mean(axis=(1, 2)), v.mean(axis=(0, 2)), v.mean(axis=(0, 1))]


def greedy_select(table: ScoreTable, k1: int, k2: int, k3: int) -> DesignState:
    """The k_i highest-marginal blocks per cycle; ties broken by lower index."""
    spec = table.spec()
    ks = (k1, k2, k3)
    for c, k in enumerate(ks):
        if not 1 <= k <= spec.cycle_sizes[c]:
            raise ConfigError(f"k={k} out of range for cycle {c} (size {spec.cycle_sizes[c]})")
    sel = []
    for marg, k in zip(block_marginals(table), ks):
        top = np.argsort(-marg, kind="stable")[:k]
        sel.append(sorted(int(i) for i in top))
    return encode_selection(sel, spec)


# MCMC ------------------------------------------------------------------------

PAPER_SKIP = "paper-skip"
STANDARD_REJECT = "standard-reject"


@dataclass
class MCMCConfig:
    n_chains: int = 5000
    chain_length: int = 250
    beta: float = 64.0
    proposal_mode: str = PAPER_SKIP
    seed: int = 0

    def __post_init__(self):
        if self.n_chains < 1 or self.chain_length < 1:
            raise ConfigError("n_chains and chain_length must be >= 1")
        if self.proposal_mode not in (PAPER_SKIP, STANDARD_REJECT):
            raise ConfigError(f"unknown proposal mode {self.proposal_mode!r}")


def random_feasible_state(spec: CycleSpec, constraint: SizeConstraint, rng,
                          triples=None) -> DesignState:
    """Uniform feasible count triple, then uniform blocks within each cycle."""
    if triples is None:
        triples = feasible_count_triples(spec, constraint)
    counts = triples[rng.integers(len(triples))]
    sel = [sorted(rng.choice(s, size=c, replace=False).tolist())
           for s, c in zip(spec.cycle_sizes, counts)]
    return encode_selection(sel, spec)


class _Chain:
    """One Metropolis-Hastings chain over feasible designs.

    Proposal: flip one uniformly random bit in either direction.  Proposals
    leaving [min, max] are skipped without advancing the step counter
    (paper-skip) or counted as rejections (standard-reject).
    """

    def __init__(self, table, spec, constraint, init_state, beta, mode, rng):
        self.spec = spec
        self.constraint = constraint
        self.beta = beta
        self.mode = mode
        self.rng = rng
        self.acc = ScoreAccumulator.from_state(init_state, table)
        self.bit_cycle = np.concatenate(
            [np.full(s, i) for i, s in enumerate(spec.cycle_sizes)]
        )
        self.offsets = [spec.offset(c) for c in range(spec.n_cycles)]
        self.n_proposals = 0

    def _size_after(self, cycle: int, adding: bool) -> int:
        counts = list(self.acc.counts)
        counts[cycle] += 1 if adding else -1
        return counts[0] * counts[1] * counts[2]

    def step(self) -> bool:
        """One counted step.  Returns False when no proposal can ever be valid."""
        attempts = 0
        limit = 50 * self.spec.total_bits
        while True:
            attempts += 1
            if attempts > limit:
                warnings.warn("MCMC chain is frozen: every proposal leaves the size window")
                return False
            bit = int(self.rng.integers(self.spec.total_bits))
            cycle = int(self.bit_cycle[bit])
            block = bit - self.offsets[cycle]
            adding = not self.acc.selected[cycle][block]
            new_size = self._size_after(cycle, adding)
            valid = self.constraint.contains(new_size)
            if not valid:
                if self.mode == STANDARD_REJECT:
                    return True  # counted rejection
                continue  # paper-skip: retry without counting
            self.n_proposals += 1
            delta = (
                self.acc.delta_add_block(cycle, block)
                if adding
                else self.acc.delta_remove_block(cycle, block)
            )
            new_mean = (self.acc.running_sum + delta) / new_size
            d_log = self.beta * (new_mean - self.acc.mean())
            if d_log >= 0 or self.rng.random() < np.exp(d_log):
                if adding:
                    self.acc.add_block(cycle, block)
                else:
                    self.acc.remove_block(cycle, block)
            return True

    def state(self) -> DesignState:
        sel = [sorted(np.nonzero(s)[0].tolist()) for s in self.acc.selected]
        return encode_selection(sel, self.spec)


def mcmc_chain_states(
    table: ScoreTable,
    spec: CycleSpec,
    constraint: SizeConstraint,
    n_steps: int,
    burn_in: int,
    beta: float,
    mode: str,
    rng,
) -> list[DesignState]:
    """States visited after burn-in by a single chain (for stationarity checks)."""
    rng = as_rng(rng)
    init = random_feasible_state(spec, constraint, rng)
    chain = _Chain(table, spec, constraint, init, beta, mode, rng)
    out = []
    for t in range(burn_in + n_steps):
        if not chain.step():
            break
        if t >= burn_in:
            out.append(chain.state())
    return out


def mcmc_sample(
    table: ScoreTable, spec: CycleSpec, constraint: SizeConstraint, cfg: MCMCConfig,
    n: int | None = None,
) -> SampleSet:
    """Final states of independent chains, one sample per chain."""
    table.check_spec(spec)
    rng = as_rng(cfg.seed)
    triples = feasible_count_triples(spec, constraint)
    n_chains = cfg.n_chains if n is None else n
    entries = []
    for _ in range(n_chains):
        init = random_feasible_state(spec, constraint, rng, triples)
        chain = _Chain(table, spec, constraint, init, cfg.beta, cfg.proposal_mode, rng)
        for _ in range(cfg.chain_length):
            if not chain.step():
                break
        mean = chain.acc.mean()
        entries.append(SampleEntry(chain.state(), cfg.beta * mean, mean))
    return SampleSet(entries)


# PPO ---------------------------------------------------------------------------


@dataclass
class PPOConfig:
    iterations: int = 2000
    learning_rate: float = 1e-4
    decay_period: int = 1_000_000
    decay_coef: float = 0.5
    clip_eps: float = 0.1
    entropy_coef: float = 1e-3
    trajectories_per_iter: int = 64
    epochs: int = 16
    minibatch_size: int = 2
    epsilon: float = 0.001
    beta: float = 64.0
    value_coef: float = 0.5
    gae_lambda: float = 1.0
    hidden_dim: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ConfigError(f"clip_eps must be in (0, 1), got {self.clip_eps}")
        for name in ("iterations", "trajectories_per_iter", "epochs", "minibatch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


def ppo_surrogate_loss(
    actor: MLP,
    obs: np.ndarray,
    masks: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    clip_eps: float,
    entropy_coef: float,
):
    """Clipped-surrogate policy loss with entropy bonus, plus exact gradients.

    loss = -mean[min(r A, clip(r, 1-eps, 1+eps) A)] - entropy_coef * mean(H)
    """
    b = len(actions)
    logits, cache = actor.forward(obs)
    logp = masked_log_softmax(logits, masks)
    probs = np.where(masks, np.exp(logp), 0.0)
    chosen = logp[np.arange(b), actions]
    ratio = np.exp(chosen - logp_old)
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    obj = np.minimum(surr1, surr2)
    with np.errstate(invalid="ignore"):
        plogp = np.where(probs > 0, probs * logp, 0.0)
    entropy = -plogp.sum(axis=1)
    loss = float(-obj.mean() - entropy_coef * entropy.mean())

    # gradient flows through the unclipped branch whenever it is the minimum
    # or the ratio lies inside the clip interval (branches coincide there)
    inside = (ratio >= 1.0 - clip_eps) & (ratio <= 1.0 + clip_eps)
    use = (surr1 <= surr2) | inside
    coef = np.where(use, ratio * advantages, 0.0) / b
    dlogits = -probs.copy()
    dlogits[np.arange(b), actions] += 1.0
    dlogits *= -coef[:, None]
    # entropy term: dH/dz_a = -p_a (log p_a + H); loss carries -coef * H
    with np.errstate(invalid="ignore"):
        d_ent = -probs * (np.where(probs > 0, logp, 0.0) + entropy[:, None])
    dlogits -= entropy_coef / b * d_ent
    grads, _ = actor.backward(cache, dlogits)
    return loss, grads


def _ppo_rollout(actor: MLP, env: FlatEnv, n: int, epsilon: float, rng):
    """n trajectories; returns flat step arrays plus per-trajectory step slices."""
    batch = env.init_batch(n)
    active = np.arange(n)
    steps = [[] for _ in range(n)]
    terminal = [None] * n
    while len(active):
        masks = env.masks(batch, active)
        dead = ~masks.any(axis=1)
        if dead.any():  # restart dead-ended rollouts (see sample_trajectories)
            rows = active[dead]
            env.reset_rows(batch, rows)
            for row in rows:
                steps[row].clear()
            masks = env.masks(batch, active)
        obs = env.observe(batch, active)
        logits, _ = actor.forward(obs)
        logp = masked_log_softmax(logits, masks)
        sample_logp = logp
        if epsilon > 0:
            explore = rng.random(len(active)) < epsilon
            if explore.any():
                sample_logp = logp.copy()
                sample_logp[explore] = masked_log_softmax(
                    np.zeros_like(logits[explore]), masks[explore]
                )
        gumbel = rng.gumbel(size=sample_logp.shape)
        actions = np.argmax(np.where(masks, sample_logp + gumbel, -np.inf), axis=1)
        # logp_old is always the policy's own log-probability of the taken
        # action, so exploratory actions enter the surrogate at ratio 1
        lp = logp[np.arange(len(active)), actions]
        for i, row in enumerate(active):
            steps[row].append((obs[i], masks[i], int(actions[i]), float(lp[i])))
        stop = actions == env.stop_action
        go = active[~stop]
        if len(go):
            env.apply(batch, go, actions[~stop])
        for row in active[stop]:
            terminal[row] = batch["bits"][row].copy()
        active = go
    return steps, terminal


def ppo_train(env: FlatEnv, table: ScoreTable, cfg: PPOConfig, rng=None):
    """Train the actor-critic; returns (actor, critic, training log)."""
    rng = as_rng(cfg.seed if rng is None else rng)
    table.check_spec(env.spec)
    h = cfg.hidden_dim
    actor = MLP([env.obs_dim, h, h, env.n_actions], rng)
    critic = MLP([env.obs_dim, h, h, 1], rng)
    opt_a = Adam(actor.params, lr=cfg.learning_rate)
    opt_c = Adam(critic.params, lr=cfg.learning_rate)
    spec = env.spec
    slices = spec.slices()
    env_steps = 0
    log = []
    for it in range(cfg.iterations):
        steps, terminals = _ppo_rollout(actor, env, cfg.trajectories_per_iter, cfg.epsilon, rng)
        # terminal-only reward, discount 1: every step's return is the terminal log reward
        returns = np.empty(len(terminals))
        for i, bits in enumerate(terminals):
            sel = [np.nonzero(bits[sl])[0] for sl in slices]
            returns[i] = cfg.beta * table.values[np.ix_(*sel)].mean()
        traj_steps = [len(s) for s in steps]
        env_steps += sum(traj_steps)
        obs = np.concatenate([np.stack([s[0] for s in t]) for t in steps])
        masks = np.concatenate([np.stack([s[1] for s in t]) for t in steps])
        actions = np.concatenate([np.array([s[2] for s in t]) for t in steps]).astype(int)
        logp_old = np.concatenate([np.array([s[3] for s in t]) for t in steps])
        values, _ = critic.forward(obs)
        bounds = np.concatenate([[0], np.cumsum(traj_steps)])
        # reward is terminal-only with discount 1; generalized advantage
        # estimation blends TD(0) state values with the Monte-Carlo return
        adv = np.empty(bounds[-1])
        g_steps = np.empty(bounds[-1])
        lam = cfg.gae_lambda
        for t in range(len(steps)):
            lo, hi = bounds[t], bounds[t + 1]
            v = values[lo:hi, 0]
            v_next = np.append(v[1:], 0.0)
            r = np.zeros(hi - lo)
            r[-1] = returns[t]
            delta = r + v_next - v
            a = np.empty(hi - lo)
            acc = 0.0
            for i in range(hi - lo - 1, -1, -1):
                acc = delta[i] + lam * acc
                a[i] = acc
            adv[lo:hi] = a
            g_steps[lo:hi] = a + v
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        lr = cfg.learning_rate * cfg.decay_coef ** (env_steps // cfg.decay_period)
        opt_a.lr = lr
        opt_c.lr = lr
        n_traj = len(steps)
        mean_loss = 0.0
        n_updates = 0
        for _ in range(cfg.epochs):
            order = rng.permutation(n_traj)
            for start in range(0, n_traj, cfg.minibatch_size):
                tids = order[start : start + cfg.minibatch_size]
                idx = np.concatenate([np.arange(bounds[t], bounds[t + 1]) for t in tids])
                loss_a, grads_a = ppo_surrogate_loss(
                    actor, obs[idx], masks[idx], actions[idx], logp_old[idx],
                    adv[idx], cfg.clip_eps, cfg.entropy_coef,
                )
                v, vcache = critic.forward(obs[idx])
                verr = v[:, 0] - g_steps[idx]
                loss_c = cfg.value_coef * float((verr**2).mean())
                dv = (cfg.value_coef * 2.0 * verr / len(idx))[:, None]
                grads_c, _ = critic.backward(vcache, dv)
                if not np.isfinite(loss_a + loss_c):
                    raise NumericError(f"PPO loss diverged at iteration {it}")
                opt_a.step(actor.params, grads_a)
                opt_c.step(critic.params, grads_c)
                mean_loss += loss_a + loss_c
                n_updates += 1
        log.append(
            {
                "iteration": it,
                "loss": mean_loss / n_updates,
                "mean_log_reward": float(returns.mean()),
                "env_steps": env_steps,
                "lr": lr,
            }
        )
    return actor, critic, log


def ppo_sample(actor: MLP, env: FlatEnv, table: ScoreTable, n: int, beta: float, rng) -> SampleSet:
    """n designs from the trained actor (no exploration noise)."""
    rng = as_rng(rng)
    spec = env.spec
    slices = spec.slices()
    entries = []
    remaining = n
    while remaining > 0:
        m = min(500, remaining)
        _, terminals = _ppo_rollout(actor, env, m, 0.0, rng)
        for bits in terminals:
            sel = [np.nonzero(bits[sl])[0] for sl in slices]
            mean = float(table.values[np.ix_(*sel)].mean())
            entries.append(SampleEntry(DesignState.from_array(bits), beta * mean, mean))
        remaining -= m
    return SampleSet(entries)


# estimator wrappers -------------------------------------------------------------


class RandomSampler(BaseEstimator):
    def __init__(self, min_size: int, max_size: int, beta: float = 64.0, random_state: int = 0):
        self.min_size = min_size
        self.max_size = max_size
        self.beta = beta
        self.random_state = random_state

    def fit(self, X, y=None):
        self.table_ = as_score_table(X)
        self.env_ = FlatEnv(self.table_.spec(), SizeConstraint(self.min_size, self.max_size))
        return self

    def sample(self, n: int, random_state=None) -> SampleSet:
        rng = as_rng(self.random_state if random_state is None else random_state)
        return sample_random(self.env_, self.table_, n, rng, beta=self.beta)


class GreedySelector(BaseEstimator):
    """Deterministic single-design baseline over per-block marginal scores."""

    def __init__(self, k1: int, k2: int, k3: int, beta: float = 64.0):
        self.k1 = k1
        self.k2 = k2
        self.k3 = k3
        self.beta = beta

    def fit(self, X, y=None):
        self.table_ = as_score_table(X)
        self.design_ = greedy_select(self.table_, self.k1, self.k2, self.k3)
        from .reward import mean_score

        self.mean_score_ = mean_score(self.design_, self.table_)
        return self

    def sample(self, n: int = 1, random_state=None) -> SampleSet:
        entry = SampleEntry(self.design_, self.beta * self.mean_score_, self.mean_score_)
        return SampleSet([entry])


class MCMCSampler(BaseEstimator):
    def __init__(
        self,
        min_size: int,
        max_size: int,
        n_chains: int = 5000,
        chain_length: int = 250,
        beta: float = 64.0,
        proposal_mode: str = PAPER_SKIP,
        random_state: int = 0,
    ):
        self.min_size = min_size
        self.max_size = max_size
        self.n_chains = n_chains
        self.chain_length = chain_length
        self.beta = beta
        self.proposal_mode = proposal_mode
        self.random_state = random_state

    def fit(self, X, y=None):
        self.table_ = as_score_table(X)
        self.spec_ = self.table_.spec()
        self.constraint_ = SizeConstraint(self.min_size, self.max_size)
        feasible_count_triples(self.spec_, self.constraint_)
        return self

    def sample(self, n: int | None = None, random_state=None) -> SampleSet:
        cfg = MCMCConfig(
            n_chains=self.n_chains,
            chain_length=self.chain_length,
            beta=self.beta,
            proposal_mode=self.proposal_mode,
            seed=self.random_state if random_state is None else random_state,
        )
        return mcmc_sample(self.table_, self.spec_, self.constraint_, cfg, n=n)


class PPOSampler(BaseEstimator):
    def __init__(
        self,
        min_size: int,
        max_size: int,
        iterations: int = 2000,
        learning_rate: float = 1e-4,
        decay_period: int = 1_000_000,
        decay_coef: float = 0.5,
        clip_eps: float = 0.1,
        entropy_coef: float = 1e-3,
        trajectories_per_iter: int = 64,
        epochs: int = 16,
        minibatch_size: int = 2,
        epsilon: float = 0.001,
        beta: float = 64.0,
        hidden_dim: int = 256,
        random_state: int = 0,
    ):
        self.min_size = min_size
        self.max_size = max_size
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.decay_period = decay_period
        self.decay_coef = decay_coef
        self.clip_eps = clip_eps
        self.entropy_coef = entropy_coef
        self.trajectories_per_iter = trajectories_per_iter
        self.epochs = epochs
        self.minibatch_size = minibatch_size
        self.epsilon = epsilon
        self.beta = beta
        self.hidden_dim = hidden_dim
        self.random_state = random_state

    def _config(self) -> PPOConfig:
        return PPOConfig(
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            decay_period=self.decay_period,
            decay_coef=self.decay_coef,
            clip_eps=self.clip_eps,
            entropy_coef=self.entropy_coef,
            trajectories_per_iter=self.trajectories_per_iter,
            epochs=self.epochs,
            minibatch_size=self.minibatch_size,
            epsilon=self.epsilon,
            beta=self.beta,
            hidden_dim=self.hidden_dim,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        self.table_ = as_score_table(X)
        self.env_ = FlatEnv(self.table_.spec(), SizeConstraint(self.min_size, self.max_size))
        self.actor_, self.critic_, self.history_ = ppo_train(self.env_, self.table_, self._config())
        return self

    def sample(self, n: int, random_state=None) -> SampleSet:
        rng = as_rng(self.random_state if random_state is None else random_state)
        return ppo_sample(self.actor_, self.env_, self.table_, n, self.beta, rng)
