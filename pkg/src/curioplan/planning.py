"""Zero-order trajectory optimization and model-predictive control.

The optimizer is an iterated cross-entropy method with temporally colored
candidate noise, reuse of a fraction of elites across iterations, and
injection of the best-ever sequence on the final iteration. An exhaustive
planner over discrete MDPs provides an optimizer-noise-free counterpart
for the escape guarantees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import DiscreteMDP, goal_reward
from .values import TabularValue


def colored_noise(exponent: float, horizon: int, dim: int, rng, n_series: int | None = None):
    """Gaussian series with power spectral density ~ 1/f^exponent.

    Synthesized by scaling a white spectrum by f^(-exponent/2); the
    zero-frequency bin reuses the lowest positive frequency's scale and
    acts as a random constant offset. Output is normalized so every sample
    has unit variance; shape is [horizon, dim], or [n_series, horizon, dim].
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    lead = () if n_series is None else (int(n_series),)
    if horizon == 1:
        return rng.standard_normal((*lead, 1, dim))

    f = np.fft.rfftfreq(horizon)
    scale = f.copy()
    scale[0] = f[1]
    scale = scale ** (-exponent / 2.0)

    nf = len(f)
    sr = rng.standard_normal((*lead, dim, nf)) * scale
    si = rng.standard_normal((*lead, dim, nf)) * scale
    si[..., 0] = 0.0
    sr[..., 0] *= math.sqrt(2.0)
    even = horizon % 2 == 0
    if even:
        si[..., -1] = 0.0
        sr[..., -1] *= math.sqrt(2.0)

    # exact per-sample standard deviation of the synthesized series
    power = 4.0 * np.sum(scale[1:-1] ** 2) if nf > 2 else 0.0
    power += 2.0 * scale[0] ** 2
    power += (2.0 if even else 4.0) * scale[-1] ** 2
    sigma = math.sqrt(power) / horizon

    series = np.fft.irfft(sr + 1j * si, n=horizon, axis=-1) / sigma
    return np.moveaxis(series, -1, -2)


@dataclass
class PlanConfig:
    horizon: int
    iterations: int = 3
    population: int = 400
    elite_ratio: float = 0.01
    alpha: float = 0.1
    noise_exponent: float = 3.0
    kept_elite_fraction: float = 0.3
    n_particles: int = 20
    variance_reject_threshold: float | None = None
    init_sigma_ratio: float = 0.5

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.population < 2:
            raise ValueError("population must support at least two elites")

    @property
    def n_elites(self) -> int:
        # at least two elites regardless of the ratio
        return min(self.population, max(2, int(round(self.population * self.elite_ratio))))


@dataclass
class PlanResult:
    actions: np.ndarray  # [horizon, action_dim]
    cost: float
    trace: list[float] = field(default_factory=list)


def icem_optimize(
    cost_fn,
    config: PlanConfig,
    init_mean: np.ndarray,
    action_low,
    action_high,
    rng: np.random.Generator,
    init_sigma: np.ndarray | None = None,
) -> PlanResult:
    """Minimize a trajectory cost over action sequences within bounds.

    ``cost_fn`` maps candidate batches [N, horizon, action_dim] to costs
    [N]. Candidates with non-finite cost are discarded; if an entire
    population is non-finite the optimizer raises.
    """
    low = np.asarray(action_low, dtype=np.float64)
    high = np.asarray(action_high, dtype=np.float64)
    h, dim = config.horizon, len(np.atleast_1d(low))
    mean = np.clip(np.asarray(init_mean, dtype=np.float64).reshape(h, dim), low, high)
    sigma = (
        np.full((h, dim), config.init_sigma_ratio) * (high - low)
        if init_sigma is None
        else np.asarray(init_sigma, dtype=np.float64).reshape(h, dim).copy()
    )

    n_elites = config.n_elites
    n_kept = int(math.ceil(config.kept_elite_fraction * n_elites))
    kept: np.ndarray | None = None
    best_seq: np.ndarray | None = None
    best_cost = np.inf
    trace = []

    for it in range(config.iterations):
        noise = colored_noise(config.noise_exponent, h, dim, rng, n_series=config.population)
        cands = np.clip(mean + sigma * noise, low, high)
        if it == 0:
            # scoring the initial mean guarantees anytime improvement over it
            cands = np.concatenate([cands, mean[None]], axis=0)
        if kept is not None:
            cands = np.concatenate([cands, kept], axis=0)
        if it == config.iterations - 1 and best_seq is not None:
            cands = np.concatenate([cands, best_seq[None]], axis=0)

        costs = np.asarray(cost_fn(cands), dtype=np.float64)
        costs = np.where(np.isfinite(costs), costs, np.inf)
        if not np.isfinite(costs).any():
            raise RuntimeError("all planner candidates scored non-finite costs")

        order = np.argsort(costs, kind="stable")
        elites = cands[order[:n_elites]]
        if costs[order[0]] < best_cost:
            best_cost = float(costs[order[0]])
            best_seq = cands[order[0]].copy()
        trace.append(best_cost)

        mean = (1.0 - config.alpha) * elites.mean(axis=0) + config.alpha * mean
        sigma = (1.0 - config.alpha) * elites.std(axis=0) + config.alpha * sigma
        kept = elites[:n_kept].copy()

    return PlanResult(actions=best_seq, cost=best_cost, trace=trace)


def mpc_episode(
    env,
    cost_builder,
    config: PlanConfig,
    s0: np.ndarray,
    g: np.ndarray | None,
    rng: np.random.Generator,
    episode_length: int | None = None,
):
    """Receding-horizon control: replan each step, execute the first action.

    The next replanning round is warm-started with the previous solution
    shifted by one step (last row repeated); sigma is re-initialized every
    step. With a goal, the episode ends as soon as the goal's sparse reward
    fires. Returns (states, actions, success, per-step diagnostics).
    """
    spec = env.spec
    length = spec.episode_length if episode_length is None else episode_length
    low, high = spec.action_low, spec.action_high
    mean = np.tile((low + high) / 2.0, (config.horizon, 1))

    s = np.asarray(s0, dtype=np.float64).copy()
    states = [s.copy()]
    actions = []
    diagnostics = []
    success = False
    for t in range(length):
        cost_fn = cost_builder(s, rng)
        result = icem_optimize(cost_fn, config, mean, low, high, rng)
        a = result.actions[0]
        s = np.asarray(env.step(s, a), dtype=np.float64)
        states.append(s.copy())
        actions.append(np.asarray(a, dtype=np.float64))
        diagnostics.append({"step": t, "best_cost": result.cost})
        mean = np.concatenate([result.actions[1:], result.actions[-1:]], axis=0)
        if g is not None:
            _, done = goal_reward(spec, s, np.asarray(g, dtype=np.float64))
            if done:
                success = True
                break
    return np.array(states), np.array(actions), success, diagnostics


def rollout_cost_builder(
    model,
    config: PlanConfig,
    step_cost=None,
    terminal_cost=None,
    propagation: str = "ts1",
):
    """Build an imagined-rollout cost for MPC over a learned ensemble.

    Per-candidate costs sum ``step_cost(s_t, a_t)`` over the horizon and add
    ``terminal_cost(s_H)`` at the final imagined state, averaged over TS1
    particles. Candidates whose per-particle costs spread beyond
    ``variance_reject_threshold`` are discarded via infinite cost.
    """
    n_particles = config.n_particles if propagation == "ts1" else 1

    def builder(state, rng):
        def cost_fn(cands):
            n, h, _ = cands.shape
            rows = n * n_particles
            x = np.tile(np.asarray(state, dtype=np.float64), (rows, 1))
            total = np.zeros(rows)
            for t in range(h):
                a = np.repeat(cands[:, t, :], n_particles, axis=0)
                if step_cost is not None:
                    total += step_cost(x, a)
                if propagation == "ts1":
                    x = model.step_ts1(x, a, rng)
                else:
                    x = model.step_mean(x, a)
            if terminal_cost is not None:
                total += terminal_cost(x)
            per_particle = total.reshape(n, n_particles)
            costs = per_particle.mean(axis=1)
            if config.variance_reject_threshold is not None and n_particles > 1:
                spread = per_particle.var(axis=1)
                costs = np.where(
                    spread > config.variance_reject_threshold, np.inf, costs
                )
            return costs

        return cost_fn

    return builder


def intrinsic_cost_builder(model, config: PlanConfig, propagation: str = "ts1", mean_only: bool = False):
    """Exploration cost: negated sum of ensemble disagreement along the rollout."""
    n_particles = config.n_particles if propagation == "ts1" else 1

    def builder(state, rng):
        def cost_fn(cands):
            n, h, _ = cands.shape
            rows = n * n_particles
            x = np.tile(np.asarray(state, dtype=np.float64), (rows, 1))
            total = np.zeros(rows)
            for t in range(h):
                a = np.repeat(cands[:, t, :], n_particles, axis=0)
                if propagation == "ts1":
                    reward, x = model.disagree_and_step(x, a, rng, mean_only=mean_only)
                else:
                    reward = model.disagreement_reward(x, a, mean_only=mean_only)
                    x = model.step_mean(x, a)
                total -= reward
            per_particle = total.reshape(n, n_particles)
            costs = per_particle.mean(axis=1)
            if config.variance_reject_threshold is not None and n_particles > 1:
                spread = per_particle.var(axis=1)
                costs = np.where(spread > config.variance_reject_threshold, np.inf, costs)
            return costs

        return cost_fn

    return builder


def extrinsic_cost_builder(model, config: PlanConfig, value_fn, gamma: float, propagation: str = "ts1"):
    """Goal-reaching cost: discounted negated value of the final imagined state.

    ``value_fn`` maps a batch of states to values for the commanded goal.
    """
    discount = gamma ** (config.horizon - 1)

    def terminal_cost(x):
        return -discount * value_fn(x)

    return rollout_cost_builder(model, config, terminal_cost=terminal_cost, propagation=propagation)


def exhaustive_plan(mdp: DiscreteMDP, values, s0: int, horizon: int):
    """Exact H-step planning on a discrete MDP: maximize V at the final state.

    Ties between optimal sequences are broken by the value of the first
    visited state, then by action index. Returns (actions, final value).
    """
    table = values.values if isinstance(values, TabularValue) else np.asarray(values)
    w = table.astype(np.float64)
    layers = [w]
    for _ in range(horizon):
        w = w[mdp.next_state].max(axis=1)
        layers.append(w)
    layers.reverse()  # layers[t] = best achievable value with horizon-t steps left

    actions = []
    s = int(s0)
    for t in range(horizon):
        succ = mdp.next_state[s]
        vals = layers[t + 1][succ]
        cand = np.flatnonzero(vals == vals.max())
        if t == 0 and len(cand) > 1:
            imm = table[succ[cand]]
            cand = cand[np.flatnonzero(imm == imm.max())]
        a = int(cand[0])
        actions.append(a)
        s = int(succ[a])
    return actions, float(layers[0][s0])


def open_loop_execute(mdp: DiscreteMDP, s0: int, actions) -> list[int]:
    """Apply an action sequence verbatim; returns all visited states."""
    s = int(s0)
    states = [s]
    for a in actions:
        s = int(mdp.next_state[s, a])
        states.append(s)
    return states


def exhaustive_mpc(mdp: DiscreteMDP, values, s0: int, horizon: int, max_steps: int) -> list[int]:
    """Closed-loop exact planning: replan each step, execute the first action."""
    s = int(s0)
    visited = [s]
    for _ in range(max_steps):
        actions, _ = exhaustive_plan(mdp, values, s, horizon)
        s = int(mdp.next_state[s, actions[0]])
        visited.append(s)
    return visited
