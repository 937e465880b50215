"""Experiment orchestration: the two-phase pipeline, evaluation, statistics.

Phase one explores by planning against ensemble disagreement and retrains
the model between episodes; phase two trains a goal-conditioned value
function offline on the collected data. Evaluation then compares four ways
of turning artifacts into behavior: the raw actor, value-guided planning,
planning on graph-aggregated values, and planning on an external sparse
cost.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dynamics import EnsembleConfig, EnsembleModel, fit_ensemble, load_ensemble, save_ensemble
from .envs import EnvSpec, PinPadLite, PointMassMaze, goal_reward, load_layout
from .graph import build_graph, path_aggregates, query_aggregated_value
from .planning import (
    PlanConfig,
    extrinsic_cost_builder,
    intrinsic_cost_builder,
    mpc_episode,
    rollout_cost_builder,
)
from .replay import RelabelConfig, ReplayBuffer
from .values import Actor, CriticPair, Td3Config, load_agent, save_agent, td3_update, value_query

METHODS = ("actor", "mbp", "mbp+agg", "mbp+sparse")


@dataclass
class EnvConfig:
    name: str = "maze"
    layout: str | None = None
    dt: float = 0.2
    max_speed: float = 2.5
    max_accel: float = 2.0
    episode_length: int = 200
    gamma: float = 0.99
    eval_epsilon: float = 0.5
    goals: list = field(default_factory=list)
    pinpad_size: int = 8
    pad_extent: int = 2


@dataclass
class PlanSettings:
    horizon: int = 30
    iterations: int = 3
    population: int = 400
    elite_ratio: float = 0.01
    alpha: float = 0.1
    noise_exponent: float = 3.0
    kept_elite_fraction: float = 0.3
    n_particles: int = 20
    variance_reject_threshold: float | None = None
    propagation: str = "ts1"

    def to_plan_config(self) -> PlanConfig:
        return PlanConfig(
            horizon=self.horizon,
            iterations=self.iterations,
            population=self.population,
            elite_ratio=self.elite_ratio,
            alpha=self.alpha,
            noise_exponent=self.noise_exponent,
            kept_elite_fraction=self.kept_elite_fraction,
            n_particles=self.n_particles,
            variance_reject_threshold=self.variance_reject_threshold,
        )


@dataclass
class ModelConfig:
    n_members: int = 7
    n_elites: int = 5
    hidden: list = field(default_factory=lambda: [200, 200, 200, 200])
    activation: str = "silu"
    lr: float = 2.8e-4
    weight_decay: float = 1e-4
    batch_size: int = 512
    holdout_ratio: float = 0.1
    epochs: int = 12
    max_batches_per_epoch: int | None = None

    def to_ensemble_config(self) -> EnsembleConfig:
        return EnsembleConfig(
            n_members=self.n_members,
            n_elites=self.n_elites,
            hidden=tuple(self.hidden),
            activation=self.activation,
            lr=self.lr,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            holdout_ratio=self.holdout_ratio,
            max_batches_per_epoch=self.max_batches_per_epoch,
        )


@dataclass
class ExplorationConfig:
    total_steps: int = 50_000
    warm_start_steps: int = 3000
    retrain_every_episodes: int = 1
    buffer_capacity: int | None = None
    plan: PlanSettings = field(default_factory=lambda: PlanSettings(horizon=30))


@dataclass
class TrainConfig:
    epochs: int = 200
    p_g: float = 0.75
    p_geo: float = 0.2
    critic_hidden: list = field(default_factory=lambda: [512, 512])
    actor_hidden: list = field(default_factory=lambda: [512, 512])
    activation: str = "relu"
    critic_lr: float = 1e-5
    actor_lr: float = 1e-5
    batch_size: int = 512
    polyak: float = 0.995
    target_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    divergence_threshold: float = 1e6

    def to_td3_config(self, gamma: float) -> Td3Config:
        return Td3Config(
            critic_hidden=tuple(self.critic_hidden),
            actor_hidden=tuple(self.actor_hidden),
            activation=self.activation,
            critic_lr=self.critic_lr,
            actor_lr=self.actor_lr,
            batch_size=self.batch_size,
            polyak=self.polyak,
            target_noise=self.target_noise,
            noise_clip=self.noise_clip,
            policy_delay=self.policy_delay,
            gamma=gamma,
        )


@dataclass
class GraphConfig:
    n_vertices: int = 1000
    kde_bandwidth: float = 20.0
    pool_size: int | None = None


@dataclass
class EvalConfig:
    episodes_per_goal: int = 20
    plan: PlanSettings = field(default_factory=lambda: PlanSettings(horizon=15))
    sparse_epsilon: float | None = None  # defaults to the success epsilon


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out_dir: str = "runs/experiment"


_NESTED = {
    "env": EnvConfig,
    "exploration": ExplorationConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "graph": GraphConfig,
    "eval": EvalConfig,
    "plan": PlanSettings,
}


def _from_dict(cls, data: dict):
    kwargs = {}
    names = {f.name for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ValueError(f"unknown config key {key!r} for {cls.__name__}")
        if key in _NESTED and isinstance(value, dict):
            kwargs[key] = _from_dict(_NESTED[key], value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        cfg = _from_dict(ExperimentConfig, json.load(fh))
    if cfg.env.layout is not None and not os.path.isabs(cfg.env.layout):
        candidate = os.path.join(os.path.dirname(os.path.abspath(path)), cfg.env.layout)
        if os.path.exists(candidate):
            cfg.env.layout = candidate
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def make_env(env_cfg: EnvConfig):
    if env_cfg.name == "maze":
        if env_cfg.layout is None:
            raise ValueError("maze environment needs a layout file")
        walls, start = load_layout(env_cfg.layout)
        return PointMassMaze(
            walls,
            start,
            dt=env_cfg.dt,
            max_speed=env_cfg.max_speed,
            max_accel=env_cfg.max_accel,
            episode_length=env_cfg.episode_length,
            gamma=env_cfg.gamma,
            goal_epsilon=env_cfg.eval_epsilon,
        )
    if env_cfg.name == "pinpad":
        return PinPadLite(
            size=env_cfg.pinpad_size,
            pad_extent=env_cfg.pad_extent,
            dt=env_cfg.dt,
            max_speed=env_cfg.max_speed,
            max_accel=env_cfg.max_accel,
            episode_length=env_cfg.episode_length,
            gamma=env_cfg.gamma,
        )
    raise ValueError(f"unknown environment {env_cfg.name!r}")


def goal_to_state(env, g: np.ndarray) -> np.ndarray:
    """Embed a goal vector as a full state (zero velocity, default position)."""
    g = np.asarray(g, dtype=np.float64)
    state = env.reset().astype(np.float64)
    for i, idx in enumerate(env.spec.goal_indices):
        state[idx] = g[i]
    state[2:4] = 0.0
    return state


def _hash_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, cfg: ExperimentConfig, artifacts: dict) -> str:
    manifest = {
        "config": config_to_dict(cfg),
        "config_hash": hashlib.sha256(
            json.dumps(config_to_dict(cfg), sort_keys=True).encode()
        ).hexdigest(),
        "artifacts": {},
        "versions": {"curioplan": __version__, "numpy": np.__version__},
    }
    for name, path in artifacts.items():
        if os.path.isfile(path):
            manifest["artifacts"][name] = {"path": str(path), "sha256": _hash_file(path)}
        else:
            manifest["artifacts"][name] = {"path": str(path)}
    out = os.path.join(out_dir, "manifest.json")
    with open(out, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return out


def _params_finite(nets) -> bool:
    return all(np.isfinite(p).all() for net in nets for p in net.parameters())


def _random_episode(env, rng, length: int):
    spec = env.spec
    s = env.reset()
    states = [np.asarray(s, dtype=np.float64)]
    actions = []
    for _ in range(length):
        a = rng.uniform(spec.action_low, spec.action_high)
        s = env.step(s, a)
        states.append(np.asarray(s, dtype=np.float64))
        actions.append(a)
    return np.array(states), np.array(actions)


def cmd_explore(cfg: ExperimentConfig, seed: int | None = None, out_dir=None) -> dict:
    """Curious exploration: warm start, then intrinsic-cost MPC episodes."""
    seed = cfg.seed if seed is None else seed
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    env = make_env(cfg.env)
    spec = env.spec
    rng = np.random.default_rng([seed, 0xE1])

    buf = ReplayBuffer(spec.state_dim, spec.action_dim, capacity=cfg.exploration.buffer_capacity)
    steps = 0
    while steps < min(cfg.exploration.warm_start_steps, cfg.exploration.total_steps):
        remaining = min(cfg.exploration.warm_start_steps, cfg.exploration.total_steps) - steps
        length = min(spec.episode_length, remaining)
        states, actions = _random_episode(env, rng, length)
        buf.append_trajectory(states, actions)
        steps += length

    model = EnsembleModel(
        spec.state_dim, spec.action_dim, cfg.model.to_ensemble_config(), rng=rng
    )
    fit_ensemble(model, buf, cfg.model.epochs, rng)

    plan_cfg = cfg.exploration.plan.to_plan_config()
    builder = intrinsic_cost_builder(model, plan_cfg, propagation=cfg.exploration.plan.propagation)
    diag_rows = []
    episode = 0
    while steps < cfg.exploration.total_steps:
        if episode > 0 and episode % cfg.exploration.retrain_every_episodes == 0:
            fit_ensemble(model, buf, cfg.model.epochs, rng)
            if not _params_finite(model.members):
                save_ensemble(model, os.path.join(out_dir, "model_diverged"))
                raise FloatingPointError("ensemble parameters went non-finite; checkpoint saved")
        length = min(spec.episode_length, cfg.exploration.total_steps - steps)
        states, actions, _, diags = mpc_episode(
            env, builder, plan_cfg, env.reset(), None, rng, episode_length=length
        )
        buf.append_trajectory(states, actions)
        steps += len(actions)
        for row in diags:
            diag_rows.append({"episode": episode, **row})
        episode += 1

    buffer_path = os.path.join(out_dir, "buffer.grb")
    buf.save(buffer_path)
    model_dir = os.path.join(out_dir, "model")
    save_ensemble(model, model_dir)
    diag_path = os.path.join(out_dir, "explore_diagnostics.csv")
    with open(diag_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["episode", "step", "best_cost"])
        writer.writeheader()
        writer.writerows(diag_rows)
    artifacts = {"buffer": buffer_path, "model": model_dir, "diagnostics": diag_path}
    write_manifest(out_dir, cfg, artifacts)
    return artifacts


def relabel_config_for(spec: EnvSpec, train_cfg: TrainConfig) -> RelabelConfig:
    return RelabelConfig(
        p_g=train_cfg.p_g, p_geo=train_cfg.p_geo, goal_projection=spec.project_goal
    )


def cmd_train(
    cfg: ExperimentConfig,
    buffer_path,
    seed: int | None = None,
    out_dir=None,
    resume_dir=None,
) -> dict:
    """Offline value learning on relabeled batches; checkpoints per epoch block."""
    seed = cfg.seed if seed is None else seed
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    env = make_env(cfg.env)
    spec = env.spec
    buf = ReplayBuffer.load(buffer_path, state_dim=spec.state_dim, action_dim=spec.action_dim)
    relabel = relabel_config_for(spec, cfg.train)
    td3 = cfg.train.to_td3_config(spec.gamma)

    if resume_dir is not None:
        actor, critics = load_agent(resume_dir)
        with open(os.path.join(resume_dir, "progress.json")) as fh:
            start_epoch = json.load(fh)["epochs_done"]
    else:
        init_rng = np.random.default_rng([seed, 0x71])
        critics = CriticPair(spec.state_dim, spec.action_dim, spec.goal_dim, td3, init_rng)
        actor = Actor(
            spec.state_dim,
            spec.action_dim,
            spec.goal_dim,
            spec.action_low,
            spec.action_high,
            td3,
            init_rng,
        )
        start_epoch = 0

    updates_per_epoch = max(1, buf.n_transitions // td3.batch_size)
    metrics_path = os.path.join(out_dir, "train_metrics.csv")
    mode = "a" if resume_dir is not None and os.path.exists(metrics_path) else "w"
    with open(metrics_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["epoch", "critic_loss", "actor_loss"])
        for epoch in range(start_epoch, cfg.train.epochs):
            # one stream per epoch so resumed runs replay the identical tail
            epoch_rng = np.random.default_rng([seed, 0x72, epoch])
            closses, alosses = [], []
            for _ in range(updates_per_epoch):
                batch = buf.sample_relabeled(relabel, td3.batch_size, epoch_rng)
                closs, aloss = td3_update(critics, actor, batch, epoch_rng)
                closses.append(closs)
                if aloss is not None:
                    alosses.append(aloss)
            mean_closs = float(np.mean(closses))
            if mean_closs > cfg.train.divergence_threshold:
                raise RuntimeError(f"critic loss diverged: {mean_closs:.3g}")
            writer.writerow(
                [epoch, mean_closs, float(np.mean(alosses)) if alosses else ""]
            )

    agent_dir = os.path.join(out_dir, "agent")
    save_agent(actor, critics, agent_dir)
    with open(os.path.join(agent_dir, "progress.json"), "w") as fh:
        json.dump({"epochs_done": cfg.train.epochs}, fh)
    artifacts = {"agent": agent_dir, "metrics": metrics_path, "buffer": str(buffer_path)}
    write_manifest(out_dir, cfg, artifacts)
    return artifacts


@dataclass
class EvalReport:
    method: str
    per_goal: list  # list (per goal) of per-episode success flags
    success_rate: float
    ci_low: float
    ci_high: float

    def to_dict(self):
        return {
            "method": self.method,
            "per_goal": [[bool(x) for x in row] for row in self.per_goal],
            "success_rate": self.success_rate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


def bootstrap_ci(successes, level: float = 0.90, resamples: int = 10_000, rng=None):
    """Simple bootstrap percentile interval for the mean of binary outcomes."""
    successes = np.asarray(successes, dtype=np.float64)
    if successes.size == 0:
        raise ValueError("cannot bootstrap an empty sample")
    rng = np.random.default_rng(0) if rng is None else rng
    point = float(successes.mean())
    idx = rng.integers(0, successes.size, size=(resamples, successes.size))
    means = successes[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return float(lo), point, float(hi)


def _actor_episode(env, actor, g, episode_length):
    spec = env.spec
    s = np.asarray(env.reset(), dtype=np.float64)
    states = [s.copy()]
    g = np.asarray(g, dtype=np.float64)
    success = False
    for _ in range(episode_length):
        a = actor.act(s, g)
        s = np.asarray(env.step(s, a), dtype=np.float64)
        states.append(s.copy())
        _, done = goal_reward(spec, s, g)
        if done:
            success = True
            break
    return np.array(states), success


def _sparse_cost_builder(model, plan_cfg: PlanConfig, spec: EnvSpec, g, epsilon, gamma, propagation):
    """External sparse cost: discounted goal-indicator summed over the rollout."""
    g = np.asarray(g, dtype=np.float64)
    eval_spec = dataclasses.replace(spec, goal_epsilon=epsilon)
    discounts = gamma ** np.arange(plan_cfg.horizon)
    n_particles = plan_cfg.n_particles if propagation == "ts1" else 1

    def builder(state, rng):
        def cost_fn(cands):
            n, h, _ = cands.shape
            rows = n * n_particles
            x = np.tile(np.asarray(state, dtype=np.float64), (rows, 1))
            total = np.zeros(rows)
            for t in range(h):
                a = np.repeat(cands[:, t, :], n_particles, axis=0)
                if propagation == "ts1":
                    x = model.step_ts1(x, a, rng)
                else:
                    x = model.step_mean(x, a)
                r, _ = goal_reward(eval_spec, x, g)
                total -= discounts[t] * r
            return total.reshape(n, n_particles).mean(axis=1)

        return cost_fn

    return builder


def _agg_cost_builder(env, model, plan_cfg, buf, actor, critics, graph_cfg, g, seed):
    """Aggregated-value cost; rebuilds the graph if the agent's value hits 0."""
    spec = env.spec

    def vq(s_batch, g_batch):
        return value_query(critics, actor, s_batch, g_batch)

    g_state = goal_to_state(env, g)
    discount = spec.gamma ** (plan_cfg.horizon - 1)
    graph_rng = np.random.default_rng([seed, 0xA6])
    holder = {}

    def rebuild(s_state):
        graph = build_graph(
            buf,
            vq,
            spec.project_goal,
            s_state,
            g_state,
            n_vertices=graph_cfg.n_vertices,
            kde_bandwidth=graph_cfg.kde_bandwidth,
            gamma=spec.gamma,
            rng=graph_rng,
            pool_size=graph_cfg.pool_size,
        )
        path_aggregates(graph)
        holder["graph"] = graph

    def builder(state, rng):
        if "graph" not in holder:
            rebuild(state)
        elif query_aggregated_value(holder["graph"], state, vq, spec.project_goal) <= 0.0:
            rebuild(state)
        graph = holder["graph"]

        def terminal_cost(x):
            return -discount * query_aggregated_value(graph, x, vq, spec.project_goal)

        return rollout_cost_builder(model, plan_cfg, terminal_cost=terminal_cost)(state, rng)

    return builder, holder


def cmd_diagnose(
    cfg: ExperimentConfig,
    artifacts_dir,
    method: str = "mbp",
    seed: int | None = None,
    out_dir=None,
    horizon: int | None = None,
    n_random: int = 200,
    n_next: int = 200,
) -> dict:
    """Value-landscape diagnostics over previously evaluated trajectories.

    Computes the non-monotonicity ratio and the sampled-optimum occurrence
    per evaluation trajectory, grouped by success, and writes JSON + CSV.
    """
    from .diagnostics import dump_reports_json, estimate_optimum_sampled, trajectory_reports

    seed = cfg.seed if seed is None else seed
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    env = make_env(cfg.env)
    spec = env.spec
    horizon = horizon or cfg.eval.plan.horizon

    tag = method.replace("+", "_")
    traj_path = os.path.join(out_dir, f"eval_{tag}_trajectories.npz")
    if not os.path.exists(traj_path):
        raise FileNotFoundError(f"missing evaluation trajectories at {traj_path}; run eval first")
    actor, critics = load_agent(os.path.join(artifacts_dir, "agent"))
    model = load_ensemble(os.path.join(artifacts_dir, "model"))
    buf = ReplayBuffer.load(
        os.path.join(artifacts_dir, "buffer.grb"), spec.state_dim, spec.action_dim
    )

    with np.load(traj_path) as data:
        meta = data["meta"]
        trajs = [data[f"traj_{i}"] for i in range(len(meta))]
    goals = [np.asarray(cfg.env.goals[gi], dtype=np.float64) for gi, _, _ in meta]
    successes = [bool(s) for _, _, s in meta]

    def vq(s_batch, g_batch):
        return value_query(critics, actor, s_batch, g_batch)

    rng = np.random.default_rng([seed, 0xD1])
    buffer_states = buf.all_states().astype(np.float64)

    def flag(state, goal):
        return estimate_optimum_sampled(
            state,
            goal,
            vq,
            lambda x, a, r: model.step_ts1(x, a, r),
            buffer_states,
            spec.action_low,
            spec.action_high,
            horizon,
            rng,
            n_random=n_random,
            n_next=n_next,
        )

    reports, summary = trajectory_reports(trajs, goals, successes, vq, horizon, optimum_fn=flag)
    json_path = os.path.join(out_dir, f"diagnose_{tag}.json")
    dump_reports_json(json_path, monotonicity=reports, summary=summary)
    csv_path = os.path.join(out_dir, f"diagnose_{tag}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ratio", "horizon", "success", "occurrence"])
        for r in reports:
            writer.writerow([r.ratio, r.horizon, int(r.success), r.occurrence])
    return {"json": json_path, "csv": csv_path, "summary": summary}


def cmd_eval(
    cfg: ExperimentConfig,
    artifacts_dir,
    method: str,
    seed: int | None = None,
    out_dir=None,
    episodes_per_goal: int | None = None,
) -> EvalReport:
    """Evaluate one action-selection method over the configured goal set."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    seed = cfg.seed if seed is None else seed
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    env = make_env(cfg.env)
    spec = env.spec
    episodes = episodes_per_goal or cfg.eval.episodes_per_goal
    if not cfg.env.goals:
        raise ValueError("config defines no evaluation goals")

    buffer_path = os.path.join(artifacts_dir, "buffer.grb")
    model_dir = os.path.join(artifacts_dir, "model")
    agent_dir = os.path.join(artifacts_dir, "agent")

    needs_agent = method in ("actor", "mbp", "mbp+agg")
    needs_model = method in ("mbp", "mbp+agg", "mbp+sparse")
    if needs_agent and not os.path.exists(os.path.join(agent_dir, "agent.json")):
        raise FileNotFoundError(f"missing value checkpoint at {agent_dir}")
    if needs_model and not os.path.exists(os.path.join(model_dir, "ensemble.json")):
        raise FileNotFoundError(f"missing dynamics model at {model_dir}")

    actor = critics = model = buf = None
    if needs_agent:
        actor, critics = load_agent(agent_dir)
    if needs_model:
        model = load_ensemble(model_dir)
    if method == "mbp+agg":
        if not os.path.exists(buffer_path):
            raise FileNotFoundError(f"missing replay buffer at {buffer_path}")
        buf = ReplayBuffer.load(buffer_path, spec.state_dim, spec.action_dim)

    plan_cfg = cfg.eval.plan.to_plan_config()
    propagation = cfg.eval.plan.propagation
    sparse_eps = (
        cfg.eval.sparse_epsilon if cfg.eval.sparse_epsilon is not None else spec.goal_epsilon
    )

    per_goal = []
    trajectories = []
    for gi, g in enumerate(cfg.env.goals):
        g = np.asarray(g, dtype=np.float64)
        flags = []
        for ep in range(episodes):
            ep_rng = np.random.default_rng([seed, 0xEA, gi, ep])
            if method == "actor":
                states, success = _actor_episode(env, actor, g, spec.episode_length)
            else:
                if method == "mbp":

                    def vfn(x, goal=g):
                        return value_query(critics, actor, x, goal)

                    builder = extrinsic_cost_builder(
                        model, plan_cfg, vfn, spec.gamma, propagation=propagation
                    )
                elif method == "mbp+agg":
                    builder, _ = _agg_cost_builder(
                        env, model, plan_cfg, buf, actor, critics, cfg.graph, g, seed
                    )
                else:
                    builder = _sparse_cost_builder(
                        model, plan_cfg, spec, g, sparse_eps, spec.gamma, propagation
                    )
                states, _, success, _ = mpc_episode(
                    env, builder, plan_cfg, env.reset(), g, ep_rng,
                    episode_length=spec.episode_length,
                )
            flags.append(bool(success))
            trajectories.append(
                {"goal_index": gi, "episode": ep, "success": bool(success), "states": states}
            )
        per_goal.append(flags)

    all_flags = [f for row in per_goal for f in row]
    lo, point, hi = bootstrap_ci(all_flags, rng=np.random.default_rng([seed, 0xB0]))
    report = EvalReport(
        method=method, per_goal=per_goal, success_rate=point, ci_low=lo, ci_high=hi
    )
    tag = method.replace("+", "_")
    report_path = os.path.join(out_dir, f"eval_{tag}.json")
    with open(report_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    np.savez_compressed(
        os.path.join(out_dir, f"eval_{tag}_trajectories.npz"),
        **{
            f"traj_{i}": rec["states"] for i, rec in enumerate(trajectories)
        },
        meta=np.array(
            [(rec["goal_index"], rec["episode"], rec["success"]) for rec in trajectories],
            dtype=np.int64,
        ),
    )
    write_manifest(out_dir, cfg, {"report": report_path})
    return report
