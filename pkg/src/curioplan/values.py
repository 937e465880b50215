"""Goal-conditioned value learning and the exact tabular oracle.

A twin-critic actor-critic learner (delayed policy updates, target policy
smoothing, polyak-averaged targets) trains on relabeled batches; the
learned state value used everywhere downstream is the pessimistic twin
minimum evaluated at the actor's action. For discrete MDPs the optimal
value function is computed exactly by value iteration with termination on
goal achievement.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .envs import DiscreteMDP
from .nets import AdamState, Mlp, load_net, mse_loss, polyak_update, save_net


@dataclass
class Td3Config:
    critic_hidden: tuple[int, ...] = (512, 512)
    actor_hidden: tuple[int, ...] = (512, 512)
    activation: str = "relu"
    critic_lr: float = 1e-5
    actor_lr: float = 1e-5
    batch_size: int = 512
    polyak: float = 0.995
    target_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    gamma: float = 0.99


class CriticPair:
    """Twin Q-networks over (state, action, goal) with target copies."""

    def __init__(self, state_dim, action_dim, goal_dim, cfg: Td3Config, rng):
        sizes = [state_dim + action_dim + goal_dim, *cfg.critic_hidden, 1]
        self.dims = (state_dim, action_dim, goal_dim)
        self.cfg = cfg
        self.q1 = Mlp(sizes, cfg.activation, rng=rng)
        self.q2 = Mlp(sizes, cfg.activation, rng=rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.adam1 = AdamState(self.q1.parameters(), lr=cfg.critic_lr)
        self.adam2 = AdamState(self.q2.parameters(), lr=cfg.critic_lr)
        self.updates = 0

    @staticmethod
    def _join(s, a, g):
        return np.concatenate([s, a, g], axis=-1)

    def q_min(self, s, a, g, target=False) -> np.ndarray:
        x = self._join(s, a, g)
        if target:
            return np.minimum(self.q1_target.forward(x), self.q2_target.forward(x))[..., 0]
        return np.minimum(self.q1.forward(x), self.q2.forward(x))[..., 0]


class Actor:
    """Squashed deterministic policy over (state, goal)."""

    def __init__(self, state_dim, action_dim, goal_dim, action_low, action_high, cfg, rng):
        self.net = Mlp(
            [state_dim + goal_dim, *cfg.actor_hidden, action_dim], cfg.activation, rng=rng
        )
        self.target = self.net.copy()
        self.adam = AdamState(self.net.parameters(), lr=cfg.actor_lr)
        self.low = np.asarray(action_low, dtype=np.float64)
        self.high = np.asarray(action_high, dtype=np.float64)
        self.center = (self.low + self.high) / 2.0
        self.scale = (self.high - self.low) / 2.0

    def squash(self, raw):
        return self.center + self.scale * np.tanh(raw)

    def act(self, s, g, target=False) -> np.ndarray:
        net = self.target if target else self.net
        x = np.concatenate([s, g], axis=-1)
        return self.squash(net.forward(x))


def td3_update(critics: CriticPair, actor: Actor, batch, rng: np.random.Generator):
    """One twin-critic update; actor and targets move every policy-delay-th call.

    Returns (critic loss, actor loss or None).
    """
    cfg = critics.cfg
    s = np.asarray(batch.s, dtype=np.float64)
    a = np.asarray(batch.a, dtype=np.float64)
    g = np.asarray(batch.g, dtype=np.float64)
    s_next = np.asarray(batch.s_next, dtype=np.float64)
    r = np.asarray(batch.r, dtype=np.float64)
    not_done = 1.0 - np.asarray(batch.done, dtype=np.float64)

    noise = rng.normal(0.0, cfg.target_noise, size=(len(s), len(actor.scale)))
    noise = np.clip(noise, -cfg.noise_clip, cfg.noise_clip) * actor.scale
    a_next = np.clip(actor.act(s_next, g, target=True) + noise, actor.low, actor.high)
    y = r + cfg.gamma * not_done * critics.q_min(s_next, a_next, g, target=True)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite TD target")
    y = y[:, None]

    x = critics._join(s, a, g)
    critic_loss = 0.0
    for net, adam in ((critics.q1, critics.adam1), (critics.q2, critics.adam2)):
        pred, cache = net.forward_cached(x)
        loss, grad = mse_loss(pred, y)
        grads, _ = net.backward(cache, grad)
        adam.step(net.parameters(), grads)
        critic_loss += 0.5 * loss

    critics.updates += 1
    actor_loss = None
    if critics.updates % cfg.policy_delay == 0:
        xa = np.concatenate([s, g], axis=-1)
        raw, actor_cache = actor.net.forward_cached(xa)
        a_pi = actor.squash(raw)
        xq = critics._join(s, a_pi, g)
        q, q_cache = critics.q1.forward_cached(xq)
        actor_loss = -float(q.mean())
        # ascend Q1: gradient of -mean(Q1) through the action input
        dq = np.full((len(s), 1), -1.0 / len(s))
        _, dx = critics.q1.backward(q_cache, dq)
        da = dx[:, s.shape[1] : s.shape[1] + len(actor.scale)]
        draw = da * actor.scale * (1.0 - np.tanh(raw) ** 2)
        grads, _ = actor.net.backward(actor_cache, draw)
        actor.adam.step(actor.net.parameters(), grads)

        polyak_update(critics.q1_target, critics.q1, cfg.polyak)
        polyak_update(critics.q2_target, critics.q2, cfg.polyak)
        polyak_update(actor.target, actor.net, cfg.polyak)
    return critic_loss, actor_loss


def value_query(critics: CriticPair, actor: Actor, s, g) -> np.ndarray:
    """V(s; g) as the twin minimum at the actor's action."""
    single = np.ndim(s) == 1
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    g = np.atleast_2d(np.asarray(g, dtype=np.float64))
    if len(g) == 1 and len(s) > 1:
        g = np.broadcast_to(g, (len(s), g.shape[1]))
    a = actor.act(s, g)
    v = critics.q_min(s, a, g)
    return float(v[0]) if single else v


@dataclass
class TabularValue:
    """Exact optimal values over a DiscreteMDP's states."""

    values: np.ndarray
    goal_state: int
    gamma: float

    def __getitem__(self, s):
        return self.values[s]


def value_iteration(mdp: DiscreteMDP, goal: int | None = None, tol: float = 1e-12) -> TabularValue:
    """Fixed point of V(s) = 1 if s is the goal else gamma * max_a V(next).

    Termination on goal achievement makes the goal state's value exactly 1;
    states that cannot reach the goal converge to 0.
    """
    goal = mdp.goal_state if goal is None else int(goal)
    v = np.zeros(mdp.n_states)
    v[goal] = 1.0
    while True:
        new = mdp.gamma * v[mdp.next_state].max(axis=1)
        new[goal] = 1.0
        residual = np.abs(new - v).max()
        v = new
        if residual <= tol:
            return TabularValue(values=v, goal_state=goal, gamma=mdp.gamma)


def greedy_rollout(values, mdp: DiscreteMDP, s0: int, g: int, max_steps: int):
    """Greedy one-step ascent on a state-value table.

    Each step moves to the reachable state of maximal value (ties resolved
    toward the lowest state index; the current state is reachable through
    its self-loop). Returns the visited states after s0 and a success flag.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    table = values.values if isinstance(values, TabularValue) else np.asarray(values)
    traj = []
    s = int(s0)
    for _ in range(max_steps):
        if s == g:
            break
        candidates = np.unique(mdp.next_state[s])
        s = int(candidates[np.argmax(table[candidates])])
        traj.append(s)
    return traj, s == g


def save_agent(actor: Actor, critics: CriticPair, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    save_net(actor.net, os.path.join(directory, "actor.gcnn"))
    save_net(actor.target, os.path.join(directory, "actor_target.gcnn"))
    save_net(critics.q1, os.path.join(directory, "q1.gcnn"))
    save_net(critics.q2, os.path.join(directory, "q2.gcnn"))
    save_net(critics.q1_target, os.path.join(directory, "q1_target.gcnn"))
    save_net(critics.q2_target, os.path.join(directory, "q2_target.gcnn"))
    cfg = critics.cfg
    manifest = {
        "dims": list(critics.dims),
        "action_low": actor.low.tolist(),
        "action_high": actor.high.tolist(),
        "updates": critics.updates,
        "config": {
            "critic_hidden": list(cfg.critic_hidden),
            "actor_hidden": list(cfg.actor_hidden),
            "activation": cfg.activation,
            "critic_lr": cfg.critic_lr,
            "actor_lr": cfg.actor_lr,
            "batch_size": cfg.batch_size,
            "polyak": cfg.polyak,
            "target_noise": cfg.target_noise,
            "noise_clip": cfg.noise_clip,
            "policy_delay": cfg.policy_delay,
            "gamma": cfg.gamma,
        },
    }
    with open(os.path.join(directory, "agent.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    moments = {}
    for name, adam in (("q1", critics.adam1), ("q2", critics.adam2), ("actor", actor.adam)):
        moments[f"{name}_t"] = np.array(adam.t)
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            moments[f"{name}_m{i}"] = m
            moments[f"{name}_v{i}"] = v
    np.savez(os.path.join(directory, "optimizer.npz"), **moments)


def load_agent(directory):
    with open(os.path.join(directory, "agent.json")) as fh:
        manifest = json.load(fh)
    raw = manifest["config"]
    cfg = Td3Config(
        critic_hidden=tuple(raw["critic_hidden"]),
        actor_hidden=tuple(raw["actor_hidden"]),
        activation=raw["activation"],
        critic_lr=raw["critic_lr"],
        actor_lr=raw["actor_lr"],
        batch_size=raw["batch_size"],
        polyak=raw["polyak"],
        target_noise=raw["target_noise"],
        noise_clip=raw["noise_clip"],
        policy_delay=raw["policy_delay"],
        gamma=raw["gamma"],
    )
    state_dim, action_dim, goal_dim = manifest["dims"]
    low = np.array(manifest["action_low"])
    high = np.array(manifest["action_high"])

    critics = CriticPair(state_dim, action_dim, goal_dim, cfg, rng=None)
    critics.q1 = load_net(os.path.join(directory, "q1.gcnn"))
    critics.q2 = load_net(os.path.join(directory, "q2.gcnn"))
    critics.q1_target = load_net(os.path.join(directory, "q1_target.gcnn"))
    critics.q2_target = load_net(os.path.join(directory, "q2_target.gcnn"))
    critics.adam1 = AdamState(critics.q1.parameters(), lr=cfg.critic_lr)
    critics.adam2 = AdamState(critics.q2.parameters(), lr=cfg.critic_lr)
    critics.updates = manifest["updates"]
    actor = Actor(state_dim, action_dim, goal_dim, low, high, cfg, rng=None)
    actor.net = load_net(os.path.join(directory, "actor.gcnn"))
    actor.target = load_net(os.path.join(directory, "actor_target.gcnn"))
    actor.adam = AdamState(actor.net.parameters(), lr=cfg.actor_lr)

    moments_path = os.path.join(directory, "optimizer.npz")
    if os.path.exists(moments_path):
        with np.load(moments_path) as moments:
            for name, adam in (
                ("q1", critics.adam1),
                ("q2", critics.adam2),
                ("actor", actor.adam),
            ):
                adam.t = int(moments[f"{name}_t"])
                adam.m = [moments[f"{name}_m{i}"] for i in range(len(adam.m))]
                adam.v = [moments[f"{name}_v{i}"] for i in range(len(adam.v))]
    return actor, critics
