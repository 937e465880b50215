"""Exploration data store with hindsight goal relabeling.

Trajectories of possibly different lengths are kept contiguously; training
batches pair a uniformly sampled transition with either a future state of
the same trajectory (a positive goal, with geometrically distributed
lookahead) or a state drawn uniformly from the whole buffer (a negative
goal). The reward compares the achieved next state with the goal exactly,
so it is non-zero only for positives drawn one step ahead.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

_MAGIC = b"GCRB"
_VERSION = 1


@dataclass
class RelabelConfig:
    p_g: float = 0.75
    p_geo: float = 0.2
    goal_projection: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if not 0.0 < self.p_g <= 1.0:
            raise ValueError("p_g must be in (0, 1]")
        if not 0.0 < self.p_geo <= 1.0:
            raise ValueError("p_geo must be in (0, 1]")

    def project(self, states: np.ndarray) -> np.ndarray:
        if self.goal_projection is None:
            return states
        return self.goal_projection(states)


@dataclass
class RelabelBatch:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    g: np.ndarray
    r: np.ndarray
    done: np.ndarray
    # diagnostics: which samples used the positive branch and their lookahead
    positive: np.ndarray | None = None
    tau: np.ndarray | None = None


class ReplayBuffer:
    """Trajectory store with capacity bounded by total transition count."""

    def __init__(self, state_dim: int, action_dim: int, capacity: int | None = None):
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        self.capacity = capacity
        self.trajectories: list[tuple[np.ndarray, np.ndarray]] = []
        self._flat = None  # lazily built sampling cache

    @property
    def n_transitions(self) -> int:
        return sum(len(a) for _, a in self.trajectories)

    @property
    def n_states(self) -> int:
        return sum(len(s) for s, _ in self.trajectories)

    def append_trajectory(self, states: np.ndarray, actions: np.ndarray) -> None:
        states = np.asarray(states, dtype=np.float32)
        actions = np.asarray(actions, dtype=np.float32)
        if states.ndim != 2 or states.shape[1] != self.state_dim:
            raise ValueError(f"states must be [T+1, {self.state_dim}]")
        if actions.ndim != 2 or actions.shape[1] != self.action_dim:
            raise ValueError(f"actions must be [T, {self.action_dim}]")
        if len(states) != len(actions) + 1:
            raise ValueError("need exactly one more state than actions")
        if len(states) < 2:
            raise ValueError("trajectory must contain at least one transition")
        if self.capacity is not None and len(actions) > self.capacity:
            raise ValueError("single trajectory exceeds buffer capacity")
        self.trajectories.append((states, actions))
        if self.capacity is not None:
            while self.n_transitions > self.capacity:
                self.trajectories.pop(0)
        self._flat = None

    def all_states(self) -> np.ndarray:
        """All stored states, concatenated across trajectories."""
        self._build_flat()
        return self._flat["states"]

    def _build_flat(self):
        if self._flat is not None:
            return
        if not self.trajectories:
            raise ValueError("replay buffer is empty")
        states = np.concatenate([s for s, _ in self.trajectories], axis=0)
        actions = np.concatenate([a for _, a in self.trajectories], axis=0)
        lengths = np.array([len(a) for _, a in self.trajectories])
        state_offsets = np.concatenate([[0], np.cumsum(lengths + 1)])[:-1]
        # map each global transition to (trajectory, in-trajectory index)
        traj_of = np.repeat(np.arange(len(lengths)), lengths)
        t_within = np.concatenate([np.arange(n) for n in lengths])
        self._flat = {
            "states": states,
            "actions": actions,
            "lengths": lengths,
            "state_offsets": state_offsets,
            "traj_of": traj_of,
            "t_within": t_within,
        }

    def sample_relabeled(
        self,
        cfg: RelabelConfig,
        batch: int,
        rng: np.random.Generator,
        return_info: bool = False,
    ) -> RelabelBatch:
        """Draw a relabeled training batch of (s, a, s', g, r, done)."""
        self._build_flat()
        f = self._flat
        n_trans = len(f["traj_of"])

        idx = rng.integers(0, n_trans, size=batch)
        traj = f["traj_of"][idx]
        t = f["t_within"][idx]
        off = f["state_offsets"][traj]
        s = f["states"][off + t]
        a = f["actions"][idx]
        s_next = f["states"][off + t + 1]

        positive = rng.random(batch) < cfg.p_g
        tau = rng.geometric(cfg.p_geo, size=batch)
        # clamp the lookahead to the trajectory end instead of resampling
        tau = np.minimum(tau, f["lengths"][traj] - t)
        goal_state = f["states"][off + t + tau]
        uniform_idx = rng.integers(0, len(f["states"]), size=batch)
        goal_state = np.where(positive[:, None], goal_state, f["states"][uniform_idx])

        g = np.asarray(cfg.project(goal_state))
        achieved = np.asarray(cfg.project(s_next))
        r = (achieved == g).all(axis=1).astype(np.float32)
        done = r > 0
        if not return_info:
            return RelabelBatch(s=s, a=a, s_next=s_next, g=g, r=r, done=done)
        return RelabelBatch(
            s=s, a=a, s_next=s_next, g=g, r=r, done=done, positive=positive, tau=tau
        )

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(
                struct.pack(
                    "<III",
                    _VERSION,
                    self.state_dim,
                    self.action_dim,
                )
            )
            fh.write(struct.pack("<I", len(self.trajectories)))
            for states, actions in self.trajectories:
                fh.write(struct.pack("<I", len(states)))
                fh.write(states.astype("<f4").tobytes())
                fh.write(actions.astype("<f4").tobytes())

    @classmethod
    def load(
        cls,
        path,
        state_dim: int | None = None,
        action_dim: int | None = None,
        capacity: int | None = None,
    ) -> "ReplayBuffer":
        """Read a buffer back; dims, when given, are validated against the header."""
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != _MAGIC:
            raise ValueError(f"{path}: bad magic, not a replay buffer file")
        try:
            version, sdim, adim, n_traj = struct.unpack_from("<IIII", data, 4)
        except struct.error as exc:
            raise ValueError(f"{path}: truncated header") from exc
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        if state_dim is not None and sdim != state_dim:
            raise ValueError(f"{path}: state_dim {sdim} != expected {state_dim}")
        if action_dim is not None and adim != action_dim:
            raise ValueError(f"{path}: action_dim {adim} != expected {action_dim}")
        buf = cls(sdim, adim, capacity=capacity)
        pos = 20
        for _ in range(n_traj):
            if pos + 4 > len(data):
                raise ValueError(f"{path}: truncated trajectory header")
            (n_states,) = struct.unpack_from("<I", data, pos)
            pos += 4
            sbytes = n_states * sdim * 4
            abytes = (n_states - 1) * adim * 4
            if pos + sbytes + abytes > len(data):
                raise ValueError(f"{path}: truncated trajectory data")
            states = np.frombuffer(data, dtype="<f4", count=n_states * sdim, offset=pos)
            pos += sbytes
            actions = np.frombuffer(
                data, dtype="<f4", count=(n_states - 1) * adim, offset=pos
            )
            pos += abytes
            buf.trajectories.append(
                (states.reshape(n_states, sdim).copy(), actions.reshape(n_states - 1, adim).copy())
            )
        if pos != len(data):
            raise ValueError(f"{path}: trailing bytes after last trajectory")
        buf._flat = None
        return buf
