"""Goal-conditioned environments and exact tabular MDPs.

Two continuous environments are provided: a point-mass maze (state is
position and velocity, goal is a position) and pin-pad-lite (a point mass
in a room with four buttons; the goal is a target press history). Both are
pure value transformers: ``step(state, action)`` has no hidden state, so
they can be evaluated from many workers concurrently.

Discrete counterparts (``DiscreteMDP``) back the exact oracle machinery:
value iteration, reachable sets and the exact optimum checker all operate
on these.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

# Tabular maze actions, in fixed order.
STAY, UP, DOWN, LEFT, RIGHT = range(5)
_MOVES = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))  # (drow, dcol) per action


@dataclass
class EnvSpec:
    """Static description of a goal-conditioned environment."""

    state_dim: int
    action_dim: int
    goal_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    episode_length: int
    gamma: float
    goal_epsilon: float = 0.0
    goal_metric: str = "euclidean"  # or "per-dim-threshold"
    goal_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        self.action_low = np.broadcast_to(
            np.asarray(self.action_low, dtype=np.float64), (self.action_dim,)
        ).copy()
        self.action_high = np.broadcast_to(
            np.asarray(self.action_high, dtype=np.float64), (self.action_dim,)
        ).copy()
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.episode_length <= 0:
            raise ValueError("episode_length must be positive")
        if not np.all(self.action_low < self.action_high):
            raise ValueError("action_low must be element-wise below action_high")
        if self.goal_epsilon < 0:
            raise ValueError("goal_epsilon must be non-negative")
        if self.goal_metric not in ("euclidean", "per-dim-threshold"):
            raise ValueError(f"unknown goal metric {self.goal_metric!r}")
        if self.goal_indices is None:
            self.goal_indices = tuple(range(self.goal_dim))
        if len(self.goal_indices) != self.goal_dim:
            raise ValueError("goal_indices length must equal goal_dim")

    def project_goal(self, state: np.ndarray) -> np.ndarray:
        """Slice the goal-relevant coordinates out of a state (or batch)."""
        return np.asarray(state)[..., list(self.goal_indices)]


def goal_distance(spec: EnvSpec, s: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Distance between the goal slice of ``s`` and goal ``g``.

    Euclidean metric uses the L2 norm; per-dim-threshold uses the Chebyshev
    (max absolute difference) norm so that d <= eps means every coordinate
    is within eps.
    """
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    proj = spec.project_goal(s) if s.shape[-1] == spec.state_dim else s
    if proj.shape[-1] != spec.goal_dim or g.shape[-1] != spec.goal_dim:
        raise ValueError(
            f"goal dimension mismatch: state slice {proj.shape[-1]}, goal {g.shape[-1]}"
        )
    diff = proj - g
    if spec.goal_metric == "euclidean":
        return np.linalg.norm(diff, axis=-1)
    return np.max(np.abs(diff), axis=-1)


def goal_reward(spec: EnvSpec, s: np.ndarray, g: np.ndarray):
    """Sparse reward 1 iff the goal slice of ``s`` is within eps of ``g``.

    Returns ``(reward, done)``; episodes terminate exactly when the goal is
    achieved, so the done flag mirrors the reward. The eps boundary is
    inclusive. Works on single states or batches.
    """
    d = goal_distance(spec, s, g)
    r = (d <= spec.goal_epsilon).astype(np.float64)
    return r, r > 0


class PointMassMaze:
    """Continuous maze navigated by accelerating a point mass.

    State is (x, y, vx, vy); the goal is an (x, y) position. The maze is a
    boolean occupancy grid of unit cells with a walled boundary; x runs
    along columns and y along rows. Collisions are resolved per axis: a
    move that would enter a wall cell keeps the old coordinate on that axis
    and zeroes its velocity.
    """

    def __init__(
        self,
        wall_grid: np.ndarray,
        start_cell: tuple[int, int],
        dt: float = 0.2,
        max_speed: float = 2.5,
        max_accel: float = 2.0,
        episode_length: int = 200,
        gamma: float = 0.99,
        goal_epsilon: float = 0.5,
    ):
        self.walls = np.asarray(wall_grid, dtype=bool)
        if self.walls.ndim != 2:
            raise ValueError("wall_grid must be 2-D")
        border = np.concatenate(
            [self.walls[0], self.walls[-1], self.walls[:, 0], self.walls[:, -1]]
        )
        if not border.all():
            raise ValueError("maze boundary must be walled")
        r, c = start_cell
        if self.walls[r, c]:
            raise ValueError("start cell lies inside a wall")
        if max_speed * dt >= 1.0:
            # One step may never cross a full cell, otherwise walls can be tunneled.
            raise ValueError("max_speed * dt must stay below one cell")
        self.start_cell = (int(r), int(c))
        self.dt = float(dt)
        self.max_speed = float(max_speed)
        self.max_accel = float(max_accel)
        self.spec = EnvSpec(
            state_dim=4,
            action_dim=2,
            goal_dim=2,
            action_low=-max_accel,
            action_high=max_accel,
            episode_length=episode_length,
            gamma=gamma,
            goal_epsilon=goal_epsilon,
            goal_metric="euclidean",
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.walls.shape

    def reset(self) -> np.ndarray:
        r, c = self.start_cell
        return np.array([c + 0.5, r + 0.5, 0.0, 0.0])

    def _is_wall(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        rows, cols = self.walls.shape
        ci = np.clip(np.floor(x).astype(int), 0, cols - 1)
        ri = np.clip(np.floor(y).astype(int), 0, rows - 1)
        return self.walls[ri, ci]

    def step(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Advance one timestep; accepts a single state or a batch."""
        single = np.ndim(s) == 1
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        a = np.clip(a, -self.max_accel, self.max_accel)
        v = np.clip(s[:, 2:4] + a * self.dt, -self.max_speed, self.max_speed)
        x, y = s[:, 0].copy(), s[:, 1].copy()

        nx = x + v[:, 0] * self.dt
        blocked = self._is_wall(nx, y)
        nx = np.where(blocked, x, nx)
        v[:, 0] = np.where(blocked, 0.0, v[:, 0])

        ny = y + v[:, 1] * self.dt
        blocked = self._is_wall(nx, ny)
        ny = np.where(blocked, y, ny)
        v[:, 1] = np.where(blocked, 0.0, v[:, 1])

        out = np.column_stack([nx, ny, v])
        return out[0] if single else out

    def cell_of(self, s: np.ndarray) -> np.ndarray:
        """Grid cell (row, col) containing the position of state(s)."""
        s = np.atleast_2d(np.asarray(s))
        return np.stack(
            [np.floor(s[:, 1]).astype(int), np.floor(s[:, 0]).astype(int)], axis=1
        )

    def free_cells(self) -> np.ndarray:
        return np.argwhere(~self.walls)

    def cell_center(self, cell) -> np.ndarray:
        r, c = cell
        return np.array([c + 0.5, r + 0.5])


class PinPadLite:
    """Room with four corner buttons; the task is a 3-press sequence.

    State is (x, y, vx, vy, h1, h2, h3) where the history slots hold the
    ids (1..4) of the last buttons pressed, oldest first, and 0 marks an
    empty slot. The goal is a target history. A button registers when the
    agent's cell enters its pad and the pad differs from the most recent
    entry.
    """

    BUTTONS = 4

    def __init__(
        self,
        size: int = 8,
        pad_extent: int = 2,
        dt: float = 0.2,
        max_speed: float = 2.5,
        max_accel: float = 2.0,
        episode_length: int = 300,
        gamma: float = 0.99,
    ):
        if size < 2 * pad_extent + 1:
            raise ValueError("room too small for the button pads")
        walls = np.zeros((size + 2, size + 2), dtype=bool)
        walls[0] = walls[-1] = True
        walls[:, 0] = walls[:, -1] = True
        self.walls = walls
        self.size = size
        self.pad_extent = pad_extent
        self.dt = float(dt)
        self.max_speed = float(max_speed)
        self.max_accel = float(max_accel)
        if max_speed * dt >= 1.0:
            raise ValueError("max_speed * dt must stay below one cell")
        self.spec = EnvSpec(
            state_dim=7,
            action_dim=2,
            goal_dim=3,
            action_low=-max_accel,
            action_high=max_accel,
            episode_length=episode_length,
            gamma=gamma,
            goal_epsilon=0.25,
            goal_metric="per-dim-threshold",
            goal_indices=(4, 5, 6),
        )

    def reset(self) -> np.ndarray:
        center = 1 + self.size / 2.0
        return np.array([center, center, 0.0, 0.0, 0.0, 0.0, 0.0])

    def _button_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Button id (1..4) at a position, 0 where no pad."""
        lo = 1 + self.pad_extent
        hi = 1 + self.size - self.pad_extent
        left, right = x < lo, x >= hi
        bottom, top = y < lo, y >= hi
        button = np.zeros(np.shape(x), dtype=np.float64)
        button = np.where(left & bottom, 1.0, button)
        button = np.where(right & bottom, 2.0, button)
        button = np.where(left & top, 3.0, button)
        button = np.where(right & top, 4.0, button)
        return button

    def step(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        single = np.ndim(s) == 1
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        a = np.clip(a, -self.max_accel, self.max_accel)
        v = np.clip(s[:, 2:4] + a * self.dt, -self.max_speed, self.max_speed)
        bound_lo, bound_hi = 1.0, 1.0 + self.size

        nx = s[:, 0] + v[:, 0] * self.dt
        hit = (nx < bound_lo) | (nx >= bound_hi)
        nx = np.where(hit, s[:, 0], nx)
        v[:, 0] = np.where(hit, 0.0, v[:, 0])
        ny = s[:, 1] + v[:, 1] * self.dt
        hit = (ny < bound_lo) | (ny >= bound_hi)
        ny = np.where(hit, s[:, 1], ny)
        v[:, 1] = np.where(hit, 0.0, v[:, 1])

        hist = s[:, 4:7].copy()
        button = self._button_at(nx, ny)
        pressed = (button > 0) & (button != hist[:, 2])
        shifted = np.column_stack([hist[:, 1], hist[:, 2], button])
        hist = np.where(pressed[:, None], shifted, hist)

        out = np.column_stack([nx, ny, v, hist])
        return out[0] if single else out


@dataclass
class DiscreteMDP:
    """Deterministic finite MDP given by a dense successor table."""

    next_state: np.ndarray  # [n_states, n_actions] int
    goal_state: int
    gamma: float = 0.99

    def __post_init__(self):
        self.next_state = np.asarray(self.next_state, dtype=np.int64)
        if self.next_state.ndim != 2:
            raise ValueError("next_state must be [n_states, n_actions]")
        n = self.n_states
        if self.next_state.min() < 0 or self.next_state.max() >= n:
            raise ValueError("next_state entries out of range")
        has_self_loop = (self.next_state == np.arange(n)[:, None]).any(axis=1)
        if not has_self_loop.all():
            raise ValueError("every state needs a self-loop action")
        if not 0 <= self.goal_state < n:
            raise ValueError("goal_state out of range")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")

    @property
    def n_states(self) -> int:
        return self.next_state.shape[0]

    @property
    def n_actions(self) -> int:
        return self.next_state.shape[1]


def tabular_from_maze(wall_grid: np.ndarray, goal_cell, gamma: float = 0.99):
    """Exact tabular MDP over the free cells of a maze.

    Actions are (stay, up, down, left, right); moves into walls map to the
    current cell. Returns the MDP together with the [n_states, 2] array of
    (row, col) cells, indexed in row-major order.
    """
    walls = np.asarray(wall_grid, dtype=bool)
    cells = np.argwhere(~walls)
    if len(cells) == 0:
        raise ValueError("maze has no free cells")
    index = -np.ones(walls.shape, dtype=np.int64)
    index[cells[:, 0], cells[:, 1]] = np.arange(len(cells))
    gr, gc = goal_cell
    if walls[gr, gc]:
        raise ValueError("goal cell lies inside a wall")

    rows, cols = walls.shape
    table = np.empty((len(cells), len(_MOVES)), dtype=np.int64)
    for a, (dr, dc) in enumerate(_MOVES):
        nr = np.clip(cells[:, 0] + dr, 0, rows - 1)
        nc = np.clip(cells[:, 1] + dc, 0, cols - 1)
        target = index[nr, nc]
        table[:, a] = np.where(target >= 0, target, np.arange(len(cells)))
    mdp = DiscreteMDP(next_state=table, goal_state=int(index[gr, gc]), gamma=gamma)
    return mdp, cells


def reachable_set(mdp: DiscreteMDP, s0, steps: int) -> np.ndarray:
    """States reachable in exactly ``steps`` transitions from the set ``s0``.

    This is the k-fold composition of the one-step reachability operator;
    no closure over shorter horizons is added (self-loop actions already
    make the sets monotone in k where they exist).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    current = np.unique(np.asarray(list(s0), dtype=np.int64))
    for _ in range(steps):
        if current.size == 0:
            return current
        current = np.unique(mdp.next_state[current].ravel())
    return current


def bfs_distances(mdp: DiscreteMDP, target: int) -> np.ndarray:
    """Minimal step counts from every state to ``target`` (-1 if unreachable)."""
    n = mdp.n_states
    preds = [[] for _ in range(n)]
    for s in range(n):
        for t in mdp.next_state[s]:
            preds[t].append(s)
    dist = -np.ones(n, dtype=np.int64)
    dist[target] = 0
    queue = deque([target])
    while queue:
        v = queue.popleft()
        for p in preds[v]:
            if dist[p] < 0:
                dist[p] = dist[v] + 1
                queue.append(p)
    return dist


def load_layout(path):
    """Read a maze layout file ('#' wall, '.' free, 'S' start)."""
    rows = []
    start = None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            rows.append(line)
    if not rows:
        raise ValueError(f"empty layout file {path}")
    width = max(len(r) for r in rows)
    walls = np.ones((len(rows), width), dtype=bool)
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "#":
                walls[r, c] = True
            elif ch == ".":
                walls[r, c] = False
            elif ch == "S":
                walls[r, c] = False
                start = (r, c)
            else:
                raise ValueError(f"unexpected layout character {ch!r} at {(r, c)}")
    if start is None:
        raise ValueError("layout has no start cell 'S'")
    return walls, start


def random_maze(rng: np.random.Generator, rows: int, cols: int, wall_prob: float = 0.25):
    """Random occupancy grid with walled boundary and at least one free cell."""
    if rows < 3 or cols < 3:
        raise ValueError("maze must be at least 3x3")
    while True:
        walls = rng.random((rows, cols)) < wall_prob
        walls[0] = walls[-1] = True
        walls[:, 0] = walls[:, -1] = True
        if (~walls).any():
            return walls
