"""Graph-based aggregation of learned goal-conditioned values.

Vertices are drawn from the exploration data with probability inversely
proportional to a kernel density estimate (temporal-distance metric), the
current state and the goal are appended, and every ordered vertex pair is
connected with the learned value as edge weight. Edges below an
automatically chosen threshold are pruned: the threshold is the largest
value that keeps the start connected to the goal, i.e. the bottleneck of
the widest start-goal path. Long-horizon estimates are then replaced by
the best product of remaining short-horizon edges along paths to the goal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class ValueGraph:
    vertices: np.ndarray  # [n, state_dim]
    weights: np.ndarray  # [n, n] directed edge values in (0, 1]
    s_index: int
    g_index: int
    v_min: float | None = None
    aggregates: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)


EDGE_FLOOR = 1e-9


def pairwise_values(value_query, project_goal, from_states, to_states) -> np.ndarray:
    """Evaluate V(from; goal-of-to) for every ordered pair, as an [n, m] matrix."""
    from_states = np.atleast_2d(np.asarray(from_states, dtype=np.float64))
    to_states = np.atleast_2d(np.asarray(to_states, dtype=np.float64))
    n, m = len(from_states), len(to_states)
    goals = np.asarray(project_goal(to_states), dtype=np.float64)
    s_rep = np.repeat(from_states, m, axis=0)
    g_rep = np.tile(goals, (n, 1))
    vals = np.asarray(value_query(s_rep, g_rep), dtype=np.float64)
    return vals.reshape(n, m)


def kde_density(pair_values: np.ndarray, gamma: float, bandwidth: float) -> np.ndarray:
    """Exponential-kernel density from pairwise values via temporal distances.

    The distance between states is log_gamma of their value, i.e. the
    discount-implied step count, which keeps the estimate independent of
    the state parameterization.
    """
    v = np.clip(pair_values, EDGE_FLOOR, 1.0)
    d = np.log(v) / np.log(gamma)
    return np.exp(-d / bandwidth).mean(axis=1)


def build_graph(
    buf,
    value_query,
    project_goal,
    s_state: np.ndarray,
    g_state: np.ndarray,
    n_vertices: int,
    kde_bandwidth: float,
    gamma: float,
    rng: np.random.Generator,
    pool_size: int | None = None,
) -> ValueGraph:
    """Sample vertices by inverse density and weight all ordered pairs.

    ``buf`` is a replay buffer or a plain [N, state_dim] array of candidate
    states. The returned graph is unpruned; run ``bottleneck_threshold``
    and ``path_aggregates`` to finish it.
    """
    if n_vertices < 2:
        raise ValueError("need at least two vertices")
    states = buf.all_states() if hasattr(buf, "all_states") else np.asarray(buf)
    states = np.asarray(states, dtype=np.float64)
    if len(states) < n_vertices:
        raise ValueError(f"pool holds {len(states)} states, need {n_vertices}")

    if pool_size is None:
        pool_size = min(len(states), max(4 * n_vertices, 64))
    pool_idx = rng.choice(len(states), size=min(pool_size, len(states)), replace=False)
    pool = states[pool_idx]

    if n_vertices >= len(pool):
        chosen = pool
    else:
        density = kde_density(
            pairwise_values(value_query, project_goal, pool, pool), gamma, kde_bandwidth
        )
        inv = 1.0 / density
        chosen = pool[rng.choice(len(pool), size=n_vertices, replace=False, p=inv / inv.sum())]

    vertices = np.vstack([chosen, np.asarray(s_state)[None], np.asarray(g_state)[None]])
    weights = pairwise_values(value_query, project_goal, vertices, vertices)
    weights = np.clip(weights, EDGE_FLOOR, 1.0)
    return ValueGraph(
        vertices=vertices,
        weights=weights,
        s_index=len(vertices) - 2,
        g_index=len(vertices) - 1,
    )


def bottleneck_threshold(graph: ValueGraph, s_index: int | None = None, g_index: int | None = None) -> float:
    """Largest edge threshold that keeps s connected to g.

    Computed as the widest (maximin) path: a Dijkstra variant that grows
    the tree by maximal path width, where a path's width is its minimum
    edge weight. By convention the empty path (s equals g) has width 1.
    """
    s = graph.s_index if s_index is None else s_index
    g = graph.g_index if g_index is None else g_index
    if s == g:
        return 1.0
    n = graph.n_vertices
    width = np.full(n, -np.inf)
    width[s] = np.inf
    visited = np.zeros(n, dtype=bool)
    for _ in range(n):
        u = int(np.argmax(np.where(visited, -np.inf, width)))
        if width[u] == -np.inf:
            break
        if u == g:
            return float(width[g])
        visited[u] = True
        # zero-weight entries count as missing edges
        row = np.where(graph.weights[u] > 0, graph.weights[u], -np.inf)
        cand = np.minimum(width[u], row)
        update = ~visited & (cand > width)
        width[update] = cand[update]
    raise ValueError("graph is disconnected between start and goal")


def path_aggregates(graph: ValueGraph, v_min: float | None = None, g_index: int | None = None) -> np.ndarray:
    """Best product of edge values over pruned paths to the goal, per vertex.

    Edges strictly below ``v_min`` are removed; the product maximization is
    a shortest-path problem under additive weights -ln(edge). Unreachable
    vertices aggregate to 0 and the goal to 1. Results are stored on the
    graph and returned.
    """
    if v_min is None:
        v_min = bottleneck_threshold(graph)
    g = graph.g_index if g_index is None else g_index
    n = graph.n_vertices
    keep = (graph.weights >= v_min) & (graph.weights > 0)
    lengths = np.where(keep, -np.log(np.maximum(graph.weights, EDGE_FLOOR)), np.inf)

    dist = np.full(n, np.inf)
    dist[g] = 0.0
    visited = np.zeros(n, dtype=bool)
    for _ in range(n):
        u = int(np.argmin(np.where(visited, np.inf, dist)))
        if not np.isfinite(dist[u]):
            break
        visited[u] = True
        # relax incoming edges: predecessors reach g through u
        cand = lengths[:, u] + dist[u]
        update = ~visited & (cand < dist)
        dist[update] = cand[update]

    aggregates = np.where(np.isfinite(dist), np.exp(-dist), 0.0)
    aggregates[g] = 1.0
    graph.v_min = float(v_min)
    graph.aggregates = aggregates
    return aggregates


def query_aggregated_value(graph: ValueGraph, s_prime, value_query, project_goal):
    """Aggregated value of arbitrary states against the finished graph.

    For each query state the best admissible entry vertex v (its value from
    the query state must clear the pruning threshold) scores V(s'; v) *
    A(v); the goal itself is among the candidates. States with no
    admissible vertex score 0.
    """
    if graph.aggregates is None or graph.v_min is None:
        raise ValueError("run path_aggregates before querying the graph")
    single = np.ndim(s_prime) == 1
    batch = np.atleast_2d(np.asarray(s_prime, dtype=np.float64))
    vals = pairwise_values(value_query, project_goal, batch, graph.vertices)
    vals = np.clip(vals, 0.0, 1.0)
    score = np.where(vals >= graph.v_min, vals * graph.aggregates, 0.0)
    out = score.max(axis=1)
    return float(out[0]) if single else out


def graph_to_json(graph: ValueGraph, path) -> None:
    payload = {
        "vertices": graph.vertices.tolist(),
        "weights": graph.weights.tolist(),
        "s_index": graph.s_index,
        "g_index": graph.g_index,
        "v_min": graph.v_min,
        "aggregates": None if graph.aggregates is None else graph.aggregates.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
