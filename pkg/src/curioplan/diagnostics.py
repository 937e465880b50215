"""Detection of reachability-local optima in value landscapes.

A state is flagged when its value strictly dominates everything reachable
in one step (itself excluded) while some state elsewhere scores strictly
higher; such a hill traps greedy ascent. Its depth is the smallest number
of steps after which a higher value becomes reachable. On discrete MDPs
both conditions are checked exactly; in continuous spaces they are
estimated by sampling comparison states from the exploration data and
next states from the learned model.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .envs import DiscreteMDP
from .values import TabularValue


@dataclass
class OptimaReport:
    is_optimum: np.ndarray  # bool per state
    depth: np.ndarray  # smallest escape depth per flagged state, -1 elsewhere
    method: str  # "exact" or "sampled"
    n_random: int | None = None
    n_next: int | None = None

    @property
    def flagged_states(self) -> np.ndarray:
        return np.flatnonzero(self.is_optimum)


@dataclass
class MonotonicityReport:
    ratio: float  # fraction of states whose value fails to improve after H steps
    horizon: int
    success: bool
    occurrence: float | None = None  # fraction of states flagged as sampled optima


def find_exact_optima(values, mdp: DiscreteMDP, max_depth: int | None = None) -> OptimaReport:
    """Exact optimum flags and depths for a value table on a discrete MDP.

    Flags states whose value is strictly below the global maximum yet
    strictly above every other state reachable in one step. Depth is the
    smallest k >= 1 such that a strictly higher value appears within k+1
    steps (states that never escape get depth -1, possible only when the
    flagged hill dominates its whole reachable component).
    """
    table = values.values if isinstance(values, TabularValue) else np.asarray(values, dtype=np.float64)
    n = mdp.n_states
    if len(table) != n:
        raise ValueError("value table size does not match the MDP")

    successors = mdp.next_state  # [n, A]
    succ_vals = table[successors]
    # exclude the state itself from the one-step maximum; a state whose only
    # successor is itself has no hill geometry and is never flagged
    masked = np.where(successors == np.arange(n)[:, None], -np.inf, succ_vals)
    nbr_max = masked.max(axis=1)
    below_global = table < table.max()
    flags = below_global & (table > nbr_max) & np.isfinite(nbr_max)

    depth = np.full(n, -1, dtype=np.int64)
    limit = n if max_depth is None else max_depth
    for s in np.flatnonzero(flags):
        reach = np.zeros(n, dtype=bool)
        reach[successors[s]] = True
        k = 0  # reach currently holds T^{k+1}({s})
        while k < limit:
            if table[reach].max() > table[s]:
                depth[s] = max(k, 1)
                break
            nxt = np.zeros(n, dtype=bool)
            nxt[successors[reach].ravel()] = True
            if (nxt == reach).all():
                break  # closed component, no escape
            reach = nxt
            k += 1
    return OptimaReport(is_optimum=flags, depth=depth, method="exact")


def estimate_optimum_sampled(
    s: np.ndarray,
    g: np.ndarray,
    value_fn,
    step_fn,
    buffer_states: np.ndarray,
    action_low,
    action_high,
    horizon: int,
    rng: np.random.Generator,
    n_random: int = 200,
    n_next: int = 200,
) -> bool:
    """Sampling-based estimate of whether ``s`` is an optimum of depth >= horizon.

    The global comparison draws random states from the exploration data;
    the reachability comparison rolls ``n_next`` uniformly random action
    sequences through ``step_fn`` (typically the learned model) and takes
    the union of states visited at steps 1..horizon. Both inequalities are
    required for a flag.
    """
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    v_s = float(np.asarray(value_fn(s[None], g[None]))[0])

    idx = rng.integers(0, len(buffer_states), size=n_random)
    random_vals = np.asarray(value_fn(buffer_states[idx], np.tile(g, (n_random, 1))))
    if not (random_vals > v_s).any():
        return False

    low = np.asarray(action_low, dtype=np.float64)
    high = np.asarray(action_high, dtype=np.float64)
    x = np.tile(s, (n_next, 1))
    g_batch = np.tile(g, (n_next, 1))
    best = -np.inf
    for _ in range(horizon):
        a = rng.uniform(low, high, size=(n_next, len(low)))
        x = np.asarray(step_fn(x, a, rng))
        vals = np.asarray(value_fn(x, g_batch))
        # rollouts parked on the candidate itself don't count as escapes;
        # with a strict comparison this matches excluding s from the set
        others = np.abs(x - s).max(axis=1) > 1e-9
        if others.any():
            best = max(best, float(vals[others].max()))
        if best >= v_s:
            return False
    return v_s > best


def monotonicity_ratio(traj_values: np.ndarray, horizon: int) -> float:
    """Fraction of comparable states whose value fails to rise after H steps."""
    v = np.asarray(traj_values, dtype=np.float64)
    if len(v) < horizon + 1:
        raise ValueError("trajectory shorter than horizon + 1")
    ahead = v[horizon:]
    here = v[: len(v) - horizon]
    return float(np.mean(here >= ahead))


def trajectory_reports(
    trajectories,
    goals,
    successes,
    value_fn,
    horizon: int,
    optimum_fn=None,
):
    """Per-trajectory non-monotonicity (and optionally optimum occurrence).

    ``optimum_fn(state, goal)`` should return a bool flag (e.g. a partial of
    ``estimate_optimum_sampled``); when given, the occurrence ratio counts
    flagged states along each trajectory. Trajectories shorter than
    horizon+1 states are skipped with a warning. Returns the report list
    and summary statistics grouped by success.
    """
    reports: list[MonotonicityReport] = []
    for states, goal, success in zip(trajectories, goals, successes):
        states = np.asarray(states, dtype=np.float64)
        if len(states) < horizon + 1:
            warnings.warn(
                f"skipping trajectory of {len(states)} states; horizon {horizon} needs "
                f"{horizon + 1}",
                stacklevel=2,
            )
            continue
        goal_batch = np.tile(np.asarray(goal, dtype=np.float64), (len(states), 1))
        vals = np.asarray(value_fn(states, goal_batch))
        ratio = monotonicity_ratio(vals, horizon)
        occurrence = None
        if optimum_fn is not None:
            flags = [bool(optimum_fn(state, goal)) for state in states]
            occurrence = float(np.mean(flags))
        reports.append(
            MonotonicityReport(
                ratio=ratio, horizon=horizon, success=bool(success), occurrence=occurrence
            )
        )
    return reports, summarize_reports(reports)


def summarize_reports(reports) -> dict:
    """Median metrics split by trajectory outcome."""
    out = {}
    for label, flag in (("success", True), ("failure", False)):
        group = [r for r in reports if r.success == flag]
        out[f"n_{label}"] = len(group)
        out[f"median_ratio_{label}"] = (
            float(np.median([r.ratio for r in group])) if group else None
        )
        occ = [r.occurrence for r in group if r.occurrence is not None]
        out[f"median_occurrence_{label}"] = float(np.median(occ)) if occ else None
    return out


def report_to_rows(report: OptimaReport):
    """CSV-ready rows (state, flag, depth) for an exact report."""
    return [
        {"state": int(i), "flagged": bool(f), "depth": int(d)}
        for i, (f, d) in enumerate(zip(report.is_optimum, report.depth))
    ]


def dump_reports_json(path, optima: OptimaReport | None = None, monotonicity=None, summary=None):
    payload = {}
    if optima is not None:
        payload["optima"] = {
            "method": optima.method,
            "flagged": [int(i) for i in optima.flagged_states],
            "depth": {int(i): int(optima.depth[i]) for i in optima.flagged_states},
            "n_random": optima.n_random,
            "n_next": optima.n_next,
        }
    if monotonicity is not None:
        payload["trajectories"] = [
            {
                "ratio": r.ratio,
                "horizon": r.horizon,
                "success": r.success,
                "occurrence": r.occurrence,
            }
            for r in monotonicity
        ]
    if summary is not None:
        payload["summary"] = summary
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
