"""Goal-conditioned offline planning from curious exploration.

The package splits into environment/oracle substrate (:mod:`curioplan.envs`),
data and relabeling (:mod:`curioplan.replay`), function approximation
(:mod:`curioplan.nets`), the ensemble dynamics model
(:mod:`curioplan.dynamics`), value learning (:mod:`curioplan.values`),
trajectory optimization (:mod:`curioplan.planning`), graph-based value
aggregation (:mod:`curioplan.graph`), value-landscape diagnostics
(:mod:`curioplan.diagnostics`) and experiment orchestration
(:mod:`curioplan.harness`).
"""

__version__ = "0.1.0"

from .envs import (
    DiscreteMDP,
    EnvSpec,
    PinPadLite,
    PointMassMaze,
    goal_reward,
    load_layout,
    random_maze,
    reachable_set,
    tabular_from_maze,
)
from .replay import RelabelConfig, ReplayBuffer
from .values import TabularValue, greedy_rollout, value_iteration, value_query
from .planning import PlanConfig, PlanResult, colored_noise, icem_optimize, mpc_episode
from .graph import ValueGraph, bottleneck_threshold, build_graph, path_aggregates
from .diagnostics import find_exact_optima, estimate_optimum_sampled
