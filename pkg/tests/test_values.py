import numpy as np
import pytest

from curioplan.envs import bfs_distances, random_maze, tabular_from_maze
from curioplan.replay import RelabelBatch
from curioplan.values import (
    Actor,
    CriticPair,
    TabularValue,
    Td3Config,
    greedy_rollout,
    load_agent,
    save_agent,
    td3_update,
    value_iteration,
    value_query,
)


def corridor(n, gamma=0.99):
    walls = np.zeros((1, n), dtype=bool)
    return tabular_from_maze(walls, (0, n - 1), gamma=gamma)


def test_value_iteration_corridor_closed_form():
    mdp, _ = corridor(4)
    v = value_iteration(mdp)
    np.testing.assert_allclose(v.values, [0.99**3, 0.99**2, 0.99, 1.0], atol=1e-12)


def test_value_iteration_goal_and_disconnected():
    walls = np.zeros((1, 5), dtype=bool)
    walls[0, 2] = True  # splits the corridor
    mdp, cells = tabular_from_maze(walls, (0, 0))
    v = value_iteration(mdp)
    assert v.values[0] == 1.0
    right_side = [i for i, (r, c) in enumerate(cells) if c > 2]
    assert all(v.values[i] == 0.0 for i in right_side)


def test_value_iteration_sweeps_contract_monotonically():
    rng = np.random.default_rng(0)
    walls = random_maze(rng, 10, 10, 0.25)
    free = np.argwhere(~walls)
    mdp, _ = tabular_from_maze(walls, tuple(free[rng.integers(len(free))]), gamma=0.95)
    v = np.zeros(mdp.n_states)
    v[mdp.goal_state] = 1.0
    residuals = []
    for _ in range(60):
        new = mdp.gamma * v[mdp.next_state].max(axis=1)
        new[mdp.goal_state] = 1.0
        residuals.append(np.abs(new - v).max())
        v = new
    assert all(a >= b - 1e-15 for a, b in zip(residuals, residuals[1:]))


def test_greedy_rollout_reaches_goal_in_bfs_steps():
    mdp, _ = corridor(5)
    v = value_iteration(mdp)
    traj, success = greedy_rollout(v, mdp, s0=1, g=mdp.goal_state, max_steps=20)
    assert success
    assert len(traj) == 3
    # the step-count formula from the oracle value agrees
    t = int(np.ceil(np.log(v.values[1]) / np.log(mdp.gamma) - 1e-9))
    assert t == 3


def test_greedy_rollout_goal_start_empty():
    mdp, _ = corridor(3)
    v = value_iteration(mdp)
    traj, success = greedy_rollout(v, mdp, s0=mdp.goal_state, g=mdp.goal_state, max_steps=5)
    assert traj == [] and success


def test_greedy_rollout_trapped_by_planted_optimum():
    mdp, _ = corridor(7)
    v = value_iteration(mdp).values.copy()
    v[2] = v[3] * 1.001  # hill: dominates both one-step neighbors
    traj, success = greedy_rollout(v, mdp, s0=2, g=mdp.goal_state, max_steps=6)
    assert not success
    assert traj == [2] * 6


def test_greedy_rollout_matches_bfs_on_random_mazes():
    rng = np.random.default_rng(1)
    done = 0
    while done < 20:
        walls = random_maze(rng, 9, 9, 0.3)
        free = np.argwhere(~walls)
        goal = tuple(free[rng.integers(len(free))])
        mdp, _ = tabular_from_maze(walls, goal, gamma=0.97)
        dist = bfs_distances(mdp, mdp.goal_state)
        starts = np.flatnonzero(dist > 0)
        if len(starts) == 0:
            continue
        s0 = int(starts[rng.integers(len(starts))])
        v = value_iteration(mdp)
        traj, success = greedy_rollout(v, mdp, s0, mdp.goal_state, max_steps=200)
        assert success and len(traj) == dist[s0]
        done += 1


def tiny_agent(gamma=0.9, lr=1e-3, seed=0):
    cfg = Td3Config(
        critic_hidden=(16, 16),
        actor_hidden=(16, 16),
        critic_lr=lr,
        actor_lr=lr,
        gamma=gamma,
        policy_delay=2,
    )
    rng = np.random.default_rng(seed)
    critics = CriticPair(2, 1, 1, cfg, rng)
    actor = Actor(2, 1, 1, [-1.0], [1.0], cfg, rng)
    return actor, critics


def random_batch(rng, n=32, done=None, r=None):
    return RelabelBatch(
        s=rng.normal(size=(n, 2)),
        a=rng.uniform(-1, 1, size=(n, 1)),
        s_next=rng.normal(size=(n, 2)),
        g=rng.normal(size=(n, 1)),
        r=np.zeros(n) if r is None else r,
        done=np.zeros(n, dtype=bool) if done is None else done,
    )


def test_done_batch_target_is_reward():
    # with done=1 the bootstrap term vanishes: the pre-update critic loss
    # must equal the plain regression loss onto r
    actor, critics = tiny_agent()
    rng = np.random.default_rng(2)
    r = rng.random(32)
    batch = random_batch(rng, r=r, done=np.ones(32, dtype=bool))
    x = np.concatenate([batch.s, batch.a, batch.g], axis=1)
    expected = 0.5 * np.mean((critics.q1.forward(x)[:, 0] - r) ** 2) + 0.5 * np.mean(
        (critics.q2.forward(x)[:, 0] - r) ** 2
    )
    closs, _ = td3_update(critics, actor, batch, np.random.default_rng(3))
    assert closs == pytest.approx(expected)


def test_gamma_zero_target_is_reward():
    actor, critics = tiny_agent(gamma=0.0 + 1e-12)
    rng = np.random.default_rng(4)
    r = rng.random(32)
    batch = random_batch(rng, r=r)
    x = np.concatenate([batch.s, batch.a, batch.g], axis=1)
    expected = 0.5 * np.mean((critics.q1.forward(x)[:, 0] - r) ** 2) + 0.5 * np.mean(
        (critics.q2.forward(x)[:, 0] - r) ** 2
    )
    closs, _ = td3_update(critics, actor, batch, np.random.default_rng(5))
    assert closs == pytest.approx(expected, rel=1e-9)


def test_zero_lr_update_changes_nothing():
    actor, critics = tiny_agent(lr=0.0)
    rng = np.random.default_rng(6)
    nets = [critics.q1, critics.q2, critics.q1_target, critics.q2_target, actor.net, actor.target]
    before = [[p.copy() for p in net.parameters()] for net in nets]
    for _ in range(3):
        td3_update(critics, actor, random_batch(rng), rng)
    for net, params in zip(nets, before):
        for b, p in zip(params, net.parameters()):
            np.testing.assert_array_equal(b, p)


def test_non_finite_target_raises():
    actor, critics = tiny_agent()
    rng = np.random.default_rng(7)
    batch = random_batch(rng, r=np.full(32, np.nan))
    with pytest.raises(FloatingPointError):
        td3_update(critics, actor, batch, rng)


def test_policy_delay_gates_actor_updates():
    actor, critics = tiny_agent()
    rng = np.random.default_rng(8)
    _, aloss1 = td3_update(critics, actor, random_batch(rng), rng)
    _, aloss2 = td3_update(critics, actor, random_batch(rng), rng)
    assert aloss1 is None and aloss2 is not None


def test_actor_update_ascends_critic():
    actor, critics = tiny_agent(lr=1e-2)
    rng = np.random.default_rng(9)
    batch = random_batch(rng, n=64)
    s, g = batch.s, batch.g
    before = float(critics.q1.forward(np.concatenate([s, actor.act(s, g), g], axis=1)).mean())
    # many delayed updates with frozen critics: disable critic learning
    critics.adam1.lr = 0.0
    critics.adam2.lr = 0.0
    for _ in range(60):
        td3_update(critics, actor, batch, rng)
    after = float(critics.q1.forward(np.concatenate([s, actor.act(s, g), g], axis=1)).mean())
    assert after > before


def test_actor_outputs_respect_bounds():
    actor, _ = tiny_agent()
    rng = np.random.default_rng(10)
    a = actor.act(rng.normal(size=(100, 2)) * 10, rng.normal(size=(100, 1)) * 10)
    assert np.all(a >= -1.0) and np.all(a <= 1.0)


def test_value_query_batch_matches_single():
    actor, critics = tiny_agent(seed=11)
    rng = np.random.default_rng(12)
    s = rng.normal(size=(6, 2))
    g = rng.normal(size=(6, 1))
    batched = value_query(critics, actor, s, g)
    singles = [value_query(critics, actor, s[i], g[i]) for i in range(6)]
    np.testing.assert_allclose(batched, singles)


def test_agent_checkpoint_roundtrip(tmp_path):
    actor, critics = tiny_agent(seed=13)
    rng = np.random.default_rng(14)
    for _ in range(4):
        td3_update(critics, actor, random_batch(rng), rng)
    save_agent(actor, critics, tmp_path / "agent")
    actor2, critics2 = load_agent(tmp_path / "agent")
    s, g = rng.normal(size=(5, 2)), rng.normal(size=(5, 1))
    np.testing.assert_array_equal(
        value_query(critics, actor, s, g), value_query(critics2, actor2, s, g)
    )
    assert critics2.updates == critics.updates
    assert critics2.adam1.t == critics.adam1.t
    # resumed training behaves identically to continued training
    rng_a = np.random.default_rng(15)
    rng_b = np.random.default_rng(15)
    batch = random_batch(np.random.default_rng(16))
    td3_update(critics, actor, batch, rng_a)
    td3_update(critics2, actor2, batch, rng_b)
    np.testing.assert_array_equal(
        value_query(critics, actor, s, g), value_query(critics2, actor2, s, g)
    )


def test_tabular_value_indexing():
    v = TabularValue(values=np.array([0.1, 0.2]), goal_state=1, gamma=0.9)
    assert v[0] == pytest.approx(0.1)
    np.testing.assert_allclose(v[[0, 1]], [0.1, 0.2])
