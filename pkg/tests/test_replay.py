import numpy as np
import pytest

from curioplan.replay import RelabelConfig, ReplayBuffer


def fill(buf, n_traj=3, length=10, rng=None, dim=None):
    rng = rng or np.random.default_rng(0)
    dim = dim or buf.state_dim
    for _ in range(n_traj):
        states = rng.normal(size=(length + 1, dim))
        actions = rng.normal(size=(length, buf.action_dim))
        buf.append_trajectory(states, actions)
    return buf


def test_append_counts_transitions():
    buf = ReplayBuffer(2, 1)
    buf.append_trajectory(np.zeros((3, 2)), np.zeros((2, 1)))
    assert buf.n_transitions == 2
    assert buf.n_states == 3


def test_append_rejects_short_and_mismatched():
    buf = ReplayBuffer(2, 1)
    with pytest.raises(ValueError):
        buf.append_trajectory(np.zeros((1, 2)), np.zeros((0, 1)))
    with pytest.raises(ValueError):
        buf.append_trajectory(np.zeros((4, 2)), np.zeros((4, 1)))


def test_capacity_evicts_oldest():
    buf = ReplayBuffer(1, 1, capacity=25)
    for i in range(5):
        states = np.full((11, 1), float(i))
        buf.append_trajectory(states, np.zeros((10, 1)))
    assert buf.n_transitions <= 25
    stored = {float(s[0, 0]) for s, _ in buf.trajectories}
    assert 0.0 not in stored  # oldest dropped
    assert 4.0 in stored


def test_positive_tau_one_gives_reward():
    buf = fill(ReplayBuffer(3, 2), rng=np.random.default_rng(1))
    cfg = RelabelConfig(p_g=1.0, p_geo=1.0)  # geometric(1) is always 1
    batch = buf.sample_relabeled(cfg, 256, np.random.default_rng(2), return_info=True)
    assert np.all(batch.tau == 1)
    assert np.all(batch.r == 1.0)
    assert np.all(batch.done)


def test_positive_far_tau_gives_zero_reward():
    # distinct states everywhere: tau > 1 never matches the next state
    buf = fill(ReplayBuffer(3, 2), rng=np.random.default_rng(3))
    cfg = RelabelConfig(p_g=1.0, p_geo=1e-9)  # tau huge, clamped to trajectory end
    batch = buf.sample_relabeled(cfg, 512, np.random.default_rng(4), return_info=True)
    far = batch.tau > 1
    assert far.any()
    assert np.all(batch.r[far] == 0.0)
    assert np.all(batch.r[~far] == 1.0)  # clamping at the end forces tau == 1


def test_negative_goals_zero_reward_on_distinct_states():
    buf = fill(ReplayBuffer(3, 2), rng=np.random.default_rng(5))
    cfg = RelabelConfig(p_g=1e-12, p_geo=0.5)
    batch = buf.sample_relabeled(cfg, 512, np.random.default_rng(6), return_info=True)
    assert not batch.positive.any()
    # a uniform goal can coincidentally equal the next state; reward must
    # then fire regardless of the sampling branch
    match = (batch.g == np.asarray(cfg.project(batch.s_next))).all(axis=1)
    np.testing.assert_array_equal(batch.r == 1.0, match)


def test_reward_implies_exact_goal_match():
    buf = fill(ReplayBuffer(4, 2), n_traj=5, rng=np.random.default_rng(7))
    cfg = RelabelConfig(p_g=0.75, p_geo=0.2)
    rng = np.random.default_rng(8)
    for _ in range(10):
        batch = buf.sample_relabeled(cfg, 256, rng)
        hit = batch.r == 1.0
        assert np.all(batch.g[hit] == batch.s_next[hit])


def test_projection_applied():
    buf = fill(ReplayBuffer(4, 1), rng=np.random.default_rng(9))
    cfg = RelabelConfig(p_g=1.0, p_geo=1.0, goal_projection=lambda s: s[..., :2])
    batch = buf.sample_relabeled(cfg, 64, np.random.default_rng(10))
    assert batch.g.shape == (64, 2)
    assert np.all(batch.r == 1.0)


def test_relabel_config_validation():
    with pytest.raises(ValueError):
        RelabelConfig(p_g=0.0)
    with pytest.raises(ValueError):
        RelabelConfig(p_geo=1.5)


def test_empty_buffer_errors():
    buf = ReplayBuffer(2, 1)
    with pytest.raises(ValueError):
        buf.sample_relabeled(RelabelConfig(), 8, np.random.default_rng(0))


def test_save_load_roundtrip(tmp_path):
    buf = fill(ReplayBuffer(3, 2), n_traj=4, length=7, rng=np.random.default_rng(11))
    path = tmp_path / "buffer.grb"
    buf.save(path)
    loaded = ReplayBuffer.load(path)
    assert loaded.state_dim == 3 and loaded.action_dim == 2
    assert len(loaded.trajectories) == len(buf.trajectories)
    for (s0, a0), (s1, a1) in zip(buf.trajectories, loaded.trajectories):
        np.testing.assert_array_equal(s0, s1)
        np.testing.assert_array_equal(a0, a1)


def test_load_rejects_truncated(tmp_path):
    buf = fill(ReplayBuffer(3, 2), rng=np.random.default_rng(12))
    path = tmp_path / "buffer.grb"
    buf.save(path)
    data = path.read_bytes()
    (tmp_path / "cut.grb").write_bytes(data[: len(data) - 9])
    with pytest.raises(ValueError, match="truncated"):
        ReplayBuffer.load(tmp_path / "cut.grb")


def test_load_rejects_bad_magic_and_dims(tmp_path):
    buf = fill(ReplayBuffer(3, 2), rng=np.random.default_rng(13))
    path = tmp_path / "buffer.grb"
    buf.save(path)
    with pytest.raises(ValueError, match="state_dim"):
        ReplayBuffer.load(path, state_dim=5)
    bad = tmp_path / "bad.grb"
    bad.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ValueError, match="magic"):
        ReplayBuffer.load(bad)
