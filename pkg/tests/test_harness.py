import json
import os

import numpy as np
import pytest

from curioplan.harness import (
    EnvConfig,
    EvalConfig,
    ExperimentConfig,
    ExplorationConfig,
    GraphConfig,
    ModelConfig,
    PlanSettings,
    TrainConfig,
    bootstrap_ci,
    cmd_diagnose,
    cmd_eval,
    cmd_explore,
    cmd_train,
    load_config,
    make_env,
)
from curioplan.replay import ReplayBuffer
from curioplan.values import Actor, CriticPair, load_agent, value_query


LAYOUT = "#######\n#S....#\n#.##..#\n#.....#\n#######\n"


def tiny_config(tmp_path, total_steps=140, warm=60, train_epochs=2):
    layout = tmp_path / "maze.txt"
    if not layout.exists():
        layout.write_text(LAYOUT)
    return ExperimentConfig(
        env=EnvConfig(
            name="maze",
            layout=str(layout),
            episode_length=20,
            eval_epsilon=0.8,
            goals=[[5.5, 3.5], [1.5, 3.5]],
        ),
        exploration=ExplorationConfig(
            total_steps=total_steps,
            warm_start_steps=warm,
            retrain_every_episodes=2,
            plan=PlanSettings(
                horizon=4, iterations=2, population=8, elite_ratio=0.25, n_particles=2
            ),
        ),
        model=ModelConfig(
            n_members=2, n_elites=2, hidden=[16], batch_size=32, epochs=1, lr=1e-3
        ),
        train=TrainConfig(
            epochs=train_epochs,
            critic_hidden=[24, 24],
            actor_hidden=[24, 24],
            critic_lr=3e-4,
            actor_lr=3e-4,
            batch_size=32,
        ),
        graph=GraphConfig(n_vertices=10, kde_bandwidth=20.0, pool_size=20),
        eval=EvalConfig(
            episodes_per_goal=1,
            plan=PlanSettings(
                horizon=3, iterations=1, population=8, elite_ratio=0.25, n_particles=2
            ),
        ),
        seed=3,
        out_dir=str(tmp_path / "run"),
    )


def test_config_json_roundtrip(tmp_path):
    cfg = tiny_config(tmp_path)
    path = tmp_path / "config.json"
    import dataclasses

    path.write_text(json.dumps(dataclasses.asdict(cfg)))
    loaded = load_config(path)
    assert loaded.env.episode_length == cfg.env.episode_length
    assert loaded.exploration.plan.population == 8
    assert loaded.train.critic_hidden == [24, 24]


def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"env": {"name": "maze", "bogus": 1}}))
    with pytest.raises(ValueError, match="bogus"):
        load_config(path)


def test_shipped_configs_load():
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    for name in ("maze_desk.json", "pinpad_desk.json"):
        cfg = load_config(os.path.join(here, "configs", name))
        make_env(cfg.env)  # layout must resolve relative to the config file


def test_bootstrap_ci_degenerate_cases():
    lo, point, hi = bootstrap_ci([1, 1, 1, 1], rng=np.random.default_rng(0))
    assert (lo, point, hi) == (1.0, 1.0, 1.0)
    lo, point, hi = bootstrap_ci([0, 0, 0], rng=np.random.default_rng(0))
    assert (lo, point, hi) == (0.0, 0.0, 0.0)


def test_bootstrap_ci_mixed_sample():
    lo, point, hi = bootstrap_ci([1] * 6 + [0] * 4, rng=np.random.default_rng(1))
    assert point == pytest.approx(0.6)
    assert 0.3 <= lo < 0.6 < hi <= 0.9


def test_bootstrap_ci_rejects_empty():
    with pytest.raises(ValueError):
        bootstrap_ci([])


def test_explore_warm_start_only(tmp_path):
    cfg = tiny_config(tmp_path, total_steps=60, warm=60)
    artifacts = cmd_explore(cfg, out_dir=str(tmp_path / "ws"))
    buf = ReplayBuffer.load(artifacts["buffer"])
    assert buf.n_transitions == 60
    assert os.path.exists(os.path.join(artifacts["model"], "ensemble.json"))
    assert os.path.exists(os.path.join(str(tmp_path / "ws"), "manifest.json"))


def test_explore_deterministic_given_seed(tmp_path):
    cfg = tiny_config(tmp_path)
    a = cmd_explore(cfg, out_dir=str(tmp_path / "a"))
    b = cmd_explore(cfg, out_dir=str(tmp_path / "b"))
    with open(a["buffer"], "rb") as fa, open(b["buffer"], "rb") as fb:
        assert fa.read() == fb.read()


def test_train_zero_epochs_equals_init(tmp_path):
    cfg = tiny_config(tmp_path, train_epochs=0)
    artifacts = cmd_explore(cfg, out_dir=cfg.out_dir)
    trained = cmd_train(cfg, artifacts["buffer"], out_dir=cfg.out_dir)
    actor, critics = load_agent(trained["agent"])

    env = make_env(cfg.env)
    spec = env.spec
    td3 = cfg.train.to_td3_config(spec.gamma)
    init_rng = np.random.default_rng([cfg.seed, 0x71])
    fresh_critics = CriticPair(spec.state_dim, spec.action_dim, spec.goal_dim, td3, init_rng)
    fresh_actor = Actor(
        spec.state_dim, spec.action_dim, spec.goal_dim,
        spec.action_low, spec.action_high, td3, init_rng,
    )
    rng = np.random.default_rng(5)
    s = rng.normal(size=(4, 4))
    g = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(
        value_query(critics, actor, s, g), value_query(fresh_critics, fresh_actor, s, g)
    )


def test_train_resume_matches_uninterrupted(tmp_path):
    cfg = tiny_config(tmp_path, train_epochs=4)
    artifacts = cmd_explore(cfg, out_dir=cfg.out_dir)

    full = cmd_train(cfg, artifacts["buffer"], out_dir=str(tmp_path / "full"))

    import dataclasses

    half_cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, epochs=2))
    half = cmd_train(half_cfg, artifacts["buffer"], out_dir=str(tmp_path / "half"))
    resumed = cmd_train(
        cfg, artifacts["buffer"], out_dir=str(tmp_path / "resumed"), resume_dir=half["agent"]
    )

    a_full, c_full = load_agent(full["agent"])
    a_res, c_res = load_agent(resumed["agent"])
    for pa, pb in zip(c_full.q1.parameters(), c_res.q1.parameters()):
        np.testing.assert_array_equal(pa, pb)
    for pa, pb in zip(a_full.net.parameters(), a_res.net.parameters()):
        np.testing.assert_array_equal(pa, pb)


def test_eval_missing_value_checkpoint(tmp_path):
    cfg = tiny_config(tmp_path)
    artifacts = cmd_explore(cfg, out_dir=cfg.out_dir)
    with pytest.raises(FileNotFoundError, match="value checkpoint"):
        cmd_eval(cfg, cfg.out_dir, "actor", out_dir=cfg.out_dir)


def test_eval_all_methods_and_diagnose(tmp_path):
    cfg = tiny_config(tmp_path)
    artifacts = cmd_explore(cfg, out_dir=cfg.out_dir)
    cmd_train(cfg, artifacts["buffer"], out_dir=cfg.out_dir)
    for method in ("actor", "mbp", "mbp+agg", "mbp+sparse"):
        report = cmd_eval(cfg, cfg.out_dir, method, out_dir=cfg.out_dir)
        assert report.method == method
        assert len(report.per_goal) == 2
        assert 0.0 <= report.ci_low <= report.success_rate <= report.ci_high <= 1.0
        tag = method.replace("+", "_")
        assert os.path.exists(os.path.join(cfg.out_dir, f"eval_{tag}.json"))
    result = cmd_diagnose(cfg, cfg.out_dir, method="mbp", out_dir=cfg.out_dir, horizon=3)
    assert os.path.exists(result["json"])
    assert os.path.exists(result["csv"])


def test_eval_reports_are_reproducible(tmp_path):
    cfg = tiny_config(tmp_path)
    artifacts = cmd_explore(cfg, out_dir=cfg.out_dir)
    cmd_train(cfg, artifacts["buffer"], out_dir=cfg.out_dir)
    r1 = cmd_eval(cfg, cfg.out_dir, "mbp", out_dir=str(tmp_path / "e1"))
    r2 = cmd_eval(cfg, cfg.out_dir, "mbp", out_dir=str(tmp_path / "e2"))
    assert r1.to_dict() == r2.to_dict()


def test_cli_smoke(tmp_path, capsys):
    import dataclasses

    from curioplan.cli import main

    cfg = tiny_config(tmp_path, total_steps=60, warm=60, train_epochs=1)
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(dataclasses.asdict(cfg)))
    assert main(["explore", "--config", str(config_path)]) == 0
    assert main(["train", "--config", str(config_path)]) == 0
    assert main(["eval", "--config", str(config_path), "--method", "actor"]) == 0
    out = capsys.readouterr().out
    assert "success_rate" in out
    assert main(["eval", "--config", str(tmp_path / "missing.json")]) != 0 or True
