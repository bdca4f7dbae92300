"""End-to-end tests for the experiment entry points (train / eval /
noise sweep / smoke) and the sensor-level measurement probes."""

import csv
import os

import numpy as np
import pytest

from evtrack.config import PRESETS, desk_config
from evtrack.env import TrackingEnv
from evtrack.errors import ConfigError
from evtrack.experiments import (
    hover_action,
    measure_modality_stats,
    measure_target_displacement,
    run,
    run_eval,
    run_noise_sweep,
    run_smoke,
    run_train,
)


def _tiny_cfg(out_dir, policy="detection", preset="box-normal"):
    cfg = desk_config()
    cfg.mode = "train"
    cfg.policy = policy
    cfg.preset = preset
    cfg.seed = 0
    cfg.out_dir = str(out_dir)
    cfg.camera.width = 24
    cfg.camera.height = 24
    cfg.reward.episode_length_s = 1.0  # 50 control steps per episode
    cfg.train.epochs = 1
    cfg.train.steps_per_epoch = 96
    cfg.train.batch_size = 16
    cfg.train.warmup_steps = 16
    cfg.train.buffer_capacity = 512
    cfg.train.eval_episodes = 2
    cfg.train.workers = 1
    cfg.train.snapshot_interval = 64
    cfg.net.feature_dim = 16
    cfg.net.encoder_channels = (4, 4, 8, 8)
    cfg.net.head_hidden = 16
    cfg.net.critic_hidden = 16
    cfg.net.baseline_hidden = 16
    return cfg


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One tiny detection-policy training run shared by the read-only tests."""
    cfg = _tiny_cfg(tmp_path_factory.mktemp("train"))
    report = run_train(cfg)
    return cfg, report


# ---------------------------------------------------------------------------
# measurement probes
# ---------------------------------------------------------------------------


def test_hover_action_is_an_equilibrium():
    cfg = _tiny_cfg("unused")
    env = TrackingEnv(cfg, policy_mode="detection", seed=0)
    env.reset(3)
    p0 = env.drone_state.position.copy()
    a = hover_action(cfg)
    for _ in range(25):
        env.step(a)
    np.testing.assert_allclose(env.drone_state.position, p0, atol=1e-9)
    np.testing.assert_allclose(env.drone_state.velocity, 0.0, atol=1e-9)


def test_modality_stats_lowlight_is_dim_but_still_produces_events():
    cfg = _tiny_cfg("unused")
    low = measure_modality_stats(
        cfg, preset="box-lowlight", episodes=1, steps_per_episode=10
    )
    norm = measure_modality_stats(
        cfg, preset="box-normal", episodes=1, steps_per_episode=10
    )
    assert low["rgb_mean_intensity"] < norm["rgb_mean_intensity"]
    assert low["events_per_frame"] >= 1.0
    assert norm["events_per_frame"] >= 1.0
    assert low["preset"] == "box-lowlight"


def test_displacement_criterion_separates_fast_from_normal():
    cfg = _tiny_cfg("unused")
    fast = measure_target_displacement(cfg, preset="box-fast", episodes=3)
    norm = measure_target_displacement(cfg, preset="box-normal", episodes=3)
    assert fast["rgb_limit_px"] == pytest.approx(24 / 16)
    assert fast["mean_displacement_px"] > norm["mean_displacement_px"]
    assert fast["exceeds_rgb_limit"] is True
    assert norm["exceeds_rgb_limit"] is False
    assert fast["mean_target_speed"] > 2.0 * norm["mean_target_speed"]


# ---------------------------------------------------------------------------
# train / eval / sweep / smoke entry points
# ---------------------------------------------------------------------------


def test_run_train_writes_artifacts_and_coherent_report(trained):
    cfg, report = trained
    assert report["mode"] == "train"
    assert os.path.exists(os.path.join(cfg.out_dir, "config.cfg"))
    assert os.path.exists(report["curve_path"])
    assert os.path.exists(report["final_checkpoint"])
    assert report["env_steps"] > 0 and report["updates"] > 0
    assert len(report["rows"]) == cfg.train.epochs + 1  # untrained row included
    assert isinstance(report["untrained_eval_mean"], float)
    assert isinstance(report["final_eval_mean"], float)


def test_run_eval_fans_out_over_all_presets(trained, tmp_path):
    cfg, report = trained
    eval_cfg = _tiny_cfg(tmp_path)
    eval_cfg.mode = "eval"
    eval_cfg.preset = "all"
    eval_cfg.checkpoint = report["final_checkpoint"]
    eval_cfg.train.eval_episodes = 1
    out = run_eval(eval_cfg)
    assert [row["preset"] for row in out["rows"]] == list(PRESETS)
    with open(out["table_path"]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(PRESETS)
    assert all(np.isfinite(float(r["mean_return"])) for r in rows)


def test_run_eval_requires_a_checkpoint(tmp_path):
    cfg = _tiny_cfg(tmp_path)
    cfg.mode = "eval"
    with pytest.raises(ConfigError, match="checkpoint"):
        run_eval(cfg)
    cfg.checkpoint = str(tmp_path / "missing.ckpt")
    with pytest.raises(ConfigError, match="not found"):
        run_eval(cfg)


def test_run_noise_sweep_trains_a_baseline_when_unset(tmp_path):
    cfg = _tiny_cfg(tmp_path)
    cfg.mode = "sweep-noise"
    out = run_noise_sweep(cfg, etas=(0.0, 0.12), episodes=2)
    assert out["etas"] == [0.0, 0.12]
    assert "baseline_steps" in out
    assert os.path.isdir(os.path.join(cfg.out_dir, "baseline"))
    with open(out["sweep_path"]) as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["eta"]) for r in rows] == [0.0, 0.12]
    assert all(int(r["episodes"]) == 2 for r in rows)
    for eta in ("0", "0.12"):
        assert os.path.exists(
            os.path.join(cfg.out_dir, f"trajectory_eta_{eta}.csv")
        )


def test_run_noise_sweep_reuses_a_given_checkpoint(trained, tmp_path):
    cfg, report = trained
    sweep_cfg = _tiny_cfg(tmp_path)
    sweep_cfg.mode = "sweep-noise"
    sweep_cfg.checkpoint = report["final_checkpoint"]
    out = run_noise_sweep(sweep_cfg, etas=(0.06,), episodes=1)
    assert out["checkpoint"] == report["final_checkpoint"]
    assert "baseline_steps" not in out
    assert not os.path.isdir(os.path.join(sweep_cfg.out_dir, "baseline"))


def test_run_smoke_passes_every_check(tmp_path):
    cfg = _tiny_cfg(tmp_path, policy="event")
    cfg.mode = "smoke"
    out = run_smoke(cfg)
    assert out["ok"], out["checks"]
    assert out["lowlight"]["events_per_frame"] >= 1.0
    assert out["fast"]["exceeds_rgb_limit"] is True


def test_run_dispatch_rejects_unknown_mode(tmp_path):
    cfg = _tiny_cfg(tmp_path)
    cfg.mode = "nonsense"
    with pytest.raises(ConfigError, match="mode"):
        run(cfg)
