"""Experiment entry points: training runs, evaluation tables, noise
sweeps, modality measurements, and a fast smoke pass.

Every mode takes a fully resolved :class:`ExperimentConfig`, writes its
artifacts under ``cfg.out_dir``, and returns a plain dict report so the
CLI and the HTTP service can share one code path.
"""

from __future__ import annotations

import copy
import csv
import os

import numpy as np

from .baseline import NoiseConfig
from .config import (
    PRESETS,
    ExperimentConfig,
    serialize_config,
    validate_config,
)
from .dynamics import DroneState
from .env import TrackingEnv
from .errors import ConfigError, ContractViolation
from .sac import SacAgent, evaluate, run_training
from .sensors import RGB_MAX_DISPLACEMENT_FRAC
from .world import (
    CameraModel,
    fast_trajectory_bounds,
    project_point,
    sample_trajectory,
    split_preset,
    target_state,
)

__all__ = [
    "hover_action",
    "measure_modality_stats",
    "measure_target_displacement",
    "run",
    "run_eval",
    "run_noise_sweep",
    "run_smoke",
    "run_train",
]

NOISE_SWEEP_ETAS = (0.0, 0.06, 0.12)


def _with(cfg: ExperimentConfig, **top_level) -> ExperimentConfig:
    out = copy.deepcopy(cfg)
    for key, value in top_level.items():
        setattr(out, key, value)
    return out


def hover_action(cfg: ExperimentConfig) -> np.ndarray:
    """Normalized action that commands exact hover thrust, zero rates."""
    dyn = cfg.dynamics
    thrust = cfg.dynamics.mass_kg * abs(cfg.dynamics.gravity_z)
    a0 = 2.0 * (thrust - dyn.f_min) / (dyn.f_max - dyn.f_min) - 1.0
    return np.array([a0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# sensor-level measurements
# ---------------------------------------------------------------------------


def measure_modality_stats(
    cfg: ExperimentConfig,
    preset: str | None = None,
    episodes: int = 5,
    steps_per_episode: int = 50,
    seed: int = 0,
) -> dict:
    """Mean events per frame and mean rgb pixel value under a hovering
    camera, i.e. with all image change driven by the target and noise."""
    probe_cfg = _with(cfg, preset=preset or cfg.preset)
    action = hover_action(probe_cfg)
    stats = {"preset": probe_cfg.preset, "episodes": episodes}

    env = TrackingEnv(probe_cfg, policy_mode="event", seed=seed)
    counts = []
    for ep in range(episodes):
        res = env.reset(seed + ep)
        for _ in range(steps_per_episode):
            if res.done:
                break
            res = env.step(action)
            # obs_array is (frames, 2, H, W); newest frame is last
            counts.append(float(res.obs_array[-1].sum()))
    stats["events_per_frame"] = float(np.mean(counts))

    env = TrackingEnv(probe_cfg, policy_mode="rgb", seed=seed)
    means = []
    for ep in range(episodes):
        res = env.reset(seed + ep)
        for _ in range(steps_per_episode):
            if res.done:
                break
            res = env.step(action)
            means.append(float(res.obs_array[-1].mean()))
    stats["rgb_mean_intensity"] = float(np.mean(means))
    return stats


def measure_target_displacement(
    cfg: ExperimentConfig,
    preset: str | None = None,
    episodes: int = 20,
    seed: int = 0,
) -> dict:
    """Per-control-step pixel displacement of the target at the tracking
    operating point.

    For every control step the camera is held at the commanded standoff
    pose (d_star ahead of the target, level attitude) and frozen for one
    control period while the target moves on; the displacement of the
    projected target center between the two instants is the inter-frame
    motion an rgb tracker has to digest. Compared against the sampling
    bound ``RGB_MAX_DISPLACEMENT_FRAC * min(W, H)`` pixels per step.

    Steps where the target is paused are excluded: a frozen target is
    trivially trackable by any modality, and pause scheduling is
    orthogonal to the speed mechanism this probe quantifies.
    """
    probe_cfg = _with(cfg, preset=preset or cfg.preset)
    traj_cfg = probe_cfg.trajectory
    if split_preset(probe_cfg.preset)[1] == "fast":
        traj_cfg = fast_trajectory_bounds(traj_cfg)
    camera = CameraModel.from_config(probe_cfg.camera)
    dt = probe_cfg.reward.control_dt_s
    episode_len = probe_cfg.reward.episode_length_s
    n_steps = min(int(episode_len / dt), 500)
    standoff = np.array([probe_cfg.reward.d_star, 0.0, 0.0])

    displacements = []
    speeds = []
    for ep in range(episodes):
        rng = np.random.default_rng(seed + ep)
        traj = sample_trajectory(rng, traj_cfg, episode_len)
        for k in range(n_steps):
            pos0, vel0, _ = target_state(traj, k * dt)
            pos1, vel1, _ = target_state(traj, (k + 1) * dt)
            if np.linalg.norm(vel0) == 0.0 or np.linalg.norm(vel1) == 0.0:
                continue  # paused target
            state = DroneState(
                position=pos0 - standoff,
                velocity=np.zeros(3),
                rotation=np.eye(3),
                t=k * dt,
            )
            u0, v0, d0 = project_point(camera, state, pos0)
            u1, v1, d1 = project_point(camera, state, pos1)
            speeds.append(float(np.linalg.norm(vel0)))
            if d0 > 0 and d1 > 0:
                displacements.append(float(np.hypot(u1 - u0, v1 - v0)))
    if not displacements:
        raise ContractViolation(
            "no moving-target steps in the displacement probe; "
            "lengthen the episode or reduce pauses"
        )
    limit = RGB_MAX_DISPLACEMENT_FRAC * min(
        probe_cfg.camera.width, probe_cfg.camera.height
    )
    mean_disp = float(np.mean(displacements))
    return {
        "preset": probe_cfg.preset,
        "mean_displacement_px": mean_disp,
        "median_displacement_px": float(np.median(displacements)),
        "rgb_limit_px": float(limit),
        "exceeds_rgb_limit": bool(mean_disp > limit),
        "mean_target_speed": float(np.mean(speeds)),
    }


# ---------------------------------------------------------------------------
# training / evaluation / sweep
# ---------------------------------------------------------------------------


def _write_resolved_config(cfg: ExperimentConfig) -> None:
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.cfg"), "w") as fh:
        fh.write(serialize_config(cfg))


def run_train(cfg: ExperimentConfig, should_stop=None, log=None) -> dict:
    validate_config(cfg)
    _write_resolved_config(cfg)
    result = run_training(cfg, should_stop=should_stop, log=log)
    first = result.rows[0] if result.rows else None
    last = result.rows[-1] if result.rows else None
    return {
        "mode": "train",
        "policy": cfg.policy,
        "preset": cfg.preset,
        "out_dir": cfg.out_dir,
        "curve_path": result.curve_path,
        "final_checkpoint": result.final_checkpoint,
        "env_steps": result.env_steps,
        "updates": result.updates,
        "skipped_updates": result.skipped_updates,
        "buffer_slots_audited": result.buffer_slots_audited,
        "stopped_early": result.stopped_early,
        "wall_time_s": result.wall_time_s,
        "untrained_eval_mean": None if first is None else first["eval_mean_return"],
        "final_eval_mean": None if last is None else last["eval_mean_return"],
        "rows": result.rows,
    }


def _load_agent(cfg: ExperimentConfig, checkpoint: str) -> SacAgent:
    if not checkpoint:
        raise ConfigError("this mode needs a checkpoint (set experiment.checkpoint)")
    if not os.path.exists(checkpoint):
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    # observation shapes are preset-independent, so probe with a concrete
    # preset even when the experiment fans out over "all"
    probe_cfg = _with(cfg, preset=PRESETS[0]) if cfg.preset == "all" else cfg
    probe = TrackingEnv(probe_cfg, seed=0)
    agent = SacAgent(
        cfg,
        probe.obs_kind,
        tuple(probe.reset(0).obs_array.shape),
        probe.action_dim,
        priv_dim=9,
        seed=cfg.seed,
    )
    agent.load(checkpoint)
    return agent


def run_eval(cfg: ExperimentConfig, log=None) -> dict:
    """Evaluate a checkpoint on one preset (or all) and write a table CSV."""
    validate_config(cfg)
    log = log or (lambda msg: None)
    agent = _load_agent(cfg, cfg.checkpoint)
    presets = list(PRESETS) if cfg.preset == "all" else [cfg.preset]
    episodes = cfg.train.eval_episodes
    os.makedirs(cfg.out_dir, exist_ok=True)
    table_path = os.path.join(cfg.out_dir, "eval_table.csv")
    rows = []
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["preset", "policy", "episodes", "mean_return", "std_return",
             "normalized_return"]
        )
        for preset in presets:
            env = TrackingEnv(_with(cfg, preset=preset), seed=cfg.seed)
            summary = evaluate(agent, env, episodes, cfg.seed)
            row = {
                "preset": preset,
                "policy": cfg.policy,
                "episodes": episodes,
                "mean_return": summary.mean,
                "std_return": summary.std,
                "normalized_return": summary.normalized_mean,
            }
            rows.append(row)
            writer.writerow([row[k] for k in row])
            log(
                f"{preset}: mean={summary.mean:.3f} std={summary.std:.3f} "
                f"normalized={summary.normalized_mean:.4f}"
            )
    return {
        "mode": "eval",
        "policy": cfg.policy,
        "table_path": table_path,
        "rows": rows,
    }


def _dump_episode_trajectory(env: TrackingEnv, agent: SacAgent, path: str, seed: int):
    res = env.reset(seed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "tracker_x", "tracker_y", "tracker_z",
             "target_x", "target_y", "target_z", "reward"]
        )
        t = 0.0
        while not res.done:
            action = agent.act(res.obs_array, deterministic=True)
            res = env.step(action)
            t = env.time_s
            tracker = env.drone_state.position
            target, _, _ = target_state(env.traj, t)
            writer.writerow(
                [t, tracker[0], tracker[1], tracker[2],
                 target[0], target[1], target[2], res.reward]
            )


def run_noise_sweep(
    cfg: ExperimentConfig,
    etas=NOISE_SWEEP_ETAS,
    episodes: int | None = None,
    should_stop=None,
    log=None,
) -> dict:
    """Evaluate a detection-baseline agent under growing detector noise.

    Trains a fresh baseline at the configured budget when no checkpoint
    is supplied; evaluation re-uses identical scene seeds per noise level
    so the comparison isolates the perturbation.
    """
    validate_config(cfg)
    log = log or (lambda msg: None)
    sweep_cfg = _with(cfg, policy="detection")
    episodes = int(episodes if episodes is not None else max(cfg.train.eval_episodes, 20))

    if sweep_cfg.checkpoint:
        agent = _load_agent(sweep_cfg, sweep_cfg.checkpoint)
        trained = {"checkpoint": sweep_cfg.checkpoint}
    else:
        log("no checkpoint given; training the detection baseline first")
        train_cfg = _with(
            sweep_cfg, out_dir=os.path.join(sweep_cfg.out_dir, "baseline")
        )
        report = run_train(train_cfg, should_stop=should_stop, log=log)
        agent = _load_agent(sweep_cfg, report["final_checkpoint"])
        trained = {
            "checkpoint": report["final_checkpoint"],
            "baseline_steps": report["env_steps"],
        }

    os.makedirs(sweep_cfg.out_dir, exist_ok=True)
    sweep_path = os.path.join(sweep_cfg.out_dir, "noise_sweep.csv")
    rows = []
    with open(sweep_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["eta", "episodes", "mean_return", "std_return", "normalized_return"]
        )
        for eta in etas:
            env = TrackingEnv(
                sweep_cfg,
                policy_mode="detection",
                noise=NoiseConfig(eta=float(eta)),
                seed=sweep_cfg.seed,
            )
            summary = evaluate(agent, env, episodes, sweep_cfg.seed)
            row = {
                "eta": float(eta),
                "episodes": episodes,
                "mean_return": summary.mean,
                "std_return": summary.std,
                "normalized_return": summary.normalized_mean,
            }
            rows.append(row)
            writer.writerow([row[k] for k in row])
            log(
                f"eta={eta}: mean={summary.mean:.3f} "
                f"normalized={summary.normalized_mean:.4f}"
            )
            _dump_episode_trajectory(
                env,
                agent,
                os.path.join(sweep_cfg.out_dir, f"trajectory_eta_{eta:g}.csv"),
                seed=int(
                    np.random.default_rng([sweep_cfg.seed, 31337]).integers(2**31)
                ),
            )
    return {
        "mode": "sweep-noise",
        "sweep_path": sweep_path,
        "etas": [float(e) for e in etas],
        "rows": rows,
        **trained,
    }


def run_smoke(cfg: ExperimentConfig, log=None) -> dict:
    """Fast end-to-end pass through every subsystem (about a minute)."""
    log = log or (lambda msg: None)
    report: dict = {"mode": "smoke", "checks": {}}

    smoke = copy.deepcopy(cfg)
    smoke.mode = "train"
    smoke.policy = "event"
    smoke.train.epochs = 1
    smoke.train.steps_per_epoch = 160
    smoke.train.warmup_steps = 64
    smoke.train.batch_size = 16
    smoke.train.buffer_capacity = 1024
    smoke.train.eval_episodes = 1
    smoke.train.workers = 1
    smoke.net.feature_dim = 32
    smoke.net.encoder_channels = (4, 8, 8, 16)
    smoke.net.head_hidden = 32
    smoke.net.critic_hidden = 32
    smoke.out_dir = os.path.join(cfg.out_dir, "smoke_train")
    validate_config(smoke)

    log("smoke: short event-mode training")
    train_report = run_train(smoke, log=log)
    report["checks"]["train_completed"] = train_report["updates"] > 0
    report["checks"]["no_skipped_updates"] = train_report["skipped_updates"] == 0
    report["train"] = {
        k: train_report[k] for k in ("env_steps", "updates", "final_checkpoint")
    }

    log("smoke: checkpoint reload + eval")
    eval_cfg = _with(
        smoke,
        checkpoint=train_report["final_checkpoint"],
        out_dir=os.path.join(cfg.out_dir, "smoke_eval"),
    )
    eval_report = run_eval(eval_cfg, log=log)
    report["checks"]["eval_ran"] = len(eval_report["rows"]) == 1

    log("smoke: modality measurements")
    stats_low = measure_modality_stats(
        cfg, preset="box-lowlight", episodes=1, steps_per_episode=10, seed=cfg.seed
    )
    disp_fast = measure_target_displacement(
        cfg, preset="box-fast", episodes=2, seed=cfg.seed
    )
    report["lowlight"] = stats_low
    report["fast"] = disp_fast
    report["checks"]["lowlight_rgb_dim"] = stats_low["rgb_mean_intensity"] < 0.25
    report["checks"]["events_alive"] = stats_low["events_per_frame"] >= 1.0

    log("smoke: detection environment + toy environment")
    det_env = TrackingEnv(cfg, policy_mode="detection", noise=NoiseConfig(0.06), seed=1)
    res = det_env.reset(1)
    for _ in range(20):
        if res.done:
            break
        res = det_env.step(hover_action(cfg))
    report["checks"]["detection_env"] = bool(np.isfinite(res.reward))

    from .toy import ToyTrackingEnv

    toy = ToyTrackingEnv(cfg.reward, seed=2)
    tres = toy.reset(2)
    for _ in range(20):
        if tres.done:
            break
        tres = toy.step(np.zeros(3))
    report["checks"]["toy_env"] = bool(np.isfinite(tres.reward))

    report["ok"] = all(report["checks"].values())
    return report


def run(cfg: ExperimentConfig, should_stop=None, log=None) -> dict:
    """Dispatch on cfg.mode; returns a JSON-friendly report dict."""
    validate_config(cfg)
    if cfg.mode == "train":
        return run_train(cfg, should_stop=should_stop, log=log)
    if cfg.mode == "eval":
        return run_eval(cfg, log=log)
    if cfg.mode == "sweep-noise":
        return run_noise_sweep(cfg, should_stop=should_stop, log=log)
    if cfg.mode == "smoke":
        return run_smoke(cfg, log=log)
    raise ConfigError(f"unknown mode {cfg.mode!r}")
