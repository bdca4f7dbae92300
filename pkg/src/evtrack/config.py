"""Configuration dataclasses, INI parsing, and scenario presets.

Every tunable in the package lives in one of the dataclasses below, grouped
by subsystem. A full experiment is described by :class:`ExperimentConfig`,
which nests one instance of each group. Configs serialize to INI text
(section per group) and parse back to an identical object; unknown sections
or keys are hard errors rather than silent passthroughs.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import math
from dataclasses import dataclass, field, fields

from .errors import ConfigError

# ---------------------------------------------------------------------------
# subsystem configs
# ---------------------------------------------------------------------------


@dataclass
class DynamicsConfig:
    """Rigid-body parameters of the tracker quadrotor."""

    mass_kg: float = 1.0
    gravity_z: float = -9.8          # world-frame z component; x, y are zero
    f_min: float = 0.0               # collective thrust bounds, newtons
    f_max: float = 18.0
    omega_max: float = 3.5           # body-rate bound, rad/s, per axis
    drag_coeff: float = 0.0          # linear drag, N per (m/s)


@dataclass
class CameraConfig:
    """Pinhole camera mounted on the tracker body (identity mount)."""

    width: int = 64
    height: int = 64
    hfov_rad: float = math.pi / 2    # horizontal field of view


@dataclass
class WorldConfig:
    """Arena and target geometry."""

    box_size_m: float = 10.0
    target_radius_m: float = 0.15
    noise_scale: float = 3.0         # ray-direction to noise-lattice scale


@dataclass
class TrajectoryConfig:
    """Sampling bounds for sinusoidal target trajectories."""

    amp_min_m: float = 0.5
    amp_max_m: float = 2.0
    freq_min_rad: float = 0.2        # per-axis angular frequency bounds
    freq_max_rad: float = 1.0
    base_xy_m: float = 1.0           # base point drawn from [-b, b]^2 ...
    base_z_min_m: float = 1.5        # ... times this altitude band
    base_z_max_m: float = 2.5
    pause_count_max: int = 3
    pause_min_s: float = 0.5
    pause_max_s: float = 2.0
    speed_factor: float = 1.0        # global frequency multiplier, every preset
    fast_factor: float = 3.0         # extra frequency multiplier, -fast presets


@dataclass
class SensorConfig:
    """Event camera model parameters."""

    contrast_threshold: float = 0.2  # log-intensity step per event
    delta_t_s: float = 0.005         # event-frame stacking window
    refractory_s: float = 0.0        # per-pixel dead time after an event
    noise_rate_hz: float = 0.0       # background noise events per pixel
    log_eps: float = 1e-3            # L = log(I + log_eps)


@dataclass
class RewardConfig:
    """Shaped tracking reward and episode timing."""

    d_star: float = 0.2              # desired standoff distance, m
    alpha: float = 0.4               # action-smoothness (speed) penalty weight
    k_c: float = 10.0                # collision penalty magnitude
    d_min: float = 0.1               # collision radius, m
    episode_length_s: float = 40.0
    control_dt_s: float = 0.02


@dataclass
class EnvConfig:
    """Episode mechanics that are not part of the reward itself."""

    lost_patience_s: float = 0.5     # continuous out-of-view time before done
    reset_jitter_m: float = 0.02     # uniform per-axis jitter on initial offset
    frames_per_obs: int = 3          # observation queue depth
    min_target_px: float = 0.0       # target counts as in view only while its
                                     # projected disc radius is at least this
                                     # many pixels; 0 disables the limit


@dataclass
class NetConfig:
    """Network sizes and initialization."""

    feature_dim: int = 512
    encoder_channels: tuple = (16, 32, 64, 128)
    head_hidden: int = 512
    critic_hidden: int = 512
    critic_tanh: bool = False        # bounded critic output (off: raw scalar)
    baseline_hidden: int = 256
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    final_scale: float = 0.01        # gain on the last policy layer


@dataclass
class TrainConfig:
    """Soft actor-critic training loop parameters."""

    epochs: int = 70
    steps_per_epoch: int = 50000
    eval_episodes: int = 6
    batch_size: int = 64
    train_every: int = 8             # env steps (aggregate) per update cycle
    updates_per_cycle: int = 1
    lr: float = 3e-4
    gamma: float = 0.99
    tau: float = 0.005               # Polyak coefficient for target sync
    workers: int = 7
    entropy_target: float = -4.0
    buffer_capacity: int = 10000
    snapshot_interval: int = 500     # env steps between worker policy refreshes
    warmup_steps: int = 1000         # random-action steps before SAC acts
    warmup_mode: str = "uniform"     # "uniform" over the action box, or
                                     # "hover": noise around the hover point
    alpha_init: float = 0.2
    alpha_lr: float = 3e-4


MODES = ("train", "eval", "sweep-noise", "smoke")
POLICIES = ("event", "rgb", "detection")
PRESETS = (
    "box-normal",
    "box-lowlight",
    "box-fast",
    "darpa-normal",
    "darpa-lowlight",
    "darpa-fast",
)


@dataclass
class ExperimentConfig:
    """A complete, self-contained experiment description."""

    mode: str = "train"
    policy: str = "event"
    preset: str = "box-normal"
    seed: int = 0
    out_dir: str = "runs/exp"
    checkpoint: str = ""             # input checkpoint for eval / sweep-noise

    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


# sections of the INI file, in emission order; "experiment" holds the
# top-level scalars of ExperimentConfig
_SECTIONS = {
    "dynamics": DynamicsConfig,
    "camera": CameraConfig,
    "world": WorldConfig,
    "trajectory": TrajectoryConfig,
    "sensors": SensorConfig,
    "reward": RewardConfig,
    "env": EnvConfig,
    "net": NetConfig,
    "train": TrainConfig,
}


def desk_config() -> ExperimentConfig:
    """Default profile sized for a single workstation core."""
    cfg = ExperimentConfig()
    cfg.train.epochs = 10
    cfg.train.steps_per_epoch = 5000
    cfg.train.workers = 4
    # a 0.15 m target subtends under one pixel beyond ~4.8 m at 64 px / 90
    # degrees; treating it as out of view there keeps episode truncation
    # consistent with what any detector or event sensor could resolve
    cfg.env.min_target_px = 1.0
    return cfg


def paper_scale_config() -> ExperimentConfig:
    """Full-scale profile (255x255 frames, 70x50k steps, 7 workers)."""
    cfg = ExperimentConfig()
    cfg.camera.width = 255
    cfg.camera.height = 255
    cfg.dynamics.f_min = -18.0
    return cfg


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check cross-field invariants; returns the config for chaining."""
    _require(cfg.mode in MODES, f"mode must be one of {MODES}, got {cfg.mode!r}")
    _require(
        cfg.policy in POLICIES,
        f"policy must be one of {POLICIES}, got {cfg.policy!r}",
    )
    # "all" fans an evaluation out over every preset; environments that
    # need a concrete scene re-validate via split_preset at reset time
    _require(
        cfg.preset in PRESETS or cfg.preset == "all",
        f"preset must be one of {PRESETS} or 'all', got {cfg.preset!r}",
    )

    d = cfg.dynamics
    _require(d.mass_kg > 0, "mass_kg must be positive")
    _require(d.f_min <= d.f_max, "f_min must not exceed f_max")
    _require(d.omega_max > 0, "omega_max must be positive")
    _require(d.drag_coeff >= 0, "drag_coeff must be non-negative")

    c = cfg.camera
    _require(c.width >= 16 and c.height >= 16, "camera must be at least 16x16")
    _require(0 < c.hfov_rad < math.pi, "hfov_rad must lie in (0, pi)")

    w = cfg.world
    _require(w.box_size_m > 0, "box_size_m must be positive")
    _require(w.target_radius_m > 0, "target_radius_m must be positive")

    t = cfg.trajectory
    _require(0 < t.amp_min_m <= t.amp_max_m, "bad amplitude range")
    _require(0 < t.freq_min_rad <= t.freq_max_rad, "bad frequency range")
    _require(t.pause_count_max >= 0, "pause_count_max must be >= 0")
    _require(0 < t.pause_min_s <= t.pause_max_s, "bad pause duration range")
    _require(t.speed_factor > 0, "speed_factor must be positive")
    _require(t.fast_factor >= 1.0, "fast_factor must be >= 1")

    s = cfg.sensors
    _require(s.contrast_threshold > 0, "contrast_threshold must be positive")
    _require(s.delta_t_s > 0, "delta_t_s must be positive")
    _require(s.refractory_s >= 0, "refractory_s must be non-negative")
    _require(s.noise_rate_hz >= 0, "noise_rate_hz must be non-negative")
    _require(s.log_eps > 0, "log_eps must be positive")

    r = cfg.reward
    _require(r.d_star > 0, "d_star must be positive")
    _require(r.alpha >= 0, "alpha must be non-negative")
    _require(r.k_c >= 0, "k_c must be non-negative")
    _require(0 < r.d_min < r.d_star, "need 0 < d_min < d_star")
    _require(r.episode_length_s > 0, "episode_length_s must be positive")
    _require(r.control_dt_s > 0, "control_dt_s must be positive")
    n_sub = r.control_dt_s / s.delta_t_s
    _require(
        abs(n_sub - round(n_sub)) < 1e-9 and round(n_sub) >= 1,
        "control_dt_s must be a whole multiple of delta_t_s",
    )

    e = cfg.env
    _require(e.lost_patience_s >= 0, "lost_patience_s must be non-negative")
    _require(e.reset_jitter_m >= 0, "reset_jitter_m must be non-negative")
    _require(e.frames_per_obs >= 1, "frames_per_obs must be >= 1")
    _require(e.min_target_px >= 0, "min_target_px must be non-negative")

    n = cfg.net
    _require(n.feature_dim >= 1, "feature_dim must be >= 1")
    _require(len(n.encoder_channels) >= 1, "encoder_channels must be non-empty")
    _require(all(ch >= 1 for ch in n.encoder_channels), "bad encoder_channels")
    _require(n.log_std_min < n.log_std_max, "bad log_std clamp interval")

    tr = cfg.train
    _require(tr.epochs >= 1, "epochs must be >= 1")
    _require(tr.steps_per_epoch >= 1, "steps_per_epoch must be >= 1")
    _require(tr.eval_episodes >= 1, "eval_episodes must be >= 1")
    _require(tr.batch_size >= 1, "batch_size must be >= 1")
    _require(tr.train_every >= 1, "train_every must be >= 1")
    _require(tr.updates_per_cycle >= 1, "updates_per_cycle must be >= 1")
    _require(tr.lr > 0 and tr.alpha_lr > 0, "learning rates must be positive")
    _require(0 < tr.gamma <= 1, "gamma must lie in (0, 1]")
    _require(0 < tr.tau <= 1, "tau must lie in (0, 1]")
    _require(tr.workers >= 1, "workers must be >= 1")
    _require(tr.buffer_capacity >= tr.batch_size, "buffer smaller than batch")
    _require(tr.snapshot_interval >= 1, "snapshot_interval must be >= 1")
    _require(tr.warmup_steps >= 0, "warmup_steps must be non-negative")
    _require(
        tr.warmup_mode in ("uniform", "hover"),
        f"warmup_mode must be 'uniform' or 'hover', got {tr.warmup_mode!r}",
    )
    _require(tr.alpha_init > 0, "alpha_init must be positive")
    return cfg


# ---------------------------------------------------------------------------
# INI serialization
# ---------------------------------------------------------------------------


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(text: str, ftype, key: str):
    text = text.strip()
    try:
        if ftype is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if ftype is int:
            return int(text)
        if ftype is float:
            return float(text)
        if ftype is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {text!r}") from exc


def serialize_config(cfg: ExperimentConfig) -> str:
    """Render a config as INI text; inverse of :func:`parse_config`."""
    out = io.StringIO()
    out.write("[experiment]\n")
    for f in fields(ExperimentConfig):
        if f.name in _SECTIONS:
            continue
        out.write(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n")
    for section, _ in _SECTIONS.items():
        sub = getattr(cfg, section)
        out.write(f"\n[{section}]\n")
        for f in fields(sub):
            out.write(f"{f.name} = {_format_value(getattr(sub, f.name))}\n")
    return out.getvalue()


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse INI text into an :class:`ExperimentConfig`.

    Starts from ``base`` (or package defaults) and applies every key present.
    Unknown sections or keys raise :class:`ConfigError`.
    """
    cfg = dataclasses.replace(base) if base is not None else ExperimentConfig()
    # replace() is shallow; deep-copy the nested groups so the base survives
    for section in _SECTIONS:
        setattr(cfg, section, dataclasses.replace(getattr(cfg, section)))

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    top_fields = {
        f.name: f for f in fields(ExperimentConfig) if f.name not in _SECTIONS
    }
    for section in parser.sections():
        if section == "experiment":
            for key, raw in parser.items(section):
                if key not in top_fields:
                    raise ConfigError(f"unknown key [experiment] {key}")
                ftype = top_fields[key].type
                pytype = {"str": str, "int": int, "float": float}.get(ftype, str)
                setattr(cfg, key, _parse_value(raw, pytype, f"[experiment] {key}"))
        elif section in _SECTIONS:
            sub = getattr(cfg, section)
            sub_fields = {f.name: f for f in fields(sub)}
            for key, raw in parser.items(section):
                if key not in sub_fields:
                    raise ConfigError(f"unknown key [{section}] {key}")
                current = getattr(sub, key)
                pytype = type(current)
                setattr(sub, key, _parse_value(raw, pytype, f"[{section}] {key}"))
        else:
            raise ConfigError(f"unknown section [{section}]")
    return cfg


def load_config(path: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base=base)


def apply_overrides(cfg: ExperimentConfig, pairs: list[str]) -> ExperimentConfig:
    """Apply ``section.key=value`` override strings (CLI ``--set``)."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like section.key=value: {pair!r}")
        lhs, value = pair.split("=", 1)
        lhs = lhs.strip()
        if "." in lhs:
            section, key = lhs.split(".", 1)
        else:
            section, key = "experiment", lhs
        snippet = f"[{section}]\n{key} = {value}\n"
        cfg = parse_config(snippet, base=cfg)
    return cfg
