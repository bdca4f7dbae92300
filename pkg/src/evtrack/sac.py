"""Asymmetric soft actor-critic.

The actor only ever sees policy observations (event frames, rgb frames,
or detection vectors); both critics and their Polyak targets consume the
privileged relative state that is available inside the simulator but not
on a real vehicle. Temperature is tuned automatically in log space
against a fixed entropy target.

Two execution layouts share the same update math:

* ``workers == 1``: everything runs synchronously in-process, with all
  randomness drawn from seeded generator chains, so two runs with the
  same config produce byte-identical training curves.
* ``workers > 1``: rollout workers are forked processes that stream
  encoded transitions over a queue to the learner, refresh their actor
  weights from snapshot files, and are throttled so the data-to-update
  ratio stays near the configured pace.
"""

from __future__ import annotations

import csv
import multiprocessing as mp
import os
import queue as queue_mod
import threading
import time
import traceback
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, validate_config
from .env import ReturnSummary, TrackingEnv, summarize_returns
from .errors import CheckpointError, ContractViolation, EvtrackError
from .nn import (
    ActorNet,
    Adam,
    CriticNet,
    Tensor,
    VectorActor,
    deterministic_action,
    load_checkpoint,
    no_grad,
    sample_action,
    sample_action_graph,
    save_checkpoint,
)
from .replay import ObsCodec, ReplayBuffer

__all__ = [
    "SacAgent",
    "TrainingResult",
    "build_actor",
    "evaluate",
    "run_training",
    "warmup_sampler",
]

# event counts get compressed toward unit scale before hitting the encoder
EVENT_INPUT_SCALE = 0.25

# "hover" warmup explores a box around the hover operating point instead of
# the whole action cube: uniform random body rates tumble a quadrotor within
# a few control periods, after which the policy observation goes blind and
# the episode truncates, so uniform warmup data never shows the learner what
# operating near the target looks like. Spans are in normalized action units.
WARMUP_HOVER_THRUST_SPAN = 0.3
WARMUP_HOVER_RATE_SPAN = 0.25

_SEED_AGENT = 0xA6E57
_SEED_ROLLOUT = 0x7011
_SEED_UPDATE = 0x5EED
_SEED_EVAL = 424242
_SEED_WORKER = 1000


def _input_scale(policy: str, obs_kind: str) -> float:
    if obs_kind == "image" and policy == "event":
        return EVENT_INPUT_SCALE
    return 1.0


def warmup_sampler(cfg: ExperimentConfig, action_dim: int):
    """Random-action source used before the policy starts acting."""
    if cfg.train.warmup_mode == "uniform":
        return lambda rng: rng.uniform(-1.0, 1.0, action_dim)
    if action_dim != 4:
        raise ContractViolation(
            "hover warmup needs the thrust+body-rate action space, got "
            f"action_dim={action_dim}"
        )
    d = cfg.dynamics
    if d.f_max <= d.f_min:
        raise ContractViolation("hover warmup needs f_max > f_min")
    hover = 2.0 * (d.mass_kg * abs(d.gravity_z) - d.f_min) / (d.f_max - d.f_min) - 1.0
    lo = np.array(
        [hover - WARMUP_HOVER_THRUST_SPAN] + [-WARMUP_HOVER_RATE_SPAN] * 3
    )
    hi = np.array(
        [hover + WARMUP_HOVER_THRUST_SPAN] + [WARMUP_HOVER_RATE_SPAN] * 3
    )
    lo, hi = np.clip(lo, -1.0, 1.0), np.clip(hi, -1.0, 1.0)
    return lambda rng: rng.uniform(lo, hi)


def build_actor(net_cfg, obs_kind, obs_shape, action_dim, rng, dtype=np.float32):
    if obs_kind == "image":
        frames, channels, _, _ = obs_shape
        return ActorNet(
            net_cfg,
            frames=frames,
            in_channels=channels,
            action_dim=action_dim,
            rng=rng,
            dtype=dtype,
        )
    if obs_kind == "vector":
        return VectorActor(net_cfg, obs_shape[0], action_dim, rng=rng, dtype=dtype)
    raise ContractViolation(f"unknown observation kind {obs_kind!r}")


class SacAgent:
    """Actor, twin critics, Polyak targets, and the update rules."""

    def __init__(
        self,
        cfg: ExperimentConfig,
        obs_kind: str,
        obs_shape: tuple,
        action_dim: int,
        priv_dim: int = 9,
        seed: int = 0,
        dtype=np.float32,
        input_scale: float | None = None,
    ):
        net, train = cfg.net, cfg.train
        rng = np.random.default_rng([seed, _SEED_AGENT])
        self.actor = build_actor(net, obs_kind, obs_shape, action_dim, rng, dtype)
        self.critic1 = CriticNet(net, priv_dim, action_dim, rng=rng, dtype=dtype)
        self.critic2 = CriticNet(net, priv_dim, action_dim, rng=rng, dtype=dtype)
        self.target1 = CriticNet(net, priv_dim, action_dim, rng=rng, dtype=dtype)
        self.target2 = CriticNet(net, priv_dim, action_dim, rng=rng, dtype=dtype)
        self.target1.load_state_dict(self.critic1.state_dict())
        self.target2.load_state_dict(self.critic2.state_dict())

        self.actor_opt = Adam(self.actor.parameters(), lr=train.lr)
        self.critic1_opt = Adam(self.critic1.parameters(), lr=train.lr)
        self.critic2_opt = Adam(self.critic2.parameters(), lr=train.lr)
        self.log_alpha = Tensor(
            np.array([np.log(train.alpha_init)], dtype=np.float64),
            requires_grad=True,
        )
        self.alpha_opt = Adam([self.log_alpha], lr=train.alpha_lr)

        self.gamma = float(train.gamma)
        self.tau = float(train.tau)
        self.entropy_target = float(train.entropy_target)
        self.obs_kind = obs_kind
        self.obs_shape = tuple(obs_shape)
        self.action_dim = int(action_dim)
        self.priv_dim = int(priv_dim)
        self.dtype = np.dtype(dtype)
        if input_scale is None:
            input_scale = _input_scale(cfg.policy, obs_kind)
        self.input_scale = float(input_scale)
        self.updates_done = 0

    # ------------------------------------------------------------------
    # acting
    # ------------------------------------------------------------------

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data[0]))

    def _prep_obs(self, obs: np.ndarray) -> np.ndarray:
        arr = np.asarray(obs, dtype=self.dtype)
        if self.input_scale != 1.0:
            arr = arr * self.dtype.type(self.input_scale)
        return arr

    def act(
        self,
        obs: np.ndarray,
        rng: np.random.Generator | None = None,
        deterministic: bool = False,
    ) -> np.ndarray:
        if tuple(obs.shape) != self.obs_shape:
            raise ContractViolation(
                f"expected observation {self.obs_shape}, got {obs.shape}"
            )
        batch = self._prep_obs(obs)[None]
        with no_grad():
            mean, log_std = self.actor(Tensor(batch))
        if deterministic:
            return deterministic_action(mean.data)[0].astype(np.float64)
        if rng is None:
            raise ContractViolation("stochastic act() needs a generator")
        action, _ = sample_action(mean.data, log_std.data, rng)
        return action[0].astype(np.float64)

    # ------------------------------------------------------------------
    # updates
    # ------------------------------------------------------------------

    def update(self, batch, rng: np.random.Generator) -> dict:
        obs = self._prep_obs(batch.obs)
        next_obs = self._prep_obs(batch.next_obs)
        priv = batch.priv.astype(self.dtype, copy=False)
        next_priv = batch.next_priv.astype(self.dtype, copy=False)
        action = batch.action.astype(self.dtype, copy=False)
        n = batch.reward.shape[0]
        alpha = self.alpha

        # bootstrap target from the frozen critics and a fresh next action
        with no_grad():
            mean2, log_std2 = self.actor(Tensor(next_obs))
            a2, logp2 = sample_action(mean2.data, log_std2.data, rng)
            a2 = a2.astype(self.dtype, copy=False)
            q1t = self.target1(Tensor(next_priv), Tensor(a2)).data[:, 0]
            q2t = self.target2(Tensor(next_priv), Tensor(a2)).data[:, 0]
            soft_q = np.minimum(q1t, q2t) - alpha * logp2
            y = batch.reward + self.gamma * (1.0 - batch.done) * soft_q
        y_col = Tensor(y.astype(self.dtype)[:, None])

        critic_losses = []
        for critic, opt in (
            (self.critic1, self.critic1_opt),
            (self.critic2, self.critic2_opt),
        ):
            critic.zero_grad()
            q = critic(Tensor(priv), Tensor(action))
            loss = ((q - y_col) ** 2.0).mean()
            loss.backward()
            opt.step()
            critic_losses.append(float(loss.data))

        # reparameterized actor step against the live critics
        self.actor.zero_grad()
        self.critic1.zero_grad()
        self.critic2.zero_grad()
        mean, log_std = self.actor(Tensor(obs))
        eps = rng.standard_normal(mean.data.shape).astype(self.dtype)
        a_new, logp = sample_action_graph(mean, log_std, eps)
        q1 = self.critic1(Tensor(priv), a_new)
        q2 = self.critic2(Tensor(priv), a_new)
        q_min = q1.minimum(q2).reshape(n)
        actor_loss = (logp * alpha - q_min).mean()
        actor_loss.backward()
        self.actor_opt.step()
        # discard critic gradients produced by the actor objective
        self.critic1.zero_grad()
        self.critic2.zero_grad()

        # temperature: push entropy toward the target in log space
        mean_logp = float(logp.data.mean())
        self.log_alpha.grad = np.array(
            [-(mean_logp + self.entropy_target)], dtype=np.float64
        )
        self.alpha_opt.step()

        self._sync_targets()
        self.updates_done += 1
        return {
            "critic1_loss": critic_losses[0],
            "critic2_loss": critic_losses[1],
            "actor_loss": float(actor_loss.data),
            "alpha": alpha,
            "entropy": -mean_logp,
            "q_mean": float(q_min.data.mean()),
            "target_mean": float(y.mean()),
        }

    def _sync_targets(self) -> None:
        for critic, target in (
            (self.critic1, self.target1),
            (self.critic2, self.target2),
        ):
            for (_, p), (_, tp) in zip(
                critic.named_parameters(), target.named_parameters()
            ):
                tp.data *= 1.0 - self.tau
                tp.data += self.tau * p.data

    @property
    def skipped_updates(self) -> int:
        return (
            self.actor_opt.skipped_updates
            + self.critic1_opt.skipped_updates
            + self.critic2_opt.skipped_updates
            + self.alpha_opt.skipped_updates
        )

    # ------------------------------------------------------------------
    # persistence
    # ------------------------------------------------------------------

    def state_arrays(self) -> dict:
        out = {}
        for prefix, module in (
            ("actor", self.actor),
            ("critic1", self.critic1),
            ("critic2", self.critic2),
            ("target1", self.target1),
            ("target2", self.target2),
        ):
            for name, arr in module.state_dict().items():
                out[f"{prefix}.{name}"] = arr
        out["log_alpha"] = self.log_alpha.data.copy()
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        for prefix, module in (
            ("actor", self.actor),
            ("critic1", self.critic1),
            ("critic2", self.critic2),
            ("target1", self.target1),
            ("target2", self.target2),
        ):
            sub = {
                name[len(prefix) + 1 :]: arr
                for name, arr in arrays.items()
                if name.startswith(prefix + ".")
            }
            module.load_state_dict(sub)
        if "log_alpha" not in arrays:
            raise ContractViolation("checkpoint missing log_alpha")
        self.log_alpha.data = arrays["log_alpha"].astype(np.float64).copy()

    def save(self, path: str, meta: dict | None = None) -> None:
        info = {
            "obs_kind": self.obs_kind,
            "obs_shape": ",".join(str(s) for s in self.obs_shape),
            "action_dim": str(self.action_dim),
            "priv_dim": str(self.priv_dim),
            "updates": str(self.updates_done),
        }
        if meta:
            info.update({str(k): str(v) for k, v in meta.items()})
        save_checkpoint(path, self.state_arrays(), info)

    def load(self, path: str) -> dict:
        arrays, meta = load_checkpoint(path)
        self.load_state_arrays(arrays)
        if "updates" in meta:
            self.updates_done = int(meta["updates"])
        return meta


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(agent: SacAgent, env, episodes: int, seed: int) -> ReturnSummary:
    """Greedy rollouts over a fixed set of per-episode scene seeds."""
    returns, lengths = [], []
    for ep in range(episodes):
        ep_seed = int(np.random.default_rng([seed, _SEED_EVAL, ep]).integers(2**31))
        res = env.reset(ep_seed)
        total = 0.0
        steps = 0
        while not res.done:
            action = agent.act(res.obs_array, deterministic=True)
            res = env.step(action)
            total += res.reward
            steps += 1
        returns.append(total)
        lengths.append(steps)
    return summarize_returns(returns, lengths)


# ---------------------------------------------------------------------------
# training orchestration
# ---------------------------------------------------------------------------


@dataclass
class TrainingResult:
    rows: list = field(default_factory=list)
    curve_path: str = ""
    checkpoint_dir: str = ""
    final_checkpoint: str = ""
    summary: ReturnSummary | None = None
    env_steps: int = 0
    updates: int = 0
    skipped_updates: int = 0
    buffer_slots_audited: int = 0
    stopped_early: bool = False
    wall_time_s: float = 0.0


_CURVE_FIELDS = [
    "epoch",
    "env_steps",
    "updates",
    "eval_mean_return",
    "eval_std_return",
    "eval_normalized_return",
    "eval_episodes",
    "alpha",
    "critic_loss",
    "actor_loss",
    "entropy",
    "buffer_size",
]


def _encode_step(codec: ObsCodec, res, action, nxt):
    # The stored done flag is the TD bootstrap mask, not the episode
    # boundary: collisions are absorbing, while lost-sight and timeout only
    # truncate the rollout, so their successor states keep their value. A
    # policy that cannot observe time would otherwise receive conflicting
    # targets for identical states near the episode end.
    return (
        codec.encode(res.obs_array),
        res.privileged,
        np.asarray(action, dtype=np.float32),
        nxt.reward,
        codec.encode(nxt.obs_array),
        nxt.privileged,
        nxt.done and nxt.done_reason == "collision",
    )


class _Trainer:
    """Owns the learner-side state shared by both execution layouts."""

    def __init__(self, cfg: ExperimentConfig, env_factory, out_dir, should_stop, log):
        validate_config(cfg)
        self.cfg = cfg
        self.train = cfg.train
        self.out_dir = out_dir or cfg.out_dir
        os.makedirs(self.out_dir, exist_ok=True)
        self.ckpt_dir = os.path.join(self.out_dir, "checkpoints")
        os.makedirs(self.ckpt_dir, exist_ok=True)
        self.env_factory = env_factory or (lambda seed: TrackingEnv(cfg, seed=seed))
        self.should_stop = should_stop or (lambda: False)
        self.log = log or (lambda msg: None)

        self.epoch_updates = self.train.steps_per_epoch // self.train.train_every
        if self.epoch_updates < 1:
            raise ContractViolation(
                f"steps_per_epoch={self.train.steps_per_epoch} is below "
                f"train_every={self.train.train_every}"
            )
        self.updates_target = self.epoch_updates * self.train.epochs

        probe_env = self.env_factory(
            int(np.random.default_rng([cfg.seed, 17]).integers(2**31))
        )
        probe = probe_env.reset(0)
        self.obs_shape = tuple(probe.obs_array.shape)
        self.priv_dim = int(probe.privileged.shape[0])
        self.action_dim = probe_env.action_dim
        self.obs_kind = probe_env.obs_kind
        self.policy_tag = getattr(probe_env, "mode", "vector")
        self.eval_env = probe_env

        self.agent = SacAgent(
            cfg,
            self.obs_kind,
            self.obs_shape,
            self.action_dim,
            priv_dim=self.priv_dim,
            seed=cfg.seed,
            input_scale=_input_scale(self.policy_tag, self.obs_kind),
        )
        self.codec = ObsCodec.for_observation(
            self.policy_tag if self.obs_kind == "image" else "vector", self.obs_shape
        )
        self.buffer = ReplayBuffer(
            self.train.buffer_capacity,
            self.codec,
            priv_dim=self.priv_dim,
            action_dim=self.action_dim,
        )
        self.warmup = min(
            max(self.train.warmup_steps, self.train.batch_size),
            self.train.buffer_capacity,
        )
        self.update_rng = np.random.default_rng([cfg.seed, _SEED_UPDATE])

        self.rows: list[dict] = []
        self._metric_acc: dict[str, float] = {}
        self._metric_n = 0
        self.curve_path = os.path.join(self.out_dir, "curve.csv")
        self._curve_fh = open(self.curve_path, "w", newline="")
        self._curve = csv.DictWriter(self._curve_fh, fieldnames=_CURVE_FIELDS)
        self._curve.writeheader()
        self._curve_fh.flush()

        self.env_steps = 0
        self.updates_done = 0
        self.next_epoch = 1
        self.stopped_early = False
        self.last_summary: ReturnSummary | None = None

    # -- metrics / curve -------------------------------------------------

    def _note_metrics(self, metrics: dict) -> None:
        for k in ("critic1_loss", "critic2_loss", "actor_loss", "entropy"):
            self._metric_acc[k] = self._metric_acc.get(k, 0.0) + metrics[k]
        self._metric_n += 1

    def _epoch_row(self, epoch: int) -> None:
        summary = evaluate(
            self.agent, self.eval_env, self.train.eval_episodes, self.cfg.seed
        )
        n = max(self._metric_n, 1)
        row = {
            "epoch": epoch,
            "env_steps": self.env_steps,
            "updates": self.updates_done,
            "eval_mean_return": summary.mean,
            "eval_std_return": summary.std,
            "eval_normalized_return": summary.normalized_mean,
            "eval_episodes": summary.episodes,
            "alpha": self.agent.alpha,
            "critic_loss": (
                self._metric_acc.get("critic1_loss", 0.0)
                + self._metric_acc.get("critic2_loss", 0.0)
            )
            / (2 * n),
            "actor_loss": self._metric_acc.get("actor_loss", 0.0) / n,
            "entropy": self._metric_acc.get("entropy", 0.0) / n,
            "buffer_size": len(self.buffer),
        }
        self.rows.append(row)
        self._curve.writerow(row)
        self._curve_fh.flush()
        self._metric_acc, self._metric_n = {}, 0
        self.last_summary = summary
        self.agent.save(
            os.path.join(self.ckpt_dir, f"epoch_{epoch:03d}.ckpt"),
            meta={
                "epoch": epoch,
                "env_steps": self.env_steps,
                "policy": self.policy_tag,
            },
        )
        self.log(
            f"epoch {epoch}: steps={self.env_steps} updates={self.updates_done} "
            f"eval_mean={summary.mean:.3f} alpha={self.agent.alpha:.4f}"
        )

    def _do_update(self) -> None:
        batch = self.buffer.sample(self.train.batch_size, self.update_rng)
        metrics = self.agent.update(batch, self.update_rng)
        self._note_metrics(metrics)
        self.updates_done += 1
        if (
            self.updates_done == self.next_epoch * self.epoch_updates
            and self.next_epoch <= self.train.epochs
        ):
            self._epoch_row(self.next_epoch)
            self.next_epoch += 1

    # -- single process ----------------------------------------------------

    def run_sync(self) -> None:
        rollout_rng = np.random.default_rng([self.cfg.seed, _SEED_ROLLOUT])
        env = self.env_factory(int(rollout_rng.integers(2**31)))
        warmup_action = warmup_sampler(self.cfg, self.action_dim)
        res = env.reset(int(rollout_rng.integers(2**31)))
        self._epoch_row(0)  # untrained baseline

        while self.updates_done < self.updates_target:
            if self.should_stop():
                self.stopped_early = True
                break
            if self.env_steps < self.warmup:
                action = warmup_action(rollout_rng)
            else:
                action = self.agent.act(res.obs_array, rollout_rng)
            nxt = env.step(action)
            self.buffer.append(*_encode_step(self.codec, res, action, nxt))
            self.env_steps += 1
            res = nxt if not nxt.done else env.reset(int(rollout_rng.integers(2**31)))

            if self.env_steps % self.train.train_every == 0 and len(self.buffer) >= self.warmup:
                for _ in range(self.train.updates_per_cycle):
                    self._do_update()
                    if self.updates_done >= self.updates_target:
                        break

    # -- multi process -------------------------------------------------

    def run_workers(self) -> None:
        train = self.train
        ctx = mp.get_context("fork")
        snap_path = os.path.join(self.out_dir, "actor_snapshot.ckpt")
        self._write_snapshot(snap_path)
        stop_evt = ctx.Event()
        step_counter = ctx.Value("q", 0)
        updates_shared = ctx.Value("q", 0)
        snap_version = ctx.Value("q", 1)
        data_q = ctx.Queue(maxsize=8 * train.workers)
        slack = self.warmup + 64 * train.train_every

        procs = []
        for wid in range(train.workers):
            p = ctx.Process(
                target=_worker_loop,
                args=(
                    self.cfg,
                    self.env_factory,
                    wid,
                    self.out_dir,
                    data_q,
                    stop_evt,
                    step_counter,
                    updates_shared,
                    snap_version,
                    snap_path,
                    self.warmup,
                    train.train_every,
                    slack,
                    self.obs_kind,
                    self.obs_shape,
                    self.action_dim,
                ),
                daemon=True,
            )
            p.start()
            procs.append(p)

        crashes: list[tuple[int, str]] = []
        ingest_stop = threading.Event()
        ingester = threading.Thread(
            target=_ingest_loop,
            args=(data_q, self.buffer, crashes, ingest_stop),
            daemon=True,
        )
        ingester.start()

        last_snap_steps = 0
        try:
            self._epoch_row(0)  # untrained baseline
            while self.updates_done < self.updates_target:
                if crashes:
                    wid, tb = crashes[0]
                    raise EvtrackError(
                        f"rollout worker {wid} crashed; see "
                        f"{os.path.join(self.out_dir, f'worker_{wid}.log')}\n{tb}"
                    )
                if self.should_stop():
                    self.stopped_early = True
                    break
                total = self.buffer.total_appended
                ready = total >= self.warmup and total >= (
                    (self.updates_done + 1) * train.train_every
                )
                if not ready:
                    dead = [p for p in procs if not p.is_alive()]
                    if dead and not crashes:
                        raise EvtrackError(
                            f"rollout worker exited early with code "
                            f"{dead[0].exitcode}"
                        )
                    time.sleep(0.002)
                    continue
                self.env_steps = self.buffer.total_appended
                self._do_update()
                with updates_shared.get_lock():
                    updates_shared.value = self.updates_done
                if (
                    self.updates_done * train.train_every - last_snap_steps
                    >= train.snapshot_interval
                ):
                    self._write_snapshot(snap_path)
                    with snap_version.get_lock():
                        snap_version.value += 1
                    last_snap_steps = self.updates_done * train.train_every
            self.env_steps = self.buffer.total_appended
        finally:
            stop_evt.set()
            ingest_stop.set()
            ingester.join(timeout=10.0)
            for p in procs:
                p.join(timeout=10.0)
            for p in procs:
                if p.is_alive():
                    p.terminate()
                    p.join(timeout=5.0)
            data_q.close()

    def _write_snapshot(self, path: str) -> None:
        tmp = path + ".tmp"
        save_checkpoint(tmp, self.agent.actor.state_dict(), {"kind": "actor"})
        os.replace(tmp, path)

    def finish(self) -> TrainingResult:
        final = os.path.join(self.ckpt_dir, "latest.ckpt")
        self.agent.save(
            final,
            meta={
                "epoch": self.train.epochs,
                "env_steps": self.env_steps,
                "policy": self.policy_tag,
            },
        )
        self._curve_fh.close()
        return TrainingResult(
            rows=self.rows,
            curve_path=self.curve_path,
            checkpoint_dir=self.ckpt_dir,
            final_checkpoint=final,
            summary=self.last_summary,
            env_steps=self.env_steps,
            updates=self.updates_done,
            skipped_updates=self.agent.skipped_updates,
            buffer_slots_audited=self.buffer.audit(),
            stopped_early=self.stopped_early,
        )


def run_training(
    cfg: ExperimentConfig,
    env_factory=None,
    out_dir: str | None = None,
    should_stop=None,
    log=None,
) -> TrainingResult:
    """Train an agent per cfg.train; returns curve rows and artifact paths."""
    started = time.perf_counter()
    trainer = _Trainer(cfg, env_factory, out_dir, should_stop, log)
    try:
        if cfg.train.workers <= 1:
            trainer.run_sync()
        else:
            trainer.run_workers()
        result = trainer.finish()
    except Exception:
        trainer._curve_fh.close()
        raise
    result.wall_time_s = time.perf_counter() - started
    return result


# ---------------------------------------------------------------------------
# worker / ingestion plumbing
# ---------------------------------------------------------------------------

_FLUSH_EVERY = 16
_SNAP_POLL_EVERY = 50


def _worker_loop(
    cfg,
    env_factory,
    worker_id,
    out_dir,
    data_q,
    stop_evt,
    step_counter,
    updates_shared,
    snap_version,
    snap_path,
    warmup,
    train_every,
    slack,
    obs_kind,
    obs_shape,
    action_dim,
):
    try:
        rng = np.random.default_rng([cfg.seed, _SEED_WORKER + worker_id])
        env = env_factory(int(rng.integers(2**31)))
        policy_tag = getattr(env, "mode", "vector")
        codec = ObsCodec.for_observation(
            policy_tag if obs_kind == "image" else "vector", obs_shape
        )
        actor = build_actor(
            cfg.net, obs_kind, obs_shape, action_dim, np.random.default_rng(0)
        )
        warmup_action = warmup_sampler(cfg, action_dim)
        scale = _input_scale(policy_tag, obs_kind)
        local_version = 0
        pending: list[tuple] = []
        res = env.reset(int(rng.integers(2**31)))
        steps_since_poll = 0

        def refresh_actor():
            nonlocal local_version
            version = snap_version.value
            if version == local_version:
                return
            try:
                arrays, _ = load_checkpoint(snap_path)
                actor.load_state_dict(arrays)
                local_version = version
            except (CheckpointError, OSError):
                pass  # next poll retries; snapshot writes are atomic

        refresh_actor()
        while not stop_evt.is_set():
            # keep collected data near the configured pace
            while (
                step_counter.value - updates_shared.value * train_every > slack
                and not stop_evt.is_set()
            ):
                time.sleep(0.005)
            if stop_evt.is_set():
                break
            steps_since_poll += 1
            if steps_since_poll >= _SNAP_POLL_EVERY:
                refresh_actor()
                steps_since_poll = 0
            if step_counter.value < warmup:
                action = warmup_action(rng)
            else:
                arr = np.asarray(res.obs_array, dtype=np.float32)
                if scale != 1.0:
                    arr = arr * np.float32(scale)
                with no_grad():
                    mean, log_std = actor(Tensor(arr[None]))
                action, _ = sample_action(mean.data, log_std.data, rng)
                action = action[0].astype(np.float64)
            nxt = env.step(action)
            with step_counter.get_lock():
                step_counter.value += 1
            pending.append(_encode_step(codec, res, action, nxt))
            res = nxt if not nxt.done else env.reset(int(rng.integers(2**31)))
            if len(pending) >= _FLUSH_EVERY or (pending and nxt.done):
                _flush(data_q, worker_id, pending, stop_evt)
                pending = []
        if pending:
            _flush(data_q, worker_id, pending, stop_evt)
    except Exception:
        tb = traceback.format_exc()
        try:
            with open(
                os.path.join(out_dir, f"worker_{worker_id}.log"), "w"
            ) as fh:
                fh.write(tb)
        except OSError:
            pass
        try:
            data_q.put(("crash", worker_id, tb), timeout=5.0)
        except queue_mod.Full:
            pass


def _flush(data_q, worker_id, pending, stop_evt):
    packed = tuple(
        np.stack([tr[i] for tr in pending]) for i in range(len(pending[0]) - 1)
    )
    dones = np.array([tr[-1] for tr in pending], dtype=np.uint8)
    while not stop_evt.is_set():
        try:
            data_q.put(("data", worker_id, packed, dones), timeout=0.25)
            return
        except queue_mod.Full:
            continue


def _ingest_loop(data_q, buffer, crashes, ingest_stop):
    while True:
        try:
            item = data_q.get(timeout=0.1)
        except queue_mod.Empty:
            if ingest_stop.is_set():
                return
            continue
        if item[0] == "crash":
            crashes.append((item[1], item[2]))
            return
        _, _, packed, dones = item
        obs, priv, action, reward, next_obs, next_priv = packed
        for j in range(dones.shape[0]):
            buffer.append(
                obs[j],
                priv[j],
                action[j],
                float(reward[j]),
                next_obs[j],
                next_priv[j],
                bool(dones[j]),
            )
