"""Command-line interface.

Experiments run locally by default; ``--server URL`` submits the resolved
configuration to a running service instead and streams its logs. ``serve``
starts the HTTP service. Log verbosity comes from the ``EVTRACK_LOG_LEVEL``
environment variable (DEBUG/INFO/WARNING/ERROR, default INFO).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from .config import (
    MODES,
    POLICIES,
    ExperimentConfig,
    apply_overrides,
    desk_config,
    load_config,
    paper_scale_config,
    serialize_config,
    validate_config,
)
from .errors import ConfigError, EvtrackError
from .experiments import run

LOG_LEVEL_ENV = "EVTRACK_LOG_LEVEL"

log = logging.getLogger("evtrack")


def _setup_logging() -> None:
    level_name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        raise ConfigError(
            f"{LOG_LEVEL_ENV} must be a logging level name, got {level_name!r}"
        )
    logging.basicConfig(
        level=level, stream=sys.stderr, format="%(asctime)s %(levelname)s %(message)s"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evtrack",
        description="Event-camera target tracking: simulation, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for mode in MODES:
        p = sub.add_parser(mode, help=f"run a {mode} experiment")
        p.add_argument("--config", help="INI config file (see --print-config)")
        p.add_argument(
            "--profile",
            choices=("desk", "paper"),
            default="desk",
            help="base parameter profile the config/overrides start from",
        )
        p.add_argument("--policy", choices=POLICIES, help="observation modality")
        p.add_argument("--preset", help="scenario preset (or 'all' for eval)")
        p.add_argument("--seed", type=int, help="experiment seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--workers", type=int, help="rollout worker processes")
        p.add_argument("--checkpoint", help="input checkpoint (eval / sweep-noise)")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="config override; repeatable",
        )
        p.add_argument(
            "--print-config",
            action="store_true",
            help="print the fully resolved config and exit",
        )
        p.add_argument(
            "--server",
            help="submit to a running service at this URL instead of running locally",
        )

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--run-root", default="runs/service")
    serve.add_argument(
        "--max-concurrent", type=int, default=1, help="parallel experiment jobs"
    )
    return parser


def resolve_cli_config(args: argparse.Namespace) -> ExperimentConfig:
    """Profile -> config file -> --set overrides -> flag shorthands."""
    cfg = paper_scale_config() if args.profile == "paper" else desk_config()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    cfg.mode = args.command
    if args.policy is not None:
        cfg.policy = args.policy
    if args.preset is not None:
        cfg.preset = args.preset
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.workers is not None:
        cfg.train.workers = args.workers
    if args.checkpoint is not None:
        cfg.checkpoint = args.checkpoint
    return validate_config(cfg)


def run_remote(client, cfg: ExperimentConfig, poll_s: float = 0.5, echo=None) -> dict:
    """Submit cfg to a service and stream logs until the job finishes.

    ``client`` is any httpx-compatible client bound to the server base URL.
    """
    echo = echo or (lambda line: print(line, file=sys.stderr))
    resp = client.post(
        "/experiments", json={"config_text": serialize_config(cfg)}
    )
    if resp.status_code != 201:
        raise EvtrackError(f"submit failed ({resp.status_code}): {resp.text}")
    job = resp.json()
    job_id = job["job_id"]
    echo(f"submitted job {job_id} (out_dir {job['out_dir']})")

    offset = 0
    while True:
        logs = client.get(f"/experiments/{job_id}/logs", params={"offset": offset})
        if logs.status_code == 200:
            body = logs.json()
            for line in body["lines"]:
                echo(line)
            offset = body["next_offset"]
        info = client.get(f"/experiments/{job_id}").json()
        if info["state"] in ("done", "failed", "cancelled"):
            return info
        time.sleep(poll_s)


def _run_experiment(args: argparse.Namespace) -> int:
    cfg = resolve_cli_config(args)
    if args.print_config:
        print(serialize_config(cfg), end="")
        return 0

    if args.server:
        import httpx

        with httpx.Client(base_url=args.server, timeout=30.0) as client:
            info = run_remote(client, cfg)
        if info["state"] == "done":
            json.dump(info["report"], sys.stdout, indent=2)
            print()
            return 0
        log.error("job %s: %s", info["state"], info.get("error") or "")
        return 1

    report = run(cfg, log=log.info)
    json.dump(report, sys.stdout, indent=2, default=str)
    print()
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.command == "serve":
            import uvicorn

            from .service import create_app

            app = create_app(
                run_root=args.run_root, max_concurrent=args.max_concurrent
            )
            uvicorn.run(app, host=args.host, port=args.port)
            return 0
        return _run_experiment(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EvtrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
