"""Command-line entry point: ``singait {train,eval,calibrate-blower,replay,plot}``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, with_overrides

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("singait")


def _load(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    return with_overrides(cfg, seed=args.seed, out_dir=args.out)


def cmd_train(args) -> int:
    from .train import train

    cfg = _load(args)

    def progress(row):
        log.info(
            "update %d  steps %d  ep_len %.1f  imit %.3f  perf %.3f",
            row["update"], row["steps"], row["mean_ep_len"], row["mean_imit_nominal"], row["mean_perf"],
        )

    result = train(cfg, progress=progress)
    print(f"wrote {result.out_dir / 'train.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluate import TRAJ_COLUMNS, evaluate
    from .nn import load_checkpoint
    from .plotting import write_csv

    cfg = _load(args)
    net, _, _ = load_checkpoint(args.checkpoint)
    report, rows = evaluate(cfg, net, args.episodes)
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if rows:
        write_csv(out / "trajectory.csv", "trajectory", TRAJ_COLUMNS, rows)
    text = json.dumps(_finite_or_null(report.as_dict()), indent=2)
    (out / "eval_report.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


def _finite_or_null(obj):
    # NaN is not valid JSON; undefined metrics are written as null
    if isinstance(obj, dict):
        return {k: _finite_or_null(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def cmd_calibrate(args) -> int:
    from .evaluate import calibrate_blower

    cfg = _load(args)
    mean, suggestion = calibrate_blower(cfg, args.steps)
    print(f"random-policy mean nominal imitation reward: {mean:.4f}")
    print(f"suggested reward.B_lower: {suggestion:.4f} (configured {cfg.reward.b_lower})")
    return EXIT_OK


def cmd_replay(args) -> int:
    from .evaluate import REPLAY_COLUMNS, replay
    from .nn import load_checkpoint
    from .plotting import write_csv

    cfg = _load(args)
    net, _, _ = load_checkpoint(args.checkpoint)
    rows = replay(cfg, net, args.max_steps)
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "replay.csv"
    write_csv(path, "replay", REPLAY_COLUMNS, [list(map(float, r)) for r in rows])
    print(f"wrote {len(rows)} substeps to {path}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import make_plot

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    target = out / f"{args.kind}.svg"
    make_plot(args.kind, args.csv, target)
    print(f"wrote {target}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="run configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override run.seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="override run.out_dir")

    parser = argparse.ArgumentParser(prog="singait", parents=[common], description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="run PPO training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="deterministic evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate-blower", parents=[common], help="measure r_I* of the untrained policy")
    p.add_argument("--steps", type=int, default=4096)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("replay", parents=[common], help="dump a per-substep trace of one episode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--max-steps", type=int, default=None)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("plot", parents=[common], help="render CSV files to SVG")
    p.add_argument("--kind", required=True, choices=["learning_curves", "foot_heights", "pelvis_track"])
    p.add_argument("csv", nargs="+")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "out"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from .nn import CheckpointError
    from .evaluate import CheckpointMismatch
    from .plotting import SchemaError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, CheckpointMismatch, SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
