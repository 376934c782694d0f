"""Training driver: builds environments and networks from a RunConfig and
runs PPO updates, writing CSV logs and checkpoints into the run directory."""

from __future__ import annotations

import collections
import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .biped_sim import OBS_DIM, BipedSim
from .config import RunConfig, dump_config
from .nn import ActorCritic, Adam, save_checkpoint
from .ppo import compute_gae, ppo_update
from .rollout import BipedEnv, VecEnv, collect

log = logging.getLogger(__name__)

CSV_MAGIC = "# singait-csv-v1"
TRAIN_COLUMNS = [
    "update", "steps", "mean_ep_reward", "mean_ep_len", "mean_imit_nominal", "mean_perf",
    "policy_loss", "value_loss", "clip_frac", "approx_kl",
]
EPISODE_COLUMNS = ["wallclock", "update", "env_id", "length", "reason", "mean_imit_nominal", "mean_perf", "sum_total"]
# per-env seed streams sit at fixed offsets from the master seed
ENV_SEED_STRIDE = 1000
STATS_WINDOW = 100


class TrainingAborted(RuntimeError):
    pass


def load_poses(path) -> dict:
    data = json.loads(Path(path).read_text())
    return {k: np.asarray(data[k], dtype=float) for k in ("0", "pi")}


def make_envs(cfg: RunConfig, sim: BipedSim | None = None, seed_offset: int = 0) -> VecEnv:
    sim = sim or BipedSim(cfg.model)
    poses = load_poses(cfg.init.pose_file) if cfg.init.pose_file else None
    rcfg = cfg.reward_config()
    envs = [
        BipedEnv(
            sim, cfg.gait_spec(), cfg.run.command, rcfg,
            seed=cfg.run.seed + seed_offset + ENV_SEED_STRIDE * (i + 1),
            episode_cap=cfg.run.episode_cap,
            phi0_choices=cfg.gait.phi0_choices,
            init_poses=poses,
        )
        for i in range(cfg.ppo.n_envs)
    ]
    return VecEnv(envs)


def make_network(cfg: RunConfig) -> ActorCritic:
    # start the action mean at the standing pose rather than at zero angles
    bias = cfg.model.nominal_pose()
    return ActorCritic.create(
        OBS_DIM, 4, cfg.ppo.hidden, seed=cfg.run.seed, log_std_init=cfg.ppo.log_std_init, action_bias=bias
    )


def _fmt(x):
    if isinstance(x, float):
        return "nan" if x != x else f"{x:.10g}"
    return str(x)


@dataclass
class TrainResult:
    rows: list
    net: ActorCritic
    out_dir: Path


def train(cfg: RunConfig, out_dir=None, progress=None) -> TrainResult:
    """Run PPO for cfg.run.total_updates updates.

    ``progress(row)`` is called after every update; a truthy return value
    stops training early (the final checkpoint is still written).
    """
    out = Path(out_dir or cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    pcfg = cfg.ppo
    venv = make_envs(cfg)
    net = make_network(cfg)
    opt = Adam(lr=pcfg.learning_rate)
    rng = np.random.default_rng(cfg.run.seed)

    window = collections.deque(maxlen=STATS_WINDOW)
    rows = []
    t_start = time.time()
    with open(out / "train.csv", "w", newline="") as ftrain, open(out / "episodes.csv", "w", newline="") as fep:
        ftrain.write(f"{CSV_MAGIC} train\n")
        fep.write(f"{CSV_MAGIC} episodes\n")
        wtrain = csv.writer(ftrain)
        wep = csv.writer(fep)
        wtrain.writerow(TRAIN_COLUMNS)
        wep.writerow(EPISODE_COLUMNS)
        for update in range(1, cfg.run.total_updates + 1):
            finished = []

            def on_episode(env_id, ep, update=update):
                finished.append(ep)
                window.append(ep)
                wep.writerow([
                    f"{time.time() - t_start:.3f}", update, env_id, ep.length, ep.reason,
                    _fmt(ep.mean("r_imit_nominal")), _fmt(ep.mean("r_perf")), _fmt(ep.sums["total"]),
                ])

            buf, bootstrap = collect(venv, net, pcfg.n_steps_per_env, rng, pcfg.gamma, on_episode)
            blowups = sum(ep.reason == "blowup" for ep in finished)
            if finished and blowups > 0.5 * len(finished):
                raise TrainingAborted(f"update {update}: {blowups}/{len(finished)} episodes blew up")
            buf.advantages, buf.returns = compute_gae(
                buf.rewards, buf.values, buf.dones, bootstrap, pcfg.gamma, pcfg.lam
            )
            stats = ppo_update(buf, net, opt, pcfg, rng)
            eps = list(window)
            row = {
                "update": update,
                "steps": update * pcfg.rollout_size,
                "mean_ep_reward": float(np.mean([e.sums["total"] for e in eps])) if eps else float("nan"),
                "mean_ep_len": float(np.mean([e.length for e in eps])) if eps else float("nan"),
                "mean_imit_nominal": float(np.mean([e.mean("r_imit_nominal") for e in eps])) if eps else float("nan"),
                "mean_perf": float(np.mean([e.mean("r_perf") for e in eps])) if eps else float("nan"),
                "policy_loss": stats.policy_loss,
                "value_loss": stats.value_loss,
                "clip_frac": stats.clip_frac,
                "approx_kl": stats.approx_kl,
            }
            rows.append(row)
            wtrain.writerow([_fmt(row[c]) for c in TRAIN_COLUMNS])
            ftrain.flush()
            if update % cfg.run.checkpoint_every == 0 or update == cfg.run.total_updates:
                save_checkpoint(ckpt_dir / f"update_{update:05d}.ckpt", net, opt, {"update": update})
            if progress is not None and progress(row):
                break
    if rows:
        save_checkpoint(out / "final.ckpt", net, opt, {"update": rows[-1]["update"]})
    return TrainResult(rows, net, out)
