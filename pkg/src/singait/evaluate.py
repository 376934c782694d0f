"""Deterministic evaluation, random-policy calibration and substep replay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .biped_sim import BipedSim
from .config import RunConfig
from .nn import ActorCritic
from .reward import imitation_nominal
from .rollout import BREAKDOWN_FIELDS, BipedEnv, sample_actions
from .train import load_poses, make_network

EVAL_SEED_OFFSET = 777_000
TRAJ_COLUMNS = [
    "episode", "step", "t", "x_p", "z_p", "vx_p", "pitch", "target_x",
    "h_ref_l", "h_ref_r", "foot_l", "foot_r", *BREAKDOWN_FIELDS,
]
REPLAY_COLUMNS = (
    ["t"]
    + [f"q{i}" for i in range(7)]
    + [f"qdot{i}" for i in range(7)]
    + ["foot_l", "foot_r", "contact_l", "contact_r"]
    + [f"tau{i}" for i in range(4)]
)
SWING_THRESHOLD = 0.01
SETTLE_TIME = 1.0


class CheckpointMismatch(ValueError):
    pass


def make_env(cfg: RunConfig, seed: int) -> BipedEnv:
    poses = load_poses(cfg.init.pose_file) if cfg.init.pose_file else None
    return BipedEnv(
        BipedSim(cfg.model), cfg.gait_spec(), cfg.run.command, cfg.reward_config(), seed,
        episode_cap=cfg.run.episode_cap, phi0_choices=cfg.gait.phi0_choices, init_poses=poses,
    )


def check_compatible(net: ActorCritic, cfg: RunConfig):
    if net.obs_dim != 20 or net.act_dim != 4 or tuple(net.hidden) != tuple(cfg.ppo.hidden):
        raise CheckpointMismatch(
            f"checkpoint network {net.obs_dim}->{list(net.hidden)}->{net.act_dim} does not match "
            f"config hidden sizes {list(cfg.ppo.hidden)}"
        )


def run_episode(env: BipedEnv, net: ActorCritic, episode: int = 0, max_steps: int | None = None):
    """One mean-action episode; returns (EpisodeStats, trajectory rows)."""
    obs = env.reset()
    rows = []
    cap = max_steps or env.episode_cap
    for k in range(cap):
        action, _ = sample_actions(net, obs[None], None, deterministic=True)
        target_x = env.tracking_at(env.k + 1).target[0]
        obs, br, done, info = env.step(action[0])
        pv = info.pelvis
        rows.append([
            episode, k + 1, (k + 1) * env.policy_dt, pv[0], pv[1], pv[2],
            info.pitch, target_x,
            info.refs.left, info.refs.right, info.feet[0], info.feet[1], *br,
        ])
        if done:
            return info.episode, rows
    return env.stats, rows


def swing_peaks(t, h, threshold=SWING_THRESHOLD, settle=SETTLE_TIME):
    """Times and heights of the maximum of every excursion above ``threshold``."""
    t = np.asarray(t)
    h = np.asarray(h)
    times, peaks = [], []
    above = h > threshold
    i, n = 0, len(h)
    while i < n:
        if above[i]:
            j = i
            while j < n and above[j]:
                j += 1
            # drop excursions cut by the start or end of the record
            if i > 0 and j < n and t[i] >= settle:
                k = i + int(np.argmax(h[i:j]))
                times.append(t[k])
                peaks.append(h[k])
            i = j
        else:
            i += 1
    return np.array(times), np.array(peaks)


def gait_metrics(rows):
    """Mean swing-peak height and peak-to-peak period across both feet."""
    arr = np.array([r[:12] for r in rows], dtype=float)
    out = {"peak_height": math.nan, "period": math.nan, "n_peaks": 0}
    if len(arr) == 0:
        return out
    t = arr[:, 2]
    peaks, periods = [], []
    for col in (10, 11):
        pt, ph = swing_peaks(t, arr[:, col])
        peaks += list(ph)
        if len(pt) > 1:
            periods += list(np.diff(pt))
    if peaks:
        out["peak_height"] = float(np.mean(peaks))
        out["n_peaks"] = len(peaks)
    if periods:
        out["period"] = float(np.median(periods))
    return out


@dataclass
class EvalReport:
    n_episodes: int
    mean_length: float = math.nan
    std_length: float = math.nan
    mean_tracking_error: float = math.nan
    final_x_drift: float = math.nan
    foot_rmse: float = math.nan
    peak_height: float = math.nan
    period: float = math.nan
    reasons: dict = field(default_factory=dict)
    breakdown_means: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(self.__dict__)


def evaluate(cfg: RunConfig, net: ActorCritic, n_episodes: int, seed: int | None = None):
    """Returns (EvalReport, trajectory rows)."""
    check_compatible(net, cfg)
    report = EvalReport(n_episodes)
    if n_episodes <= 0:
        return report, []
    base = cfg.run.seed if seed is None else seed
    lengths, track_err, drift, sq_err, all_rows = [], [], [], [], []
    sums = {k: 0.0 for k in BREAKDOWN_FIELDS}
    total_steps = 0
    peaks, periods = [], []
    for ep in range(n_episodes):
        env = make_env(cfg, base + EVAL_SEED_OFFSET + ep)
        stats, rows = run_episode(env, net, ep)
        all_rows += rows
        lengths.append(stats.length)
        report.reasons[stats.reason or "running"] = report.reasons.get(stats.reason or "running", 0) + 1
        for k in BREAKDOWN_FIELDS:
            sums[k] += stats.sums[k]
        total_steps += stats.length
        arr = np.array([r[:12] for r in rows], dtype=float)
        ok = np.isfinite(arr[:, 3])
        arr = arr[ok]
        if len(arr):
            x0 = arr[0, 7] - cfg.run.command[0] * arr[0, 2]
            track_err += list(np.abs(arr[:, 3] - arr[:, 7]))
            drift.append(arr[-1, 3] - (x0 + cfg.run.command[0] * arr[-1, 2]))
            sq_err += list((arr[:, 8] - arr[:, 10]) ** 2 + (arr[:, 9] - arr[:, 11]) ** 2)
        gm = gait_metrics(rows)
        if gm["n_peaks"]:
            peaks.append(gm["peak_height"])
        if math.isfinite(gm["period"]):
            periods.append(gm["period"])
    report.mean_length = float(np.mean(lengths))
    report.std_length = float(np.std(lengths))
    report.mean_tracking_error = float(np.mean(track_err)) if track_err else math.nan
    report.final_x_drift = float(np.mean(drift)) if drift else math.nan
    report.foot_rmse = float(math.sqrt(np.mean(sq_err) / 2)) if sq_err else math.nan
    report.peak_height = float(np.mean(peaks)) if peaks else math.nan
    report.period = float(np.mean(periods)) if periods else math.nan
    report.breakdown_means = {k: sums[k] / total_steps for k in BREAKDOWN_FIELDS} if total_steps else {}
    return report, all_rows


def calibrate_blower(cfg: RunConfig, n_steps: int, net: ActorCritic | None = None, zero_reference=False,
                     margin: float = 0.05):
    """Mean nominal imitation reward of the untrained stochastic policy.

    Returns (mean r_I*, suggested B_lower = mean + margin).
    """
    net = net or make_network(cfg)
    rng = np.random.default_rng(cfg.run.seed + EVAL_SEED_OFFSET)
    env = make_env(cfg, cfg.run.seed + EVAL_SEED_OFFSET)
    obs = env.reset()
    total = 0.0
    for _ in range(n_steps):
        action, _ = sample_actions(net, obs[None], rng)
        obs, br, done, info = env.step(action[0])
        r = br.r_imit_nominal
        if zero_reference:
            # probe with a flat reference (the h == dh limit that configs reject)
            r = imitation_nominal((0.0, 0.0), info.feet, env.cfg) if math.isfinite(info.feet[0]) else 0.0
        total += r
    mean = total / n_steps if n_steps else math.nan
    return mean, mean + margin


def replay(cfg: RunConfig, net: ActorCritic, max_steps: int | None = None, seed: int | None = None):
    """Per-substep trace of one mean-action episode (rows as REPLAY_COLUMNS)."""
    check_compatible(net, cfg)
    env = make_env(cfg, (cfg.run.seed if seed is None else seed) + EVAL_SEED_OFFSET)
    env.trace_log = []
    run_episode(env, net, 0, max_steps)
    if not env.trace_log:
        return np.empty((0, len(REPLAY_COLUMNS)))
    return np.concatenate(env.trace_log)
