"""Per-step reward: imitation, performance, regularization and termination.

The imitation term is rescaled so that a policy which does not bother
to follow the foot-height reference earns a negative reward for every
step it stays alive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .gait_ref import ReferencePair

UPRIGHT = (1.0, 0.0, 0.0, 0.0)

PELVIS_LOW = "pelvis_low"
PELVIS_HIGH = "pelvis_high"
TRACKING = "tracking"


class RewardConfigError(ValueError):
    pass


class QuaternionError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    w_imitation: float = 0.5
    w_performance: float = 0.5
    imitation_scale: float = 0.05
    b_upper: float = 1.0
    b_lower: float = 0.4
    w_vel: float = 0.75
    w_ori: float = 0.25
    vel_floor: float = 0.1
    ori_scale: float = 0.1
    reg_weight: float = 0.1
    reg_scale: float = 0.001
    reg_joints: tuple = ()
    term_penalty: float = -10.0
    pelvis_min: float = 0.6
    pelvis_max: float = 1.2
    track_radius_base: float = 0.6
    upright: tuple = UPRIGHT
    # ablation switches: "none", "no_imitation", "no_normalization"
    ablation: str = "none"

    def __post_init__(self):
        if not self.b_upper > self.b_lower:
            raise RewardConfigError("b_upper must exceed b_lower")
        for name in ("imitation_scale", "vel_floor", "ori_scale", "reg_scale"):
            if not getattr(self, name) > 0:
                raise RewardConfigError(f"{name} must be positive")
        if abs(math.sqrt(sum(x * x for x in self.upright)) - 1.0) > 1e-9:
            raise RewardConfigError("upright orientation must be a unit quaternion")
        if self.ablation not in ("none", "no_imitation", "no_normalization"):
            raise RewardConfigError(f"unknown ablation mode {self.ablation!r}")


class RewardBreakdown(NamedTuple):
    r_imit_nominal: float
    r_imit: float
    p_v: float
    p_o: float
    r_perf: float
    r_reg: float
    r_term: float
    total: float


@dataclass
class TrackingState:
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))


class Termination(NamedTuple):
    terminate: bool
    reason: str | None


def imitation_nominal(h_ref: Sequence[float], h_foot: Sequence[float], cfg: RewardConfig) -> float:
    err = sum((r - f) ** 2 for r, f in zip(h_ref, h_foot))
    return math.exp(-err / cfg.imitation_scale**2)


def normalize_imitation(r_nominal: float, cfg: RewardConfig) -> float:
    return (r_nominal - cfg.b_lower) / (cfg.b_upper - cfg.b_lower)


def _check_unit(q, name):
    n = math.sqrt(sum(x * x for x in q))
    if not abs(n - 1.0) <= 1e-9:
        raise QuaternionError(f"{name} is not a unit quaternion (norm {n})")


def quaternion_angle(a: Sequence[float], b: Sequence[float]) -> float:
    """Geodesic angle in [0, pi] between two orientations (w, x, y, z)."""
    _check_unit(a, "a")
    _check_unit(b, "b")
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    # relative rotation conj(a) * b
    w = aw * bw + ax * bx + ay * by + az * bz
    x = aw * bx - ax * bw - ay * bz + az * by
    y = aw * by + ax * bz - ay * bw - az * bx
    z = aw * bz - ax * by + ay * bx - az * bw
    return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))


def performance(v_p_xy, v_c, o_p, cfg: RewardConfig) -> tuple[float, float, float]:
    dvx = v_p_xy[0] - v_c[0]
    dvy = v_p_xy[1] - v_c[1]
    vc2 = v_c[0] ** 2 + v_c[1] ** 2
    p_v = (dvx * dvx + dvy * dvy) / max(cfg.vel_floor**2, 0.5 * vc2)
    theta = quaternion_angle(o_p, cfg.upright)
    p_o = math.sin(0.5 * theta) ** 2 / cfg.ori_scale
    r_perf = cfg.w_vel * math.exp(-p_v) + cfg.w_ori * math.exp(-p_o)
    return r_perf, p_v, p_o


def regularization(joint_angles: Mapping[str, float], cfg: RewardConfig) -> float:
    if not cfg.reg_joints:
        return 0.0
    missing = [j for j in cfg.reg_joints if j not in joint_angles]
    if missing:
        raise RewardConfigError(f"regularized joints not found: {missing}")
    s = sum(joint_angles[j] ** 2 for j in cfg.reg_joints)
    return cfg.reg_weight * math.exp(-s / cfg.reg_scale)


def track_radius(v_c, cfg: RewardConfig) -> float:
    return cfg.track_radius_base + math.hypot(v_c[0], v_c[1])


def check_termination(pelvis_pos, tracking: TrackingState, v_c, cfg: RewardConfig) -> Termination:
    h_p = pelvis_pos[2]
    if h_p < cfg.pelvis_min:
        return Termination(True, PELVIS_LOW)
    if h_p > cfg.pelvis_max:
        return Termination(True, PELVIS_HIGH)
    t = tracking.target
    dist = math.sqrt(
        (pelvis_pos[0] - t[0]) ** 2 + (pelvis_pos[1] - t[1]) ** 2 + (pelvis_pos[2] - t[2]) ** 2
    )
    if dist > track_radius(v_c, cfg):
        return Termination(True, TRACKING)
    return Termination(False, None)


def advance_tracking(tracking: TrackingState, v_c, dt: float) -> TrackingState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    t = tracking.target
    return TrackingState(np.array([t[0] + v_c[0] * dt, t[1] + v_c[1] * dt, t[2]]))


def total_reward(
    r_imit_nominal: float,
    r_perf: float,
    r_reg: float,
    terminated: bool,
    cfg: RewardConfig,
    p_v: float = 0.0,
    p_o: float = 0.0,
) -> RewardBreakdown:
    r_imit = normalize_imitation(r_imit_nominal, cfg)
    if cfg.ablation == "no_imitation":
        w_i, w_p, imit_term = 0.0, 1.0, r_imit
    elif cfg.ablation == "no_normalization":
        w_i, w_p, imit_term = cfg.w_imitation, cfg.w_performance, r_imit_nominal
    else:
        w_i, w_p, imit_term = cfg.w_imitation, cfg.w_performance, r_imit
    r_term = cfg.term_penalty if terminated else 0.0
    total = w_i * imit_term + w_p * r_perf + r_reg + r_term
    return RewardBreakdown(r_imit_nominal, r_imit, p_v, p_o, r_perf, r_reg, r_term, total)


def step_reward(
    h_ref: ReferencePair,
    h_foot,
    v_p_xy,
    v_c,
    o_p,
    joint_angles: Mapping[str, float],
    terminated: bool,
    cfg: RewardConfig,
) -> RewardBreakdown:
    """Evaluate every sub-term for one policy step and compose the total."""
    r_nom = imitation_nominal(h_ref, h_foot, cfg)
    r_perf, p_v, p_o = performance(v_p_xy, v_c, o_p, cfg)
    r_reg = regularization(joint_angles, cfg)
    return total_reward(r_nom, r_perf, r_reg, terminated, cfg, p_v=p_v, p_o=p_o)
