"""Environment wrapper around the biped simulator and rollout collection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import gait_ref
from .biped_sim import JOINT_NAMES, OBS_DIM, BipedSim, SimState, SimulationBlowup, orientation_quat
from .gait_ref import GaitSpec
from .nn import ActorCritic, gaussian_log_prob
from .ppo import RolloutBuffer
from .reward import (
    RewardBreakdown,
    RewardConfig,
    TrackingState,
    check_termination,
    step_reward,
)

log = logging.getLogger(__name__)

TIMEOUT = "timeout"
BLOWUP = "blowup"
BREAKDOWN_FIELDS = RewardBreakdown._fields


@dataclass
class EpisodeStats:
    length: int = 0
    sums: dict = field(default_factory=lambda: {k: 0.0 for k in BREAKDOWN_FIELDS})
    reason: str | None = None

    def add(self, br: RewardBreakdown):
        self.length += 1
        for k, v in zip(BREAKDOWN_FIELDS, br):
            self.sums[k] += v

    def mean(self, key):
        return self.sums[key] / self.length if self.length else float("nan")


@dataclass
class StepInfo:
    reason: str | None
    timeout: bool
    refs: gait_ref.ReferencePair
    feet: tuple
    pelvis: np.ndarray
    phase_angle: float
    pitch: float = math.nan
    episode: EpisodeStats | None = None
    final_obs: np.ndarray | None = None


class BipedEnv:
    """One walking episode at a time; owns its state, tracking target and RNG."""

    def __init__(
        self,
        sim: BipedSim,
        gait: GaitSpec,
        command,
        reward_cfg: RewardConfig,
        seed,
        episode_cap: int = 600,
        phi0_choices=(0.0, math.pi),
        init_poses: dict | None = None,
    ):
        self.sim = sim
        self.base_gait = gait
        self.command = (float(command[0]), float(command[1]))
        self.cfg = reward_cfg
        self.rng = np.random.default_rng(seed)
        self.episode_cap = episode_cap
        self.phi0_choices = tuple(phi0_choices)
        self.init_poses = init_poses
        self.policy_dt = sim.model.policy_dt
        self.n_period = gait.steps_per_period(self.policy_dt)
        self.state: SimState | None = None
        self.gait = gait
        self.k = 0
        self.origin = np.zeros(3)
        self.tracking = TrackingState()
        self.stats = EpisodeStats()
        # when a list, every substep of every step is appended (replay dumps)
        self.trace_log: list | None = None

    def reset(self) -> np.ndarray:
        state, phi0 = self.sim.reset(self.rng, self.phi0_choices)
        if self.init_poses is not None:
            state = self.sim.standing_state(self.init_poses[_phase_key(phi0)])
        self.state = state
        self.gait = self.base_gait.with_phase(phi0)
        self.k = 0
        pv = self.sim.pelvis(state)
        self.origin = np.array([pv[0], 0.0, pv[1]])
        self.tracking = TrackingState(self.origin.copy())
        self.stats = EpisodeStats()
        return self.observation()

    def tracking_at(self, k: int) -> TrackingState:
        """Target after k steps, computed from the counter so no rounding accumulates."""
        o = self.origin
        v = self.command
        return TrackingState(np.array([o[0] + k * v[0] * self.policy_dt, o[1] + k * v[1] * self.policy_dt, o[2]]))

    def phase_angle(self) -> float:
        return gait_ref.step_phase_angle(self.k, self.gait, self.policy_dt)

    def observation(self) -> np.ndarray:
        ph = gait_ref.phase_from_angle(self.phase_angle())
        return self.sim.observation(self.state, ph, self.command)

    def step(self, action):
        """Advance one policy period; returns (obs, RewardBreakdown, done, StepInfo)."""
        if self.state is None:
            raise RuntimeError("reset() must be called before step()")
        blown = False
        try:
            if self.trace_log is None:
                self.state = self.sim.step_policy(self.state, action)
            else:
                self.state, raw = self.sim.trace(self.state, action, t0=self.k * self.policy_dt)
                self.trace_log.append(self.sim.trace_rows(raw))
        except SimulationBlowup as exc:
            log.warning("simulation blowup at substep %d; episode terminated", exc.step)
            blown = True
        self.k += 1
        angle = self.phase_angle()
        refs = gait_ref.references_from_angle(angle, self.gait)
        self.tracking = self.tracking_at(self.k)

        if blown:
            pv = np.full(8, np.nan)
            feet = (math.nan, math.nan)
            br = RewardBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, self.cfg.term_penalty, self.cfg.term_penalty)
            reason, done, obs = BLOWUP, True, np.zeros(OBS_DIM)
        else:
            pv = self.sim.pelvis(self.state)
            feet = (pv[5], pv[7])
            pelvis_pos = (pv[0], 0.0, pv[1])
            term = check_termination(pelvis_pos, self.tracking, self.command, self.cfg)
            joints = dict(zip(JOINT_NAMES, self.state.z[3:7]))
            br = step_reward(
                refs, feet, (pv[2], 0.0), self.command, orientation_quat(self.state.z[2]),
                joints, term.terminate, self.cfg,
            )
            obs = self.sim.observation(self.state, gait_ref.phase_from_angle(angle), self.command)
            reason = term.reason
            done = term.terminate
        timeout = False
        if not done and self.k >= self.episode_cap:
            done, timeout, reason = True, True, TIMEOUT
        self.stats.add(br)
        info = StepInfo(reason, timeout, refs, feet, pv, angle, math.nan if blown else float(self.state.z[2]))
        if done:
            self.stats.reason = reason
            info.episode = self.stats
            info.final_obs = obs
            obs = self.reset()
        return obs, br, done, info


def _phase_key(phi0):
    return "pi" if abs(phi0 - math.pi) < 1e-9 else "0"


class VecEnv:
    def __init__(self, envs: list[BipedEnv]):
        self.envs = envs
        self.obs = np.stack([e.reset() for e in envs])

    def __len__(self):
        return len(self.envs)


def sample_actions(net: ActorCritic, obs, rng, deterministic=False):
    mean, log_std, _ = net.forward_policy(obs)
    if deterministic:
        actions = mean
    else:
        actions = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return actions, gaussian_log_prob(mean, log_std, actions)


def collect(venv: VecEnv, net: ActorCritic, n_steps: int, rng, gamma: float = 0.99, on_episode=None):
    """Fill a buffer with n_steps transitions from every environment.

    Episodes ending by timeout get gamma * V(final obs) folded into their
    last reward so the GAE pass may treat every done alike.
    Returns (buffer, bootstrap values for the observation after the last step).
    """
    n_envs = len(venv)
    buf = RolloutBuffer.empty(n_steps, n_envs, OBS_DIM, net.act_dim)
    for t in range(n_steps):
        obs = venv.obs
        actions, logp = sample_actions(net, obs, rng)
        values, _ = net.forward_value(obs)
        buf.obs[t] = obs
        buf.actions[t] = actions
        buf.values[t] = values
        buf.log_probs[t] = logp
        next_obs = np.empty_like(obs)
        for i, env in enumerate(venv.envs):
            o, br, done, info = env.step(actions[i])
            r = br.total
            if info.timeout:
                v_final, _ = net.forward_value(info.final_obs[None])
                r += gamma * float(v_final[0])
            buf.rewards[t, i] = r
            buf.dones[t, i] = float(done)
            next_obs[i] = o
            if done and on_episode is not None:
                on_episode(i, info.episode)
        venv.obs = next_obs
    bootstrap, _ = net.forward_value(venv.obs)
    return buf, bootstrap
