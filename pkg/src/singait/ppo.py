"""PPO with GAE: advantage estimation and the clipped-surrogate update."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import LOG_STD_MAX, LOG_STD_MIN, ActorCritic, Adam, gaussian_log_prob


class PPOConfigError(ValueError):
    pass


class UpdateError(RuntimeError):
    pass


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_range: float = 0.2
    learning_rate: float = 3e-4
    n_steps_per_env: int = 256
    n_envs: int = 16
    minibatch_size: int = 128
    n_epochs: int = 10
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.5
    normalize_advantage: bool = True
    hidden: tuple = (64, 64)
    log_std_init: float = 0.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise PPOConfigError("gamma must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise PPOConfigError("lambda must lie in [0, 1]")
        if self.minibatch_size <= 0 or self.rollout_size % self.minibatch_size:
            raise PPOConfigError(
                f"minibatch size {self.minibatch_size} must divide the rollout size {self.rollout_size}"
            )

    @property
    def rollout_size(self) -> int:
        return self.n_steps_per_env * self.n_envs


@dataclass
class RolloutBuffer:
    """Arrays of shape (n_steps, n_envs, ...); flattened env-major for updates."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def empty(cls, n_steps, n_envs, obs_dim, act_dim):
        return cls(
            obs=np.zeros((n_steps, n_envs, obs_dim)),
            actions=np.zeros((n_steps, n_envs, act_dim)),
            rewards=np.zeros((n_steps, n_envs)),
            dones=np.zeros((n_steps, n_envs)),
            values=np.zeros((n_steps, n_envs)),
            log_probs=np.zeros((n_steps, n_envs)),
        )

    def __len__(self):
        return self.rewards.size

    def flat(self, name):
        arr = getattr(self, name)
        # (steps, envs, ...) -> (envs * steps, ...), env-major
        return np.swapaxes(arr, 0, 1).reshape(arr.shape[0] * arr.shape[1], *arr.shape[2:])


def compute_gae(rewards, values, dones, bootstrap, gamma, lam):
    """Backward GAE recursion.  Works on (T,) or (T, n_envs) arrays.

    ``dones[t]`` marks that the episode ended after step t; the value of the
    following state is then not used.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not rewards.shape == values.shape == dones.shape:
        raise PPOConfigError("rewards, values and dones must have equal shapes")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    last = np.zeros_like(rewards[0]) if T else 0.0
    next_value = np.asarray(bootstrap, dtype=float)
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    clip_frac: float
    approx_kl: float
    n_minibatches: int


def normalize(adv):
    return (adv - adv.mean()) / max(adv.std(), 1e-8)


def minibatch_grads(net: ActorCritic, obs, actions, old_log_probs, adv, returns, cfg: PPOConfig):
    """Loss and gradients for one minibatch.  Returns (grads, info dict)."""
    B = obs.shape[0]
    mean, log_std, pi_acts = net.forward_policy(obs)
    new_lp = gaussian_log_prob(mean, log_std, actions)
    ratio = np.exp(new_lp - old_log_probs)
    lo, hi = 1.0 - cfg.clip_range, 1.0 + cfg.clip_range
    surr1 = ratio * adv
    surr2 = np.clip(ratio, lo, hi) * adv
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    # d(-mean(min))/d new_lp: the unclipped branch carries ratio*A; the
    # clipped branch only while the ratio sits inside the clip range
    use_unclipped = surr1 <= surr2
    inside = (ratio >= lo) & (ratio <= hi)
    active = use_unclipped | inside
    d_lp = np.where(active, -adv * ratio / B, 0.0)

    values, vf_acts = net.forward_value(obs)
    value_loss = float(np.mean((returns - values) ** 2))
    d_v = cfg.value_coef * 2.0 * (values - returns) / B

    std_inv = np.exp(-log_std)
    z = (actions - mean) * std_inv
    d_mean = d_lp[:, None] * z * std_inv
    d_log_std = (d_lp[:, None] * (z * z - 1.0)).sum(axis=0)
    # entropy of a diagonal Gaussian grows by 1 per unit of log std
    d_log_std -= cfg.entropy_coef * np.ones_like(log_std)
    raw = net.params["pi.log_std"]
    d_log_std = np.where((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX), d_log_std, 0.0)

    grads = net.pi.backward(d_mean, pi_acts)
    grads["pi.log_std"] = d_log_std
    grads.update(net.vf.backward(d_v[:, None], vf_acts))

    log_ratio = new_lp - old_log_probs
    info = dict(
        policy_loss=policy_loss,
        value_loss=value_loss,
        entropy=float(np.sum(log_std + 0.5 + 0.5 * math.log(2 * math.pi))),
        clip_frac=float(np.mean(np.abs(ratio - 1.0) > cfg.clip_range)),
        approx_kl=float(np.mean(np.exp(log_ratio) - 1.0 - log_ratio)),
        ratio=ratio,
    )
    return grads, info


def clip_grad_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-6)
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def ppo_update(buffer: RolloutBuffer, net: ActorCritic, opt: Adam, cfg: PPOConfig, rng) -> UpdateStats:
    """Run n_epochs of shuffled minibatch Adam steps on the clipped objective."""
    if buffer.advantages is None:
        raise UpdateError("advantages must be computed before the update")
    obs = buffer.flat("obs")
    actions = buffer.flat("actions")
    old_lp = buffer.flat("log_probs")
    adv = buffer.flat("advantages")
    returns = buffer.flat("returns")
    if cfg.normalize_advantage and adv.size > 1:
        adv = normalize(adv)
    n = obs.shape[0]
    mb = min(cfg.minibatch_size, n)
    pl, vl, cf, kl = [], [], [], []
    for _ in range(cfg.n_epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            grads, info = minibatch_grads(net, obs[idx], actions[idx], old_lp[idx], adv[idx], returns[idx], cfg)
            if not (math.isfinite(info["policy_loss"]) and math.isfinite(info["value_loss"])):
                raise UpdateError(
                    f"non-finite loss (policy {info['policy_loss']}, value {info['value_loss']}); update aborted"
                )
            clip_grad_norm(grads, cfg.max_grad_norm)
            opt.step(net.params, grads, cfg.learning_rate)
            net.clamp()
            pl.append(info["policy_loss"])
            vl.append(info["value_loss"])
            cf.append(info["clip_frac"])
            kl.append(info["approx_kl"])
    return UpdateStats(float(np.mean(pl)), float(np.mean(vl)), float(np.mean(cf)), float(np.mean(kl)), len(pl))
