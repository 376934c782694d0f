import math

import numpy as np
import pytest

from oracles import finite_difference_check, gae_double_sum
from singait.nn import ActorCritic, Adam, gaussian_log_prob
from singait.ppo import (
    PPOConfig,
    PPOConfigError,
    RolloutBuffer,
    UpdateError,
    clip_grad_norm,
    compute_gae,
    minibatch_grads,
    normalize,
    ppo_update,
)

LOG2PI = math.log(2 * math.pi)


# -- config --------------------------------------------------------------------


def test_defaults():
    cfg = PPOConfig()
    assert cfg.rollout_size == 4096
    assert (cfg.gamma, cfg.lam, cfg.clip_range, cfg.learning_rate) == (0.99, 0.95, 0.2, 3e-4)
    assert (cfg.minibatch_size, cfg.n_epochs, cfg.value_coef, cfg.entropy_coef) == (128, 10, 0.5, 0.0)


@pytest.mark.parametrize("kw", [{"gamma": 0.0}, {"lam": 1.5}, {"minibatch_size": 100}])
def test_invalid_config(kw):
    with pytest.raises(PPOConfigError):
        PPOConfig(**kw)


# -- GAE -----------------------------------------------------------------------


def test_gae_two_step_example():
    adv, ret = compute_gae([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], 0.0, 0.99, 0.95)
    np.testing.assert_allclose(adv, [1.9405, 1.0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(ret, adv)


def test_gae_myopic_limit():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=10), rng.normal(size=10)
    d = (rng.random(10) < 0.3).astype(float)
    adv, _ = compute_gae(r, v, d, 1.7, 0.0, 0.9)
    np.testing.assert_array_equal(adv, r - v)


def test_gae_episode_isolation():
    r = np.array([1.0, 2.0, 3.0, 4.0])
    v = np.array([0.5, 0.1, 0.2, 0.3])
    d = np.array([0.0, 1.0, 0.0, 0.0])
    a1, _ = compute_gae(r, v, d, 5.0, 0.99, 0.95)
    r2, v2 = r.copy(), v.copy()
    r2[2:] = [-7.0, 9.0]
    v2[2:] = [3.0, -1.0]
    a2, _ = compute_gae(r2, v2, d, -4.0, 0.99, 0.95)
    np.testing.assert_array_equal(a1[:2], a2[:2])


def test_gae_matches_double_sum_oracle():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 65))
        r, v = rng.normal(size=n), rng.normal(size=n)
        d = (rng.random(n) < 0.1).astype(float)
        gamma, lam = rng.uniform(0.5, 1.0), rng.uniform(0.0, 1.0)
        boot = rng.normal()
        adv, ret = compute_gae(r, v, d, boot, gamma, lam)
        worst = max(worst, np.abs(adv - gae_double_sum(r, v, d, boot, gamma, lam)).max())
        np.testing.assert_allclose(ret, adv + v)
    assert worst < 1e-10


def test_gae_vectorized_over_envs():
    rng = np.random.default_rng(1)
    r, v = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    d = (rng.random((20, 3)) < 0.2).astype(float)
    boot = rng.normal(size=3)
    adv, _ = compute_gae(r, v, d, boot, 0.99, 0.95)
    for e in range(3):
        col, _ = compute_gae(r[:, e], v[:, e], d[:, e], boot[e], 0.99, 0.95)
        np.testing.assert_array_equal(adv[:, e], col)


def test_gae_length_mismatch():
    with pytest.raises(PPOConfigError):
        compute_gae([1.0, 2.0], [0.0], [0.0, 0.0], 0.0, 0.99, 0.95)


# -- log probability -------------------------------------------------------------


def test_log_prob_at_mode():
    d = 4
    assert gaussian_log_prob(np.zeros(d), np.zeros(d), np.zeros(d)) == pytest.approx(-0.5 * d * LOG2PI, abs=1e-15)


def test_log_prob_one_sigma():
    sigma = 0.3
    lp = gaussian_log_prob(np.array([0.1]), np.array([math.log(sigma)]), np.array([0.1 + sigma]))
    assert lp == pytest.approx(-0.5 - math.log(sigma) - 0.5 * LOG2PI, abs=1e-14)


def test_log_prob_doubling_sigma():
    d = 3
    mu = np.array([0.2, -0.1, 0.5])
    ls = np.array([-0.5, 0.0, 0.3])
    diff = gaussian_log_prob(mu, ls, mu) - gaussian_log_prob(mu, ls + math.log(2), mu)
    assert diff == pytest.approx(d * math.log(2), abs=1e-14)


# -- update ----------------------------------------------------------------------


def synthetic_buffer(net, n_steps=64, n_envs=4, seed=0):
    rng = np.random.default_rng(seed)
    buf = RolloutBuffer.empty(n_steps, n_envs, net.obs_dim, net.act_dim)
    buf.obs[:] = rng.normal(size=buf.obs.shape)
    mean, log_std, _ = net.forward_policy(buf.obs.reshape(-1, net.obs_dim))
    acts = mean + np.exp(log_std) * rng.normal(size=mean.shape)
    buf.actions[:] = acts.reshape(buf.actions.shape)
    buf.log_probs[:] = gaussian_log_prob(mean, log_std, acts).reshape(n_steps, n_envs)
    buf.values[:] = net.forward_value(buf.obs.reshape(-1, net.obs_dim))[0].reshape(n_steps, n_envs)
    buf.rewards[:] = rng.normal(size=(n_steps, n_envs))
    buf.dones[:] = rng.random((n_steps, n_envs)) < 0.05
    buf.advantages, buf.returns = compute_gae(buf.rewards, buf.values, buf.dones, np.zeros(n_envs), 0.99, 0.95)
    return buf


def small_cfg(**kw):
    base = dict(n_steps_per_env=64, n_envs=4, minibatch_size=32, n_epochs=3, hidden=(16, 16))
    base.update(kw)
    return PPOConfig(**base)


def test_buffer_flat_is_env_major():
    buf = RolloutBuffer.empty(3, 2, 1, 1)
    buf.rewards[:] = [[0, 10], [1, 11], [2, 12]]
    np.testing.assert_array_equal(buf.flat("rewards"), [0, 1, 2, 10, 11, 12])
    assert len(buf) == 6


def test_first_minibatch_ratio_is_one():
    net = ActorCritic.create(20, 4, (16, 16), seed=0)
    buf = synthetic_buffer(net)
    idx = np.random.default_rng(0).permutation(len(buf))[:32]
    adv = normalize(buf.flat("advantages"))
    _, info = minibatch_grads(
        net, buf.flat("obs")[idx], buf.flat("actions")[idx], buf.flat("log_probs")[idx],
        adv[idx], buf.flat("returns")[idx], small_cfg(),
    )
    np.testing.assert_allclose(info["ratio"], 1.0, rtol=0, atol=1e-12)
    assert info["clip_frac"] == 0.0


def test_clipped_surrogate_uses_clip_value():
    net = ActorCritic.create(20, 4, (8,), seed=1)
    obs = np.random.default_rng(0).normal(size=(1, 20))
    mean, log_std, _ = net.forward_policy(obs)
    act = mean + 0.1
    lp = gaussian_log_prob(mean, log_std, act)
    A = np.array([2.0])
    grads, info = minibatch_grads(net, obs, act, lp - math.log(1.5), A, np.zeros(1), small_cfg())
    assert info["ratio"][0] == pytest.approx(1.5, rel=1e-12)
    assert info["policy_loss"] == pytest.approx(-1.2 * 2.0, rel=1e-12)
    assert info["clip_frac"] == 1.0
    # the clipped branch has no gradient with respect to the policy
    for k, g in grads.items():
        if k.startswith("pi."):
            assert np.all(g == 0.0)


def test_zero_advantages_give_zero_policy_gradient():
    net = ActorCritic.create(20, 4, (8, 8), seed=2)
    buf = synthetic_buffer(net)
    obs, acts, lp = buf.flat("obs")[:32], buf.flat("actions")[:32], buf.flat("log_probs")[:32]
    grads, _ = minibatch_grads(net, obs, acts, lp, np.zeros(32), buf.flat("returns")[:32], small_cfg())
    assert all(np.all(g == 0.0) for k, g in grads.items() if k.startswith("pi."))
    assert any(np.any(g != 0.0) for k, g in grads.items() if k.startswith("vf."))


@pytest.mark.parametrize("seed", range(3))
def test_ppo_loss_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = ActorCritic.create(20, 4, (8, 6), seed=seed, log_std_init=-0.5)
    for k in net.params:
        net.params[k] += rng.normal(0, 0.2, net.params[k].shape)
    cfg = small_cfg(entropy_coef=0.01)
    obs = rng.normal(size=(6, 20))
    mean, log_std, _ = net.forward_policy(obs)
    acts = mean + np.exp(log_std) * rng.normal(size=mean.shape)
    old_lp = gaussian_log_prob(mean, log_std, acts) + rng.normal(0, 0.3, 6)
    adv, ret = rng.normal(size=6), rng.normal(size=6)

    def loss():
        _, info = minibatch_grads(net, obs, acts, old_lp, adv, ret, cfg)
        ent = info["entropy"]
        return info["policy_loss"] + cfg.value_coef * info["value_loss"] - cfg.entropy_coef * ent

    def pattern():
        _, info = minibatch_grads(net, obs, acts, old_lp, adv, ret, cfg)
        r = info["ratio"]
        _, pa = net.pi.forward(obs)
        _, va = net.vf.forward(obs)
        masks = tuple(bytes(a > 0) for a in pa[1:-1] + va[1:-1])
        return bytes((r < 0.8) | (r > 1.2)) + b"".join(masks)

    grads, _ = minibatch_grads(net, obs, acts, old_lp, adv, ret, cfg)
    err, checked = finite_difference_check(net.params, net.names(), loss, grads, kink_fn=pattern)
    assert checked > 0.9 * net.n_params()
    assert err < 1e-4


def test_normalized_advantages():
    rng = np.random.default_rng(3)
    a = normalize(rng.normal(5.0, 3.0, 4096))
    assert abs(a.mean()) < 1e-9 and abs(a.std() - 1.0) < 1e-9
    flat = normalize(np.full(10, 2.0))
    np.testing.assert_array_equal(flat, 0.0)


def test_grad_norm_clipping():
    g = {"a": np.array([3.0, 4.0])}
    total = clip_grad_norm(g, 0.5)
    assert total == 5.0
    assert np.linalg.norm(g["a"]) == pytest.approx(0.5, rel=1e-5)


def test_update_statistics_and_determinism():
    def run():
        net = ActorCritic.create(20, 4, (16, 16), seed=4)
        buf = synthetic_buffer(net, seed=4)
        stats = ppo_update(buf, net, Adam(), small_cfg(), np.random.default_rng(9))
        return net, stats

    (n1, s1), (n2, s2) = run(), run()
    assert s1 == s2
    assert s1.n_minibatches == 3 * 256 // 32
    assert 0.0 <= s1.clip_frac <= 1.0
    assert s1.approx_kl >= -1e-12
    for k in n1.params:
        assert np.array_equal(n1.params[k], n2.params[k])


def test_update_reduces_value_loss():
    net = ActorCritic.create(20, 4, (16, 16), seed=5)
    buf = synthetic_buffer(net, seed=5)
    cfg = small_cfg(n_epochs=10)
    first = ppo_update(buf, net, Adam(lr=1e-3), cfg, np.random.default_rng(0)).value_loss
    second = ppo_update(buf, net, Adam(lr=1e-3), cfg, np.random.default_rng(0)).value_loss
    assert second < first


def test_nan_loss_aborts():
    net = ActorCritic.create(20, 4, (8,), seed=0)
    buf = synthetic_buffer(net)
    buf.returns[3, 1] = np.nan
    with pytest.raises(UpdateError):
        ppo_update(buf, net, Adam(), small_cfg(), np.random.default_rng(0))


def test_update_requires_advantages():
    net = ActorCritic.create(20, 4, (8,), seed=0)
    buf = synthetic_buffer(net)
    buf.advantages = None
    with pytest.raises(UpdateError):
        ppo_update(buf, net, Adam(), small_cfg(), np.random.default_rng(0))
