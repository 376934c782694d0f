import math

import numpy as np
import pytest

from singait import gait_ref
from singait.biped_sim import BipedSim, SimulationBlowup
from singait.gait_ref import GaitSpec
from singait.nn import ActorCritic
from singait.reward import RewardConfig
from singait.rollout import BLOWUP, TIMEOUT, BipedEnv, VecEnv, collect, sample_actions

SIM = BipedSim()
NOMINAL = SIM.model.nominal_pose()


def make_env(seed=0, cap=600, cfg=None, command=(0.4, 0.0)):
    return BipedEnv(SIM, GaitSpec(), command, cfg or RewardConfig(), seed, episode_cap=cap)


def make_venv(n, **kw):
    return VecEnv([make_env(seed=1000 * (i + 1), **kw) for i in range(n)])


def make_net(seed=0):
    return ActorCritic.create(20, 4, (16, 16), seed=seed, action_bias=NOMINAL)


def test_step_before_reset_fails():
    env = make_env()
    with pytest.raises(RuntimeError):
        env.step(NOMINAL)


def test_phase_vector_matches_reference():
    env = make_env(4)
    env.reset()
    for _ in range(10):
        obs, br, done, info = env.step(NOMINAL)
        assert not done
        ph = gait_ref.phase_from_angle(info.phase_angle)
        np.testing.assert_array_equal(obs[16:18], [ph.s, ph.c])
        assert info.refs == gait_ref.references_from_angle(info.phase_angle, env.gait)


def test_tracking_target_drift():
    env = make_env(5)
    env.reset()
    origin = env.tracking.target.copy()
    for k in range(1, 11):
        _, _, done, _ = env.step(NOMINAL)
        assert not done
        assert env.tracking.target[0] == origin[0] + k * 0.4 * 0.03
        assert env.tracking.target[1] == origin[1]
        assert env.tracking.target[2] == origin[2]


def test_timeout_has_no_penalty():
    env = make_env(cap=5)
    env.reset()
    for k in range(5):
        obs, br, done, info = env.step(NOMINAL)
    assert done and info.timeout and info.reason == TIMEOUT
    assert br.r_term == 0.0
    assert info.episode.length == 5
    assert env.k == 0  # auto-reset


def test_pelvis_low_termination():
    env = make_env()
    env.reset()
    crouch = np.array([-1.5, 2.5, -1.5, 2.5])
    for _ in range(100):
        obs, br, done, info = env.step(crouch)
        if done:
            break
    assert done and info.reason == "pelvis_low"
    assert info.pelvis[1] < 0.6
    assert br.r_term == -10.0
    assert br.total == pytest.approx(0.5 * br.r_imit + 0.5 * br.r_perf + br.r_reg - 10.0)


def test_auto_reset_starts_fresh_episode():
    env = make_env(7, cap=3)
    env.reset()
    for _ in range(3):
        obs, br, done, info = env.step(NOMINAL)
    assert done
    fresh = env.observation()
    np.testing.assert_array_equal(obs, fresh)
    assert env.stats.length == 0
    np.testing.assert_array_equal(env.state.zd, 0.0)
    _, br2, _, _ = env.step(NOMINAL)
    assert env.stats.length == 1
    assert env.stats.sums["total"] == br2.total


def test_episode_stats_means():
    env = make_env(cap=4)
    env.reset()
    totals = []
    for _ in range(4):
        _, br, done, info = env.step(NOMINAL)
        totals.append(br.total)
    ep = info.episode
    assert ep.length == 4
    assert ep.mean("total") == pytest.approx(sum(totals) / 4)


def test_blowup_terminates_with_penalty(monkeypatch):
    env = make_env()
    env.reset()

    def boom(state, action):
        raise SimulationBlowup(17)

    monkeypatch.setattr(env.sim, "step_policy", boom)
    obs, br, done, info = env.step(NOMINAL)
    assert done and info.reason == BLOWUP
    assert br.total == -10.0
    assert np.all(np.isfinite(obs))


def test_reset_uses_seeded_phase():
    phases = set()
    for seed in range(20):
        env = make_env(seed)
        env.reset()
        phases.add(env.gait.phi0)
    assert phases == {0.0, math.pi}


def test_collect_buffer_size_and_order():
    venv = make_venv(16)
    net = make_net()
    buf, boot = collect(venv, net, 256, np.random.default_rng(0))
    assert len(buf) == 4096
    assert buf.obs.shape == (256, 16, 20)
    assert boot.shape == (16,)
    assert np.all(np.isfinite(buf.rewards))


def test_collect_deterministic():
    def run():
        buf, boot = collect(make_venv(3), make_net(1), 40, np.random.default_rng(11))
        return buf, boot

    (a, ba), (b, bb) = run(), run()
    for name in ("obs", "actions", "rewards", "dones", "values", "log_probs"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(ba, bb)


def test_collect_timeout_bootstrap_folded_into_reward():
    gamma = 0.99
    net = make_net(2)
    net.params["vf.W2"][:] = 0.0
    net.params["vf.b2"][:] = 3.0  # constant value estimate
    venv = make_venv(2, cap=4)
    buf, _ = collect(venv, net, 12, np.random.default_rng(0), gamma)
    twin = make_venv(2, cap=4)
    for t in range(12):
        for i, env in enumerate(twin.envs):
            _, br, done, info = env.step(buf.actions[t, i])
            expected = br.total + (gamma * 3.0 if info.timeout else 0.0)
            assert buf.rewards[t, i] == pytest.approx(expected, abs=1e-12)
            assert buf.dones[t, i] == float(done)


def test_degenerate_policy_all_terminate():
    cfg = RewardConfig(pelvis_min=1.5, pelvis_max=2.0)
    venv = VecEnv([make_env(seed=i, cfg=cfg) for i in range(4)])
    episodes = []
    buf, _ = collect(venv, make_net(), 256, np.random.default_rng(0), on_episode=lambda i, ep: episodes.append((i, ep)))
    assert len(episodes) == 256 * 4
    for i in range(4):
        mine = [ep for j, ep in episodes if j == i]
        assert len(mine) == 256
        assert all(ep.length == 1 and ep.reason == "pelvis_low" for ep in mine)
    assert np.all(buf.dones == 1.0)
    assert np.all(buf.rewards <= -10.0 + 1.0 + 1e-12)


def test_sample_actions_deterministic_mean():
    net = make_net()
    obs = make_env().reset()
    a, lp = sample_actions(net, obs[None], None, deterministic=True)
    mean, log_std, _ = net.forward_policy(obs[None])
    np.testing.assert_array_equal(a, mean)
