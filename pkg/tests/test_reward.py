import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singait.reward import (
    PELVIS_HIGH,
    PELVIS_LOW,
    TRACKING,
    QuaternionError,
    RewardConfig,
    RewardConfigError,
    TrackingState,
    advance_tracking,
    check_termination,
    imitation_nominal,
    normalize_imitation,
    performance,
    quaternion_angle,
    regularization,
    total_reward,
)

CFG = RewardConfig()
UP = (1.0, 0.0, 0.0, 0.0)


def pitch_quat(a):
    return (math.cos(a / 2), 0.0, math.sin(a / 2), 0.0)


def axis_quat(angle, axis):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    return (math.cos(angle / 2), *(math.sin(angle / 2) * axis))


class TestImitation:
    def test_exact_match(self):
        assert imitation_nominal((0.1, 0.0), (0.1, 0.0), CFG) == 1.0

    def test_both_feet_off(self):
        assert imitation_nominal((0.05, 0.05), (0.0, 0.0), CFG) == pytest.approx(0.1353352832366127, abs=1e-12)

    def test_one_foot_off(self):
        assert imitation_nominal((0.05, 0.0), (0.0, 0.0), CFG) == pytest.approx(0.3678794411714423, abs=1e-12)

    @pytest.mark.parametrize("nominal, expected", [(1.0, 1.0), (0.4, 0.0), (0.135335, -0.4411083333333333)])
    def test_normalize(self, nominal, expected):
        assert normalize_imitation(nominal, CFG) == pytest.approx(expected, abs=1e-12)

    @given(st.floats(1e-9, 1.0), st.floats(1e-9, 1.0))
    def test_normalize_monotone(self, a, b):
        if a < b:
            assert normalize_imitation(a, CFG) < normalize_imitation(b, CFG)
        assert -2 / 3 <= normalize_imitation(a, CFG) <= 1.0


class TestQuaternion:
    def test_identity(self):
        assert quaternion_angle(UP, UP) == 0.0

    def test_pitch(self):
        assert quaternion_angle(pitch_quat(0.3), pitch_quat(0.1)) == pytest.approx(0.2, abs=1e-12)

    @pytest.mark.parametrize("axis", [(1, 0, 0), (0, 1, 0), (1, 2, -3)])
    def test_antipodal(self, axis):
        assert quaternion_angle(UP, axis_quat(math.pi, axis)) == pytest.approx(math.pi, abs=1e-12)

    def test_double_cover(self):
        q = pitch_quat(0.4)
        neg = tuple(-x for x in q)
        assert quaternion_angle(UP, neg) == pytest.approx(0.4, abs=1e-12)

    def test_non_unit_rejected(self):
        with pytest.raises(QuaternionError):
            quaternion_angle((1.0, 0.1, 0.0, 0.0), UP)


class TestPerformance:
    def test_perfect(self):
        r, pv, po = performance((0.6, 0.0), (0.6, 0.0), UP, CFG)
        assert (r, pv, po) == (1.0, 0.0, 0.0)

    def test_velocity_error(self):
        r, pv, po = performance((0.5, 0.0), (0.6, 0.0), UP, CFG)
        assert pv == pytest.approx(0.05555555555555555, abs=1e-12)
        assert r == pytest.approx(0.9594696016800741, abs=1e-12)

    def test_pitch_with_floor(self):
        r, pv, po = performance((0.0, 0.0), (0.0, 0.0), pitch_quat(0.2), CFG)
        assert po == pytest.approx(0.09966711079379184, abs=1e-12)
        assert r == pytest.approx(0.9762846696965602, abs=1e-12)

    def test_lateral_command_uses_full_vector(self):
        # |v - v_c|^2 = 0.05, denominator max(0.01, 0.5 * 0.25) = 0.125
        _, pv, _ = performance((0.4, 0.2), (0.3, 0.4), UP, CFG)
        assert pv == pytest.approx(0.4, rel=1e-12)

    @given(st.floats(-math.pi, math.pi), st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
    def test_rotation_invariance(self, yaw, vx, vy, cx):
        c, s = math.cos(yaw), math.sin(yaw)
        v, vc = (vx, vy), (cx, 0.3)
        rot = lambda p: (c * p[0] - s * p[1], s * p[0] + c * p[1])
        r1, pv1, _ = performance(v, vc, UP, CFG)
        r2, pv2, _ = performance(rot(v), rot(vc), UP, CFG)
        assert pv1 == pytest.approx(pv2, rel=1e-9, abs=1e-12)


class TestRegularization:
    def test_zero_angles(self):
        cfg = RewardConfig(reg_joints=("a", "b"))
        assert regularization({"a": 0.0, "b": 0.0}, cfg) == 0.1

    def test_scaled(self):
        cfg = RewardConfig(reg_joints=("a", "b"))
        q = math.sqrt(0.001)
        assert regularization({"a": q, "b": q}, cfg) == pytest.approx(0.013533528323661270, abs=1e-12)

    def test_empty_set(self):
        assert regularization({"a": 1.0}, CFG) == 0.0

    def test_missing_joint(self):
        with pytest.raises(RewardConfigError):
            regularization({"a": 0.0}, RewardConfig(reg_joints=("a", "b")))


class TestTermination:
    def tracking(self, x=0.0):
        return TrackingState(np.array([x, 0.0, 0.9]))

    def test_low_pelvis(self):
        t = check_termination((0.0, 0.0, 0.55), TrackingState(np.array([0.0, 0.0, 0.55])), (0.0, 0.0), CFG)
        assert t == (True, PELVIS_LOW)

    def test_high_pelvis(self):
        t = check_termination((0.0, 0.0, 1.25), TrackingState(np.array([0.0, 0.0, 1.25])), (0.0, 0.0), CFG)
        assert t == (True, PELVIS_HIGH)

    def test_tracking(self):
        t = check_termination((1.3, 0.0, 0.9), self.tracking(), (0.6, 0.0), CFG)
        assert t == (True, TRACKING)
        inside = check_termination((1.19, 0.0, 0.9), self.tracking(), (0.6, 0.0), CFG)
        assert inside == (False, None)

    def test_nominal(self):
        assert check_termination((0.0, 0.0, 0.9), self.tracking(), (0.0, 0.0), CFG) == (False, None)

    @given(st.floats(0, 3), st.floats(0, 3))
    def test_monotone_in_deviation(self, d1, d2):
        lo, hi = sorted((d1, d2))
        t_lo = check_termination((lo, 0.0, 0.9), self.tracking(), (0.4, 0.0), CFG)
        t_hi = check_termination((hi, 0.0, 0.9), self.tracking(), (0.4, 0.0), CFG)
        assert not (t_lo.terminate and not t_hi.terminate)


class TestTotal:
    def test_best_case(self):
        assert total_reward(1.0, 1.0, 0.0, False, CFG).total == 1.0

    def test_composition(self):
        assert total_reward(0.4, 0.5, 0.0, False, CFG).total == pytest.approx(0.25, abs=1e-15)

    @given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0), st.floats(0, 0.1))
    def test_termination_subtracts_ten(self, nom, perf, reg):
        alive = total_reward(nom, perf, reg, False, CFG)
        dead = total_reward(nom, perf, reg, True, CFG)
        assert dead.total == pytest.approx(alive.total - 10.0, abs=1e-12)
        assert dead.r_term == -10.0
        assert -1 / 3 < alive.total <= 1.1

    def test_ablations(self):
        no_imit = RewardConfig(ablation="no_imitation")
        assert total_reward(1.0, 0.8, 0.0, False, no_imit).total == pytest.approx(0.8)
        no_norm = RewardConfig(ablation="no_normalization")
        assert total_reward(0.2, 0.8, 0.0, False, no_norm).total == pytest.approx(0.5 * 0.2 + 0.4)


class TestTrackingTarget:
    def test_one_step(self):
        t = advance_tracking(TrackingState(np.array([0.0, 0.0, 0.9])), (0.6, 0.0), 0.03)
        assert t.target == pytest.approx([0.018, 0.0, 0.9])

    def test_standing(self):
        t = advance_tracking(TrackingState(np.array([0.2, 0.1, 0.9])), (0.0, 0.0), 0.03)
        assert list(t.target) == [0.2, 0.1, 0.9]

    def test_hundred_steps(self):
        t = TrackingState(np.array([0.0, 0.0, 0.9]))
        for _ in range(100):
            t = advance_tracking(t, (0.6, 0.0), 0.03)
        assert t.target[0] == pytest.approx(sum([0.6 * 0.03] * 100), abs=1e-12)
        assert t.target[0] == pytest.approx(1.8, abs=1e-12)

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            advance_tracking(TrackingState(), (0.1, 0.0), 0.0)
