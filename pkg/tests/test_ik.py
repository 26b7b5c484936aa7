"""Numeric inverse kinematics used by the generator."""

import numpy as np
import numpy.testing as npt
import pytest

from chaincal.ik import solve_gaze_ik, solve_point_ik, within_limits
from chaincal.kinematics import chain_q, forward_kinematics


def test_within_limits():
    limits = np.array([[-1.0, 1.0], [-0.5, 0.5]])
    assert within_limits([0.0, 0.0], limits)
    assert not within_limits([0.0, 0.5], limits)   # boundary is outside
    assert not within_limits([-2.0, 0.0], limits)


def test_point_ik_reaches_a_reachable_target(model, small_dataset):
    rng = np.random.default_rng(2)
    limits = model.joint_limits[0:7]
    for s in small_dataset.samples[:5]:
        q_true = s.theta[0:7]
        target = forward_kinematics(model.left_arm, chain_q("left_arm", s.theta))[:3, 3]
        q0 = np.clip(q_true + rng.uniform(-0.1, 0.1, 7),
                     limits[:, 0] + 0.05, limits[:, 1] - 0.05)
        q, err, T = solve_point_ik(model.left_arm, limits, target, q0)
        assert err <= 5e-3
        assert within_limits(q, limits)
        npt.assert_allclose(T[:3, 3], target, atol=5e-3)
        # returned transform is the FK at the returned joints
        full = np.zeros(8)
        full[1:] = q
        npt.assert_array_equal(T, forward_kinematics(model.left_arm, full))


def test_point_ik_extra_residual_is_respected(model, small_dataset):
    s = small_dataset.samples[0]
    limits = model.joint_limits[0:7]
    target = forward_kinematics(model.left_arm, chain_q("left_arm", s.theta))[:3, 3]
    q_cap = s.theta[2] + 0.3   # known feasible: the recorded pose satisfies it

    def cap_joint(Q, T):
        # positive exactly when joint 3 exceeds the cap
        return np.maximum(0.0, Q[:, 2:3] - q_cap)

    q0 = s.theta[0:7].copy()
    q0[2] = min(q_cap + 0.2, limits[2, 1] - 0.05)
    q, err, T = solve_point_ik(model.left_arm, limits, target, q0,
                               extra_residual=cap_joint)
    assert err <= 5e-3
    assert q[2] <= q_cap + 1e-9


def test_point_ik_gives_up_quietly_on_unreachable_target(model):
    limits = model.joint_limits[0:7]
    q, err, T = solve_point_ik(model.left_arm, limits,
                               np.array([2000.0, 0.0, 0.0]),
                               np.zeros(7), max_iterations=15)
    assert err > 1.0
    assert within_limits(q, limits)


def test_gaze_ik_centers_both_cameras(model, small_dataset):
    rng = np.random.default_rng(4)
    for s in small_dataset.samples[:5]:
        h0 = s.theta[14:20] + rng.uniform(-0.05, 0.05, 6)
        sol, worst = solve_gaze_ik(model, s.target, h0)
        assert worst <= 20.0
        assert within_limits(sol, model.joint_limits[14:20])
