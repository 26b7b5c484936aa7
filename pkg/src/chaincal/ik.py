"""Numeric inverse kinematics used by the dataset generator.

Damped least squares with forward-difference Jacobians. Each iteration
evaluates the nominal joints plus one bumped row per joint in a single
batched forward-kinematics call. Joint limits are enforced by clamping
the iterate inside a small margin (no penalty terms), so returned
solutions always lie strictly within the limits. Iteration stops as soon
as the task tolerance holds instead of polishing the cost.
"""

from __future__ import annotations

import numpy as np

from .camera import rigid_inverse
from .kinematics import KinematicChain, RobotModel, forward_kinematics

_FD_STEP = 1e-5          # rad, forward-difference joint bump
_LIMIT_MARGIN = 0.02     # rad, keep-out band inside each joint limit
_GAZE_SENTINEL = 1e4     # px, flat residual when a camera looks away
_POSTURE_WEIGHT = 1e-3   # pull toward the warm-start posture


def within_limits(q, limits) -> bool:
    q = np.asarray(q, dtype=float)
    limits = np.asarray(limits, dtype=float)
    return bool(np.all(q > limits[:, 0]) and np.all(q < limits[:, 1]))


def _clamp(q, limits):
    return np.clip(q, limits[:, 0] + _LIMIT_MARGIN, limits[:, 1] - _LIMIT_MARGIN)


def _descend(batch_eval, q0, limits, done, max_iterations):
    """Minimize ||batch_eval(q)||^2 over clamped joints until done(r).

    Gives up early when progress plateaus (three consecutive accepted
    steps each shaving off less than 1% of the cost), which happens when
    the target is outside the clamped chain's reach.
    """
    q = _clamp(np.asarray(q0, dtype=float), limits)
    n = q.size
    bumps = np.eye(n) * _FD_STEP
    lam = 1e-3
    slow = 0
    for _ in range(max_iterations):
        Q = np.vstack([q[None, :], q[None, :] + bumps])
        R = batch_eval(Q)
        r = R[0]
        if done(r):
            break
        J = (R[1:] - r).T / _FD_STEP
        H = J.T @ J
        g = J.T @ r
        cost = float(r @ r)
        scale = np.trace(H) / n + 1e-12
        accepted = False
        for _ in range(10):
            try:
                delta = np.linalg.solve(H + (lam * scale) * np.eye(n), -g)
            except np.linalg.LinAlgError:
                lam *= 4.0
                continue
            q_try = _clamp(q + delta, limits)
            r_try = batch_eval(q_try[None, :])[0]
            c_try = float(r_try @ r_try)
            if np.isfinite(c_try) and c_try < cost:
                q = q_try
                lam = max(lam / 3.0, 1e-10)
                accepted = True
                slow = slow + 1 if c_try > 0.99 * cost else 0
                break
            lam *= 4.0
        if not accepted or slow >= 3:
            break
    return q


def solve_point_ik(chain: KinematicChain, limits, target, q0, extra_residual=None,
                   tol_mm: float = 5e-3, max_iterations: int = 60):
    """Drive a chain's end effector to a Cartesian target.

    Args:
        chain: chain whose first joint is locked at zero.
        limits: (n-1, 2) limits of the movable joints, rad.
        target: (3,) Root-frame position, mm.
        q0: (n-1,) starting joints.
        extra_residual: optional (Q, T) -> (B, k) penalty rows stacked
            under the position error; rows must be positive exactly when
            violated so convergence requires them inactive.
        tol_mm: position tolerance ending the iteration.

    Returns:
        (q, err_mm, T): movable joints, final position error, and the
        end-effector transform at q.
    """
    target = np.asarray(target, dtype=float)

    def batch_eval(Q):
        full = np.zeros((Q.shape[0], chain.n_links))
        full[:, 1:] = Q
        T = forward_kinematics(chain, full)
        rows = T[:, :3, 3] - target
        if extra_residual is None:
            return rows
        return np.concatenate([rows, extra_residual(Q, T)], axis=1)

    def done(r):
        if np.linalg.norm(r[:3]) > tol_mm:
            return False
        return r.size == 3 or float(np.max(r[3:])) <= 0.0

    q = _descend(batch_eval, q0, limits, done, max_iterations)
    full = np.zeros(chain.n_links)
    full[1:] = q
    T = forward_kinematics(chain, full)
    err = float(np.linalg.norm(T[:3, 3] - target))
    return q, err, T


def solve_gaze_ik(model: RobotModel, target, h0, tol_px: float = 20.0,
                  max_iterations: int = 60):
    """Fixate both cameras on a Root-frame target.

    The six head joints follow the shared layout (neck 3, eyes tilt, left
    pan, right pan). Behind-camera projections enter as a flat sentinel
    offset so the remaining terms keep steering; a tiny posture term pulls
    toward h0 to pin the spare freedom.

    Returns:
        (h, worst_px): head joints and the larger of the two image-center
        offsets, inf when a camera still looks away from the target.
    """
    target = np.asarray(target, dtype=float)
    intr = model.intrinsics
    center = np.array(intr.center)
    anchor = np.asarray(h0, dtype=float)
    limits = model.joint_limits[14:20]
    eye_pan = ((model.left_eye, 4), (model.right_eye, 5))

    def offsets(H):
        out = np.empty((H.shape[0], 4))
        for j, (eye, pan_col) in enumerate(eye_pan):
            q = np.zeros((H.shape[0], 6))
            q[:, 1:4] = H[:, 0:3]
            q[:, 4] = H[:, 3]
            q[:, 5] = H[:, pan_col]
            Ti = rigid_inverse(forward_kinematics(eye, q))
            p = np.einsum("bij,j->bi", Ti[:, :3, :3], target) + Ti[:, :3, 3]
            behind = p[:, 2] <= 0.0
            z = np.where(behind, 1.0, p[:, 2])
            off = np.stack([
                intr.fx * p[:, 0] / z + intr.cx - center[0],
                intr.fy * p[:, 1] / z + intr.cy - center[1],
            ], axis=1)
            off[behind] = _GAZE_SENTINEL
            out[:, 2 * j:2 * j + 2] = off
        return out

    def batch_eval(H):
        return np.concatenate([offsets(H), _POSTURE_WEIGHT * (H - anchor)], axis=1)

    def done(r):
        o = r[:4]
        if np.any(o >= _GAZE_SENTINEL):
            return False
        return max(np.linalg.norm(o[0:2]), np.linalg.norm(o[2:4])) <= tol_px

    h = _descend(batch_eval, h0, limits, done, max_iterations)
    o = offsets(h[None, :])[0]
    if np.any(o >= _GAZE_SENTINEL):
        return h, float("inf")
    return h, max(float(np.linalg.norm(o[0:2])), float(np.linalg.norm(o[2:4])))
