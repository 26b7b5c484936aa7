"""Pinhole camera model shared by both eyes.

Camera frame convention: optical axis +Z, X right, Y down;
u = fx*X/Z + cx, v = fy*Y/Z + cy. No distortion.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class PixelPoint(NamedTuple):
    u: float
    v: float


class BehindCameraError(ValueError):
    """Raised when a point has non-positive depth in the camera frame."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 320
    height: int = 240

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def center(self) -> np.ndarray:
        """Image center (width/2, height/2) in pixels."""
        return np.array([self.width / 2.0, self.height / 2.0])


def project(point, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame point(s), mm, to pixel coordinates.

    point is (3,) or (M, 3). Raises BehindCameraError if any depth is <= 0.
    """
    p = np.asarray(point, dtype=float)
    single = p.ndim == 1
    if single:
        p = p[None, :]
    z = p[:, 2]
    if np.any(z <= 0.0):
        raise BehindCameraError(f"point at depth Z={z.min():.3f} mm is behind the camera")
    uv = np.empty((p.shape[0], 2))
    uv[:, 0] = intrinsics.fx * p[:, 0] / z + intrinsics.cx
    uv[:, 1] = intrinsics.fy * p[:, 1] / z + intrinsics.cy
    return uv[0] if single else uv


def in_frame(pixel, intrinsics: CameraIntrinsics):
    """True where a pixel lies inside [0, width) x [0, height)."""
    uv = np.asarray(pixel, dtype=float)
    single = uv.ndim == 1
    if single:
        uv = uv[None, :]
    ok = (
        (uv[:, 0] >= 0.0) & (uv[:, 0] < intrinsics.width)
        & (uv[:, 1] >= 0.0) & (uv[:, 1] < intrinsics.height)
    )
    return bool(ok[0]) if single else ok


def rigid_inverse(T: np.ndarray) -> np.ndarray:
    """Inverse of homogeneous rigid transform(s), shape (..., 4, 4)."""
    T = np.asarray(T, dtype=float)
    R = T[..., :3, :3]
    t = T[..., :3, 3]
    inv = np.zeros_like(T)
    Rt = np.swapaxes(R, -1, -2)
    inv[..., :3, :3] = Rt
    inv[..., :3, 3] = -(Rt @ t[..., None])[..., 0]
    inv[..., 3, 3] = 1.0
    return inv


def root_to_eye(model, eye: str, q_head) -> np.ndarray:
    """Transform taking Root-frame points into the given eye's camera frame.

    Args:
        model: RobotModel.
        eye: "left_eye" or "right_eye".
        q_head: per-link joint values of that eye chain, (6,) or (M, 6).

    Returns:
        (4, 4) or (M, 4, 4): the inverse of the eye chain's FK.
    """
    # local import: kinematics depends on this module for the intrinsics type
    from .kinematics import EYE_CHAINS, forward_kinematics

    if eye not in EYE_CHAINS:
        raise KeyError(f"eye must be one of {EYE_CHAINS}, got {eye!r}")
    return rigid_inverse(forward_kinematics(model.chain(eye), q_head))
