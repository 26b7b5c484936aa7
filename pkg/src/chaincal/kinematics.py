"""Kinematic core: DH links, chains, the robot model, and forward kinematics.

Conventions used throughout the package:
  - classic (proximal) DH, one transform per link:
        T = Rz(q + offset) @ Tz(d) @ Tx(a) @ Rx(alpha)
  - lengths in millimetres, angles in radians
  - every chain starts at the shared Root frame; the first link of each
    chain belongs to the locked torso joint, so its joint value is always 0
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .camera import CameraIntrinsics

CHAIN_NAMES = ("left_arm", "right_arm", "left_eye", "right_eye")
ARM_CHAINS = ("left_arm", "right_arm")
EYE_CHAINS = ("left_eye", "right_eye")

# layout of the 20-entry joint vector shared by all chains:
#   0..6   left arm, 7..13 right arm, 14..16 neck, 17 eyes tilt,
#   18 left eye pan, 19 right eye pan
N_JOINTS = 20
_LA = slice(0, 7)
_RA = slice(7, 14)
_NECK = slice(14, 17)
_TILT = 17
_LPAN = 18
_RPAN = 19

MODEL_FORMAT = "chaincal-model"
MODEL_VERSION = 1

# number of links shared between the two eye chains (root-to-neck + neck)
SHARED_HEAD_LINKS = 4


@dataclass(frozen=True)
class DHLink:
    """One classic-DH link: a, d in mm; alpha, offset in rad."""

    a: float
    d: float
    alpha: float
    offset: float

    def __post_init__(self):
        for name in ("a", "d", "alpha", "offset"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"DHLink.{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))


def _frozen_array(values, shape=None):
    arr = np.array(values, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected array of shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class KinematicChain:
    """Ordered DH links from Root to end effector, plus an optional rigid tail.

    The tail (a fixed 4x4 transform appended after the last link) models a
    non-articulated extension such as the right-hand fingertip. It is never
    part of the parameter set.
    """

    name: str
    links: tuple
    fixed_tail: np.ndarray | None = None

    def __post_init__(self):
        if len(self.links) < 1:
            raise ValueError("a chain needs at least one link")
        object.__setattr__(self, "links", tuple(self.links))
        for ln in self.links:
            if not isinstance(ln, DHLink):
                raise TypeError("links must be DHLink instances")
        if self.fixed_tail is not None:
            tail = _frozen_array(self.fixed_tail, (4, 4))
            R = tail[:3, :3]
            if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
                raise ValueError("fixed_tail rotation block is not orthonormal")
            if not np.allclose(tail[3], [0.0, 0.0, 0.0, 1.0], atol=0.0):
                raise ValueError("fixed_tail bottom row must be (0,0,0,1)")
            object.__setattr__(self, "fixed_tail", tail)

    @property
    def n_links(self) -> int:
        return len(self.links)

    def params(self) -> np.ndarray:
        """Link parameters as an (n_links, 4) array, columns a, d, alpha, offset."""
        return np.array([(l.a, l.d, l.alpha, l.offset) for l in self.links])


def dh_transform(link: DHLink, q: float) -> np.ndarray:
    """Homogeneous transform of one link at joint value q (rad)."""
    th = q + link.offset
    ct, st = np.cos(th), np.sin(th)
    ca, sa = np.cos(link.alpha), np.sin(link.alpha)
    return np.array([
        [ct, -st * ca, st * sa, link.a * ct],
        [st, ct * ca, -ct * sa, link.a * st],
        [0.0, sa, ca, link.d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _chain_transforms(params: np.ndarray, q: np.ndarray, tail: np.ndarray | None) -> np.ndarray:
    """Batched FK for raw link parameters. q has shape (M, n_links)."""
    a = params[:, 0]
    d = params[:, 1]
    ca = np.cos(params[:, 2])
    sa = np.sin(params[:, 2])
    th = q + params[:, 3]
    ct = np.cos(th)
    st = np.sin(th)
    m, n = q.shape
    A = np.zeros((m, n, 4, 4))
    A[..., 0, 0] = ct
    A[..., 0, 1] = -st * ca
    A[..., 0, 2] = st * sa
    A[..., 0, 3] = a * ct
    A[..., 1, 0] = st
    A[..., 1, 1] = ct * ca
    A[..., 1, 2] = -ct * sa
    A[..., 1, 3] = a * st
    A[..., 2, 1] = sa
    A[..., 2, 2] = ca
    A[..., 2, 3] = d
    A[..., 3, 3] = 1.0
    T = A[:, 0]
    for i in range(1, n):
        T = T @ A[:, i]
    if tail is not None:
        T = T @ tail
    return T


def forward_kinematics(chain: KinematicChain, q) -> np.ndarray:
    """Root-to-end-effector transform(s) of a chain.

    Args:
        chain: the kinematic chain.
        q: joint values, one per link. Shape (n_links,) for a single pose
           or (M, n_links) for a batch.

    Returns:
        (4, 4) for a single pose, (M, 4, 4) for a batch. Includes the
        fixed tail when the chain has one.
    """
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.shape[1] != chain.n_links:
        raise ValueError(f"{chain.name}: expected {chain.n_links} joint values, got {q.shape[1]}")
    T = _chain_transforms(chain.params(), q, chain.fixed_tail)
    return T[0] if single else T


def end_effector_position(chain: KinematicChain, q) -> np.ndarray:
    """End-effector position(s) in Root coordinates, mm."""
    T = forward_kinematics(chain, q)
    return T[..., :3, 3]


def chain_q(chain_name: str, theta) -> np.ndarray:
    """Per-link joint values of one chain from the shared 20-entry vector.

    The first link of every chain is the locked torso joint (always 0).
    theta may be (20,) or (M, 20); the result is (n_links,) or (M, n_links).
    """
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    if single:
        theta = theta[None, :]
    if theta.shape[1] != N_JOINTS:
        raise ValueError(f"expected {N_JOINTS} joint values, got {theta.shape[1]}")
    m = theta.shape[0]
    zero = np.zeros((m, 1))
    if chain_name == "left_arm":
        q = np.concatenate([zero, theta[:, _LA]], axis=1)
    elif chain_name == "right_arm":
        q = np.concatenate([zero, theta[:, _RA]], axis=1)
    elif chain_name == "left_eye":
        q = np.concatenate([zero, theta[:, _NECK], theta[:, [_TILT, _LPAN]]], axis=1)
    elif chain_name == "right_eye":
        q = np.concatenate([zero, theta[:, _NECK], theta[:, [_TILT, _RPAN]]], axis=1)
    else:
        raise KeyError(f"unknown chain {chain_name!r}")
    return q[0] if single else q


@dataclass(frozen=True)
class RobotModel:
    """Four kinematic chains sharing a Root frame, camera intrinsics, limits.

    The eye chains share their first SHARED_HEAD_LINKS links (the head);
    construction rejects models where the shared rows differ. joint_limits
    is a (20, 2) array of per-joint (lo, hi) in rad, laid out like the
    20-entry joint vector.
    """

    left_arm: KinematicChain
    right_arm: KinematicChain
    left_eye: KinematicChain
    right_eye: KinematicChain
    intrinsics: CameraIntrinsics
    joint_limits: np.ndarray = field(default=None)

    def __post_init__(self):
        for arm in (self.left_arm, self.right_arm):
            if arm.n_links != 8:
                raise ValueError(f"{arm.name}: arm chains have 8 links, got {arm.n_links}")
        for eye in (self.left_eye, self.right_eye):
            if eye.n_links != 6:
                raise ValueError(f"{eye.name}: eye chains have 6 links, got {eye.n_links}")
        for i in range(SHARED_HEAD_LINKS):
            if self.left_eye.links[i] != self.right_eye.links[i]:
                raise ValueError(
                    f"eye chains must share head link {i + 1}: "
                    f"{self.left_eye.links[i]} != {self.right_eye.links[i]}"
                )
        if self.joint_limits is None:
            lim = np.tile([-np.pi / 2, np.pi / 2], (N_JOINTS, 1))
        else:
            lim = np.array(self.joint_limits, dtype=float)
        if lim.shape != (N_JOINTS, 2):
            raise ValueError(f"joint_limits must be ({N_JOINTS}, 2), got {lim.shape}")
        if np.any(lim[:, 0] >= lim[:, 1]):
            raise ValueError("joint_limits must have lo < hi")
        lim.setflags(write=False)
        object.__setattr__(self, "joint_limits", lim)

    def chain(self, name: str) -> KinematicChain:
        if name not in CHAIN_NAMES:
            raise KeyError(f"unknown chain {name!r}")
        return getattr(self, name)

    def chains(self):
        return tuple(self.chain(n) for n in CHAIN_NAMES)


def _link_to_record(link: DHLink) -> dict:
    return {"a_mm": link.a, "d_mm": link.d, "alpha_rad": link.alpha, "offset_rad": link.offset}


def _link_from_record(rec: dict) -> DHLink:
    try:
        return DHLink(rec["a_mm"], rec["d_mm"], rec["alpha_rad"], rec["offset_rad"])
    except KeyError as e:
        raise ValueError(f"link record missing field {e}") from None


def model_to_dict(model: RobotModel) -> dict:
    chains = {}
    for name in CHAIN_NAMES:
        chain = model.chain(name)
        entry = {"links": [_link_to_record(l) for l in chain.links]}
        if chain.fixed_tail is not None:
            entry["fixed_tail"] = chain.fixed_tail.tolist()
        chains[name] = entry
    intr = model.intrinsics
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "chains": chains,
        "joint_limits": model.joint_limits.tolist(),
        "camera": {
            "fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
            "width": intr.width, "height": intr.height,
        },
    }


def model_from_dict(data: dict) -> RobotModel:
    if data.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} file (format={data.get('format')!r})")
    if data.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {data.get('version')!r}, expected {MODEL_VERSION}")
    chains = {}
    for name in CHAIN_NAMES:
        if name not in data["chains"]:
            raise ValueError(f"model file is missing chain {name!r}")
        entry = data["chains"][name]
        chains[name] = KinematicChain(
            name=name,
            links=tuple(_link_from_record(r) for r in entry["links"]),
            fixed_tail=np.array(entry["fixed_tail"]) if "fixed_tail" in entry else None,
        )
    cam = data["camera"]
    intr = CameraIntrinsics(
        fx=cam["fx"], fy=cam["fy"], cx=cam["cx"], cy=cam["cy"],
        width=int(cam["width"]), height=int(cam["height"]),
    )
    return RobotModel(
        left_arm=chains["left_arm"],
        right_arm=chains["right_arm"],
        left_eye=chains["left_eye"],
        right_eye=chains["right_eye"],
        intrinsics=intr,
        joint_limits=np.array(data["joint_limits"]) if "joint_limits" in data else None,
    )


def save_model(model: RobotModel, path) -> None:
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f, indent=2)
        f.write("\n")


def load_model(path) -> RobotModel:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: not valid JSON ({e})") from None
    return model_from_dict(data)


def model_hash(model: RobotModel) -> str:
    """Stable content hash of a model, used to pair datasets with models."""
    payload = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def default_model() -> RobotModel:
    """The bundled iCub-like upper-body model (ground truth for simulation)."""
    ref = resources.files("chaincal").joinpath("data/icub_upper_body.json")
    with ref.open() as f:
        return model_from_dict(json.load(f))
