"""Self-touch / self-observation pose datasets: generation, noise, I/O.

A sample records one fixated self-touch: left palm and right fingertip
meet at a sampled target (contact discrepancy <= 0.01 mm at generation),
both cameras fixate it (within 20 px of the image centers), and the true
pixel projections of both end effectors are stored per (arm, eye) pair.

Generation pipeline per target, each with its own RNG stream derived from
(seed, attempt index) so ordering and parallelism cannot change results:
  1. left-arm position IK to the target,
  2. right-arm position IK to the same point, with the fingertip approach
     penalized beyond 50 degrees from the palm-perpendicular,
  3. head/eye fixation IK,
  4. rejection on joint limits, behind-camera, or IK failure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .camera import PixelPoint, in_frame, project, rigid_inverse
from .ik import solve_gaze_ik, solve_point_ik, within_limits
from .kinematics import RobotModel, chain_q, forward_kinematics, model_hash

DATASET_FORMAT = "chaincal-dataset"
DATASET_VERSION = 1

ARM_EYE_PAIRS = (
    ("left_arm", "left_eye"),
    ("left_arm", "right_eye"),
    ("right_arm", "left_eye"),
    ("right_arm", "right_eye"),
)

# Root-frame axis-aligned target box, mm: the dense intersection of
# left-palm and right-fingertip reach that both cameras can fixate;
# both arms can only meet in a narrow band straddling the midplane
DEFAULT_WORKSPACE_BOX = ((40.0, 180.0), (-20.0, 130.0), (-20.0, 20.0))

# per-arm position tolerance; far below the 0.01 mm contact budget so the
# touch residual of clean data is numerically consistent with the model
_IK_TOL_MM = 1e-6
_GAZE_TOL_PX = 20.0        # fixation distance from both image centers
_APPROACH_MAX_DEG = 50.0   # fingertip angle from the palm-perpendicular
_APPROACH_WEIGHT = 200.0


class GenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian noise levels: std per touch axis (mm), std per pixel coordinate (px)."""

    sigma_touch_mm: float = 0.0
    sigma_camera_px: float = 0.0

    def __post_init__(self):
        if self.sigma_touch_mm < 0 or self.sigma_camera_px < 0:
            raise ValueError("noise levels must be >= 0")

    @property
    def clean(self) -> bool:
        return self.sigma_touch_mm == 0.0 and self.sigma_camera_px == 0.0


@dataclass(frozen=True)
class PoseSample:
    """One generated configuration and its (possibly noisy) observations."""

    target: np.ndarray          # (3,) sampled contact point, mm
    theta: np.ndarray           # (20,) joint vector, rad
    contact_noise: np.ndarray   # (3,) recorded touch-measurement noise, mm
    pixels: Mapping             # {(arm, eye): PixelPoint}
    visible: Mapping            # {(arm, eye): bool}

    def __post_init__(self):
        target = np.asarray(self.target, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        eps = np.asarray(self.contact_noise, dtype=float)
        if target.shape != (3,) or eps.shape != (3,) or theta.shape != (20,):
            raise ValueError("bad sample field shapes")
        for arr in (target, theta, eps):
            arr.setflags(write=False)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "contact_noise", eps)
        pixels = dict(self.pixels)
        visible = dict(self.visible)
        for pair in pixels:
            if pair not in ARM_EYE_PAIRS:
                raise ValueError(f"unknown observation pair {pair!r}")
            if not visible.get(pair, False):
                raise ValueError(f"pixel recorded for non-visible pair {pair!r}")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "visible", visible)


@dataclass(frozen=True)
class Dataset:
    model_hash: str
    samples: tuple
    noise: NoiseSpec
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, indices) -> "Dataset":
        return replace(self, samples=tuple(self.samples[i] for i in indices))


def _observe(model: RobotModel, theta: np.ndarray):
    """True pixel projections and visibility of both end effectors."""
    pos = {
        arm: forward_kinematics(model.chain(arm), chain_q(arm, theta))[:3, 3]
        for arm in ("left_arm", "right_arm")
    }
    eye_T = {
        eye: forward_kinematics(model.chain(eye), chain_q(eye, theta))
        for eye in ("left_eye", "right_eye")
    }
    pixels = {}
    visible = {}
    for arm, eye in ARM_EYE_PAIRS:
        Ti = rigid_inverse(eye_T[eye])
        p = Ti[:3, :3] @ pos[arm] + Ti[:3, 3]
        if p[2] <= 0.0:
            visible[(arm, eye)] = False
            continue
        uv = project(p, model.intrinsics)
        ok = in_frame(uv, model.intrinsics)
        visible[(arm, eye)] = ok
        if ok:
            pixels[(arm, eye)] = PixelPoint(float(uv[0]), float(uv[1]))
    return pixels, visible


def _approach_penalty(palm_axis: np.ndarray):
    cos_max = np.cos(np.radians(_APPROACH_MAX_DEG))

    def extra(Q, T):
        # the fingertip points along its frame's z (the tail direction);
        # keep it within the cone around the palm z so the touch is a
        # finger-into-palm contact rather than an edge graze
        dots = T[:, :3, 2] @ palm_axis
        return (_APPROACH_WEIGHT * np.maximum(0.0, cos_max - dots))[:, None]

    return extra


def _center_warm_start(model: RobotModel, box, seed: int):
    """IK solutions at the box center, used to seed every target's IK."""
    center = np.array([(lo + hi) / 2.0 for lo, hi in box])
    # attempt streams use (seed, i) with small i; stay clear of them
    rng = np.random.default_rng((seed, 1 << 32))
    la_lim = model.joint_limits[0:7]
    ra_lim = model.joint_limits[7:14]
    best = {"left_arm": None, "right_arm": None, "gaze": None}
    for _ in range(24):
        q0 = rng.uniform(-0.8, 0.8, 7)
        q, err, _ = solve_point_ik(model.left_arm, la_lim, center, q0)
        if err < 1.0 and within_limits(q, la_lim):
            best["left_arm"] = q
            break
    for _ in range(24):
        q0 = rng.uniform(-0.8, 0.8, 7)
        q, err, _ = solve_point_ik(model.right_arm, ra_lim, center, q0)
        if err < 1.0 and within_limits(q, ra_lim):
            best["right_arm"] = q
            break
    for _ in range(24):
        h0 = rng.uniform(-1.0, 1.0, 6)
        h, off = solve_gaze_ik(model, center, h0)
        if off < 100.0 and within_limits(h, model.joint_limits[14:20]):
            best["gaze"] = h
            break
    for key, val in best.items():
        if val is None:
            raise GenerationError(f"workspace box center is unreachable at stage {key}")
    return best


def _generate_one(model: RobotModel, box, warm, rng):
    """One attempt: returns (PoseSample, None) or (None, failed_stage)."""
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    target = rng.uniform(lo, hi)
    la_lim = model.joint_limits[0:7]
    ra_lim = model.joint_limits[7:14]
    head_lim = model.joint_limits[14:20]

    q_la = None
    for _ in range(3):
        q0 = warm["left_arm"] + rng.normal(0.0, 0.15, 7)
        q, err, T_la = solve_point_ik(model.left_arm, la_lim, target, q0,
                                      tol_mm=_IK_TOL_MM)
        if err <= _IK_TOL_MM and within_limits(q, la_lim):
            q_la = q
            palm_axis = T_la[:3, 2]
            break
    if q_la is None:
        return None, "left_arm_ik"

    q_ra = None
    extra = _approach_penalty(palm_axis)
    for _ in range(3):
        q0 = warm["right_arm"] + rng.normal(0.0, 0.15, 7)
        q, err, _ = solve_point_ik(model.right_arm, ra_lim, target, q0,
                                   extra_residual=extra, tol_mm=_IK_TOL_MM)
        if err <= _IK_TOL_MM and within_limits(q, ra_lim):
            q_ra = q
            break
    if q_ra is None:
        return None, "right_arm_ik"

    head = None
    for _ in range(3):
        h0 = warm["gaze"] + rng.normal(0.0, 0.1, 6)
        h, off = solve_gaze_ik(model, target, h0)
        if off <= _GAZE_TOL_PX and within_limits(h, head_lim):
            head = h
            break
    if head is None:
        return None, "gaze_ik"

    theta = np.concatenate([q_la, q_ra, head])
    pixels, visible = _observe(model, theta)
    if not all(visible.get(pair, False) for pair in ARM_EYE_PAIRS):
        return None, "visibility"
    sample = PoseSample(
        target=target,
        theta=theta,
        contact_noise=np.zeros(3),
        pixels=pixels,
        visible=visible,
    )
    return sample, None


def generate(model: RobotModel, count: int, box=DEFAULT_WORKSPACE_BOX, seed: int = 0) -> Dataset:
    """Generate a clean dataset of `count` fixated self-touch poses.

    Args:
        model: ground-truth model driving IK and observations.
        count: number of accepted samples.
        box: ((xlo, xhi), (ylo, yhi), (zlo, zhi)) target volume, mm.
        seed: master seed; attempt i uses the stream (seed, i+1).

    Raises:
        GenerationError when the retry budget runs out, naming the stage
        that rejected most attempts.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    for lo, hi in box:
        if not lo < hi:
            raise ValueError(f"degenerate box interval ({lo}, {hi})")
    hash_ = model_hash(model)
    if count == 0:
        return Dataset(model_hash=hash_, samples=(), noise=NoiseSpec(), seed=seed)

    warm = _center_warm_start(model, box, seed)
    samples = []
    failures = {}
    budget = max(200, 6 * count)
    attempt = 0
    while len(samples) < count and attempt < budget:
        attempt += 1
        rng = np.random.default_rng((seed, attempt))
        sample, failed = _generate_one(model, box, warm, rng)
        if sample is None:
            failures[failed] = failures.get(failed, 0) + 1
        else:
            samples.append(sample)
    if len(samples) < count:
        worst = max(failures.items(), key=lambda kv: kv[1]) if failures else ("unknown", 0)
        raise GenerationError(
            f"generated only {len(samples)}/{count} poses in {budget} attempts; "
            f"dominant failing stage: {worst[0]} ({worst[1]} rejections; all: {failures})"
        )
    return Dataset(model_hash=hash_, samples=tuple(samples), noise=NoiseSpec(), seed=seed)


def apply_noise(dataset: Dataset, noise: NoiseSpec, rng) -> Dataset:
    """Add Gaussian observation noise to a clean dataset.

    Touch noise is one 3-vector per sample recorded in contact_noise; pixel
    noise lands on every visible pair's observation. Draws happen per
    sample in order (touch first, then pairs in canonical order), so a
    given (seed, spec) always produces the same dataset.
    """
    if not dataset.noise.clean:
        raise ValueError("apply_noise expects a clean dataset; regenerate instead of re-noising")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    out = []
    for s in dataset.samples:
        eps = rng.normal(0.0, noise.sigma_touch_mm, 3)
        pixels = {}
        for pair in ARM_EYE_PAIRS:
            if pair in s.pixels:
                duv = rng.normal(0.0, noise.sigma_camera_px, 2)
                p = s.pixels[pair]
                pixels[pair] = PixelPoint(p.u + duv[0], p.v + duv[1])
        out.append(replace(s, contact_noise=eps, pixels=pixels))
    return Dataset(model_hash=dataset.model_hash, samples=tuple(out), noise=noise, seed=dataset.seed)


def split(dataset, n_train: int, n_test: int, seed: int):
    """Disjoint train/test index arrays.

    The test block is the first n_test entries of the seed's permutation,
    so it stays fixed while n_train sweeps; training indices follow it.
    Accepts a Dataset or an integer sample count.
    """
    n = len(dataset) if not isinstance(dataset, (int, np.integer)) else int(dataset)
    if n_train < 0 or n_test < 0 or n_train + n_test > n:
        raise ValueError(f"cannot split {n} samples into {n_train} train + {n_test} test")
    perm = np.random.default_rng(seed).permutation(n)
    test = perm[:n_test]
    train = perm[n_test:n_test + n_train]
    return train, test


def _pair_key(pair) -> str:
    return f"{pair[0]}:{pair[1]}"


def _pair_from_key(key: str):
    parts = tuple(key.split(":"))
    if parts not in ARM_EYE_PAIRS:
        raise DatasetFormatError(f"unknown observation pair key {key!r}")
    return parts


def save(dataset: Dataset, path) -> None:
    """Write a dataset as JSON lines: one header record, one per sample."""
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "model_hash": dataset.model_hash,
        "sigma_touch_mm": dataset.noise.sigma_touch_mm,
        "sigma_camera_px": dataset.noise.sigma_camera_px,
        "seed": dataset.seed,
        "count": len(dataset),
    }
    with open(path, "w") as f:
        f.write(json.dumps(header) + "\n")
        for s in dataset.samples:
            rec = {
                "target_mm": s.target.tolist(),
                "theta_rad": s.theta.tolist(),
                "contact_noise_mm": s.contact_noise.tolist(),
                "pixels": {_pair_key(k): [p.u, p.v] for k, p in s.pixels.items()},
                "visible": {_pair_key(k): v for k, v in s.visible.items()},
            }
            f.write(json.dumps(rec) + "\n")


def load(path) -> Dataset:
    """Read a dataset written by save(); floats round-trip bit-exact."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")

    def parse(i, line):
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"{path}:{i + 1}: invalid JSON ({e})") from None

    header = parse(0, lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"{path}: not a {DATASET_FORMAT} file")
    if header.get("version") != DATASET_VERSION:
        raise DatasetFormatError(
            f"{path}: unsupported dataset version {header.get('version')!r}, "
            f"expected {DATASET_VERSION}"
        )
    samples = []
    for i, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        rec = parse(i, line)
        try:
            samples.append(PoseSample(
                target=rec["target_mm"],
                theta=rec["theta_rad"],
                contact_noise=rec["contact_noise_mm"],
                pixels={_pair_from_key(k): PixelPoint(*uv) for k, uv in rec["pixels"].items()},
                visible={_pair_from_key(k): bool(v) for k, v in rec["visible"].items()},
            ))
        except (KeyError, ValueError, TypeError) as e:
            raise DatasetFormatError(f"{path}:{i + 1}: bad sample record ({e})") from None
    if header.get("count") != len(samples):
        raise DatasetFormatError(
            f"{path}: header count {header.get('count')} != {len(samples)} sample lines"
        )
    return Dataset(
        model_hash=header["model_hash"],
        samples=tuple(samples),
        noise=NoiseSpec(header["sigma_touch_mm"], header["sigma_camera_px"]),
        seed=header["seed"],
    )
