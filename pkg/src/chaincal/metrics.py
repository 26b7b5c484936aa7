"""Calibration quality metrics and the per-run result record."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import (
    RobotModel,
    chain_q,
    end_effector_position,
    model_from_dict,
    model_to_dict,
)
from .observability import ObservabilityReport
from .optimizer import SolveReport
from .parameters import ParameterMask, mask_from_dict, mask_to_dict

RESULT_FORMAT = "chaincal-result"
RESULT_VERSION = 1

_ARMS = ("left_arm", "right_arm")


def euclidean_distance(a, b) -> np.ndarray:
    """Distance between matched 3-D points, broadcasting over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.linalg.norm(b - a, axis=-1)


def cartesian_error(estimated: RobotModel, truth: RobotModel, thetas, chain: str) -> np.ndarray:
    """Per-pose Euclidean end-effector gap between two models, mm.

    Args:
        estimated, truth: models compared at identical joint vectors.
        thetas: (n, 20) joint vectors.
        chain: chain name whose end effector is compared.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    q = chain_q(chain, thetas)
    a = end_effector_position(estimated.chain(chain), q)
    b = end_effector_position(truth.chain(chain), q)
    return euclidean_distance(b, a)


@dataclass(frozen=True)
class TestError:
    """Held-out end-effector accuracy, pooled over both arms."""

    mean_mm: float
    std_mm: float
    per_arm_mm: dict              # arm -> mean distance
    values_mm: np.ndarray         # (n_poses, 2), columns follow _ARMS

    def to_dict(self) -> dict:
        return {
            "mean_mm": self.mean_mm,
            "std_mm": self.std_mm,
            "per_arm_mm": dict(self.per_arm_mm),
            "values_mm": self.values_mm.tolist(),
        }

    @staticmethod
    def from_dict(data: dict) -> "TestError":
        return TestError(
            mean_mm=float(data["mean_mm"]),
            std_mm=float(data["std_mm"]),
            per_arm_mm={k: float(v) for k, v in data["per_arm_mm"].items()},
            values_mm=np.asarray(data["values_mm"], dtype=float),
        )


def test_error(estimated: RobotModel, truth: RobotModel, samples) -> TestError:
    """End-effector error of `estimated` against `truth` on held-out poses."""
    if len(samples) == 0:
        raise ValueError("need at least one test sample")
    thetas = np.array([s.theta for s in samples])
    cols = [cartesian_error(estimated, truth, thetas, arm) for arm in _ARMS]
    values = np.stack(cols, axis=1)
    pooled = values.ravel()
    std = float(np.std(pooled, ddof=1)) if pooled.size > 1 else 0.0
    return TestError(
        mean_mm=float(np.mean(pooled)),
        std_mm=std,
        per_arm_mm={arm: float(np.mean(col)) for arm, col in zip(_ARMS, cols)},
        values_mm=values,
    )


def parameter_errors(estimates, truth: RobotModel, mask: ParameterMask):
    """Per-parameter recovery error over repeated calibrations.

    Args:
        estimates: calibrated models, one per repetition.
        truth: ground-truth model.
        mask: the free parameters compared.

    Returns:
        (mean_abs, std) arrays in mask order; e_i is the mean absolute
        deviation over repetitions, std the sample spread (ddof=1, zero
        for a single repetition).
    """
    from .parameters import pack

    estimates = list(estimates)
    if not estimates:
        raise ValueError("need at least one estimate")
    ref = pack(truth, mask)
    devs = np.abs(np.array([pack(m, mask) for m in estimates]) - ref)
    mean_abs = devs.mean(axis=0)
    std = devs.std(axis=0, ddof=1) if len(estimates) > 1 else np.zeros_like(mean_abs)
    return mean_abs, std


def residual_scatter(estimates, truth: RobotModel, samples, chain: str = "left_arm") -> np.ndarray:
    """Signed end-effector error components per pose and repetition.

    Returns an (R * n, 5) array with columns (repetition, pose, ex, ey, ez)
    in mm, where the error vector is estimated minus truth position.
    """
    thetas = np.array([s.theta for s in samples])
    q = chain_q(chain, thetas)
    ref = end_effector_position(truth.chain(chain), q)
    rows = []
    for r, model in enumerate(estimates):
        err = end_effector_position(model.chain(chain), q) - ref
        idx = np.arange(len(samples))
        rows.append(np.column_stack([np.full(len(samples), r), idx, err]))
    return np.concatenate(rows, axis=0)


@dataclass
class CalibrationResult:
    """Everything one calibration run produced."""

    model: RobotModel
    mask: ParameterMask
    combo_label: str
    solve_report: SolveReport
    observability: ObservabilityReport
    test_ee_mm: TestError | None = None
    parameter_abs_error: np.ndarray | None = None

    def to_dict(self) -> dict:
        r = self.solve_report
        return {
            "format": RESULT_FORMAT,
            "version": RESULT_VERSION,
            "combo": self.combo_label,
            "mask": mask_to_dict(self.mask),
            "model": model_to_dict(self.model),
            "solve": {
                "x": np.asarray(r.x, dtype=float).tolist(),
                "initial_cost": float(r.initial_cost),
                "final_cost": float(r.final_cost),
                "iterations": int(r.iterations),
                "termination": r.termination,
                "cost_trace": [float(c) for c in r.cost_trace],
                "behind_camera_count": int(r.behind_camera_count),
            },
            "observability": self.observability.to_dict(),
            "test_error": None if self.test_ee_mm is None else self.test_ee_mm.to_dict(),
            "parameter_abs_error": (
                None if self.parameter_abs_error is None
                else np.asarray(self.parameter_abs_error, dtype=float).tolist()
            ),
        }

    @staticmethod
    def from_dict(data: dict) -> "CalibrationResult":
        if data.get("format") != RESULT_FORMAT:
            raise ValueError(f"not a {RESULT_FORMAT} record")
        if data.get("version") != RESULT_VERSION:
            raise ValueError(f"unsupported result version {data.get('version')!r}")
        s = data["solve"]
        report = SolveReport(
            x=np.asarray(s["x"], dtype=float),
            initial_cost=float(s["initial_cost"]),
            final_cost=float(s["final_cost"]),
            iterations=int(s["iterations"]),
            termination=s["termination"],
            cost_trace=[float(c) for c in s["cost_trace"]],
            behind_camera_count=int(s["behind_camera_count"]),
        )
        o = data["observability"]
        observability = ObservabilityReport(
            singular_values=np.asarray(o["singular_values"], dtype=float),
            free_count=int(o["free_count"]),
            pose_count=int(o["pose_count"]),
            residual_dim=int(o["residual_dim"]),
            rank=int(o["rank"]),
            rank_tolerance=float(o["rank_tolerance"]),
            o1=float(o["o1"]),
            o4=float(o["o4"]),
            evaluated_at=o["evaluated_at"],
        )
        err = data.get("parameter_abs_error")
        return CalibrationResult(
            model=model_from_dict(data["model"]),
            mask=mask_from_dict(data["mask"]),
            combo_label=data["combo"],
            solve_report=report,
            observability=observability,
            test_ee_mm=(
                None if data.get("test_error") is None
                else TestError.from_dict(data["test_error"])
            ),
            parameter_abs_error=None if err is None else np.asarray(err, dtype=float),
        )
