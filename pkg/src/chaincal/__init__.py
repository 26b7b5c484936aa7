"""Multi-chain kinematic self-calibration of a simulated humanoid upper body.

Generates self-touch/self-observation pose datasets from a ground-truth
model, perturbs and re-estimates DH parameters over configurable chain
combinations, and quantifies calibration quality and observability.
"""

from .camera import (
    BehindCameraError,
    CameraIntrinsics,
    PixelPoint,
    in_frame,
    project,
    rigid_inverse,
    root_to_eye,
)
from .dataset import (
    DEFAULT_WORKSPACE_BOX,
    Dataset,
    DatasetFormatError,
    GenerationError,
    NoiseSpec,
    PoseSample,
    apply_noise,
    generate,
    split,
)
from .dataset import load as load_dataset
from .dataset import save as save_dataset
from .experiment import (
    ConfigError,
    ExperimentConfig,
    aggregate,
    load_config,
    run_experiment,
)
from .kinematics import (
    DHLink,
    KinematicChain,
    RobotModel,
    chain_q,
    default_model,
    dh_transform,
    end_effector_position,
    forward_kinematics,
    load_model,
    model_hash,
    save_model,
)
from .metrics import (
    CalibrationResult,
    TestError,
    cartesian_error,
    euclidean_distance,
    parameter_errors,
    residual_scatter,
    test_error,
)
from .observability import ObservabilityReport, analyze, observability_indices
from .optimizer import SolveReport, SolverSettings, solve, solve_subset
from .parameters import (
    MaskEntry,
    ParameterMask,
    default_mask,
    pack,
    parse_mask_spec,
    perturb,
    unpack,
)
from .residuals import (
    ChainCombo,
    ResidualProblem,
    assemble,
    combo_names,
    jacobian,
    mu_coefficient,
    reprojection_residual,
    touch_residual,
)

__version__ = "0.1.0"

__all__ = [
    "BehindCameraError", "CameraIntrinsics", "PixelPoint", "in_frame", "project",
    "rigid_inverse", "root_to_eye",
    "DEFAULT_WORKSPACE_BOX", "Dataset", "DatasetFormatError", "GenerationError",
    "NoiseSpec", "PoseSample", "apply_noise", "generate", "split",
    "load_dataset", "save_dataset",
    "ConfigError", "ExperimentConfig", "aggregate", "load_config", "run_experiment",
    "DHLink", "KinematicChain", "RobotModel", "chain_q", "default_model",
    "dh_transform", "end_effector_position", "forward_kinematics",
    "load_model", "model_hash", "save_model",
    "CalibrationResult", "TestError", "cartesian_error", "parameter_errors",
    "euclidean_distance", "residual_scatter", "test_error",
    "ObservabilityReport", "analyze", "observability_indices",
    "SolveReport", "SolverSettings", "solve", "solve_subset",
    "MaskEntry", "ParameterMask", "default_mask", "pack", "parse_mask_spec",
    "perturb", "unpack",
    "ChainCombo", "ResidualProblem", "assemble", "combo_names", "jacobian",
    "mu_coefficient", "reprojection_residual", "touch_residual",
    "__version__",
]
