"""Damped least-squares solver and the end-to-end calibration wrapper.

The solver is a classic Levenberg-Marquardt loop on residual/Jacobian
closures: solve (J^T J + lambda I) step = -J^T r, accept only strict cost
decreases, shrink lambda by 3 on accept, double it on reject. Deterministic
for identical inputs; the accepted-cost trace is monotone by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_LAMBDA_CAP = 1.0e32


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 200
    cost_tolerance: float = 1e-12   # relative drop of accepted cost
    step_tolerance: float = 1e-10   # step norm relative to iterate norm
    initial_damping: float = 1e-3   # scaled by max diag(J^T J) at start
    damping_increase: float = 2.0
    damping_decrease: float = 3.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("cost_tolerance", "step_tolerance", "initial_damping"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.damping_increase <= 1 or self.damping_decrease <= 1:
            raise ValueError("damping factors must be > 1")


@dataclass
class SolveReport:
    x: np.ndarray
    initial_cost: float
    final_cost: float
    iterations: int
    termination: str                 # one of cost_tol, step_tol, max_iter
    cost_trace: list = field(default_factory=list)
    behind_camera_count: int = 0


def solve(residual_fn, jacobian_fn, x0, settings: SolverSettings | None = None) -> SolveReport:
    """Minimize sum of squared residuals from x0.

    Args:
        residual_fn: x -> residual vector.
        jacobian_fn: x -> Jacobian matrix (dim x n).
        x0: initial parameter vector.
        settings: SolverSettings; defaults used when None.

    Returns:
        SolveReport with the best iterate. Residuals must be finite at x0;
        non-finite trial residuals are treated as rejections. A singular
        damped system raises the damping rather than failing.
    """
    s = settings or SolverSettings()
    x = np.array(x0, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("x0 must be a non-empty 1-D vector")
    r = np.asarray(residual_fn(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValueError("residual is not finite at the initial point")
    cost = float(r @ r)
    trace = [cost]
    initial_cost = cost
    lam = None
    eye = np.eye(x.size)
    iterations = 0
    termination = "max_iter"

    while iterations < s.max_iterations:
        if cost == 0.0:
            termination = "cost_tol"
            break
        J = np.asarray(jacobian_fn(x), dtype=float)
        g = J.T @ r
        H = J.T @ J
        if lam is None:
            lam = s.initial_damping * max(float(H.diagonal().max()), np.finfo(float).tiny)

        accepted = False
        while lam <= _LAMBDA_CAP:
            try:
                step = np.linalg.solve(H + lam * eye, -g)
            except np.linalg.LinAlgError:
                lam *= s.damping_increase
                continue
            if not np.all(np.isfinite(step)):
                lam *= s.damping_increase
                continue
            x_try = x + step
            r_try = np.asarray(residual_fn(x_try), dtype=float)
            cost_try = float(r_try @ r_try) if np.all(np.isfinite(r_try)) else np.inf
            if cost_try < cost:
                rel_drop = (cost - cost_try) / cost
                step_rel = np.linalg.norm(step) / (np.linalg.norm(x) + s.step_tolerance)
                x, r, cost = x_try, r_try, cost_try
                trace.append(cost)
                iterations += 1
                lam /= s.damping_decrease
                accepted = True
                if rel_drop <= s.cost_tolerance:
                    termination = "cost_tol"
                elif step_rel <= s.step_tolerance:
                    termination = "step_tol"
                break
            lam *= s.damping_increase
        if not accepted:
            # no descent found at any damping: the step is effectively zero
            termination = "step_tol"
            break
        if termination != "max_iter":
            break

    return SolveReport(
        x=x,
        initial_cost=initial_cost,
        final_cost=cost,
        iterations=iterations,
        termination=termination,
        cost_trace=trace,
    )


def solve_subset(model, mask, samples, combo, settings: SolverSettings | None = None, *,
                 truth_model=None, test_samples=None, mu_override=None, mu_frozen=False,
                 observe_at="initial"):
    """Calibrate the masked parameters of a model against a sample slice.

    Args:
        model: initial (typically perturbed) RobotModel estimate.
        mask: ParameterMask naming the free entries.
        samples: training samples.
        combo: ChainCombo defining the residual terms.
        settings: solver settings.
        truth_model: when given together with test_samples, held-out
            end-effector errors and per-parameter errors are filled in.
        test_samples: held-out samples for evaluation.
        mu_override: fixed scalar or per-pose weight for touch components.
        mu_frozen: compute mu once at the initial estimate and keep it.
        observe_at: "initial" or "truth", where to evaluate observability.

    Returns:
        CalibrationResult.
    """
    from .kinematics import chain_q, end_effector_position
    from .metrics import CalibrationResult, test_error
    from .observability import analyze
    from .parameters import pack, unpack
    from .residuals import ResidualProblem, mu_coefficient

    if mask.free_count == 0:
        raise ValueError("mask has no free parameters")
    if mu_frozen and mu_override is None:
        # freeze mu at the initial estimate: per-pose distances computed once
        thetas = np.array([s.theta for s in samples])
        xla = end_effector_position(model.left_arm, chain_q("left_arm", thetas))
        xeye = end_effector_position(model.left_eye, chain_q("left_eye", thetas))
        mu_override = mu_coefficient(np.linalg.norm(xeye - xla, axis=1))

    prob = ResidualProblem(model, samples, combo, mask=mask, mu_override=mu_override)
    x0 = pack(model, mask)
    report = solve(prob.residual, prob.jacobian, x0, settings)
    report.behind_camera_count = prob.stats.behind_camera
    calibrated = unpack(model, mask, report.x)

    obs_model = truth_model if (observe_at == "truth" and truth_model is not None) else model
    observability = analyze(obs_model, mask, samples, combo, mu_override=mu_override)

    test_ee = None
    param_err = None
    if truth_model is not None and test_samples is not None:
        test_ee = test_error(calibrated, truth_model, test_samples)
        param_err = np.abs(pack(calibrated, mask) - pack(truth_model, mask))

    return CalibrationResult(
        model=calibrated,
        mask=mask,
        combo_label=combo.label,
        solve_report=report,
        observability=observability,
        test_ee_mm=test_ee,
        parameter_abs_error=param_err,
    )
