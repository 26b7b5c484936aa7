"""End-effector error metrics and the calibration result record."""

import numpy as np
import numpy.testing as npt
import pytest

from chaincal.metrics import (
    CalibrationResult,
    cartesian_error,
    euclidean_distance,
    parameter_errors,
    residual_scatter,
)
from chaincal.metrics import test_error as held_out_error
from chaincal.observability import analyze
from chaincal.optimizer import solve_subset
from chaincal.parameters import pack, parse_mask_spec, perturb, unpack
from chaincal.residuals import ChainCombo


def displaced(model, chain, delta_mm):
    # moving the last link along its joint axis shifts the end effector
    # by a rigid translation of exactly |delta| at every configuration
    mask = parse_mask_spec(f"{chain}:d").with_overrides(
        [(chain, i, "d", False) for i in range(1, 7)]
    )
    assert mask.free_count == 1
    return unpack(model, mask, pack(model, mask) + delta_mm)


def test_euclidean_distance_exact_and_batched():
    assert euclidean_distance((0.0, 0.0, 0.0), (1.0, 2.0, 2.0)) == 3.0
    got = euclidean_distance(np.zeros((2, 3)), [[3.0, 4.0, 0.0], [0.0, 0.0, 5.0]])
    npt.assert_array_equal(got, [5.0, 5.0])


def test_cartesian_error_translation_invariant(model, small_dataset):
    thetas = np.array([s.theta for s in small_dataset.samples[:12]])
    npt.assert_array_equal(cartesian_error(model, model, thetas, "left_arm"), 0.0)
    moved = displaced(model, "left_arm", 2.0)
    npt.assert_allclose(cartesian_error(moved, model, thetas, "left_arm"), 2.0,
                        atol=1e-9)
    single = cartesian_error(moved, model, small_dataset.samples[0].theta, "left_arm")
    assert single.shape == (1,)


def test_test_error_pools_both_arms(model, small_dataset):
    samples = small_dataset.samples[:10]
    est = displaced(displaced(model, "left_arm", 2.0), "right_arm", 1.0)
    err = held_out_error(est, model, samples)
    assert err.values_mm.shape == (10, 2)
    npt.assert_allclose(err.per_arm_mm["left_arm"], 2.0, atol=1e-9)
    npt.assert_allclose(err.per_arm_mm["right_arm"], 1.0, atol=1e-9)
    npt.assert_allclose(err.mean_mm, 1.5, atol=1e-9)
    npt.assert_allclose(err.std_mm, np.std(err.values_mm.ravel(), ddof=1))
    with pytest.raises(ValueError):
        held_out_error(est, model, [])


def test_parameter_errors_over_repetitions(model):
    mask = parse_mask_spec("LA:offset")
    vec = pack(model, mask)
    up = unpack(model, mask, vec + 0.02)
    down = unpack(model, mask, vec - 0.01)
    mean_abs, std = parameter_errors([up, down], model, mask)
    npt.assert_allclose(mean_abs, 0.015)
    npt.assert_allclose(std, np.std([0.02, 0.01], ddof=1))
    single_mean, single_std = parameter_errors([up], model, mask)
    npt.assert_allclose(single_mean, 0.02)
    npt.assert_array_equal(single_std, 0.0)
    with pytest.raises(ValueError):
        parameter_errors([], model, mask)


def test_residual_scatter_layout(model, small_dataset):
    samples = small_dataset.samples[:6]
    est = displaced(model, "left_arm", 2.0)
    rows = residual_scatter([est, model], model, samples)
    assert rows.shape == (12, 5)
    npt.assert_array_equal(rows[:6, 0], 0.0)
    npt.assert_array_equal(rows[6:, 0], 1.0)
    npt.assert_array_equal(rows[:6, 1], np.arange(6))
    npt.assert_allclose(np.linalg.norm(rows[:6, 2:], axis=1), 2.0, atol=1e-9)
    npt.assert_array_equal(rows[6:, 2:], 0.0)


def test_calibration_result_roundtrip(model, small_dataset):
    mask = parse_mask_spec("LA:offset")
    start = perturb(model, mask, 5, np.random.default_rng(1))
    result = solve_subset(start, mask, small_dataset.samples[:30],
                          ChainCombo.from_name("LARA"),
                          truth_model=model,
                          test_samples=small_dataset.samples[30:40])
    back = CalibrationResult.from_dict(result.to_dict())
    assert back.combo_label == "LARA"
    assert back.mask == result.mask
    npt.assert_array_equal(pack(back.model, mask), pack(result.model, mask))
    assert back.solve_report.termination == result.solve_report.termination
    npt.assert_array_equal(back.observability.singular_values,
                           result.observability.singular_values)
    npt.assert_allclose(back.test_ee_mm.mean_mm, result.test_ee_mm.mean_mm)
    npt.assert_array_equal(back.parameter_abs_error, result.parameter_abs_error)
    with pytest.raises(ValueError):
        CalibrationResult.from_dict({"format": "other"})
