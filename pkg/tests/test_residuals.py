"""Residual stacking, touch weighting and finite-difference Jacobians."""

import dataclasses
import math

import numpy as np
import numpy.testing as npt
import pytest

from chaincal.parameters import pack, parse_mask_spec, perturb, unpack
from chaincal.residuals import (
    SENTINEL_PX,
    ChainCombo,
    ResidualProblem,
    assemble,
    assemble_with_stats,
    combo_names,
    jacobian,
    mu_coefficient,
    reprojection_residual,
    touch_residual,
)

COMPONENTS = {
    "LARA": 3,
    "LALEye": 2,
    "LAREye": 2,
    "RALEye": 2,
    "RAREye": 2,
    "LALREye": 4,
    "LARALEye": 7,
    "LARALREye": 11,
}


def test_components_per_pose():
    assert set(combo_names()) == set(COMPONENTS)
    for name, want in COMPONENTS.items():
        assert ChainCombo.from_name(name).components_per_pose == want


def test_dimension_law(model, small_dataset):
    samples = small_dataset.samples[:7]
    mask = parse_mask_spec("LA:all")
    for name, per_pose in COMPONENTS.items():
        vec = assemble(model, mask, samples, ChainCombo.from_name(name))
        assert vec.shape == (7 * per_pose,)


def test_zero_residual_at_truth(model, small_dataset):
    samples = small_dataset.samples[:10]
    mask = parse_mask_spec("LA:all")
    full = assemble(model, mask, samples, ChainCombo.from_name("LARALREye"))
    # touch block limited by the generator's contact tolerance
    assert np.abs(full).max() < 1e-5
    reproj = assemble(model, mask, samples, ChainCombo.from_name("LALREye"))
    assert np.abs(reproj).max() < 1e-9


def test_touch_residual_is_gap_minus_recorded_noise(model, small_dataset):
    s = small_dataset.samples[0]
    base = touch_residual(model, s)
    shifted = dataclasses.replace(s, contact_noise=np.array([1.0, -2.0, 0.5]))
    npt.assert_allclose(touch_residual(model, shifted), base - [1.0, -2.0, 0.5])


def test_reprojection_residual_at_truth(model, small_dataset):
    s = small_dataset.samples[3]
    for pair in (("left_arm", "left_eye"), ("left_arm", "right_eye")):
        npt.assert_allclose(reprojection_residual(model, s, *pair), 0.0, atol=1e-9)


def test_mu_fixed_point_and_linearity():
    d = 320.0 / (math.pi / 3.0)
    assert mu_coefficient(d) == 1.0
    assert mu_coefficient(2.0 * d) == 0.5
    npt.assert_allclose(mu_coefficient(305.577), 1.0, atol=1e-5)
    got = mu_coefficient([d, 2.0 * d, 4.0 * d])
    npt.assert_array_equal(got, [1.0, 0.5, 0.25])
    with pytest.raises(ValueError):
        mu_coefficient(0.0)
    with pytest.raises(ValueError):
        mu_coefficient([-3.0, 100.0])


def test_mu_override_scales_touch_block_only(model, small_dataset):
    samples = small_dataset.samples[:5]
    mask = parse_mask_spec("LA:all")
    start = perturb(model, mask, 5, np.random.default_rng(0))
    combo = ChainCombo.from_name("LARALREye")
    one = assemble(start, mask, samples, combo, mu_override=1.0)
    two = assemble(start, mask, samples, combo, mu_override=2.0)
    per = combo.components_per_pose
    touch = np.arange(len(one)) % per < 3
    npt.assert_allclose(two[touch], 2.0 * one[touch])
    npt.assert_array_equal(two[~touch], one[~touch])


def test_mu_override_shape_check(model, small_dataset):
    samples = small_dataset.samples[:5]
    combo = ChainCombo.from_name("LARA")
    with pytest.raises(ValueError):
        ResidualProblem(model, samples, combo, mu_override=np.ones(4))
    per_pose = ResidualProblem(model, samples, combo, mu_override=np.ones(5))
    assert per_pose.dim == 15


def test_jacobian_matches_central_differences(model, small_dataset):
    samples = small_dataset.samples[:3]
    mask = parse_mask_spec("LA:all")
    combo = ChainCombo.from_name("LARALREye")
    start = perturb(model, mask, 5, np.random.default_rng(42))
    J = jacobian(start, mask, samples, combo)
    x0 = pack(start, mask)
    assert J.shape == (3 * 11, x0.size)

    def f(x):
        return assemble(unpack(start, mask, x), mask, samples, combo)

    for j in range(x0.size):
        h = 1e-6 if mask.free_entries[j].field in ("a", "d") else 1e-8
        e = np.zeros_like(x0)
        e[j] = h
        col = (f(x0 + e) - f(x0 - e)) / (2.0 * h)
        assert np.abs(J[:, j] - col).max() < 1e-4


def test_behind_camera_sentinel(model, small_dataset):
    samples = small_dataset.samples[:4]
    # flipping the last eye link turns the optical axis away from the arm
    mask = parse_mask_spec("LEye:alpha")
    vec = pack(model, mask)
    vec[-1] += math.pi
    flipped = unpack(model, mask, vec)
    combo = ChainCombo.from_name("LALEye")
    res, stats = assemble_with_stats(flipped, mask, samples, combo)
    assert stats.behind_camera == 4
    npt.assert_array_equal(res, np.full(8, SENTINEL_PX))


def test_empty_samples_rejected(model):
    with pytest.raises(ValueError):
        ResidualProblem(model, [], ChainCombo.from_name("LARA"))


def test_missing_observation_rejected(model, small_dataset):
    s = small_dataset.samples[0]
    bare = dataclasses.replace(s, pixels={}, visible={})
    with pytest.raises(ValueError):
        assemble(model, None, [bare], ChainCombo.from_name("LALEye"))
