"""Damped least-squares solver behaviour and the calibration wrapper."""

import numpy as np
import numpy.testing as npt
import pytest

from chaincal.optimizer import SolverSettings, solve, solve_subset
from chaincal.parameters import pack, parse_mask_spec, perturb
from chaincal.residuals import ChainCombo


def linear_problem(seed):
    # orthonormal columns: each damped step contracts the error by ~lambda,
    # so three accepts land within 1e-10 of the least-squares solution
    rng = np.random.default_rng(seed)
    A = np.linalg.qr(rng.normal(size=(10, 4)))[0]
    b = 0.5 * rng.normal(size=10)
    x_star = np.linalg.lstsq(A, b, rcond=None)[0]
    return A, b, x_star


def rosenbrock():
    def r(x):
        return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

    def J(x):
        return np.array([[-20.0 * x[0], 10.0], [-1.0, 0.0]])

    return r, J


def test_linear_exactness_within_three_iterations():
    for seed in range(5):
        A, b, x_star = linear_problem(seed)
        report = solve(lambda x: A @ x - b, lambda x: A, np.zeros(4))
        assert report.iterations <= 3
        npt.assert_allclose(report.x, x_star, atol=1e-10)


def test_rosenbrock_converges():
    r, J = rosenbrock()
    report = solve(r, J, np.array([-1.2, 1.0]))
    npt.assert_allclose(report.x, [1.0, 1.0], atol=1e-8)
    assert report.final_cost < 1e-16


def test_accepted_cost_trace_is_monotone():
    r, J = rosenbrock()
    report = solve(r, J, np.array([-1.2, 1.0]))
    trace = np.array(report.cost_trace)
    assert trace[0] == report.initial_cost
    assert np.all(np.diff(trace) < 0)


def test_termination_taxonomy():
    A, b, _ = linear_problem(1)
    done = solve(lambda x: A @ x - b, lambda x: A, np.zeros(4))
    assert done.termination == "cost_tol"
    r, J = rosenbrock()
    capped = solve(r, J, np.array([-1.2, 1.0]), SolverSettings(max_iterations=1))
    assert capped.termination == "max_iter" and capped.iterations == 1
    # constant residual: no descent direction exists anywhere
    flat = solve(lambda x: np.array([1.0]), lambda x: np.array([[0.0]]), np.ones(1))
    assert flat.termination == "step_tol" and flat.iterations == 0


def test_determinism():
    r, J = rosenbrock()
    a = solve(r, J, np.array([-1.2, 1.0]))
    b = solve(r, J, np.array([-1.2, 1.0]))
    npt.assert_array_equal(a.x, b.x)
    assert a.cost_trace == b.cost_trace


def test_zero_jacobian_column_does_not_crash():
    # second parameter has no effect; damping keeps the system solvable
    A = np.array([[1.0, 0.0], [2.0, 0.0], [0.5, 0.0]])
    b = np.array([1.0, 2.0, 0.5])
    report = solve(lambda x: A @ x - b, lambda x: A, np.zeros(2))
    npt.assert_allclose(report.x[0], 1.0, atol=1e-8)
    assert report.final_cost < 1e-12


def test_input_validation():
    r, J = rosenbrock()
    with pytest.raises(ValueError):
        solve(r, J, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        solve(lambda x: np.array([np.nan]), lambda x: np.zeros((1, 1)), np.ones(1))
    with pytest.raises(ValueError):
        SolverSettings(max_iterations=0)
    with pytest.raises(ValueError):
        SolverSettings(damping_increase=1.0)


def test_offsets_recovered_from_clean_data(model, small_dataset):
    mask = parse_mask_spec("LA:offset")
    start = perturb(model, mask, 5, np.random.default_rng(8))
    result = solve_subset(start, mask, small_dataset.samples[:50],
                          ChainCombo.from_name("LARALREye"))
    npt.assert_allclose(pack(result.model, mask), pack(model, mask), atol=1e-6)
    assert result.solve_report.final_cost < 1e-8


def test_mu_frozen_matches_live_on_clean_data(model, small_dataset):
    mask = parse_mask_spec("LA:offset")
    start = perturb(model, mask, 5, np.random.default_rng(9))
    combo = ChainCombo.from_name("LARA")
    live = solve_subset(start, mask, small_dataset.samples[:50], combo)
    frozen = solve_subset(start, mask, small_dataset.samples[:50], combo, mu_frozen=True)
    npt.assert_allclose(pack(live.model, mask), pack(model, mask), atol=1e-6)
    npt.assert_allclose(pack(frozen.model, mask), pack(model, mask), atol=1e-6)


def test_empty_mask_rejected(model, small_dataset):
    mask = parse_mask_spec("LA:all")
    empty = mask.with_overrides(
        [(e.chain, e.link, e.field, False) for e in mask.free_entries]
    )
    with pytest.raises(ValueError):
        solve_subset(model, empty, small_dataset.samples[:5], ChainCombo.from_name("LARA"))
