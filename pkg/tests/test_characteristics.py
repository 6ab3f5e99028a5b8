from dataclasses import replace

import numpy as np
import pytest

from roughpme.domain.geometry import Domain
from roughpme.engine.errors import BallViolationError, FlowError, StepAlignmentError
from roughpme.signals.roughpath import (
    HolderMetricParams, SmoothPath, coarsen, dyadic_pair_grid, sample_brownian, schauder_path,
)
from roughpme.systems.characteristics import (
    CharState, FlowParams, backward_flow, boundary_estimates, check_inverse, fit_power_law,
    flow_stability, flow_trajectory, forward_flow, integrated_divergence, measure_preservation,
    _growth, path_ball_radius, sign_preservation, transported_support_check, transported_test_function,
    velocity_comparability,
)
from roughpme.systems.coefficients import build_coefficient, linear_in_xi_coefficient, zero_coefficient

FLOW = FlowParams(dt=2.5e-4)


@pytest.fixture
def points(dom):
    x, xi = np.meshgrid(np.linspace(0.05, 0.95, 9), np.linspace(-1.0, 1.0, 9), indexing='ij')
    return x.ravel(), xi.ravel()


def test_linear_in_xi_flow_is_a_translation():
    path = sample_brownian(2, 1, 16, 0.5)
    c = linear_in_xi_coefficient((1.0,), amplitude=0.7)
    x = np.array([0.1, 0.4, 0.8])
    xi = np.array([-1.0, 0.0, 2.0])
    final = forward_flow(CharState.start(x, xi), 0.0, 0.5, path, c, FLOW)
    expected = x - 0.7 * (path.evaluate(0.5)[0] - path.evaluate(0.0)[0])
    assert np.allclose(final.x, expected, atol=1e-12)
    assert np.array_equal(final.xi, xi)


def test_zero_coefficient_flow_is_the_identity(brownian):
    state = CharState.start([0.2, 0.7], [0.5, -0.5], with_jacobian=True)
    final = forward_flow(state, 0.0, 0.5, brownian, zero_coefficient(2), FlowParams(with_jacobian=True))
    assert np.array_equal(final.x, state.x)
    assert np.allclose(final.jac, np.eye(2))


def test_inverse_relation(brownian, coefficient, points):
    assert check_inverse(*points, 0.1, 0.5, brownian, coefficient, FLOW) < 1e-8


def test_flow_structure_over_the_unit_horizon(dom):
    # the characteristics suite setup: amplitude 0.1, |xi| <= 1, dt = 1e-3
    path = schauder_path(1, 64, 1.0)
    c = build_coefficient("basis-product", dom, basis=["sin2_1"], amplitude=0.1)
    x, xi = np.meshgrid(np.linspace(0.05, 0.95, 6), np.linspace(-1.0, 1.0, 6), indexing='ij')
    flow = FlowParams(dt=1e-3)
    assert check_inverse(x.ravel(), xi.ravel(), 0.0, 1.0, path, c, flow) < 1e-8
    assert measure_preservation(x.ravel(), xi.ravel(), 0.0, 1.0, path, c, flow) < 1e-6


def test_backward_flow_undoes_forward_flow(brownian, coefficient, points):
    start = CharState.start(*points)
    there = forward_flow(start, 0.2, 0.5, brownian, coefficient, FLOW)
    back = backward_flow(there, 0.5, 0.3, brownian, coefficient, FLOW)
    assert np.max(np.abs(back.x - start.x)) < 1e-8
    with pytest.raises(FlowError):
        backward_flow(start, 0.2, 0.3, brownian, coefficient, FLOW)


def test_measure_and_sign_preservation(brownian, coefficient, points):
    assert measure_preservation(*points, 0.0, 0.5, brownian, coefficient, FLOW) < 1e-6
    assert integrated_divergence(*points, 0.0, 0.5, brownian, coefficient, FLOW) < 1e-6
    x = np.concatenate((points[0], [0.3, 0.6]))
    xi = np.concatenate((points[1], [0.0, 0.0]))
    assert sign_preservation(x, xi, 0.0, 0.5, brownian, coefficient, FLOW)


def test_divergence_sees_a_compressible_field(brownian, coefficient, points):
    # d_xi of the xi-equation no longer cancels d_x of the x-equation
    leaky = replace(coefficient, eval_divA=lambda x, xi: np.column_stack((xi, np.zeros_like(xi))))
    drift = abs(brownian.evaluate(0.5)[0] - brownian.evaluate(0.0)[0])
    measured = integrated_divergence(*points, 0.0, 0.5, brownian, leaky, FLOW)
    assert measured == pytest.approx(drift, rel=1e-4, abs=1e-6)


def test_flow_trajectory_records_requested_times(brownian, coefficient):
    traj = flow_trajectory(CharState.start([0.5], [1.0]), 0.0, 0.5, brownian, coefficient, FLOW,
                           record_times=[0.0, 0.25, 0.5])
    assert traj.times == pytest.approx([0.0, 0.25, 0.5])
    assert traj.x.shape == (3, 1)


def test_flow_outside_the_horizon(brownian, coefficient):
    with pytest.raises(FlowError):
        forward_flow(CharState.start([0.5], [1.0]), 0.0, 0.75, brownian, coefficient, FLOW)


def test_strict_alignment():
    path = SmoothPath(np.array([0.0, 0.1, 0.25]), np.array([0.0, 1.0, 0.0]))
    c = linear_in_xi_coefficient()
    with pytest.raises(StepAlignmentError):
        forward_flow(CharState.start([0.5], [1.0]), 0.0, 0.25, path, c,
                     FlowParams(dt=0.04, strict_alignment=True))
    forward_flow(CharState.start([0.5], [1.0]), 0.0, 0.25, path, c, FlowParams(dt=0.05, strict_alignment=True))


def test_boundary_estimates(dom, brownian, coefficient):
    report = boundary_estimates(dom, [-1.0, 0.5], 0.0, 0.5, brownian, coefficient, FLOW, levels=range(3, 7))
    assert report.standstill <= 1e-10
    assert report.distances.size == 4
    assert np.all(np.isfinite(report.displacement))
    assert report.ratio_bound >= np.max(report.displacement)
    assert report.bounded(0.5)


def test_ratio_growth_towards_the_boundary():
    d = 2.0 ** -np.arange(3, 9)
    assert _growth(d, np.full(d.size, 0.7)) == 0.0
    assert _growth(d, 3.0 * d) == 0.0
    assert _growth(d, d ** -0.5) == pytest.approx(2.0 ** 1.5 - 1.0)
    assert _growth(d, np.zeros(d.size)) == 0.0


def test_velocity_comparability(brownian, coefficient):
    result = velocity_comparability([0.3, 0.6], [0.5, -2.0], 0.5, brownian, coefficient, FLOW)
    assert 0.0 < result.lower <= 1.0 <= result.upper
    assert result.constant >= 1.0
    with pytest.raises(FlowError):
        velocity_comparability([0.3], [0.0], 0.5, brownian, coefficient, FLOW)


def test_fit_power_law_recovers_exponent():
    d = np.array([0.5, 0.25, 0.125, 0.0625])
    exponent, prefactor = fit_power_law(d, 3.0 * d ** 2)
    assert exponent == pytest.approx(2.0)
    assert prefactor == pytest.approx(3.0)
    with pytest.raises(FlowError):
        fit_power_law([0.5], [1.0])


def test_flow_stability(brownian, coefficient):
    metric = HolderMetricParams(0.4, dyadic_pair_grid(brownian.horizon, brownian.native_mesh))
    points = (np.array([0.3, 0.7]), np.array([0.5, -0.5]))
    assert flow_stability(brownian, brownian, coefficient, FLOW, points, metric) == 0.0
    coarse = coarsen(brownian, 4 * brownian.native_mesh)
    assert flow_stability(coarse, brownian, coefficient, FLOW, points, metric) > 0.0
    radius = path_ball_radius(brownian, metric)
    with pytest.raises(BallViolationError):
        flow_stability(coarse, brownian, coefficient, FLOW, points, metric, r0=0.5 * radius)


def test_transported_test_function(dom, brownian, coefficient):
    def rho0(x, xi):
        return np.exp(-((x - 0.5) / 0.1) ** 2) * np.exp(-xi ** 2)

    x, xi = np.meshgrid(dom.centers(), np.linspace(-1.0, 1.0, 5), indexing='ij')
    assert np.allclose(transported_test_function(rho0, x, xi, 0.2, 0.2, brownian, coefficient, FLOW), rho0(x, xi))
    moved = transported_test_function(rho0, x, xi, 0.0, 0.5, brownian, coefficient, FLOW)
    assert moved.shape == x.shape

    def compact(x, xi):
        return np.where(np.abs(x - 0.5) < 0.2, 1.0, 0.0) * np.ones_like(xi)

    assert transported_support_check(compact, dom, np.linspace(-1.0, 1.0, 5), 0.0, [0.25, 0.5], brownian,
                                     coefficient, FLOW)
    wide = Domain(0.0, 1.0, 4)
    assert not transported_support_check(lambda x, xi: np.ones_like(x), wide, [0.0], 0.0, [0.5], brownian,
                                         coefficient, FLOW)
