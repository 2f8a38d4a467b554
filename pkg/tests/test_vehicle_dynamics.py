import math

import numpy as np
import pytest

from mtvcbf.errors import DomainError
from mtvcbf.vehicle_dynamics import (
    ControlInput,
    VehicleParams,
    VehicleState,
    integrate_step,
    pose_first_derivatives,
    pose_second_derivative_terms,
    pose_second_derivatives,
    slip_angle,
    slip_angle_rate,
    state_derivative,
)
from tests.helpers import flow, random_input, random_state

REST = VehicleState(0.0, 0.0, 0.0, 0.0, 0.0)
SAMPLE_STATE = VehicleState(0.3, -0.2, 0.7, 0.8, 0.25)


def test_params_validation():
    """Inconsistent geometry and limits are rejected"""
    with pytest.raises(DomainError):
        VehicleParams(rear_wheelbase=0.2)
    with pytest.raises(DomainError):
        VehicleParams(accel_min=5.0, accel_max=5.0)
    with pytest.raises(DomainError):
        VehicleParams(steering_limit=math.pi / 2)
    assert VehicleParams().ratio == pytest.approx(0.5)


def test_slip_angle_values(params):
    """Zero steering gives zero slip; pi/8 matches direct evaluation"""
    assert slip_angle(0.0, params) == 0.0
    assert slip_angle(math.pi / 8, params) == pytest.approx(math.atan(0.5 * math.tan(math.pi / 8)), abs=1e-12)
    assert slip_angle(math.pi / 8, params) == pytest.approx(0.204220, abs=1e-6)
    assert slip_angle(-math.pi / 8, params) == pytest.approx(-slip_angle(math.pi / 8, params), abs=1e-15)


def test_slip_angle_singularity(params):
    """Steering at pi/2 is outside the model"""
    with pytest.raises(DomainError):
        slip_angle(math.pi / 2, params)


def test_slip_angle_rate_matches_finite_difference(params):
    """beta_dot equals d(beta)/d(delta) times the steering rate"""
    for delta in (-1.0, -0.3, 0.0, 0.4, 1.1):
        step = 1e-6
        numeric = (slip_angle(delta + step, params) - slip_angle(delta - step, params)) / (2 * step)
        assert slip_angle_rate(delta, 3.0, params) == pytest.approx(3.0 * numeric, rel=1e-7)


def test_state_derivative_straight_line(params):
    """Zero steering drives straight along the heading"""
    derivative = state_derivative(VehicleState(0.0, 0.0, 0.0, 1.0, 0.0), ControlInput(0.5, -2.0), params)
    np.testing.assert_allclose(derivative, [1.0, 0.0, 0.0, 0.5, -2.0], atol=1e-15)


def test_state_derivative_turning(params):
    """Yaw rate v/l tan(delta) cos(beta) and velocity along psi + beta"""
    state = VehicleState(0.0, 0.0, math.pi / 2, 2.0, 0.3)
    beta = math.atan(0.5 * math.tan(0.3))
    derivative = state_derivative(state, ControlInput(0.0, 0.0), params)
    expected = [
        2.0 * math.cos(math.pi / 2 + beta),
        2.0 * math.sin(math.pi / 2 + beta),
        2.0 / 0.16 * math.tan(0.3) * math.cos(beta),
        0.0,
        0.0,
    ]
    np.testing.assert_allclose(derivative, expected, atol=1e-12)


def test_pose_first_derivatives_match_state_derivative(params):
    """Pose rates are the first three state rates"""
    rng = np.random.default_rng(0)
    for _ in range(50):
        state = random_state(rng)
        np.testing.assert_allclose(
            pose_first_derivatives(state, params),
            state_derivative(state, random_input(rng, params), params)[:3],
            atol=1e-14,
        )


def test_pose_second_derivatives_match_finite_difference(params):
    """Second derivative of the pose along the flow with a constant input"""
    rng = np.random.default_rng(1)
    dt = 1e-4
    for _ in range(50):
        state = random_state(rng)
        control = random_input(rng, params)
        before = pose_first_derivatives(flow(state, control, -dt, params), params)
        after = pose_first_derivatives(flow(state, control, dt, params), params)
        numeric = (after - before) / (2 * dt)
        np.testing.assert_allclose(pose_second_derivatives(state, control, params), numeric, rtol=1e-4, atol=1e-4)


def test_pose_second_derivatives_are_affine(params):
    """drift + matrix @ u reproduces the full second derivative and is affine in u"""
    rng = np.random.default_rng(2)
    state = random_state(rng)
    drift, matrix = pose_second_derivative_terms(state, params)
    u1, u2 = random_input(rng, params), random_input(rng, params)
    for control in (u1, u2):
        np.testing.assert_allclose(
            pose_second_derivatives(state, control, params), drift + matrix @ control.as_array(), atol=1e-12
        )
    mid = ControlInput.from_array(0.5 * (u1.as_array() + u2.as_array()))
    np.testing.assert_allclose(
        pose_second_derivatives(state, mid, params),
        0.5 * (pose_second_derivatives(state, u1, params) + pose_second_derivatives(state, u2, params)),
        atol=1e-12,
    )


def test_integrate_from_rest(params):
    """Constant acceleration from rest with zero steering"""
    state = integrate_step(REST, ControlInput(1.0, 0.0), 0.1, params)
    assert state.v == pytest.approx(0.1, abs=1e-12)
    assert state.x == pytest.approx(0.005, abs=1e-12)
    assert state.y == 0.0
    assert state.psi == 0.0


def test_integrate_rejects_non_positive_dt(params):
    with pytest.raises(ValueError):
        integrate_step(SAMPLE_STATE, ControlInput(0.0, 0.0), 0.0, params)
    with pytest.raises(ValueError):
        integrate_step(SAMPLE_STATE, ControlInput(0.0, 0.0), -0.01, params)


def test_integrate_is_fourth_order(params):
    """Halving the step shrinks the one-second error by roughly 16"""
    state = VehicleState(0.0, 0.0, 0.0, 0.5, 0.1)
    control = ControlInput(0.2, 0.0)

    def simulate(dt):
        current = state
        for _ in range(int(round(1.0 / dt))):
            current = integrate_step(current, control, dt, params)
        return current.as_array()

    reference = simulate(0.0025)
    coarse = np.abs(simulate(0.1) - reference).max()
    fine = np.abs(simulate(0.05) - reference).max()
    assert fine < coarse
    assert coarse / fine > 8.0


def test_integrate_clamps_steering(params):
    """Steering stays within the mechanical limit"""
    state = VehicleState(0.0, 0.0, 0.0, 0.5, 1.1)
    stepped = integrate_step(state, ControlInput(0.0, 4.0), 0.05, params)
    assert stepped.delta == params.steering_limit


def test_integrate_wraps_heading(params):
    state = VehicleState(0.0, 0.0, math.pi - 0.01, 1.0, 0.5)
    stepped = integrate_step(state, ControlInput(0.0, 0.0), 0.1, params)
    assert -math.pi < stepped.psi <= math.pi
    assert stepped.psi < 0


def test_rotational_equivariance(params):
    """Rotating the initial pose rotates the step result"""
    rng = np.random.default_rng(3)
    for _ in range(20):
        state = random_state(rng)
        control = random_input(rng, params)
        theta = rng.uniform(-math.pi, math.pi)
        c, s = math.cos(theta), math.sin(theta)
        rotated = VehicleState(c * state.x - s * state.y, s * state.x + c * state.y, state.psi + theta, state.v, state.delta)

        stepped = integrate_step(state, control, 0.05, params)
        stepped_rotated = integrate_step(rotated, control, 0.05, params)

        assert stepped_rotated.x == pytest.approx(c * stepped.x - s * stepped.y, abs=1e-12)
        assert stepped_rotated.y == pytest.approx(s * stepped.x + c * stepped.y, abs=1e-12)
        assert math.cos(stepped_rotated.psi - stepped.psi - theta) == pytest.approx(1.0, abs=1e-12)
        assert stepped_rotated.v == pytest.approx(stepped.v, abs=1e-12)
        assert stepped_rotated.delta == pytest.approx(stepped.delta, abs=1e-12)
