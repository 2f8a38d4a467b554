"""Finite-difference oracles and random states shared by the tests"""

import math

import numpy as np

from mtvcbf.geometry import wrap_angle
from mtvcbf.hocbf import constraint_coefficients, psi_chain
from mtvcbf.relative_frame import to_ego_frame
from mtvcbf.safety_filter import build_pair_problem, solve_qp
from mtvcbf.scenarios import nominal_controller
from mtvcbf.vehicle_dynamics import ControlInput, VehicleParams, VehicleState, integrate_step, state_derivative


def flow(state: VehicleState, control: ControlInput, dt: float, params: VehicleParams) -> VehicleState:
    """One RK4 step without wrapping or clamping; dt may be negative"""
    def f(values):
        return state_derivative(VehicleState.from_array(values), control, params)

    x0 = state.as_array()
    k1 = f(x0)
    k2 = f(x0 + 0.5 * dt * k1)
    k3 = f(x0 + 0.5 * dt * k2)
    k4 = f(x0 + dt * k3)
    return VehicleState.from_array(x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def central_gradient(func, point, step=1e-5) -> np.ndarray:
    point = np.asarray(point, dtype=float)
    grad = np.zeros_like(point)
    for k in range(point.shape[0]):
        offset = np.zeros_like(point)
        offset[k] = step
        grad[k] = (func(point + offset) - func(point - offset)) / (2.0 * step)
    return grad


def central_jacobian(func, point, step=1e-5) -> np.ndarray:
    """Rows are derivatives of func's outputs, columns the inputs"""
    point = np.asarray(point, dtype=float)
    columns = []
    for k in range(point.shape[0]):
        offset = np.zeros_like(point)
        offset[k] = step
        columns.append((np.asarray(func(point + offset)) - np.asarray(func(point - offset))) / (2.0 * step))
    return np.stack(columns, axis=-1)


def _relative(state_i, state_j, reference_psi):
    rel = to_ego_frame(state_i, state_j).as_array()
    rel[2] = reference_psi + wrap_angle(rel[2] - reference_psi)
    return rel


def relative_along_trajectory(state_i, state_j, input_i, input_j, params, dt):
    """Relative pose at t - dt, t and t + dt with the inputs held constant"""
    center = to_ego_frame(state_i, state_j).as_array()
    before = _relative(flow(state_i, input_i, -dt, params), flow(state_j, input_j, -dt, params), center[2])
    after = _relative(flow(state_i, input_i, dt, params), flow(state_j, input_j, dt, params), center[2])
    return before, center, after


def scalar_along_trajectory(func, state_i, state_j, input_i, input_j, params, dt):
    """func(state_i, state_j) at t - dt, t and t + dt"""
    return (
        func(flow(state_i, input_i, -dt, params), flow(state_j, input_j, -dt, params)),
        func(state_i, state_j),
        func(flow(state_i, input_i, dt, params), flow(state_j, input_j, dt, params)),
    )


def random_state(rng, span=0.3, speed=(0.2, 1.5), steering=0.5) -> VehicleState:
    return VehicleState(
        x=rng.uniform(-span, span),
        y=rng.uniform(-span, span),
        psi=rng.uniform(-math.pi, math.pi),
        v=rng.uniform(*speed),
        delta=rng.uniform(-steering, steering),
    )


def random_input(rng, params: VehicleParams) -> ControlInput:
    return ControlInput.from_array(rng.uniform(params.input_lower_bounds(), params.input_upper_bounds()))


def random_pair_in_range(rng, reach=0.4, min_distance=0.05):
    """States of i and j with j within reach of i in i's frame"""
    while True:
        state_i = random_state(rng, span=1.0)
        state_j = random_state(rng, span=1.0)
        rel = to_ego_frame(state_i, state_j)
        if abs(rel.x_rel) < reach and abs(rel.y_rel) < reach and math.hypot(rel.x_rel, rel.y_rel) > min_distance:
            return state_i, state_j


def straight_path(state: VehicleState, reach: float = 20.0) -> np.ndarray:
    """Polyline from the vehicle along its current heading"""
    start = np.array([state.x, state.y])
    return np.array([start, start + reach * np.array([math.cos(state.psi), math.sin(state.psi)])])


def random_admissible_pair(rng, config, net, params: VehicleParams, reach=0.48):
    """i at the origin and j inside the trained box, both moving, with h >= 0 and Psi_1 >= 0"""
    while True:
        state_i = VehicleState(0.0, 0.0, 0.0, rng.uniform(0.2, 1.0), 0.0)
        state_j = VehicleState(
            rng.uniform(-reach, reach), rng.uniform(-reach, reach), rng.uniform(-math.pi, math.pi),
            rng.uniform(0.2, 1.0), 0.0,
        )
        if math.hypot(state_j.x, state_j.y) < 0.01:
            continue
        h, psi_1, _ = psi_chain(state_i, state_j, np.zeros(4), config, net, params)
        if h >= 0.0 and psi_1 >= 0.0:
            return state_i, state_j


def filtered_closed_loop(state_i, state_j, config, net, params: VehicleParams, horizon=5.0, dt=0.05):
    """Both vehicles hold their starting line at 1 m/s through the joint filter.

    Returns the barrier value before every step and the QP status of that step.
    """
    paths = (straight_path(state_i), straight_path(state_j))
    barrier, statuses = [], []
    for _ in range(int(round(horizon / dt))):
        u_nom = np.concatenate([
            nominal_controller(state, path, 1.0, params).as_array()
            for state, path in zip((state_i, state_j), paths)
        ])
        constraint = constraint_coefficients(state_i, state_j, config, net, params)
        solution = solve_qp(build_pair_problem(constraint, u_nom, params))
        barrier.append(constraint.h)
        statuses.append(solution.status)
        state_i = integrate_step(state_i, ControlInput.from_array(solution.u[:2]), dt, params)
        state_j = integrate_step(state_j, ControlInput.from_array(solution.u[2:]), dt, params)
    return np.array(barrier), statuses
