"""Kinematic bicycle model: slip angle, state derivative, pose derivatives and RK4 integration"""

import math
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import DomainError
from .geometry import OrientedRectangle, wrap_angle

logger = logging.getLogger(__name__)

HALF_PI = 0.5 * math.pi
DEFAULT_DT = 0.05


@dataclass(frozen=True)
class VehicleParams:
    """Geometry and actuation limits of one car-like robot (defaults from the simulation table)"""

    wheelbase: float = 0.16
    rear_wheelbase: float = 0.08
    length: float = 0.16
    width: float = 0.08
    accel_min: float = -20.0
    accel_max: float = 20.0
    steering_rate_min: float = -16.0
    steering_rate_max: float = 16.0
    steering_limit: float = 1.2

    def __post_init__(self):
        if not 0 < self.rear_wheelbase <= self.wheelbase:
            raise DomainError(
                f"Need 0 < rear_wheelbase <= wheelbase, got {self.rear_wheelbase} and {self.wheelbase}"
            )
        if self.length <= 0 or self.width <= 0:
            raise DomainError(f"Vehicle dimensions must be positive, got {self.length} x {self.width}")
        if not self.accel_min < self.accel_max:
            raise DomainError(f"accel_min must be below accel_max, got {self.accel_min} >= {self.accel_max}")
        if not self.steering_rate_min < self.steering_rate_max:
            raise DomainError(
                f"steering_rate_min must be below steering_rate_max, "
                f"got {self.steering_rate_min} >= {self.steering_rate_max}"
            )
        if not 0 < self.steering_limit < HALF_PI:
            raise DomainError(f"steering_limit must lie in (0, pi/2), got {self.steering_limit}")

    @property
    def ratio(self) -> float:
        """k = rear wheelbase / wheelbase"""
        return self.rear_wheelbase / self.wheelbase

    def input_lower_bounds(self) -> np.ndarray:
        return np.array([self.accel_min, self.steering_rate_min])

    def input_upper_bounds(self) -> np.ndarray:
        return np.array([self.accel_max, self.steering_rate_max])


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    psi: float
    v: float
    delta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.v, self.delta])

    @classmethod
    def from_array(cls, values) -> "VehicleState":
        x, y, psi, v, delta = (float(value) for value in values)
        return cls(x, y, psi, v, delta)

    def footprint(self, params: VehicleParams) -> OrientedRectangle:
        return OrientedRectangle(self.x, self.y, self.psi, params.length, params.width)


@dataclass(frozen=True)
class ControlInput:
    u_v: float
    u_delta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u_v, self.u_delta])

    @classmethod
    def from_array(cls, values) -> "ControlInput":
        u_v, u_delta = (float(value) for value in values)
        return cls(u_v, u_delta)


def _check_steering(delta: float):
    if not abs(delta) < HALF_PI:
        raise DomainError(f"Steering angle {delta} rad is at or beyond the tan singularity")


def slip_angle(delta: float, params: VehicleParams) -> float:
    """beta = atan(k tan(delta))"""
    _check_steering(delta)
    return math.atan(params.ratio * math.tan(delta))


def slip_angle_rate(delta: float, u_delta: float, params: VehicleParams) -> float:
    """Time derivative of the slip angle for steering rate u_delta"""
    return _slip_rate_gain(delta, params) * u_delta


def _slip_rate_gain(delta: float, params: VehicleParams) -> float:
    """d(beta)/d(delta) = k sec^2(delta) / (1 + (k tan(delta))^2)"""
    _check_steering(delta)
    k = params.ratio
    sec_sq = 1.0 / math.cos(delta) ** 2
    return k * sec_sq / (1.0 + (k * math.tan(delta)) ** 2)


def state_derivative(state: VehicleState, control: ControlInput, params: VehicleParams) -> np.ndarray:
    """[x_dot, y_dot, psi_dot, v_dot, delta_dot] of the kinematic bicycle model"""
    return _state_derivative(state.as_array(), control.u_v, control.u_delta, params)


def _state_derivative(values: np.ndarray, u_v: float, u_delta: float, params: VehicleParams) -> np.ndarray:
    _, _, psi, v, delta = values
    beta = slip_angle(delta, params)
    return np.array([
        v * math.cos(psi + beta),
        v * math.sin(psi + beta),
        v / params.wheelbase * math.tan(delta) * math.cos(beta),
        u_v,
        u_delta,
    ])


def pose_first_derivatives(state: VehicleState, params: VehicleParams) -> np.ndarray:
    """(x_dot, y_dot, psi_dot); independent of the input"""
    beta = slip_angle(state.delta, params)
    return np.array([
        state.v * math.cos(state.psi + beta),
        state.v * math.sin(state.psi + beta),
        state.v / params.wheelbase * math.tan(state.delta) * math.cos(beta),
    ])


def pose_second_derivative_terms(state: VehicleState, params: VehicleParams) -> Tuple[np.ndarray, np.ndarray]:
    """Split (x_ddot, y_ddot, psi_ddot) = drift + matrix @ (u_v, u_delta)"""
    delta, v, psi = state.delta, state.v, state.psi
    beta = slip_angle(delta, params)
    beta_gain = _slip_rate_gain(delta, params)
    psi_dot = v / params.wheelbase * math.tan(delta) * math.cos(beta)

    heading = psi + beta
    cos_h, sin_h = math.cos(heading), math.sin(heading)
    tan_d = math.tan(delta)
    sec_sq = 1.0 / math.cos(delta) ** 2
    yaw_scale = math.cos(beta) / params.wheelbase

    drift = np.array([
        -v * sin_h * psi_dot,
        v * cos_h * psi_dot,
        0.0,
    ])
    matrix = np.array([
        [cos_h, -v * sin_h * beta_gain],
        [sin_h, v * cos_h * beta_gain],
        [yaw_scale * tan_d, yaw_scale * (v * sec_sq - v * math.tan(beta) * tan_d * beta_gain)],
    ])
    return drift, matrix


def pose_second_derivatives(state: VehicleState, control: ControlInput, params: VehicleParams) -> np.ndarray:
    """(x_ddot, y_ddot, psi_ddot), affine in the input"""
    drift, matrix = pose_second_derivative_terms(state, params)
    return drift + matrix @ control.as_array()


def integrate_step(state: VehicleState, control: ControlInput, dt: float, params: VehicleParams) -> VehicleState:
    """One classical Runge-Kutta step with the input held constant"""
    if dt <= 0:
        raise ValueError(f"Time step must be positive, got {dt}")
    u_v, u_delta = control.u_v, control.u_delta
    x0 = state.as_array()

    k1 = _state_derivative(x0, u_v, u_delta, params)
    k2 = _state_derivative(x0 + 0.5 * dt * k1, u_v, u_delta, params)
    k3 = _state_derivative(x0 + 0.5 * dt * k2, u_v, u_delta, params)
    k4 = _state_derivative(x0 + dt * k3, u_v, u_delta, params)
    x1 = x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    x1[2] = wrap_angle(x1[2])
    limit = params.steering_limit
    if abs(x1[4]) > limit:
        logger.debug(f"Steering angle {x1[4]:.4f} rad clamped to +/-{limit}")
        x1[4] = min(max(x1[4], -limit), limit)
    return VehicleState.from_array(x1)
