"""Pose of robot j seen from robot i and its first and second time derivatives"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .geometry import wrap_angle
from .vehicle_dynamics import (
    ControlInput,
    VehicleParams,
    VehicleState,
    pose_first_derivatives,
    pose_second_derivative_terms,
)


@dataclass(frozen=True)
class RelativeState:
    x_rel: float
    y_rel: float
    psi_rel: float

    def __post_init__(self):
        object.__setattr__(self, "psi_rel", wrap_angle(self.psi_rel))

    def as_array(self) -> np.ndarray:
        return np.array([self.x_rel, self.y_rel, self.psi_rel])


@dataclass(frozen=True)
class RelativeDerivatives:
    first: np.ndarray
    second: np.ndarray


def to_ego_frame(state_i: VehicleState, state_j: VehicleState) -> RelativeState:
    """Rotate the global offset of j by -psi_i; relative heading wrapped to (-pi, pi]"""
    dx = state_j.x - state_i.x
    dy = state_j.y - state_i.y
    c, s = math.cos(state_i.psi), math.sin(state_i.psi)
    return RelativeState(
        x_rel=dx * c + dy * s,
        y_rel=-dx * s + dy * c,
        psi_rel=state_j.psi - state_i.psi,
    )


def from_ego_frame(state_i: VehicleState, rel: RelativeState) -> Tuple[float, float, float]:
    """Global (x, y, psi) of robot j given robot i and the relative pose"""
    c, s = math.cos(state_i.psi), math.sin(state_i.psi)
    return (
        state_i.x + rel.x_rel * c - rel.y_rel * s,
        state_i.y + rel.x_rel * s + rel.y_rel * c,
        wrap_angle(state_i.psi + rel.psi_rel),
    )


def _global_offset(state_i: VehicleState, state_j: VehicleState) -> np.ndarray:
    # heading difference left unwrapped; the wrap has unit derivative away from the cut
    return np.array([state_j.x - state_i.x, state_j.y - state_i.y, state_j.psi - state_i.psi])


def ego_first_derivative(state_i: VehicleState, state_j: VehicleState, params: VehicleParams) -> np.ndarray:
    """Time derivative of (x_rel, y_rel, psi_rel).

    The rotation terms carry the ego robot's own yaw rate: the frame turns
    with robot i, not with the relative heading.
    """
    offset = _global_offset(state_i, state_j)
    rate_i = pose_first_derivatives(state_i, params)
    rate = pose_first_derivatives(state_j, params) - rate_i
    omega = rate_i[2]
    c, s = math.cos(state_i.psi), math.sin(state_i.psi)
    x, y = offset[0], offset[1]
    x_dot, y_dot = rate[0], rate[1]
    return np.array([
        c * x_dot - s * x * omega + s * y_dot + c * y * omega,
        c * y_dot - s * y * omega - s * x_dot - c * x * omega,
        rate[2],
    ])


def ego_second_derivative_terms(
    state_i: VehicleState, state_j: VehicleState, params: VehicleParams
) -> Tuple[np.ndarray, np.ndarray]:
    """Split the second derivative of the relative pose into drift + matrix @ u.

    u = (u_v_i, u_delta_i, u_v_j, u_delta_j). The acceleration part enters
    through the global relative accelerations and the ego yaw acceleration,
    both affine in u.
    """
    offset = _global_offset(state_i, state_j)
    rate_i = pose_first_derivatives(state_i, params)
    rate = pose_first_derivatives(state_j, params) - rate_i
    drift_i, matrix_i = pose_second_derivative_terms(state_i, params)
    drift_j, matrix_j = pose_second_derivative_terms(state_j, params)

    c, s = math.cos(state_i.psi), math.sin(state_i.psi)
    omega = rate_i[2]
    x, y = offset[0], offset[1]
    x_ego = x * c + y * s
    y_ego = -x * s + y * c
    x_dot, y_dot = rate[0], rate[1]

    # (x_ddot_ji, y_ddot_ji, psi_ddot_ji, psi_ddot_i) = z0 + z_matrix @ u
    z0 = np.append(drift_j - drift_i, drift_i[2])
    z_matrix = np.zeros((4, 4))
    z_matrix[:3, :2] = -matrix_i
    z_matrix[:3, 2:] = matrix_j
    z_matrix[3, :2] = matrix_i[2]

    mixing = np.array([
        [c, s, 0.0, y_ego],
        [-s, c, 0.0, -x_ego],
        [0.0, 0.0, 1.0, 0.0],
    ])
    velocity_terms = np.array([
        2.0 * omega * (c * y_dot - s * x_dot) - omega ** 2 * x_ego,
        -2.0 * omega * (c * x_dot + s * y_dot) - omega ** 2 * y_ego,
        0.0,
    ])
    return mixing @ z0 + velocity_terms, mixing @ z_matrix


def ego_second_derivative(
    state_i: VehicleState,
    state_j: VehicleState,
    input_i: ControlInput,
    input_j: ControlInput,
    params: VehicleParams,
) -> np.ndarray:
    """Second time derivative of (x_rel, y_rel, psi_rel) under the joint input"""
    drift, matrix = ego_second_derivative_terms(state_i, state_j, params)
    u = np.concatenate([input_i.as_array(), input_j.as_array()])
    return drift + matrix @ u


def relative_derivatives(
    state_i: VehicleState,
    state_j: VehicleState,
    input_i: ControlInput,
    input_j: ControlInput,
    params: VehicleParams,
) -> RelativeDerivatives:
    return RelativeDerivatives(
        first=ego_first_derivative(state_i, state_j, params),
        second=ego_second_derivative(state_i, state_j, input_i, input_j, params),
    )
