"""Second-order barrier built on the learned (or C2C) margin and its affine input constraint"""

import math
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .errors import DomainError, RangeError
from .geometry import c2c_margin
from .margin_net import MlpParams, value_gradient_hessian
from .relative_frame import RelativeState, ego_first_derivative, ego_second_derivative_terms, to_ego_frame
from .vehicle_dynamics import VehicleParams, VehicleState, pose_first_derivatives, pose_second_derivative_terms

logger = logging.getLogger(__name__)


class MarginMode(str, Enum):
    LEARNED = "learned"
    C2C = "c2c"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class CbfConfig:
    """Class-K gains, error bound and margin selection.

    alpha_1(h) = k_alpha1 * h and alpha_2(h) = k_alpha2 * h; both gains default
    to k_alpha.
    """

    k_alpha: float = 2.0
    epsilon: float = 0.0
    margin_mode: MarginMode = MarginMode.HYBRID
    hybrid_range: float = 0.48
    k_alpha1: Optional[float] = None
    k_alpha2: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "margin_mode", MarginMode(self.margin_mode))
        for name in ("k_alpha", "k_alpha1", "k_alpha2"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.hybrid_range <= 0:
            raise ValueError(f"hybrid_range must be positive, got {self.hybrid_range}")

    @property
    def gains(self) -> Tuple[float, float]:
        k1 = self.k_alpha if self.k_alpha1 is None else self.k_alpha1
        k2 = self.k_alpha if self.k_alpha2 is None else self.k_alpha2
        return k1, k2


@dataclass(frozen=True)
class CbfConstraint:
    """Psi_2(u) = a . u + b with u = (u_v_i, u_delta_i, u_v_j, u_delta_j)"""

    a: np.ndarray
    b: float
    h: float
    h_dot: float
    mode_used: MarginMode

    def evaluate(self, u) -> float:
        return float(self.a @ np.asarray(u, dtype=float) + self.b)


def hybrid_select(rel: RelativeState, config: CbfConfig) -> MarginMode:
    """Learned margin inside the closed box |x|, |y| <= hybrid_range, C2C outside"""
    if abs(rel.x_rel) <= config.hybrid_range and abs(rel.y_rel) <= config.hybrid_range:
        return MarginMode.LEARNED
    return MarginMode.C2C


def _resolve_mode(rel: RelativeState, config: CbfConfig) -> MarginMode:
    if config.margin_mode == MarginMode.HYBRID:
        return hybrid_select(rel, config)
    return config.margin_mode


def c2c_barrier_derivatives(rel: RelativeState) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of the center distance with respect to (x_rel, y_rel, psi_rel)"""
    x, y = rel.x_rel, rel.y_rel
    distance = math.hypot(x, y)
    if distance == 0.0:
        raise DomainError("C2C margin is not differentiable at coincident centers")
    grad = np.array([x / distance, y / distance, 0.0])
    cube = distance ** 3
    hess = np.array([
        [y * y / cube, -x * y / cube, 0.0],
        [-x * y / cube, x * x / cube, 0.0],
        [0.0, 0.0, 0.0],
    ])
    return grad, hess


def _barrier_terms(
    rel: RelativeState, config: CbfConfig, net: Optional[MlpParams], params: VehicleParams
) -> Tuple[float, np.ndarray, np.ndarray, MarginMode]:
    """h, its gradient and Hessian with respect to the relative pose, and the mode used"""
    mode = _resolve_mode(rel, config)
    if mode == MarginMode.C2C:
        grad, hess = c2c_barrier_derivatives(rel)
        return c2c_margin(rel.x_rel, rel.y_rel, params.length, params.width), grad, hess, mode

    if net is None:
        raise ValueError("The learned margin needs a network")
    if not net.trained_range.contains(rel.x_rel, rel.y_rel):
        raise RangeError(
            f"Relative position ({rel.x_rel:.3f}, {rel.y_rel:.3f}) is outside the trained range; "
            f"use the hybrid margin mode"
        )
    value, grad, hess = value_gradient_hessian(net, rel.as_array())
    return value - config.epsilon, grad, hess, mode


def barrier_value(
    rel: RelativeState, config: CbfConfig, net: Optional[MlpParams], params: VehicleParams
) -> float:
    """h = h_theta - epsilon for the learned margin, the C2C margin otherwise"""
    mode = _resolve_mode(rel, config)
    if mode == MarginMode.C2C:
        return c2c_margin(rel.x_rel, rel.y_rel, params.length, params.width)
    value, _, _, _ = _barrier_terms(rel, config, net, params)
    return value


def barrier_rate(
    state_i: VehicleState,
    state_j: VehicleState,
    config: CbfConfig,
    net: Optional[MlpParams],
    params: VehicleParams,
) -> float:
    """h_dot = grad h . d/dt(relative pose)"""
    rel = to_ego_frame(state_i, state_j)
    _, grad, _, _ = _barrier_terms(rel, config, net, params)
    return float(grad @ ego_first_derivative(state_i, state_j, params))


def constraint_coefficients(
    state_i: VehicleState,
    state_j: VehicleState,
    config: CbfConfig,
    net: Optional[MlpParams],
    params: VehicleParams,
) -> CbfConstraint:
    """Write Psi_2 = h_ddot + (k1 + k2) h_dot + k1 k2 h as a . u + b.

    h_ddot = grad h . (relative acceleration) + v^T H v with v the relative
    velocity; only the relative acceleration depends on u, and affinely.
    """
    rel = to_ego_frame(state_i, state_j)
    h, grad, hess, mode = _barrier_terms(rel, config, net, params)
    velocity = ego_first_derivative(state_i, state_j, params)
    drift, matrix = ego_second_derivative_terms(state_i, state_j, params)
    k1, k2 = config.gains

    h_dot = float(grad @ velocity)
    a = grad @ matrix
    b = float(grad @ drift + velocity @ hess @ velocity + (k1 + k2) * h_dot + k1 * k2 * h)
    return CbfConstraint(a=a, b=b, h=h, h_dot=h_dot, mode_used=mode)


def psi_chain(
    state_i: VehicleState,
    state_j: VehicleState,
    u,
    config: CbfConfig,
    net: Optional[MlpParams],
    params: VehicleParams,
) -> Tuple[float, float, float]:
    """(Psi_0, Psi_1, Psi_2) at the joint input u"""
    constraint = constraint_coefficients(state_i, state_j, config, net, params)
    k1, _ = config.gains
    psi_1 = constraint.h_dot + k1 * constraint.h
    return constraint.h, psi_1, constraint.evaluate(u)


def road_edge_constraints(
    state: VehicleState,
    params: VehicleParams,
    lower: float,
    upper: float,
    config: CbfConfig,
) -> List[Tuple[np.ndarray, float]]:
    """Rows a . (u_v, u_delta) + b >= 0 that keep one body between two lateral edges.

    The barriers are h = y - (lower + w/2) and h = (upper - w/2) - y, with the
    same class-K gains as the pair barrier.
    """
    half_width = 0.5 * params.width
    y_dot = pose_first_derivatives(state, params)[1]
    drift, matrix = pose_second_derivative_terms(state, params)
    k1, k2 = config.gains
    rows = []
    for sign, h in ((1.0, state.y - (lower + half_width)), (-1.0, upper - half_width - state.y)):
        a = sign * matrix[1]
        b = sign * (drift[1] + (k1 + k2) * y_dot) + k1 * k2 * h
        rows.append((a, float(b)))
    return rows
