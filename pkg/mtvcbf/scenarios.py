"""Overtaking and bypassing experiments: nominal controller, reference rules, logs and metrics.

The nominal controller is a collision-unaware pure-pursuit tracker; all
safety comes from the filter sitting between it and the vehicles.
"""

import math
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .geometry import wrap_angle
from .hocbf import CbfConfig, MarginMode
from .margin_net import MlpParams
from .safety_filter import FilterConfig, FilterScope
from .vehicle_dynamics import DEFAULT_DT, ControlInput, VehicleParams, VehicleState

logger = logging.getLogger(__name__)

PATH_REACH = 20.0


class ScenarioKind(str, Enum):
    OVERTAKING = "overtaking"
    BYPASSING = "bypassing"


class OvertakingPhase(str, Enum):
    OVERTAKING = "overtaking"
    DONE = "done"


class BypassingPhase(str, Enum):
    CRUISE = "cruise"
    EVADE = "evade"
    RETURN = "return"


@dataclass(frozen=True)
class ScenarioConfig:
    kind: ScenarioKind
    cbf: CbfConfig = field(default_factory=CbfConfig)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    filter_config: FilterConfig = field(default_factory=FilterConfig)
    filter_scope: FilterScope = FilterScope.JOINT
    filter_enabled: bool = True
    dt: float = DEFAULT_DT
    horizon: float = 10.0
    y_nom: float = 0.072
    speed_i: float = 1.0
    speed_j: float = 0.5
    start_x_i: float = -1.2
    start_x_j: float = -0.4
    lane_width: float = 0.16
    obstruction_count: int = 3
    obstruction_trigger: float = 0.5
    obstruction_cooldown: float = 1.0
    divider_offset: float = 0.035
    keep_on_road: bool = True
    approach_trigger: float = 1.0
    lookahead: float = 0.3
    speed_gain: float = 5.0
    steering_gain: float = 20.0
    recenter_tolerance: float = 0.01
    initial_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        object.__setattr__(self, "filter_scope", FilterScope(self.filter_scope))
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.lookahead <= 0:
            raise ValueError(f"lookahead must be positive, got {self.lookahead}")
        if self.obstruction_count < 0:
            raise ValueError(f"obstruction_count must be non-negative, got {self.obstruction_count}")
        if self.initial_noise < 0:
            raise ValueError(f"initial_noise must be non-negative, got {self.initial_noise}")
        room = 0.5 * (self.lane_width - self.vehicle.width)
        if not 0.0 <= self.divider_offset <= room:
            raise ValueError(f"divider_offset must lie in [0, {room:.3f}] to keep j inside its lane, got {self.divider_offset}")

    @property
    def k_alpha(self) -> float:
        return self.cbf.k_alpha

    @property
    def margin_mode(self) -> MarginMode:
        return self.cbf.margin_mode

    @property
    def step_count(self) -> int:
        return int(round(self.horizon / self.dt))


def overtaking_config(margin_mode: MarginMode = MarginMode.HYBRID, **overrides) -> ScenarioConfig:
    """k_alpha = 2, ego-only filtering, i at -1.2 m doing 1 m/s behind j at -0.4 m doing 0.5 m/s"""
    mode = MarginMode(margin_mode)
    config = ScenarioConfig(
        kind=ScenarioKind.OVERTAKING,
        cbf=CbfConfig(k_alpha=2.0, margin_mode=mode),
        filter_scope=FilterScope.EGO_ONLY,
        horizon=10.0,
        speed_i=1.0,
        speed_j=0.5,
        start_x_i=-1.2,
        start_x_j=-0.4,
    )
    return replace(config, **overrides)


def bypassing_config(margin_mode: MarginMode = MarginMode.HYBRID, **overrides) -> ScenarioConfig:
    """Head-on pair at +/-1.2 m and 1 m/s; C2C tuned to y_nom 0.116 m, k_alpha 3, MTV to 0.072 m, 6"""
    mode = MarginMode(margin_mode)
    y_nom, k_alpha = (0.116, 3.0) if mode == MarginMode.C2C else (0.072, 6.0)
    config = ScenarioConfig(
        kind=ScenarioKind.BYPASSING,
        cbf=CbfConfig(k_alpha=k_alpha, margin_mode=mode),
        filter_scope=FilterScope.JOINT,
        horizon=6.0,
        y_nom=y_nom,
        speed_i=1.0,
        speed_j=1.0,
        start_x_i=-1.2,
        start_x_j=1.2,
    )
    return replace(config, **overrides)


@dataclass(frozen=True)
class SimRecord:
    t: float
    state_i: VehicleState
    state_j: VehicleState
    u_nom: np.ndarray
    u_safe: np.ndarray
    h: float
    mtv_exact: float
    c2c_exact: float
    psi1: float
    psi2: float
    qp_status: str
    qp_ms: float


@dataclass
class SimLog:
    config: ScenarioConfig
    records: List[SimRecord] = field(default_factory=list)
    aborted: bool = False
    message: str = ""

    def __len__(self):
        return len(self.records)

    def times(self) -> np.ndarray:
        return np.array([record.t for record in self.records])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(record, name) for record in self.records], dtype=float)


@dataclass(frozen=True)
class Metrics:
    kind: ScenarioKind
    margin_mode: MarginMode
    min_exact_margin: float
    min_margin_time: float
    completed: bool
    completion_time: Optional[float]
    evasion_i_percent: float
    evasion_j_percent: float
    qp_mean_ms: float
    qp_max_ms: float
    relaxed_steps: int
    steps: int
    y_nom_percent: float

    @property
    def average_evasion_percent(self) -> float:
        return 0.5 * (self.evasion_i_percent + self.evasion_j_percent)


def line_path(y: float, heading_sign: float = 1.0, reach: float = PATH_REACH) -> np.ndarray:
    """Two-point polyline along Y = y, traversed toward +x or -x"""
    start, end = (-reach, reach) if heading_sign > 0 else (reach, -reach)
    return np.array([[start, y], [end, y]])


def _lookahead_point(path: np.ndarray, position: np.ndarray, lookahead: float) -> np.ndarray:
    if path.shape[0] == 1:
        return path[0]

    best = (math.inf, 0, 0.0)
    for k in range(path.shape[0] - 1):
        segment = path[k + 1] - path[k]
        length_sq = float(segment @ segment)
        t = 0.0 if length_sq == 0.0 else min(max(float((position - path[k]) @ segment) / length_sq, 0.0), 1.0)
        distance = float(np.linalg.norm(path[k] + t * segment - position))
        if distance < best[0]:
            best = (distance, k, t)

    _, k, t = best
    remaining = lookahead
    point = path[k] + t * (path[k + 1] - path[k])
    while k < path.shape[0] - 2:
        to_end = float(np.linalg.norm(path[k + 1] - point))
        if remaining <= to_end:
            break
        remaining -= to_end
        k += 1
        point = path[k]
    segment = path[k + 1] - path[k]
    norm = float(np.linalg.norm(segment))
    if norm == 0.0:
        return point
    # the last segment is extended past its end
    return point + remaining * segment / norm


def nominal_controller(
    state: VehicleState,
    path: np.ndarray,
    target_speed: float,
    params: VehicleParams,
    lookahead: float = 0.3,
    speed_gain: float = 5.0,
    steering_gain: float = 20.0,
) -> ControlInput:
    """Pure pursuit toward a lookahead point plus proportional speed control, clamped to the input box"""
    path = np.atleast_2d(np.asarray(path, dtype=float))
    if path.size == 0:
        raise ValueError("Reference path is empty")
    position = np.array([state.x, state.y])
    target = _lookahead_point(path, position, lookahead)
    dx, dy = target - position
    distance = max(math.hypot(dx, dy), 1e-9)
    alpha = wrap_angle(math.atan2(dy, dx) - state.psi)

    delta_des = math.atan2(2.0 * params.wheelbase * math.sin(alpha), distance)
    delta_des = min(max(delta_des, -params.steering_limit), params.steering_limit)
    lower, upper = params.input_lower_bounds(), params.input_upper_bounds()
    u_v = min(max(speed_gain * (target_speed - state.v), lower[0]), upper[0])
    u_delta = min(max(steering_gain * (delta_des - state.delta), lower[1]), upper[1])
    return ControlInput(u_v, u_delta)


def lane_center(lane: int, config: ScenarioConfig) -> float:
    return lane * config.lane_width


def nearest_lane(y: float, config: ScenarioConfig) -> int:
    return 0 if y < 0.5 * config.lane_width else 1


def divider_side_line(lane: int, config: ScenarioConfig) -> float:
    """Lateral line vehicle j holds in a lane: the centerline moved toward the lane divider"""
    toward_divider = 1.0 if lane == 0 else -1.0
    return lane_center(lane, config) + toward_divider * config.divider_offset


def road_edges(config: ScenarioConfig) -> Tuple[float, float]:
    """Outer edges of the two-lane road"""
    return -0.5 * config.lane_width, 1.5 * config.lane_width


def bumper_gap(state_i: VehicleState, state_j: VehicleState, params: VehicleParams) -> float:
    """Free longitudinal space from the front of i to the rear of j"""
    return state_j.x - state_i.x - params.length


def overtaking_reference(
    state_i: VehicleState,
    state_j: VehicleState,
    lane_j: int,
    phase: OvertakingPhase,
    config: ScenarioConfig,
) -> Tuple[float, OvertakingPhase]:
    """Lateral line for vehicle i and the updated phase.

    While overtaking, i tracks the centerline of the lane j is not in. Once
    i is a full vehicle length ahead the overtake is done and i keeps the
    lane it is in.
    """
    if phase == OvertakingPhase.OVERTAKING and state_i.x - state_j.x >= config.vehicle.length:
        phase = OvertakingPhase.DONE
        logger.info(f"Overtake completed at x_i = {state_i.x:.3f}")
    if phase == OvertakingPhase.DONE:
        return lane_center(nearest_lane(state_i.y, config), config), phase
    return lane_center(1 - lane_j, config), phase


def obstruction_policy(
    gap: float,
    switches_done: int,
    lane_j: int,
    lane_i: int,
    since_last_switch: float,
    config: ScenarioConfig,
) -> int:
    """Lane command for j: cut into i's lane when i closes in, a limited number of times"""
    if switches_done >= config.obstruction_count:
        return lane_j
    if not 0.0 < gap < config.obstruction_trigger:
        return lane_j
    if since_last_switch < config.obstruction_cooldown:
        return lane_j
    return lane_i


def bypassing_reference(
    state_i: VehicleState,
    state_j: VehicleState,
    phase: BypassingPhase,
    config: ScenarioConfig,
) -> Tuple[Tuple[float, float], BypassingPhase]:
    """Lateral lines (Y_i, Y_j): centered, then +/-y_nom once the pair is close, centered again once past"""
    if phase == BypassingPhase.CRUISE and state_j.x - state_i.x < config.approach_trigger:
        phase = BypassingPhase.EVADE
        logger.debug(f"Bypass evasion starts at gap {state_j.x - state_i.x:.3f}")
    if phase == BypassingPhase.EVADE and state_i.x - state_j.x >= config.vehicle.length:
        phase = BypassingPhase.RETURN
        logger.debug("Vehicles are past each other; returning to the center line")
    if phase == BypassingPhase.EVADE:
        return (config.y_nom, -config.y_nom), phase
    return (0.0, 0.0), phase


def initial_states(config: ScenarioConfig) -> Tuple[VehicleState, VehicleState]:
    """Start poses, optionally perturbed in x and y by seeded Gaussian noise"""
    heading_j = 0.0 if config.kind == ScenarioKind.OVERTAKING else math.pi
    offsets = np.zeros(4)
    if config.initial_noise > 0:
        offsets = np.random.default_rng(config.seed).normal(0.0, config.initial_noise, size=4)
    state_i = VehicleState(config.start_x_i + offsets[0], offsets[1], 0.0, config.speed_i, 0.0)
    state_j = VehicleState(config.start_x_j + offsets[2], offsets[3], heading_j, config.speed_j, 0.0)
    return state_i, state_j


def run_scenario(config: ScenarioConfig, net: Optional[MlpParams] = None) -> SimLog:
    """Fixed-step closed loop over the horizon; raises QpError carrying the partial log on solver failure"""
    from .services.scenario_runner import ScenarioRunner

    return ScenarioRunner(config, net).run()


def _completion_time(log: SimLog) -> Optional[float]:
    config = log.config
    length = config.vehicle.length
    for record in log.records:
        passed = record.state_i.x - record.state_j.x >= length
        if config.kind == ScenarioKind.OVERTAKING and passed:
            return record.t
        if config.kind == ScenarioKind.BYPASSING and passed:
            centered = max(abs(record.state_i.y), abs(record.state_j.y)) <= config.recenter_tolerance
            if centered:
                return record.t
    return None


def compute_metrics(log: SimLog, config: Optional[ScenarioConfig] = None) -> Metrics:
    if not log.records:
        raise ValueError("Cannot compute metrics of an empty log")
    config = config or log.config
    width = config.vehicle.width

    margins = log.column("mtv_exact")
    lowest = int(np.argmin(margins))
    y_i = np.array([record.state_i.y for record in log.records])
    y_j = np.array([record.state_j.y for record in log.records])
    filtered = [record.qp_ms for record in log.records if record.qp_status != "off"]
    completion = _completion_time(log)

    metrics = Metrics(
        kind=config.kind,
        margin_mode=config.margin_mode,
        min_exact_margin=float(margins[lowest]),
        min_margin_time=log.records[lowest].t,
        completed=completion is not None,
        completion_time=completion,
        evasion_i_percent=float(100.0 * np.max(np.abs(y_i)) / width),
        evasion_j_percent=float(100.0 * np.max(np.abs(y_j)) / width),
        qp_mean_ms=float(np.mean(filtered)) if filtered else 0.0,
        qp_max_ms=float(np.max(filtered)) if filtered else 0.0,
        relaxed_steps=sum(1 for record in log.records if record.qp_status == "relaxed"),
        steps=len(log.records),
        y_nom_percent=100.0 * config.y_nom / width,
    )
    logger.info(
        f"{config.kind.value}/{config.margin_mode.value}: min margin {metrics.min_exact_margin:.4f} m "
        f"at t = {metrics.min_margin_time:.2f} s, completed {metrics.completed}, "
        f"average evasion {metrics.average_evasion_percent:.1f}%"
    )
    return metrics
