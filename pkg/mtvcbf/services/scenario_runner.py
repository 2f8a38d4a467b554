"""Closed-loop runner: nominal control, barrier constraint, safety filter, integration"""

import math
import time
import logging
from typing import List, Optional, Tuple

import numpy as np

from ..errors import DomainError, QpError, RangeError
from ..geometry import c2c_margin, mtv_margin
from ..hocbf import CbfConstraint, constraint_coefficients, road_edge_constraints
from ..margin_net import MlpParams
from ..relative_frame import to_ego_frame
from ..safety_filter import FilterScope, QpStatus, build_pair_problem, solve_qp
from ..scenarios import (
    BypassingPhase,
    OvertakingPhase,
    ScenarioConfig,
    ScenarioKind,
    SimLog,
    SimRecord,
    bumper_gap,
    bypassing_reference,
    divider_side_line,
    initial_states,
    line_path,
    nearest_lane,
    nominal_controller,
    obstruction_policy,
    overtaking_reference,
    road_edges,
)
from ..vehicle_dynamics import ControlInput, integrate_step

logger = logging.getLogger(__name__)


class ScenarioRunner:
    def __init__(self, config: ScenarioConfig, net: Optional[MlpParams] = None):
        """Set up one run; the network is required unless the margin mode is c2c"""
        self.config = config
        self.net = net
        self.params = config.vehicle
        self.log = SimLog(config=config)

        self.state_i, self.state_j = initial_states(config)
        self.overtaking_phase = OvertakingPhase.OVERTAKING
        self.bypassing_phase = BypassingPhase.CRUISE
        self.lane_j = 0
        self.switches_done = 0
        self.last_switch_time = -math.inf

        logger.info(
            f"Scenario {config.kind.value} initialized: margin {config.margin_mode.value}, "
            f"k_alpha {config.k_alpha}, scope {config.filter_scope.value}, "
            f"filter {'on' if config.filter_enabled else 'off'}, dt {config.dt}, horizon {config.horizon}"
        )

    def references(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Reference polylines for i and j at time t, advancing the scenario script"""
        config = self.config
        if config.kind == ScenarioKind.OVERTAKING:
            lane_i = nearest_lane(self.state_i.y, config)
            new_lane = obstruction_policy(
                bumper_gap(self.state_i, self.state_j, self.params),
                self.switches_done,
                self.lane_j,
                lane_i,
                t - self.last_switch_time,
                config,
            )
            if new_lane != self.lane_j:
                self.switches_done += 1
                self.last_switch_time = t
                self.lane_j = new_lane
                logger.info(f"t = {t:.2f}: vehicle j obstructs (switch {self.switches_done}) into lane {new_lane}")
            y_i, self.overtaking_phase = overtaking_reference(
                self.state_i, self.state_j, self.lane_j, self.overtaking_phase, config
            )
            y_j = divider_side_line(self.lane_j, config)
            return line_path(y_i, 1.0), line_path(y_j, 1.0)

        (y_i, y_j), self.bypassing_phase = bypassing_reference(
            self.state_i, self.state_j, self.bypassing_phase, config
        )
        return line_path(y_i, 1.0), line_path(y_j, -1.0)

    def nominal_inputs(self, path_i: np.ndarray, path_j: np.ndarray) -> np.ndarray:
        config = self.config
        gains = dict(lookahead=config.lookahead, speed_gain=config.speed_gain, steering_gain=config.steering_gain)
        u_i = nominal_controller(self.state_i, path_i, config.speed_i, self.params, **gains)
        u_j = nominal_controller(self.state_j, path_j, config.speed_j, self.params, **gains)
        return np.concatenate([u_i.as_array(), u_j.as_array()])

    def _constraint(self) -> CbfConstraint:
        return constraint_coefficients(self.state_i, self.state_j, self.config.cbf, self.net, self.params)

    def road_rows(self) -> List[Tuple[np.ndarray, float]]:
        """Road-edge rows over the joint input; j gets its own only when its input is filtered too"""
        config = self.config
        if config.kind != ScenarioKind.OVERTAKING or not config.keep_on_road:
            return []
        lower, upper = road_edges(config)
        robots = [(0, self.state_i)]
        if config.filter_scope == FilterScope.JOINT:
            robots.append((2, self.state_j))
        rows = []
        for offset, state in robots:
            for a, b in road_edge_constraints(state, self.params, lower, upper, config.cbf):
                row = np.zeros(4)
                row[offset:offset + 2] = a
                rows.append((row, b))
        return rows

    def filter_inputs(self, t: float, u_nom: np.ndarray) -> Tuple[np.ndarray, Optional[CbfConstraint], str, float]:
        """Safe joint input, the constraint it was filtered against, QP status and filter wall time in ms"""
        config = self.config
        if not config.filter_enabled:
            try:
                constraint = self._constraint()
            except (DomainError, RangeError) as e:
                logger.debug(f"t = {t:.2f}: barrier not evaluable without the filter: {e}")
                constraint = None
            return u_nom.copy(), constraint, "off", 0.0

        start = time.perf_counter()
        try:
            constraint = self._constraint()
            problem = build_pair_problem(
                constraint, u_nom, self.params, config.filter_scope, config.filter_config, self.road_rows()
            )
            solution = solve_qp(problem, config.filter_config.slack_penalty, config.filter_config.max_iterations)
        except (DomainError, RangeError) as e:
            logger.error(f"t = {t:.2f}: barrier evaluation failed: {e}")
            raise QpError(str(e), partial_log=self.log)
        elapsed_ms = 1000.0 * (time.perf_counter() - start)

        if solution.status == QpStatus.ERROR:
            logger.error(f"t = {t:.2f}: safety filter failed: {solution.message}")
            raise QpError(f"Safety filter failed at t = {t:.2f}: {solution.message}", partial_log=self.log)
        if solution.status == QpStatus.RELAXED:
            logger.warning(f"t = {t:.2f}: CBF constraint relaxed with slack {solution.slack_used:.3e}")
        return solution.u, constraint, solution.status.value, elapsed_ms

    def step(self, k: int):
        """Advance both vehicles by one time step and append the record"""
        t = k * self.config.dt
        path_i, path_j = self.references(t)
        u_nom = self.nominal_inputs(path_i, path_j)
        u_safe, constraint, status, qp_ms = self.filter_inputs(t, u_nom)

        k1, _ = self.config.cbf.gains
        if constraint is None:
            h = psi1 = psi2 = float("nan")
        else:
            h = constraint.h
            psi1 = constraint.h_dot + k1 * constraint.h
            psi2 = constraint.evaluate(u_safe)

        rel = to_ego_frame(self.state_i, self.state_j)
        self.log.records.append(SimRecord(
            t=t,
            state_i=self.state_i,
            state_j=self.state_j,
            u_nom=u_nom,
            u_safe=u_safe,
            h=h,
            mtv_exact=mtv_margin(self.state_i.footprint(self.params), self.state_j.footprint(self.params)).value,
            c2c_exact=c2c_margin(rel.x_rel, rel.y_rel, self.params.length, self.params.width),
            psi1=psi1,
            psi2=psi2,
            qp_status=status,
            qp_ms=qp_ms,
        ))

        self.state_i = integrate_step(self.state_i, ControlInput.from_array(u_safe[:2]), self.config.dt, self.params)
        self.state_j = integrate_step(self.state_j, ControlInput.from_array(u_safe[2:]), self.config.dt, self.params)

    def run(self) -> SimLog:
        """Run the full horizon"""
        logger.info(f"Starting {self.config.kind.value} run over {self.config.step_count} steps")
        start_time = time.time()
        try:
            for k in range(self.config.step_count):
                self.step(k)
        except QpError as e:
            self.log.aborted = True
            self.log.message = str(e)
            raise
        execution_time = time.time() - start_time
        logger.info(f"Run finished: {len(self.log)} steps in {execution_time:.1f} seconds")
        return self.log
