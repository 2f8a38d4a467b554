"""Minimally invasive QP safety filter over affine barrier constraints and input boxes"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .hocbf import CbfConfig, CbfConstraint, constraint_coefficients
from .margin_net import MlpParams
from .vehicle_dynamics import ControlInput, VehicleParams, VehicleState

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-11


class QpStatus(str, Enum):
    OPTIMAL = "optimal"
    RELAXED = "relaxed"
    ERROR = "error"


class FilterScope(str, Enum):
    JOINT = "joint"
    EGO_ONLY = "ego_only"


@dataclass(frozen=True)
class FilterConfig:
    weight_matrix: np.ndarray = field(default_factory=lambda: np.eye(4))
    slack_penalty: float = 1e6
    max_iterations: int = 100

    def __post_init__(self):
        if self.slack_penalty <= 0:
            raise ValueError(f"slack_penalty must be positive, got {self.slack_penalty}")
        if self.max_iterations <= 0:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")


@dataclass(frozen=True)
class QpProblem:
    """min (u - u_nom)^T Q (u - u_nom)  s.t.  A u + b >= 0,  u_min <= u <= u_max.

    Components with free_mask False are held at u_nom; their share of A u
    moves into b.
    """

    weight: np.ndarray
    u_nom: np.ndarray
    cbf_matrix: np.ndarray
    cbf_offsets: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    free_mask: np.ndarray

    def __post_init__(self):
        n = self.u_nom.shape[0]
        cbf_matrix = np.asarray(self.cbf_matrix, dtype=float).reshape(-1, n)
        object.__setattr__(self, "cbf_matrix", cbf_matrix)
        object.__setattr__(self, "cbf_offsets", np.asarray(self.cbf_offsets, dtype=float).reshape(-1))
        object.__setattr__(self, "free_mask", np.asarray(self.free_mask, dtype=bool))
        if self.weight.shape != (n, n) or not np.allclose(self.weight, self.weight.T, rtol=0.0, atol=1e-12):
            raise ValueError("Weight matrix must be square, symmetric and match u_nom")
        if np.linalg.eigvalsh(self.weight).min() <= 0:
            raise ValueError("Weight matrix must be positive definite")
        if self.cbf_offsets.shape[0] != cbf_matrix.shape[0]:
            raise ValueError("One offset is needed per constraint row")
        if not np.all(self.u_min < self.u_max):
            raise ValueError("Input bounds need u_min < u_max componentwise")

    @classmethod
    def from_constraints(
        cls,
        weight: np.ndarray,
        u_nom: np.ndarray,
        constraints: Sequence[Tuple[np.ndarray, float]],
        u_min: np.ndarray,
        u_max: np.ndarray,
        free_mask: Optional[np.ndarray] = None,
    ) -> "QpProblem":
        n = u_nom.shape[0]
        matrix = np.array([a for a, _ in constraints], dtype=float).reshape(-1, n)
        offsets = np.array([b for _, b in constraints], dtype=float)
        mask = np.ones(n, dtype=bool) if free_mask is None else free_mask
        return cls(weight, u_nom, matrix, offsets, u_min, u_max, mask)

    @property
    def size(self) -> int:
        return self.u_nom.shape[0]

    @property
    def cbf_count(self) -> int:
        return self.cbf_matrix.shape[0]

    def objective(self, u: np.ndarray) -> float:
        deviation = u - self.u_nom
        return float(deviation @ self.weight @ deviation)


@dataclass(frozen=True)
class QpSolution:
    u: np.ndarray
    status: QpStatus
    active_set: Tuple[int, ...]
    objective: float
    slack_used: float = 0.0
    multipliers: Optional[np.ndarray] = None
    iterations: int = 0
    message: str = ""


@dataclass(frozen=True)
class FleetFilterResult:
    inputs: List[ControlInput]
    solution: QpSolution


@dataclass(frozen=True)
class _Reduced:
    """The problem over free variables in the form min 1/2 x^T G x + c^T x s.t. C x >= d"""

    G: np.ndarray
    c: np.ndarray
    C: np.ndarray
    d: np.ndarray
    free: np.ndarray
    rows: np.ndarray


def _reduce(problem: QpProblem) -> _Reduced:
    free = np.flatnonzero(problem.free_mask)
    fixed = np.flatnonzero(~problem.free_mask)
    q_ff = problem.weight[np.ix_(free, free)]
    u_nom_f = problem.u_nom[free]

    cbf_rows = problem.cbf_matrix[:, free]
    cbf_rhs = -(problem.cbf_offsets + problem.cbf_matrix[:, fixed] @ problem.u_nom[fixed])

    n_free = free.shape[0]
    box_rows = np.zeros((2 * n_free, n_free))
    box_rhs = np.zeros(2 * n_free)
    row_ids = list(range(problem.cbf_count))
    for position, k in enumerate(free):
        box_rows[2 * position, position] = 1.0
        box_rhs[2 * position] = problem.u_min[k]
        box_rows[2 * position + 1, position] = -1.0
        box_rhs[2 * position + 1] = -problem.u_max[k]
        row_ids.extend([problem.cbf_count + 2 * k, problem.cbf_count + 2 * k + 1])

    return _Reduced(
        G=2.0 * q_ff,
        c=-2.0 * q_ff @ u_nom_f,
        C=np.vstack([cbf_rows, box_rows]),
        d=np.concatenate([cbf_rhs, box_rhs]),
        free=free,
        rows=np.array(row_ids, dtype=int),
    )


def _dual_active_set(G, c, C, d, max_iterations) -> Tuple[np.ndarray, List[int], np.ndarray, str, int]:
    """Dual active-set method for a strictly convex QP with inequality rows C x >= d.

    Starts at the unconstrained minimizer and adds the most violated row
    until all rows hold; rows whose multiplier would turn negative are
    dropped on the way. Returns (x, active rows, their multipliers, outcome,
    iterations) with outcome one of "optimal", "infeasible", "error".
    """
    G_inv = np.linalg.inv(G)
    x = -G_inv @ c
    active: List[int] = []
    lam = np.zeros(0)
    iterations = 0
    scale = 1.0 + np.abs(d)

    while True:
        violation = (C @ x - d) / scale
        if violation.size == 0:
            return x, active, lam, "optimal", iterations
        p = int(np.argmin(violation))
        if violation[p] >= -FEASIBILITY_TOL:
            return x, active, lam, "optimal", iterations

        lam_p = 0.0
        normal = C[p]
        while True:
            iterations += 1
            if iterations > max_iterations:
                return x, active, lam, "error", iterations
            if active:
                N = C[active].T
                G_inv_N = G_inv @ N
                N_star = np.linalg.solve(N.T @ G_inv_N, G_inv_N.T)
                r = N_star @ normal
                z = G_inv @ normal - G_inv_N @ r
            else:
                r = np.zeros(0)
                z = G_inv @ normal

            t_partial, drop = np.inf, None
            for index, r_k in enumerate(r):
                if r_k > 0:
                    ratio = lam[index] / r_k
                    if ratio < t_partial:
                        t_partial, drop = ratio, index

            curvature = float(z @ normal)
            if curvature <= 1e-14 * float(normal @ G_inv @ normal):
                if drop is None:
                    return x, active, lam, "infeasible", iterations
                lam = lam - t_partial * r
                lam_p += t_partial
                del active[drop]
                lam = np.delete(lam, drop)
                continue

            t_full = -(float(normal @ x) - d[p]) / curvature
            step = min(t_partial, t_full)
            x = x + step * z
            lam = lam - step * r
            lam_p += step
            if t_full <= t_partial:
                active.append(p)
                lam = np.append(lam, lam_p)
                break
            del active[drop]
            lam = np.delete(lam, drop)


def _run_reduced(G, c, C, d, max_iterations):
    try:
        return _dual_active_set(G, c, C, d, max_iterations)
    except np.linalg.LinAlgError as e:
        logger.error(f"Singular KKT system in safety filter: {e}")
        return None, [], np.zeros(0), "error", 0


def _full_input(problem: QpProblem, free: np.ndarray, x_free: np.ndarray) -> np.ndarray:
    u = problem.u_nom.astype(float).copy()
    u[free] = x_free
    return u


def _full_multipliers(problem: QpProblem, reduced: _Reduced, active: List[int], lam: np.ndarray) -> np.ndarray:
    multipliers = np.zeros(problem.cbf_count + 2 * problem.size)
    for row, value in zip(active, lam):
        if row < reduced.rows.shape[0]:
            multipliers[reduced.rows[row]] = value
    return multipliers


def solve_qp(problem: QpProblem, slack_penalty: float = 1e6, max_iterations: int = 100) -> QpSolution:
    """Exact minimizer, or the shared-slack relaxation when the CBF rows cannot all hold"""
    reduced = _reduce(problem)
    if reduced.free.size == 0:
        u = problem.u_nom.astype(float).copy()
        feasible = np.all(problem.cbf_matrix @ u + problem.cbf_offsets >= -FEASIBILITY_TOL)
        status = QpStatus.OPTIMAL if feasible else QpStatus.RELAXED
        return QpSolution(u=u, status=status, active_set=(), objective=0.0,
                          multipliers=np.zeros(problem.cbf_count + 2 * problem.size))

    x, active, lam, outcome, iterations = _run_reduced(
        reduced.G, reduced.c, reduced.C, reduced.d, max_iterations
    )
    if outcome == "optimal":
        u = _full_input(problem, reduced.free, x)
        return QpSolution(
            u=u,
            status=QpStatus.OPTIMAL,
            active_set=tuple(sorted(int(reduced.rows[k]) for k in active)),
            objective=problem.objective(u),
            multipliers=_full_multipliers(problem, reduced, active, lam),
            iterations=iterations,
        )
    if outcome == "error":
        return QpSolution(
            u=problem.u_nom.astype(float).copy(),
            status=QpStatus.ERROR,
            active_set=(),
            objective=float("nan"),
            iterations=iterations,
            message="active-set iteration limit reached or singular KKT system",
        )

    # Shared slack s >= 0 on every CBF row, penalized by rho * s^2.
    n_free = reduced.free.shape[0]
    m_cbf = problem.cbf_count
    G = np.zeros((n_free + 1, n_free + 1))
    G[:n_free, :n_free] = reduced.G
    G[n_free, n_free] = 2.0 * slack_penalty
    c = np.append(reduced.c, 0.0)
    slack_column = np.zeros((reduced.C.shape[0], 1))
    slack_column[:m_cbf] = 1.0
    slack_row = np.zeros((1, n_free + 1))
    slack_row[0, n_free] = 1.0
    C = np.vstack([np.hstack([reduced.C, slack_column]), slack_row])
    d = np.append(reduced.d, 0.0)

    x, active, lam, outcome, more_iterations = _run_reduced(G, c, C, d, max_iterations)
    iterations += more_iterations
    if outcome != "optimal":
        return QpSolution(
            u=problem.u_nom.astype(float).copy(),
            status=QpStatus.ERROR,
            active_set=(),
            objective=float("nan"),
            iterations=iterations,
            message=f"relaxed problem ended with {outcome}",
        )
    u = _full_input(problem, reduced.free, x[:n_free])
    slack = max(float(x[n_free]), 0.0)
    logger.debug(f"CBF constraints infeasible; relaxed with slack {slack:.3e}")
    return QpSolution(
        u=u,
        status=QpStatus.RELAXED,
        active_set=tuple(sorted(int(reduced.rows[k]) for k in active if k < reduced.rows.shape[0])),
        objective=problem.objective(u),
        slack_used=slack,
        multipliers=_full_multipliers(problem, reduced, active, lam),
        iterations=iterations,
    )


def kkt_residuals(problem: QpProblem, solution: QpSolution) -> Dict[str, float]:
    """Stationarity, primal, dual and complementarity residuals of an optimal solution"""
    reduced = _reduce(problem)
    x = solution.u[reduced.free]
    lam = solution.multipliers[reduced.rows]
    slack = reduced.C @ x - reduced.d
    return {
        "stationarity": float(np.max(np.abs(reduced.G @ x + reduced.c - reduced.C.T @ lam), initial=0.0)),
        "primal": float(np.max(np.maximum(-slack, 0.0), initial=0.0)),
        "dual": float(np.max(np.maximum(-lam, 0.0), initial=0.0)),
        "complementarity": float(np.max(np.abs(lam * slack), initial=0.0)),
    }


def _stacked_bounds(params: VehicleParams, robots: int) -> Tuple[np.ndarray, np.ndarray]:
    return (np.tile(params.input_lower_bounds(), robots), np.tile(params.input_upper_bounds(), robots))


def build_pair_problem(
    constraint: CbfConstraint,
    u_nom: np.ndarray,
    params: VehicleParams,
    scope: FilterScope = FilterScope.JOINT,
    filter_config: Optional[FilterConfig] = None,
    extra_rows: Sequence[Tuple[np.ndarray, float]] = (),
) -> QpProblem:
    """QP for one robot pair; ego_only holds robot j at its nominal input.

    extra_rows are further (a, b) rows over the joint input, placed after the
    pair barrier row.
    """
    filter_config = filter_config or FilterConfig()
    u_min, u_max = _stacked_bounds(params, 2)
    free_mask = np.array([True, True, scope == FilterScope.JOINT, scope == FilterScope.JOINT])
    rows = [(constraint.a, constraint.b), *extra_rows]
    return QpProblem(
        weight=np.asarray(filter_config.weight_matrix, dtype=float),
        u_nom=np.asarray(u_nom, dtype=float),
        cbf_matrix=np.array([a for a, _ in rows], dtype=float).reshape(-1, 4),
        cbf_offsets=np.array([b for _, b in rows], dtype=float),
        u_min=u_min,
        u_max=u_max,
        free_mask=free_mask,
    )


def filter_pair(
    state_i: VehicleState,
    state_j: VehicleState,
    u_nom: np.ndarray,
    config: CbfConfig,
    net: Optional[MlpParams],
    params: VehicleParams,
    filter_scope: FilterScope = FilterScope.JOINT,
    filter_config: Optional[FilterConfig] = None,
) -> QpSolution:
    filter_config = filter_config or FilterConfig()
    constraint = constraint_coefficients(state_i, state_j, config, net, params)
    problem = build_pair_problem(constraint, u_nom, params, FilterScope(filter_scope), filter_config)
    return solve_qp(problem, filter_config.slack_penalty, filter_config.max_iterations)


def _fleet_weight(weight: np.ndarray, robots: int) -> np.ndarray:
    """A 2k x 2k weight as given; a 4x4 one with two equal diagonal blocks repeated per robot"""
    size = 2 * robots
    if weight.shape == (size, size):
        return weight
    if weight.shape == (4, 4):
        block = weight[:2, :2]
        if np.array_equal(weight, np.kron(np.eye(2), block)):
            return np.kron(np.eye(robots), block)
    raise ValueError(
        f"A fleet of {robots} robots needs a {size}x{size} weight matrix, "
        f"or a 4x4 one made of two equal 2x2 diagonal blocks; got {weight.shape}"
    )


def filter_fleet(
    states: Sequence[VehicleState],
    u_noms: Sequence[ControlInput],
    config: CbfConfig,
    net: Optional[MlpParams],
    params: VehicleParams,
    filter_config: Optional[FilterConfig] = None,
) -> FleetFilterResult:
    """One centralized QP over all robots with a barrier row per unordered pair"""
    robots = len(states)
    if robots < 2 or len(u_noms) != robots:
        raise ValueError("Need at least two robots and one nominal input per robot")
    filter_config = filter_config or FilterConfig()
    size = 2 * robots

    weight = _fleet_weight(np.asarray(filter_config.weight_matrix, dtype=float), robots)

    rows, offsets = [], []
    for i, j in combinations(range(robots), 2):
        constraint = constraint_coefficients(states[i], states[j], config, net, params)
        row = np.zeros(size)
        row[2 * i:2 * i + 2] = constraint.a[:2]
        row[2 * j:2 * j + 2] = constraint.a[2:]
        rows.append(row)
        offsets.append(constraint.b)

    u_min, u_max = _stacked_bounds(params, robots)
    problem = QpProblem(
        weight=weight,
        u_nom=np.concatenate([u.as_array() for u in u_noms]),
        cbf_matrix=np.array(rows),
        cbf_offsets=np.array(offsets),
        u_min=u_min,
        u_max=u_max,
        free_mask=np.ones(size, dtype=bool),
    )
    solution = solve_qp(problem, filter_config.slack_penalty, filter_config.max_iterations)
    inputs = [ControlInput.from_array(solution.u[2 * k:2 * k + 2]) for k in range(robots)]
    return FleetFilterResult(inputs=inputs, solution=solution)
