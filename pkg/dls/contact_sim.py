"""
Quasi-static stick/slip simulator for the two-palm grasp.

Given the commanded motion of the moving palm relative to the static palm, the
simulator decides which contact slides, solves quasi-static balance when both
do, and integrates the object pose relative to each palm with the same
first-order update the planner uses.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import root

from .errors import InvalidParameterError, SlipResolutionError
from .frames import GravityLoad, PlanarPose, Twist, Wrench, gravity_decompose, integrate_pose, pose_error
from .limit_surface import (
    DEFAULT_PRESSURE_CONSTANT,
    EllipsoidMatrix,
    LimitSurfaceParams,
    boundary_residual,
    dissipation_potential,
    ls_matrix,
    quasi_static_residual,
    sticking_margin,
    twist_to_wrench,
)

if TYPE_CHECKING:
    from .planner import Plan

logger = logging.getLogger("dls")

DEGENERATE_BAND = 1e-12
BALANCE_TOL = 1e-8
WORKSPACE_SLACK = 1e-12


@dataclass(frozen=True)
class GraspConfig:
    """Physical parameters of the grasp, shared by both palm chains"""
    mass: float
    gravity: float
    incline_phi: float
    downhill_alpha: float
    squeeze_force: float
    mu_static_palm: float
    mu_moving_palm: float
    radius_static_palm: float
    radius_moving_palm: float
    palm_radius: float
    pressure_constant: float = DEFAULT_PRESSURE_CONSTANT
    moving_palm_below: bool = True

    def __post_init__(self):
        positive = {
            "mass": self.mass,
            "gravity": self.gravity,
            "squeeze_force": self.squeeze_force,
            "mu_static_palm": self.mu_static_palm,
            "mu_moving_palm": self.mu_moving_palm,
            "radius_static_palm": self.radius_static_palm,
            "radius_moving_palm": self.radius_moving_palm,
            "palm_radius": self.palm_radius,
        }
        for name, value in positive.items():
            if not (value > 0.0 and math.isfinite(value)):
                raise InvalidParameterError(f"{name} must be positive, got {value}")
        if not 0.0 <= self.incline_phi < math.pi / 2.0:
            raise InvalidParameterError(f"incline must lie in [0, pi/2), got {self.incline_phi}")
        if not 0.0 < self.pressure_constant <= 1.0:
            raise InvalidParameterError(f"pressure constant must lie in (0, 1], got {self.pressure_constant}")

    def equal_contacts(self) -> bool:
        """True when both contacts share friction and patch radius, so that B = c_ratio·A"""
        return self.mu_static_palm == self.mu_moving_palm and self.radius_static_palm == self.radius_moving_palm

    def static_params(self) -> LimitSurfaceParams:
        return LimitSurfaceParams(
            self.mu_static_palm, normal_forces(self)[0], self.radius_static_palm, self.pressure_constant
        )

    def moving_params(self) -> LimitSurfaceParams:
        return LimitSurfaceParams(
            self.mu_moving_palm, normal_forces(self)[1], self.radius_moving_palm, self.pressure_constant
        )

    def matrices(self) -> Tuple[EllipsoidMatrix, EllipsoidMatrix]:
        """(A, B): static-palm and moving-palm limit surfaces"""
        return ls_matrix(self.static_params()), ls_matrix(self.moving_params())

    def c_ratio(self) -> float:
        n_static, n_moving = normal_forces(self)
        return (n_static / n_moving) ** 2

    def gravity_load(self, theta: float = 0.0) -> GravityLoad:
        """Gravity in the object frame when the object sits at orientation theta on the static palm"""
        return gravity_decompose(self.mass, self.gravity, self.incline_phi, self.downhill_alpha - theta)


class PalmSide(str, Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def other(self) -> "PalmSide":
        return PalmSide.RIGHT if self is PalmSide.LEFT else PalmSide.LEFT


class Phase(str, Enum):
    LEFT_MOVES = "LeftMoves"
    RIGHT_MOVES = "RightMoves"

    @classmethod
    def for_step(cls, t: int) -> "Phase":
        """Fixed schedule: the left palm moves on even steps, the right palm on odd steps"""
        return cls.LEFT_MOVES if t % 2 == 0 else cls.RIGHT_MOVES

    @property
    def moving_palm(self) -> PalmSide:
        return PalmSide.LEFT if self is Phase.LEFT_MOVES else PalmSide.RIGHT

    @property
    def static_palm(self) -> PalmSide:
        return self.moving_palm.other


class ContactMode(str, Enum):
    STICK_MOVING_SLIDE_STATIC = "StickMovingSlideStatic"
    SLIP_AT_MOVING = "SlipAtMoving"
    ALL_STICK = "AllStick"
    DEGENERATE = "Degenerate"

    @property
    def is_slip_event(self) -> bool:
        return self in (ContactMode.SLIP_AT_MOVING, ContactMode.DEGENERATE)


@dataclass(frozen=True)
class SimState:
    pose_obj_in_left: PlanarPose
    pose_obj_in_right: PlanarPose
    active_moving_palm: PalmSide = PalmSide.LEFT

    def pose_in(self, side: PalmSide) -> PlanarPose:
        return self.pose_obj_in_left if side is PalmSide.LEFT else self.pose_obj_in_right

    def static_pose(self) -> PlanarPose:
        return self.pose_in(self.active_moving_palm.other)

    def moving_pose(self) -> PlanarPose:
        return self.pose_in(self.active_moving_palm)

    def in_workspace(self, palm_radius: float) -> bool:
        limit = palm_radius + WORKSPACE_SLACK
        return self.pose_obj_in_left.radius() <= limit and self.pose_obj_in_right.radius() <= limit


class ModeCheck(NamedTuple):
    mode: ContactMode
    w_static: Wrench
    w_moving: Wrench
    margin: float


@dataclass(frozen=True)
class StepRecord:
    """Everything the simulator knows about one step"""
    state: SimState
    mode: ContactMode
    v_command: Twist
    v_object: Twist
    w_static: Wrench
    w_moving: Wrench
    residual_norm: float
    dissipation: float
    in_workspace: bool


@dataclass
class RolloutResult:
    states: List[SimState]
    modes: List[ContactMode]
    slip_events: int
    final_error_left: Tuple[float, float]
    final_error_right: Tuple[float, float]
    records: List[StepRecord] = field(default_factory=list)
    waypoint_errors_left: List[Tuple[float, float]] = field(default_factory=list)
    waypoint_errors_right: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def residual_norms(self) -> List[float]:
        return [r.residual_norm for r in self.records]

    @property
    def dissipation(self) -> List[float]:
        return [r.dissipation for r in self.records]

    @property
    def workspace_exits(self) -> int:
        return sum(1 for r in self.records if not r.in_workspace)


def normal_forces(cfg: GraspConfig) -> Tuple[float, float]:
    """(N_static, N_moving); the palm underneath also carries m·g·cos φ"""
    weight_normal = cfg.mass * cfg.gravity * math.cos(cfg.incline_phi)
    lower = cfg.squeeze_force + weight_normal
    upper = cfg.squeeze_force
    if cfg.moving_palm_below:
        return upper, lower
    return lower, upper


def check_mode(v_cmd: Twist, cfg: GraspConfig, theta: float = 0.0) -> ModeCheck:
    """
    Classify a commanded twist under the stick-at-moving / slide-at-static hypothesis.

    Args:
        v_cmd: moving-palm twist relative to the static palm, object frame
        cfg: grasp parameters
        theta: object orientation relative to the static palm

    Returns:
        ModeCheck with the mode, the hypothesised wrenches and the sticking margin
    """
    gl = cfg.gravity_load(theta)
    if v_cmd.is_zero():
        return ModeCheck(ContactMode.ALL_STICK, Wrench.zero(), -gl.g_f, -1.0)

    a, b = cfg.matrices()
    w_a = twist_to_wrench(a, v_cmd)
    w_b = -w_a - gl.g_f
    margin = sticking_margin(b, w_b)
    if margin < 0.0:
        mode = ContactMode.STICK_MOVING_SLIDE_STATIC
    elif margin <= DEGENERATE_BAND:
        mode = ContactMode.DEGENERATE
    else:
        mode = ContactMode.SLIP_AT_MOVING
    return ModeCheck(mode, w_a, w_b, margin)


def dissipation_objective(v_o: Twist, v_palm: Twist, a: EllipsoidMatrix, b: EllipsoidMatrix, gl: GravityLoad) -> float:
    """
    Convex potential whose minimiser is the quasi-static object twist.

    Its gradient is minus the balance residual w_A(v) + w_B(v − v_palm) + g_f.
    """
    return (
        dissipation_potential(a, v_o)
        + dissipation_potential(b, v_o - v_palm)
        - float(np.dot(gl.g_f.as_array(), v_o.as_array()))
    )


def _friction(m_inv: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Maximum-dissipation wrench and its Jacobian with respect to the twist"""
    m_inv_v = m_inv * v
    s = math.sqrt(float(np.dot(m_inv_v, v)))
    if s == 0.0:
        return np.zeros(3), np.zeros((3, 3))
    w = -m_inv_v / s
    jac = -(np.diag(m_inv) / s - np.outer(m_inv_v, m_inv_v) / s ** 3)
    return w, jac


class _DualSlide:
    """Balance residual with both contacts sliding, in variables scaled to force units"""

    def __init__(self, v_palm: np.ndarray, a: EllipsoidMatrix, b: EllipsoidMatrix, gl: GravityLoad, rho: float):
        self.v_palm = v_palm
        self.a_inv = a.inverse_diag()
        self.b_inv = b.inverse_diag()
        self.g = gl.g_f.as_array()
        self.scale = np.array([1.0, 1.0, 1.0 / rho])

    def raw(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        w_a, j_a = _friction(self.a_inv, v)
        w_b, j_b = _friction(self.b_inv, v - self.v_palm)
        return w_a + w_b + self.g, j_a + j_b

    def __call__(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        r, jac = self.raw(y * self.scale)
        return r * self.scale, self.scale[:, None] * jac * self.scale[None, :]

    def residual_norm(self, y: np.ndarray) -> float:
        return float(np.linalg.norm(self.raw(y * self.scale)[0]))

    def potential(self, ys: np.ndarray) -> np.ndarray:
        """Dissipation potential on an (n, 3) batch of scaled twists"""
        vs = ys * self.scale
        rel = vs - self.v_palm
        return (
            np.sqrt(np.einsum("ij,j,ij->i", vs, self.a_inv, vs))
            + np.sqrt(np.einsum("ij,j,ij->i", rel, self.b_inv, rel))
            - vs @ self.g
        )

    def polish(self, y: np.ndarray, max_iter: int = 20) -> np.ndarray:
        """Damped Newton refinement on the scaled residual"""
        y = y.copy()
        best = self.residual_norm(y)
        for _ in range(max_iter):
            if best < BALANCE_TOL * 1e-2:
                break
            r, jac = self(y)
            try:
                delta = np.linalg.solve(jac, -r)
            except np.linalg.LinAlgError:
                break
            step = 1.0
            while step > 1e-6:
                candidate = y + step * delta
                norm = self.residual_norm(candidate)
                if norm < best:
                    y, best = candidate, norm
                    break
                step *= 0.5
            else:
                break
        return y

    def grid_minimum(self, span: float, points: int = 41, refinements: int = 2) -> np.ndarray:
        """Brute-force minimiser of the potential on a refined cube grid"""
        center = np.zeros(3)
        half = span
        for _ in range(refinements + 1):
            axis = np.linspace(-half, half, points)
            grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3) + center
            center = grid[int(np.argmin(self.potential(grid)))]
            half = 4.0 * (2.0 * half / (points - 1))
        return center


def _dual_slide(v_palm: Twist, a: EllipsoidMatrix, b: EllipsoidMatrix, gl: GravityLoad, rho: float) -> Twist:
    problem = _DualSlide(v_palm.as_array(), a, b, gl, rho)
    y_palm = v_palm.as_array() / problem.scale
    size = float(np.linalg.norm(y_palm))
    nudge = 1e-3 * size * np.array([0.31, -0.47, 0.83])

    starts = [y_palm + nudge, nudge]
    g_xy = gl.g_f.as_array()
    if np.linalg.norm(g_xy) > 0.0:
        starts.append(size * g_xy / np.linalg.norm(g_xy) + nudge)

    best_y, best_norm = starts[0], math.inf
    for y0 in starts:
        for method in ("hybr", "lm"):
            try:
                sol = root(problem, y0, jac=True, method=method)
            except (ValueError, np.linalg.LinAlgError) as e:
                logger.debug(f"Slip root-finder {method} failed from {y0}: {e}")
                continue
            y = problem.polish(np.asarray(sol.x, dtype=float))
            norm = problem.residual_norm(y)
            if norm < best_norm:
                best_y, best_norm = y, norm
            if best_norm < BALANCE_TOL:
                return Twist.from_array(best_y * problem.scale)

    logger.debug(f"Slip root-finder did not converge (best {best_norm:.3e} N), falling back to grid search")
    y = problem.polish(problem.grid_minimum(3.0 * size))
    norm = problem.residual_norm(y)
    if norm < best_norm:
        best_y, best_norm = y, norm
    if best_norm >= BALANCE_TOL:
        raise SlipResolutionError(f"dual-slide balance not solved for palm twist {v_palm}", best_norm)
    return Twist.from_array(best_y * problem.scale)


def resolve_slip_twist(v_palm: Twist, cfg: GraspConfig, theta: float = 0.0) -> Twist:
    """
    Object twist relative to the static palm when sticking at the moving palm fails.

    Candidate modes are tried in order: stick at the moving palm (returns v_palm),
    stick at the static palm (returns zero), both contacts sliding (root of the
    three-dimensional balance).
    """
    if v_palm.is_zero():
        return Twist.zero()
    if check_mode(v_palm, cfg, theta).mode is not ContactMode.SLIP_AT_MOVING:
        return v_palm

    a, b = cfg.matrices()
    gl = cfg.gravity_load(theta)
    holding = -twist_to_wrench(b, -v_palm) - gl.g_f
    if boundary_residual(a, holding) < 0.0:
        return Twist.zero()

    return _dual_slide(v_palm, a, b, gl, cfg.pressure_constant * cfg.radius_static_palm)


def _balance_wrenches(
    v_object: Twist, v_cmd: Twist, cfg: GraspConfig, gl: GravityLoad
) -> Tuple[Wrench, Wrench]:
    """Friction wrenches on the object for a resolved slip twist"""
    a, b = cfg.matrices()
    relative = v_object - v_cmd
    if v_object.is_zero():
        w_moving = twist_to_wrench(b, relative)
        return -w_moving - gl.g_f, w_moving
    w_static = twist_to_wrench(a, v_object)
    if relative.is_zero():
        return w_static, -w_static - gl.g_f
    return w_static, twist_to_wrench(b, relative)


def _with_poses(s: SimState, static_pose: PlanarPose, moving_pose: PlanarPose) -> SimState:
    if s.active_moving_palm is PalmSide.LEFT:
        return SimState(moving_pose, static_pose, PalmSide.RIGHT)
    return SimState(static_pose, moving_pose, PalmSide.LEFT)


def advance(s: SimState, v_cmd: Twist, cfg: GraspConfig) -> StepRecord:
    """
    Simulate one step and return the full record.

    The returned state hands the moving role to the other palm, following the
    alternation schedule.
    """
    static_pose, moving_pose = s.static_pose(), s.moving_pose()
    verdict = check_mode(v_cmd, cfg, static_pose.theta)

    if verdict.mode is ContactMode.ALL_STICK:
        new_state = _with_poses(s, static_pose, moving_pose)
        return StepRecord(new_state, verdict.mode, v_cmd, Twist.zero(), verdict.w_static, verdict.w_moving,
                          0.0, 0.0, new_state.in_workspace(cfg.palm_radius))

    gl = cfg.gravity_load(static_pose.theta)
    if verdict.mode is ContactMode.SLIP_AT_MOVING:
        v_object = resolve_slip_twist(v_cmd, cfg, static_pose.theta)
        w_static, w_moving = _balance_wrenches(v_object, v_cmd, cfg, gl)
        relative = v_object - v_cmd
        new_static = static_pose if v_object.is_zero() else integrate_pose(static_pose, v_object)
        new_moving = moving_pose if relative.is_zero() else integrate_pose(moving_pose, relative)
    else:
        v_object = v_cmd
        w_static, w_moving = verdict.w_static, verdict.w_moving
        relative = Twist.zero()
        new_static = integrate_pose(static_pose, v_cmd)
        new_moving = moving_pose

    residual = quasi_static_residual(w_static, w_moving, gl).norm()
    dissipation = -float(np.dot(w_static.as_array(), v_object.as_array())) - float(
        np.dot(w_moving.as_array(), relative.as_array())
    )
    new_state = _with_poses(s, new_static, new_moving)
    inside = new_state.in_workspace(cfg.palm_radius)
    if not inside:
        logger.warning(
            f"Object left the palm workspace: left r={new_state.pose_obj_in_left.radius():.4f} m, "
            f"right r={new_state.pose_obj_in_right.radius():.4f} m"
        )
    return StepRecord(new_state, verdict.mode, v_cmd, v_object, w_static, w_moving, residual, dissipation, inside)


def step(s: SimState, v_cmd: Twist, cfg: GraspConfig) -> Tuple[SimState, ContactMode]:
    record = advance(s, v_cmd, cfg)
    return record.state, record.mode


def _errors(state: SimState, goal_left: PlanarPose, goal_right: PlanarPose) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    return pose_error(state.pose_obj_in_left, goal_left), pose_error(state.pose_obj_in_right, goal_right)


def rollout(
    plan: "Plan",
    s0: SimState,
    cfg: GraspConfig,
    targets: Optional[Sequence[Tuple[PlanarPose, PlanarPose]]] = None,
) -> RolloutResult:
    """
    Apply every twist of a plan in the simulator.

    Errors are measured at each segment end against the plan's targets (or the
    given ones); the final errors are those of the last target.
    """
    targets = list(targets if targets is not None else plan.targets)
    states = [s0]
    modes: List[ContactMode] = []
    records: List[StepRecord] = []
    slip_events = 0

    state = s0
    for t, (v_cmd, phase) in enumerate(zip(plan.twists, plan.phases)):
        state = replace(state, active_moving_palm=phase.moving_palm)
        record = advance(state, v_cmd, cfg)
        if record.mode.is_slip_event and not v_cmd.is_zero():
            slip_events += 1
            logger.debug(f"Step {t}: {record.mode.value} with command {v_cmd}")
        state = record.state
        states.append(state)
        modes.append(record.mode)
        records.append(record)

    ends = list(getattr(plan, "segment_ends", [])) or [len(plan.twists)] * len(targets)
    waypoints_left: List[Tuple[float, float]] = []
    waypoints_right: List[Tuple[float, float]] = []
    for (goal_left, goal_right), end in zip(targets, ends):
        err_left, err_right = _errors(states[min(end, len(states) - 1)], goal_left, goal_right)
        waypoints_left.append(err_left)
        waypoints_right.append(err_right)

    if targets:
        final_left, final_right = _errors(states[-1], *targets[-1])
    else:
        final_left, final_right = (0.0, 0.0), (0.0, 0.0)

    return RolloutResult(
        states=states,
        modes=modes,
        slip_events=slip_events,
        final_error_left=final_left,
        final_error_right=final_right,
        records=records,
        waypoint_errors_left=waypoints_left,
        waypoint_errors_right=waypoints_right,
    )
