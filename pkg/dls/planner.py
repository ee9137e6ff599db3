"""
Alternating-palm trajectory optimizer and the straight-line baseline.

The palms take turns: on even steps the left palm moves and the object pose
relative to the right palm advances, on odd steps the roles swap. Each chain
of poses (relative to one palm) is planned in palm-frame increments, where the
dynamics are linear and the slip margins do not depend on the object
orientation, with an augmented-Lagrangian outer loop around L-BFGS-B.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from .config import SolverDefaults
from .contact_sim import GraspConfig, PalmSide, Phase, RolloutResult, SimState, rollout
from .errors import InfeasibleGoalError, InvalidParameterError
from .frames import PlanarPose, Twist, integrate_pose, wrap_angle
from .limit_surface import (
    ConstraintKind,
    ConstraintMargin,
    decomposed_margins,
    decomposed_quadratic_margin,
    nonconvex_fallback_margin,
    slip_free_twist_margin,
    soc_constant,
    soc_equal_radius_margin,
)

logger = logging.getLogger("dls")

PENALTY_CAP = 1e8
CERTIFY_SLACK = 1e-9
STALL_LIMIT = 4


class SlipPolicy(str, Enum):
    """
    Which slippage-free margins a step must satisfy.

    EXACT: the equal-radius cone margin for equal contacts (either sign of its
    constant), the full twist margin otherwise. Both are necessary and sufficient.
    CONVEX: the equal-radius cone when its constant is positive, the half-space
    g_fᵀv > 0 when it is negative, and the two decomposed margins for unequal
    contacts. These are sufficient only.
    """
    EXACT = "exact"
    CONVEX = "convex"


@dataclass(frozen=True)
class SolverConfig:
    """Planner settings; horizon_n is the number of steps per waypoint segment"""
    horizon_n: int = 20
    slip_margin_eps: float = 1e-4
    max_step_trans: float = 0.005
    max_step_rot: float = 0.05
    max_outer_iters: int = 30
    max_inner_iters: int = 400
    tol_stationarity: float = 1e-10
    tol_constraint: float = 1e-8
    tol_terminal_trans: float = 1e-6
    tol_terminal_rot: float = 1e-6
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    margin_buffer: float = 0.25
    policy: SlipPolicy = SlipPolicy.EXACT
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "policy", SlipPolicy(self.policy))
        except ValueError:
            raise InvalidParameterError(f"unknown slip policy {self.policy!r}")
        if self.horizon_n < 2 or self.horizon_n % 2:
            raise InvalidParameterError(f"horizon_n must be an even number >= 2, got {self.horizon_n}")
        positive = (
            "slip_margin_eps", "max_step_trans", "max_step_rot", "tol_stationarity", "tol_constraint",
            "tol_terminal_trans", "tol_terminal_rot", "penalty_init",
        )
        for name in positive:
            if not getattr(self, name) > 0.0:
                raise InvalidParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise InvalidParameterError("iteration limits must be at least 1")
        if self.penalty_growth < 1.0:
            raise InvalidParameterError(f"penalty_growth must be >= 1, got {self.penalty_growth}")
        if self.margin_buffer < 0.0:
            raise InvalidParameterError(f"margin_buffer must be non-negative, got {self.margin_buffer}")

    @classmethod
    def from_defaults(cls, **overrides) -> "SolverConfig":
        """Build from SolverDefaults (env, settings file, built-ins) with explicit overrides on top"""
        names = {f.name for f in fields(cls)}
        unknown = set(overrides) - names
        if unknown:
            raise InvalidParameterError(f"unknown solver settings: {sorted(unknown)}")
        values = {name: SolverDefaults.get(name.upper()) for name in names}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @property
    def max_step_norm(self) -> Tuple[float, float]:
        return self.max_step_trans, self.max_step_rot

    @property
    def step_scale(self) -> np.ndarray:
        return np.array([self.max_step_trans, self.max_step_trans, self.max_step_rot])


Target = Tuple[PlanarPose, PlanarPose]


@dataclass(frozen=True)
class Scenario:
    start_left: PlanarPose
    start_right: PlanarPose
    goal_left: PlanarPose
    goal_right: PlanarPose
    grasp: GraspConfig
    waypoints: Tuple[Target, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(tuple(w) for w in self.waypoints))
        if self.waypoints and self.waypoints[-1] != (self.goal_left, self.goal_right):
            raise InvalidParameterError("the last waypoint must equal the goal poses")

    def targets(self) -> List[Target]:
        return list(self.waypoints) if self.waypoints else [(self.goal_left, self.goal_right)]

    def initial_state(self) -> SimState:
        return SimState(self.start_left, self.start_right, PalmSide.LEFT)

    def check_workspace(self) -> None:
        """Reject start or goal poses outside the palm workspace disc"""
        limit = self.grasp.palm_radius
        named = [("start_left", self.start_left), ("start_right", self.start_right)]
        for k, (left, right) in enumerate(self.targets()):
            named += [(f"goal_left[{k}]", left), (f"goal_right[{k}]", right)]
        for name, pose in named:
            if pose.radius() > limit:
                raise InfeasibleGoalError(f"{name} lies {pose.radius():.4f} m from the palm center (limit {limit} m)")


@dataclass(frozen=True)
class MeritRecord:
    """Augmented-Lagrangian merit around one inner solve"""
    segment: int
    side: str
    active_steps: int
    start: str
    iteration: int
    merit_before: float
    merit_after: float
    violation: float
    penalty: float


@dataclass
class Plan:
    twists: List[Twist]
    phases: List[Phase]
    predicted_states: List[SimState]
    objective_value: float
    converged: bool
    margins: List[Optional[float]] = field(default_factory=list)
    margin_kinds: List[Optional[ConstraintKind]] = field(default_factory=list)
    segment_ends: List[int] = field(default_factory=list)
    targets: List[Target] = field(default_factory=list)
    iterations: int = 0
    merit_trace: List[MeritRecord] = field(default_factory=list)
    label: str = "ours"


@dataclass(frozen=True)
class WaypointErrors:
    """Per-waypoint (translation m, rotation rad) errors for each palm side"""
    left: Tuple[Tuple[float, float], ...]
    right: Tuple[Tuple[float, float], ...]


@dataclass(frozen=True)
class PlanMetrics:
    rmse_trans_left: float
    rmse_rot_left: float
    rmse_trans_right: float
    rmse_rot_right: float
    slip_events: int
    waypoint_errors: WaypointErrors


def margin_kinds(grasp: GraspConfig, policy: SlipPolicy) -> List[ConstraintKind]:
    """Margins enforced on every moving step for this grasp (orientation independent)"""
    a, _ = grasp.matrices()
    gl = grasp.gravity_load()
    if grasp.equal_contacts():
        if policy is SlipPolicy.CONVEX and not gl.is_tangentially_free():
            if soc_constant(a, grasp.c_ratio(), gl) <= 0.0:
                return [ConstraintKind.NONCONVEX_FALLBACK]
        return [ConstraintKind.SOC_EQUAL_RADIUS]
    if policy is SlipPolicy.EXACT:
        return [ConstraintKind.TWIST_FULL]
    if gl.is_tangentially_free():
        return [ConstraintKind.DECOMPOSED_QUADRATIC]
    return [ConstraintKind.DECOMPOSED_QUADRATIC, ConstraintKind.DECOMPOSED_SOC]


def step_margins(v: Twist, grasp: GraspConfig, theta: float, policy: SlipPolicy) -> List[ConstraintMargin]:
    """Evaluate the enforced margins of one nonzero body twist at static-palm orientation theta"""
    a, b = grasp.matrices()
    gl = grasp.gravity_load(theta)
    margins = []
    for kind in margin_kinds(grasp, policy):
        if kind is ConstraintKind.SOC_EQUAL_RADIUS:
            margins.append(soc_equal_radius_margin(v, a, grasp.c_ratio(), gl))
        elif kind is ConstraintKind.TWIST_FULL:
            margins.append(slip_free_twist_margin(v, a, b, gl))
        elif kind is ConstraintKind.NONCONVEX_FALLBACK:
            margins.append(nonconvex_fallback_margin(v, gl))
        elif kind is ConstraintKind.DECOMPOSED_QUADRATIC:
            margins.append(decomposed_quadratic_margin(v, a, b))
        else:
            margins.append(decomposed_margins(v, a, b, gl)[1])
    return margins


class MarginForm(ABC):
    """Smooth palm-frame version of one margin, in solver variables z = u / step_scale"""

    kind: ConstraintKind

    def __init__(self, terms: "_MarginTerms"):
        self.t = terms

    @property
    @abstractmethod
    def unit(self) -> float:
        """Typical magnitude of the margin for a full-size step"""

    @abstractmethod
    def value(self, z: np.ndarray, s: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def gradient(self, z: np.ndarray, s: np.ndarray, ds: np.ndarray) -> np.ndarray:
        pass


@dataclass(frozen=True)
class _MarginTerms:
    q: np.ndarray       # scale² A⁻¹
    p: np.ndarray       # scale² (A⁻¹BA⁻¹ − A⁻¹)
    r: np.ndarray       # scale A⁻¹B g_f
    gs: np.ndarray      # scale g_f
    gbg: float
    k: float
    c_ratio: float


class SocEqualRadiusForm(MarginForm):
    kind = ConstraintKind.SOC_EQUAL_RADIUS

    @property
    def unit(self) -> float:
        return math.sqrt(self.t.q[0])

    def value(self, z, s):
        return self.t.k * s - 2.0 * self.t.c_ratio * (z @ self.t.gs)

    def gradient(self, z, s, ds):
        return self.t.k * ds - 2.0 * self.t.c_ratio * self.t.gs[None, :]


class TwistFullForm(MarginForm):
    kind = ConstraintKind.TWIST_FULL

    @property
    def unit(self) -> float:
        return self.t.q[0]

    def value(self, z, s):
        return (z * z) @ self.t.p - 2.0 * s * (z @ self.t.r) + self.t.gbg * s * s

    def gradient(self, z, s, ds):
        rz = z @ self.t.r
        return (
            2.0 * self.t.p * z
            - 2.0 * rz[:, None] * ds
            - 2.0 * s[:, None] * self.t.r[None, :]
            + 2.0 * self.t.gbg * s[:, None] * ds
        )


class FallbackForm(MarginForm):
    kind = ConstraintKind.NONCONVEX_FALLBACK

    @property
    def unit(self) -> float:
        return float(np.linalg.norm(self.t.gs))

    def value(self, z, s):
        return -(z @ self.t.gs)

    def gradient(self, z, s, ds):
        return np.broadcast_to(-self.t.gs, z.shape).copy()


class DecomposedQuadraticForm(MarginForm):
    kind = ConstraintKind.DECOMPOSED_QUADRATIC

    @property
    def unit(self) -> float:
        return self.t.q[0]

    def value(self, z, s):
        return (z * z) @ self.t.p

    def gradient(self, z, s, ds):
        return 2.0 * self.t.p * z


class DecomposedSocForm(MarginForm):
    kind = ConstraintKind.DECOMPOSED_SOC

    @property
    def unit(self) -> float:
        return math.sqrt(self.t.q[0])

    def value(self, z, s):
        return s - (2.0 / self.t.gbg) * (z @ self.t.r)

    def gradient(self, z, s, ds):
        return ds - (2.0 / self.t.gbg) * self.t.r[None, :]


_FORMS = {
    ConstraintKind.SOC_EQUAL_RADIUS: SocEqualRadiusForm,
    ConstraintKind.TWIST_FULL: TwistFullForm,
    ConstraintKind.NONCONVEX_FALLBACK: FallbackForm,
    ConstraintKind.DECOMPOSED_QUADRATIC: DecomposedQuadraticForm,
    ConstraintKind.DECOMPOSED_SOC: DecomposedSocForm,
}


class SlipConstraint:
    """All slip margins of a step, normalised so that c(z) <= 0 means margin <= -eps(1 + buffer)"""

    def __init__(self, grasp: GraspConfig, cfg: SolverConfig, smoothing: float = 1e-8):
        a, b = grasp.matrices()
        gl = grasp.gravity_load()
        scale = cfg.step_scale
        a_inv, bd, g = a.inverse_diag(), b.as_array(), gl.g_f.as_array()
        c_ratio = grasp.c_ratio()
        self.terms = _MarginTerms(
            q=scale ** 2 * a_inv,
            p=scale ** 2 * (a_inv * bd * a_inv - a_inv),
            r=scale * a_inv * bd * g,
            gs=scale * g,
            gbg=float(np.dot(g * bd, g)),
            k=soc_constant(a, c_ratio, gl),
            c_ratio=c_ratio,
        )
        self.forms = [_FORMS[kind](self.terms) for kind in margin_kinds(grasp, cfg.policy)]
        self.eps = cfg.slip_margin_eps
        self.offset = cfg.slip_margin_eps * (1.0 + cfg.margin_buffer)
        self.delta_sq = (smoothing * math.sqrt(self.terms.q[0])) ** 2

    def __len__(self) -> int:
        return len(self.forms)

    def evaluate(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Normalised smooth constraint values (m, k) and gradients (m, k, 3)"""
        s = np.sqrt((z * z) @ self.terms.q + self.delta_sq)
        ds = self.terms.q * z / s[:, None]
        values = np.stack([(f.value(z, s) + self.offset) / f.unit for f in self.forms], axis=1)
        grads = np.stack([f.gradient(z, s, ds) / f.unit for f in self.forms], axis=1)
        return values, grads

    def margins(self, z: np.ndarray) -> np.ndarray:
        """Raw (unsmoothed, unshifted) margins in natural units, shape (m, k)"""
        s = np.sqrt((z * z) @ self.terms.q)
        return np.stack([f.value(z, s) for f in self.forms], axis=1)


@dataclass
class _ChainResult:
    increments: np.ndarray          # palm-frame increments, shape (m, 3)
    certified: bool
    violation: float
    iterations: int = 0
    trace: List[MeritRecord] = field(default_factory=list)


class _ChainProblem:
    """One chain, one segment, a fixed number of active steps"""

    def __init__(
        self,
        start: PlanarPose,
        goal: PlanarPose,
        active: int,
        slots: int,
        slip: SlipConstraint,
        palm_radius: float,
        cfg: SolverConfig,
    ):
        self.cfg = cfg
        self.scale = cfg.step_scale
        self.delta = np.array([goal.x - start.x, goal.y - start.y, wrap_angle(goal.theta - start.theta)]) / self.scale
        self.origin = np.array([start.x, start.y])
        self.m = active
        self.weights = np.ones(active)
        self.weights[-1] += slots - active
        self.slip = slip
        self.radius_sq = palm_radius ** 2

    def objective(self, z: np.ndarray) -> Tuple[float, np.ndarray]:
        err = np.cumsum(z, axis=0) - self.delta
        value = float(self.weights @ (err * err).sum(axis=1))
        grad_err = 2.0 * self.weights[:, None] * err
        return value, np.cumsum(grad_err[::-1], axis=0)[::-1]

    def inequalities(self, z: np.ndarray) -> Tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
        slip_vals, slip_grads = self.slip.evaluate(z)
        step_vals = z[:, 0] ** 2 + z[:, 1] ** 2 - 1.0
        pos = self.origin + np.cumsum(z[:, :2] * self.scale[:2], axis=0)
        contain_vals = (pos * pos).sum(axis=1) / self.radius_sq - 1.0
        values = np.concatenate([slip_vals.ravel(), step_vals, contain_vals])
        n_slip = slip_vals.size

        def vjp(mult: np.ndarray) -> np.ndarray:
            grad = np.einsum("jk,jkd->jd", mult[:n_slip].reshape(slip_vals.shape), slip_grads)
            grad[:, :2] += 2.0 * mult[n_slip:n_slip + self.m, None] * z[:, :2]
            contrib = 2.0 * mult[n_slip + self.m:, None] * pos * self.scale[:2] / self.radius_sq
            grad[:, :2] += np.cumsum(contrib[::-1], axis=0)[::-1]
            return grad

        return values, vjp

    def lagrangian(self, flat: np.ndarray, nu: np.ndarray, lam: np.ndarray, rho: float) -> Tuple[float, np.ndarray]:
        z = flat.reshape(self.m, 3)
        f, grad = self.objective(z)
        h = z.sum(axis=0) - self.delta
        c, vjp = self.inequalities(z)
        shifted = np.maximum(0.0, lam + rho * c)
        value = f + nu @ h + 0.5 * rho * (h @ h) + (shifted @ shifted - lam @ lam) / (2.0 * rho)
        grad = grad + (nu + rho * h)[None, :] + vjp(shifted)
        return float(value), grad.ravel()

    def violation(self, z: np.ndarray) -> float:
        h = z.sum(axis=0) - self.delta
        c, _ = self.inequalities(z)
        return max(float(np.max(np.abs(h))), float(np.max(c, initial=0.0)), 0.0)

    def starts(self, warm: Optional[np.ndarray], rng: np.random.Generator) -> List[Tuple[str, np.ndarray]]:
        """Initial guesses in the order they are tried"""
        straight = np.tile(self.delta / self.m, (self.m, 1))
        starts = []
        if warm is not None and warm.shape == straight.shape:
            starts.append(("warm", warm + (self.delta - warm.sum(axis=0)) / self.m))

        d_xy = self.delta[:2]
        norm = float(np.linalg.norm(d_xy))
        if norm > 0.0 and self.m > 1:
            lateral = np.array([-d_xy[1], d_xy[0]]) / norm
            amplitude = min(0.9, max(0.5, norm / self.m))
            signs = np.where(np.arange(self.m) % 2 == 0, 1.0, -1.0)
            signs -= signs.mean()
            zigzag = straight.copy()
            zigzag[:, :2] += amplitude * signs[:, None] * lateral[None, :]
            starts.append(("zigzag", zigzag))

        starts.append(("straight", straight))
        starts.append(("random", straight + rng.uniform(-0.5, 0.5, size=straight.shape)))
        return [(label, np.clip(z0, -1.0, 1.0)) for label, z0 in starts]

    def project_terminal(self, z: np.ndarray) -> np.ndarray:
        """Spread the terminal residual evenly over the active steps"""
        return z - (z.sum(axis=0) - self.delta) / self.m

    def certify(self, z: np.ndarray) -> bool:
        if np.any(np.abs(z) > 1.0 + CERTIFY_SLACK):
            return False
        if np.any(z[:, 0] ** 2 + z[:, 1] ** 2 > 1.0 + CERTIFY_SLACK):
            return False
        pos = self.origin + np.cumsum(z[:, :2] * self.scale[:2], axis=0)
        if np.any((pos * pos).sum(axis=1) > self.radius_sq * (1.0 + CERTIFY_SLACK)):
            return False
        return bool(np.all(self.slip.margins(z) <= -self.slip.eps))

    def solve(self, z0: np.ndarray, segment: int, side: PalmSide, start: str) -> _ChainResult:
        cfg = self.cfg
        n_ineq = len(self.inequalities(z0)[0])
        nu, lam = np.zeros(3), np.zeros(n_ineq)
        rho = cfg.penalty_init
        z = z0.copy()
        trace: List[MeritRecord] = []
        best_violation = previous_violation = math.inf
        stalled = 0

        for iteration in range(cfg.max_outer_iters):
            merit_before, _ = self.lagrangian(z.ravel(), nu, lam, rho)
            res = minimize(
                self.lagrangian,
                z.ravel(),
                args=(nu, lam, rho),
                jac=True,
                method="L-BFGS-B",
                bounds=[(-1.0, 1.0)] * z.size,
                options={"maxiter": cfg.max_inner_iters, "ftol": 1e-15, "gtol": cfg.tol_stationarity},
            )
            merit_after = float(res.fun)
            if merit_after <= merit_before:
                z = np.asarray(res.x, dtype=float).reshape(self.m, 3)
            else:
                merit_after = merit_before

            h = z.sum(axis=0) - self.delta
            c, _ = self.inequalities(z)
            violation = self.violation(z)
            trace.append(MeritRecord(segment, side.value, self.m, start, iteration, merit_before, merit_after,
                                     violation, rho))
            logger.debug(
                f"seg {segment} {side.value} m={self.m} {start} it {iteration}: merit {merit_before:.6e} -> "
                f"{merit_after:.6e}, violation {violation:.3e}, penalty {rho:.1e}"
            )
            if violation <= cfg.tol_constraint:
                break

            nu = nu + rho * h
            lam = np.maximum(0.0, lam + rho * c)
            if violation > 0.25 * previous_violation:
                rho = min(rho * cfg.penalty_growth, PENALTY_CAP)
            previous_violation = violation
            if violation < 0.99 * best_violation:
                best_violation, stalled = violation, 0
            else:
                stalled += 1
            if stalled >= STALL_LIMIT:
                break

        projected = self.project_terminal(z)
        return _ChainResult(
            increments=projected * self.scale,
            certified=self.certify(projected),
            violation=self.violation(projected),
            iterations=len(trace),
            trace=trace,
        )


def _chain_delta(start: PlanarPose, goal: PlanarPose) -> np.ndarray:
    return np.array([goal.x - start.x, goal.y - start.y, wrap_angle(goal.theta - start.theta)])


def _plan_chain(
    start: PlanarPose,
    goal: PlanarPose,
    slip: SlipConstraint,
    grasp: GraspConfig,
    cfg: SolverConfig,
    warm: Optional[np.ndarray],
    segment: int,
    side: PalmSide,
) -> _ChainResult:
    slots = cfg.horizon_n // 2
    delta = _chain_delta(start, goal)
    if not np.any(delta):
        return _ChainResult(np.zeros((0, 3)), True, 0.0)

    lower = max(float(np.linalg.norm(delta[:2])) / cfg.max_step_trans, abs(delta[2]) / cfg.max_step_rot)
    m_min = max(1, math.ceil(lower - 1e-9))
    if m_min > slots:
        logger.warning(f"Segment {segment} ({side.value}): goal needs {m_min} steps, only {slots} available")
        return _ChainResult(np.tile(delta / slots, (slots, 1)), False, math.inf)

    best: Optional[_ChainResult] = None
    trace: List[MeritRecord] = []
    side_index = 0 if side is PalmSide.LEFT else 1
    for m in range(m_min, slots + 1):
        problem = _ChainProblem(start, goal, m, slots, slip, grasp.palm_radius, cfg)
        rng = np.random.default_rng([cfg.seed, segment, side_index, m])
        warm_z = warm / problem.scale if warm is not None else None
        for label, z0 in problem.starts(warm_z, rng):
            result = problem.solve(z0, segment, side, label)
            trace.extend(result.trace)
            if result.certified:
                logger.info(f"Segment {segment} ({side.value}): solved with {m} active steps from {label} start")
                result.trace, result.iterations = trace, len(trace)
                return result
            if best is None or result.violation < best.violation:
                best = result

    logger.warning(f"Segment {segment} ({side.value}): no certified solution, best violation {best.violation:.3e}")
    best.trace, best.iterations = trace, len(trace)
    return best


def _body_twist(pose: PlanarPose, increment: np.ndarray) -> Twist:
    """Palm-frame increment to the body-fixed twist that produces it"""
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return Twist(c * increment[0] + s * increment[1], -s * increment[0] + c * increment[1], increment[2])


def _advance(state: SimState, phase: Phase, increment: np.ndarray) -> Tuple[Twist, SimState]:
    """One scheduled step: the pose relative to the static palm moves, the other is untouched"""
    static = phase.static_palm
    pose = state.pose_in(static)
    if not np.any(increment):
        twist, new_pose = Twist.zero(), pose
    else:
        twist = _body_twist(pose, increment)
        new_pose = integrate_pose(pose, twist)
    left = new_pose if static is PalmSide.LEFT else state.pose_obj_in_left
    right = new_pose if static is PalmSide.RIGHT else state.pose_obj_in_right
    return twist, SimState(left, right, phase.moving_palm.other)


def _segment_steps(increments: Dict[PalmSide, np.ndarray], horizon_n: int) -> List[np.ndarray]:
    steps = []
    for t in range(horizon_n):
        chain = increments[Phase.for_step(t).static_palm]
        k = t // 2
        steps.append(chain[k] if k < len(chain) else np.zeros(3))
    return steps


def _objective_value(states: Sequence[SimState], targets: Sequence[Target], horizon_n: int) -> float:
    total = 0.0
    for t, state in enumerate(states):
        goal_left, goal_right = targets[min(max(0, t - 1) // horizon_n, len(targets) - 1)]
        for pose, goal in ((state.pose_obj_in_left, goal_left), (state.pose_obj_in_right, goal_right)):
            total += (pose.x - goal.x) ** 2 + (pose.y - goal.y) ** 2 + wrap_angle(pose.theta - goal.theta) ** 2
    return total


def _annotate_margins(p: Plan, grasp: GraspConfig, policy: SlipPolicy) -> None:
    p.margins, p.margin_kinds = [], []
    for twist, phase, state in zip(p.twists, p.phases, p.predicted_states):
        if twist.is_zero():
            p.margins.append(None)
            p.margin_kinds.append(None)
            continue
        worst = max(step_margins(twist, grasp, state.pose_in(phase.static_palm).theta, policy), key=lambda m: m.value)
        p.margins.append(worst.value)
        p.margin_kinds.append(worst.kind)


def plan(s: Scenario, cfg: SolverConfig) -> Plan:
    """
    Plan slippage-free twists through every waypoint of the scenario.

    Each waypoint segment spans horizon_n steps. Non-convergence is reported
    through Plan.converged with the best iterate, never raised.
    """
    s.check_workspace()
    slip = SlipConstraint(s.grasp, cfg)
    targets = s.targets()
    state = s.initial_state()
    twists: List[Twist] = []
    phases: List[Phase] = []
    states = [state]
    trace: List[MeritRecord] = []
    segment_ends: List[int] = []
    converged = True
    warm: Dict[PalmSide, Optional[np.ndarray]] = {PalmSide.LEFT: None, PalmSide.RIGHT: None}

    for segment, (goal_left, goal_right) in enumerate(targets):
        increments: Dict[PalmSide, np.ndarray] = {}
        for side, goal in ((PalmSide.LEFT, goal_left), (PalmSide.RIGHT, goal_right)):
            result = _plan_chain(state.pose_in(side), goal, slip, s.grasp, cfg, warm[side], segment, side)
            increments[side] = result.increments
            trace.extend(result.trace)
            converged = converged and result.certified
            warm[side] = result.increments if len(result.increments) else None

        for t, increment in enumerate(_segment_steps(increments, cfg.horizon_n)):
            phase = Phase.for_step(t)
            twist, state = _advance(state, phase, increment)
            twists.append(twist)
            phases.append(phase)
            states.append(state)
        segment_ends.append(len(twists))

    result = Plan(
        twists=twists,
        phases=phases,
        predicted_states=states,
        objective_value=_objective_value(states, targets, cfg.horizon_n),
        converged=converged,
        segment_ends=segment_ends,
        targets=targets,
        iterations=len(trace),
        merit_trace=trace,
    )
    _annotate_margins(result, s.grasp, cfg.policy)

    worst = certify_plan(result, s, cfg)
    if result.converged and worst > -cfg.slip_margin_eps + CERTIFY_SLACK:
        logger.warning(f"Plan failed margin certification (worst {worst:.3e})")
        result.converged = False
    if result.converged and not _terminal_ok(result, cfg):
        logger.warning("Plan misses a waypoint beyond the terminal tolerance")
        result.converged = False
    logger.info(
        f"Planned {len(twists)} steps over {len(targets)} segment(s): converged={result.converged}, "
        f"objective={result.objective_value:.6e}, iterations={result.iterations}"
    )
    return result


def _terminal_ok(p: Plan, cfg: SolverConfig) -> bool:
    for end, (goal_left, goal_right) in zip(p.segment_ends, p.targets):
        state = p.predicted_states[end]
        for pose, goal in ((state.pose_obj_in_left, goal_left), (state.pose_obj_in_right, goal_right)):
            if math.hypot(pose.x - goal.x, pose.y - goal.y) > cfg.tol_terminal_trans:
                return False
            if abs(wrap_angle(pose.theta - goal.theta)) > cfg.tol_terminal_rot:
                return False
    return True


def baseline_plan(s: Scenario, cfg: SolverConfig) -> Plan:
    """Straight-line interpolation in relative-pose space on the same schedule, no slip constraints"""
    slots = cfg.horizon_n // 2
    targets = s.targets()
    state = s.initial_state()
    twists: List[Twist] = []
    phases: List[Phase] = []
    states = [state]
    segment_ends: List[int] = []

    for goal_left, goal_right in targets:
        increments = {
            side: np.tile(_chain_delta(state.pose_in(side), goal) / slots, (slots, 1))
            for side, goal in ((PalmSide.LEFT, goal_left), (PalmSide.RIGHT, goal_right))
        }
        for t, increment in enumerate(_segment_steps(increments, cfg.horizon_n)):
            phase = Phase.for_step(t)
            twist, state = _advance(state, phase, increment)
            twists.append(twist)
            phases.append(phase)
            states.append(state)
        segment_ends.append(len(twists))

    result = Plan(
        twists=twists,
        phases=phases,
        predicted_states=states,
        objective_value=_objective_value(states, targets, cfg.horizon_n),
        converged=True,
        segment_ends=segment_ends,
        targets=targets,
        label="baseline",
    )
    _annotate_margins(result, s.grasp, cfg.policy)
    return result


def certify_plan(p: Plan, s: Scenario, cfg: SolverConfig) -> float:
    """
    Re-evaluate every enforced margin from the twists alone.

    Poses are re-integrated from the scenario start, so the check does not
    trust the plan's predicted states. Returns the worst (largest) margin,
    -inf when the plan never moves.
    """
    state = s.initial_state()
    worst = -math.inf
    for twist, phase in zip(p.twists, p.phases):
        static = phase.static_palm
        pose = state.pose_in(static)
        if twist.is_zero():
            continue
        for margin in step_margins(twist, s.grasp, pose.theta, cfg.policy):
            worst = max(worst, margin.value)
        moved = integrate_pose(pose, twist)
        state = SimState(
            moved if static is PalmSide.LEFT else state.pose_obj_in_left,
            moved if static is PalmSide.RIGHT else state.pose_obj_in_right,
            phase.moving_palm.other,
        )
    return worst


def _rmse(values: Sequence[float]) -> float:
    return float(np.sqrt(np.mean(np.square(values)))) if len(values) else 0.0


def evaluate_plan(p: Plan, s: Scenario, result: Optional[RolloutResult] = None) -> PlanMetrics:
    """RMSE over waypoint goals, mm and degrees, per palm side (left = top, right = bottom)"""
    if result is None:
        result = rollout(p, s.initial_state(), s.grasp, p.targets or s.targets())
    left = tuple(result.waypoint_errors_left)
    right = tuple(result.waypoint_errors_right)
    return PlanMetrics(
        rmse_trans_left=1e3 * _rmse([e[0] for e in left]),
        rmse_rot_left=math.degrees(_rmse([e[1] for e in left])),
        rmse_trans_right=1e3 * _rmse([e[0] for e in right]),
        rmse_rot_right=math.degrees(_rmse([e[1] for e in right])),
        slip_events=result.slip_events,
        waypoint_errors=WaypointErrors(left, right),
    )
