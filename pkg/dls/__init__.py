from .errors import (
    DLSError,
    InvalidParameterError,
    DegenerateTwistError,
    DegenerateGravityError,
    InfeasibleGoalError,
    SlipResolutionError,
    ScenarioParseError,
    PlanFileError,
)
from .frames import PlanarPose, Twist, Wrench, GravityLoad, compose, inverse, integrate_pose, pose_error, gravity_decompose
from .limit_surface import (
    LimitSurfaceParams,
    EllipsoidMatrix,
    ConstraintKind,
    ConstraintMargin,
    MiddleFactor,
    ls_matrix,
    twist_to_wrench,
    slip_free_wrench_margin,
    slip_free_twist_margin,
    leading_coeff_margin,
    soc_equal_radius_margin,
    nonconvex_fallback_margin,
    decomposed_margins,
)
from .contact_sim import GraspConfig, PalmSide, Phase, ContactMode, SimState, RolloutResult, check_mode, resolve_slip_twist, step, rollout
from .planner import SlipPolicy, SolverConfig, Scenario, Plan, PlanMetrics, plan, baseline_plan, certify_plan, evaluate_plan
from .scenario_io import ScenarioFile, SuiteFile, load_scenario, load_suite, write_plan_csv, read_plan_csv
from .sweep import ResultsTable, run_sweep

__all__ = [
    'DLSError',
    'InvalidParameterError',
    'DegenerateTwistError',
    'DegenerateGravityError',
    'InfeasibleGoalError',
    'SlipResolutionError',
    'ScenarioParseError',
    'PlanFileError',
    'PlanarPose',
    'Twist',
    'Wrench',
    'GravityLoad',
    'compose',
    'inverse',
    'integrate_pose',
    'pose_error',
    'gravity_decompose',
    'LimitSurfaceParams',
    'EllipsoidMatrix',
    'ConstraintKind',
    'ConstraintMargin',
    'MiddleFactor',
    'ls_matrix',
    'twist_to_wrench',
    'slip_free_wrench_margin',
    'slip_free_twist_margin',
    'leading_coeff_margin',
    'soc_equal_radius_margin',
    'nonconvex_fallback_margin',
    'decomposed_margins',
    'GraspConfig',
    'PalmSide',
    'Phase',
    'ContactMode',
    'SimState',
    'RolloutResult',
    'check_mode',
    'resolve_slip_twist',
    'step',
    'rollout',
    'SlipPolicy',
    'SolverConfig',
    'Scenario',
    'Plan',
    'PlanMetrics',
    'plan',
    'baseline_plan',
    'certify_plan',
    'evaluate_plan',
    'ScenarioFile',
    'SuiteFile',
    'load_scenario',
    'load_suite',
    'write_plan_csv',
    'read_plan_csv',
    'ResultsTable',
    'run_sweep',
]
