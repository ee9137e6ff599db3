import math

import pytest

from conftest import make_grasp, pose
from dls.contact_sim import Phase, rollout
from dls.errors import InfeasibleGoalError, InvalidParameterError
from dls.frames import Twist
from dls.limit_surface import ConstraintKind
from dls.planner import (
    MeritRecord,
    Scenario,
    SlipPolicy,
    SolverConfig,
    baseline_plan,
    certify_plan,
    evaluate_plan,
    margin_kinds,
    plan,
    step_margins,
)

ROTATION_WAYPOINTS = (
    (pose(0, 0, 10.0), pose(0, 0, -10.0)),
    (pose(0, 0, 20.0), pose(0, 0, -20.0)),
    (pose(0, 0, 30.0), pose(0, 0, -30.0)),
)


def scenario_for(grasp, waypoints):
    return Scenario(pose(0, 0), pose(0, 0), waypoints[-1][0], waypoints[-1][1], grasp, tuple(waypoints))


def assert_certified(p, s, cfg):
    assert p.converged
    assert certify_plan(p, s, cfg) <= -cfg.slip_margin_eps + 1e-9
    for twist in p.twists:
        if twist.is_zero():
            continue
        assert math.hypot(twist.v_x, twist.v_y) <= cfg.max_step_trans * (1 + 1e-9)
        assert abs(twist.omega_z) <= cfg.max_step_rot * (1 + 1e-9)
    result = rollout(p, s.initial_state(), s.grasp)
    assert result.slip_events == 0
    for trans, rot in result.waypoint_errors_left + result.waypoint_errors_right:
        assert trans <= 1e-6
        assert rot <= 1e-6
    return result


@pytest.fixture(scope="module")
def translation45():
    waypoints = (
        (pose(0.0, 0.01), pose(0.005, 0.01)),
        (pose(0.0, 0.02), pose(0.01, 0.02)),
        (pose(0.0, 0.03), pose(0.015, 0.03)),
    )
    s = scenario_for(make_grasp(45.0), waypoints)
    return s, plan(s, SolverConfig())


class TestSolverConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert cfg.horizon_n == 20
        assert cfg.policy is SlipPolicy.EXACT
        assert cfg.max_step_norm == (0.005, 0.05)

    @pytest.mark.parametrize(
        "kwargs", [dict(horizon_n=7), dict(horizon_n=0), dict(slip_margin_eps=0.0), dict(policy="loose"),
                   dict(penalty_growth=0.5)]
    )
    def test_validation(self, kwargs):
        with pytest.raises(InvalidParameterError):
            SolverConfig(**kwargs)

    def test_from_defaults_layers(self, monkeypatch):
        monkeypatch.setenv("DLS_HORIZON_N", "12")
        monkeypatch.setenv("DLS_POLICY", "convex")
        cfg = SolverConfig.from_defaults(seed=7, slip_margin_eps=None)
        assert cfg.horizon_n == 12
        assert cfg.policy is SlipPolicy.CONVEX
        assert cfg.seed == 7
        assert cfg.slip_margin_eps == 1e-4

    def test_from_defaults_bad_env_value(self, monkeypatch):
        monkeypatch.setenv("DLS_HORIZON_N", "many")
        assert SolverConfig.from_defaults().horizon_n == 20

    def test_from_defaults_rejects_unknown(self):
        with pytest.raises(InvalidParameterError):
            SolverConfig.from_defaults(horizon=10)


class TestScenario:
    def test_last_waypoint_is_goal(self):
        with pytest.raises(InvalidParameterError):
            Scenario(pose(0, 0), pose(0, 0), pose(0, 0.01), pose(0, 0.01), make_grasp(20.0),
                     ((pose(0, 0.02), pose(0, 0.02)),))

    def test_targets_default_to_goal(self):
        s = Scenario(pose(0, 0), pose(0, 0), pose(0, 0.01), pose(0.01, 0), make_grasp(20.0))
        assert s.targets() == [(pose(0, 0.01), pose(0.01, 0))]

    def test_goal_outside_workspace(self):
        s = Scenario(pose(0, 0), pose(0, 0), pose(0, 0.07), pose(0, 0), make_grasp(20.0))
        with pytest.raises(InfeasibleGoalError):
            plan(s, SolverConfig())


class TestMarginSelection:
    def test_exact(self):
        assert margin_kinds(make_grasp(45.0), SlipPolicy.EXACT) == [ConstraintKind.SOC_EQUAL_RADIUS]
        assert margin_kinds(make_grasp(30.0, radius_moving=0.05), SlipPolicy.EXACT) == [ConstraintKind.TWIST_FULL]

    def test_convex(self):
        assert margin_kinds(make_grasp(45.0), SlipPolicy.CONVEX) == [ConstraintKind.NONCONVEX_FALLBACK]
        assert margin_kinds(make_grasp(0.0), SlipPolicy.CONVEX) == [ConstraintKind.SOC_EQUAL_RADIUS]
        assert margin_kinds(make_grasp(30.0, radius_moving=0.05), SlipPolicy.CONVEX) == [
            ConstraintKind.DECOMPOSED_QUADRATIC, ConstraintKind.DECOMPOSED_SOC
        ]
        assert margin_kinds(make_grasp(0.0, radius_moving=0.05), SlipPolicy.CONVEX) == [
            ConstraintKind.DECOMPOSED_QUADRATIC
        ]

    def test_step_margins_follow_orientation(self):
        grasp = make_grasp(45.0)
        uphill = Twist(0.0, 0.001, 0.0)
        assert step_margins(uphill, grasp, 0.0, SlipPolicy.EXACT)[0].value > 0.0
        assert step_margins(uphill, grasp, math.pi, SlipPolicy.EXACT)[0].value < 0.0


class TestPlan:
    def test_trivial_scenario(self):
        s = Scenario(pose(0, 0), pose(0.01, 0.0), pose(0, 0), pose(0.01, 0.0), make_grasp(30.0))
        cfg = SolverConfig()
        p = plan(s, cfg)
        assert p.converged
        assert len(p.twists) == cfg.horizon_n
        assert all(t.is_zero() for t in p.twists)
        assert p.margins == [None] * cfg.horizon_n
        assert p.objective_value == pytest.approx(0.0, abs=1e-24)
        assert certify_plan(p, s, cfg) == -math.inf

    def test_schedule(self, translation45):
        _, p = translation45
        assert p.phases == [Phase.for_step(t) for t in range(len(p.twists))]
        assert p.segment_ends == [20, 40, 60]
        assert len(p.predicted_states) == len(p.twists) + 1

    def test_horizontal(self):
        s = Scenario(pose(0, 0), pose(0, 0), pose(0, 0.02), pose(0.01, 0.02), make_grasp(0.0))
        cfg = SolverConfig()
        assert_certified(plan(s, cfg), s, cfg)

    def test_uphill_translation_at_45_degrees(self, translation45):
        s, p = translation45
        cfg = SolverConfig()
        assert_certified(p, s, cfg)
        assert all(m is None or m <= -cfg.slip_margin_eps for m in p.margins)
        assert all(isinstance(r, MeritRecord) for r in p.merit_trace)
        assert p.iterations == len(p.merit_trace) > 0

    def test_merit_never_increases_within_an_outer_iteration(self, translation45):
        _, p = translation45
        for record in p.merit_trace:
            assert record.merit_after <= record.merit_before
            assert record.penalty > 0.0
        # penalty only grows while one start is being solved
        runs = {}
        for record in p.merit_trace:
            runs.setdefault((record.segment, record.side, record.active_steps, record.start), []).append(record)
        for records in runs.values():
            assert [r.iteration for r in records] == list(range(len(records)))
            assert all(later.penalty >= earlier.penalty for earlier, later in zip(records, records[1:]))

    def test_baseline_slips_uphill(self, translation45):
        s, _ = translation45
        base = baseline_plan(s, SolverConfig())
        assert base.label == "baseline"
        assert rollout(base, s.initial_state(), s.grasp).slip_events >= 1

    def test_ours_beats_baseline(self, translation45):
        s, p = translation45
        ours = evaluate_plan(p, s)
        base = evaluate_plan(baseline_plan(s, SolverConfig()), s)
        assert ours.slip_events == 0
        assert ours.rmse_trans_left < base.rmse_trans_left
        assert len(ours.waypoint_errors.left) == 3

    def test_rotation_never_slips(self):
        s = scenario_for(make_grasp(45.0), ROTATION_WAYPOINTS)
        cfg = SolverConfig()
        assert_certified(plan(s, cfg), s, cfg)
        assert rollout(baseline_plan(s, cfg), s.initial_state(), s.grasp).slip_events == 0

    def test_uneven_surfaces_convex_policy(self):
        grasp = make_grasp(30.0, radius_moving=0.05)
        s = Scenario(pose(0, 0), pose(0, 0), pose(0, -0.02, 10.0), pose(0.01, -0.02, -10.0), grasp)
        cfg = SolverConfig(policy="convex")
        p = plan(s, cfg)
        assert_certified(p, s, cfg)
        kinds = {k for k in p.margin_kinds if k is not None}
        assert kinds <= {ConstraintKind.DECOMPOSED_QUADRATIC, ConstraintKind.DECOMPOSED_SOC}

    def test_uneven_surfaces_exact_policy(self):
        grasp = make_grasp(30.0, radius_moving=0.05)
        s = Scenario(pose(0, 0), pose(0, 0), pose(0, -0.02, 10.0), pose(0.01, -0.02, -10.0), grasp)
        cfg = SolverConfig()
        assert_certified(plan(s, cfg), s, cfg)

    def test_deterministic(self):
        s = Scenario(pose(0, 0), pose(0, 0), pose(0.005, 0.01, 10.0), pose(-0.005, 0.01, -10.0), make_grasp(45.0))
        cfg = SolverConfig(seed=3)
        first, second = plan(s, cfg), plan(s, cfg)
        assert first.twists == second.twists
        assert first.objective_value == second.objective_value

    def test_unreachable_goal_reports_non_convergence(self):
        s = Scenario(pose(0, 0), pose(0, 0), pose(0, 0.04), pose(0, 0), make_grasp(20.0))
        cfg = SolverConfig(horizon_n=4)
        p = plan(s, cfg)
        assert not p.converged
        assert len(p.twists) == 4

    def test_step_bounds_in_body_frame(self):
        s = Scenario(pose(0, 0, 90.0), pose(0, 0), pose(0.02, 0.0, 90.0), pose(0, 0), make_grasp(0.0))
        cfg = SolverConfig()
        p = plan(s, cfg)
        assert_certified(p, s, cfg)
        moving = [t for t in p.twists if not t.is_zero()]
        # the object is turned by 90 degrees, so +x in the palm frame is -y in the body frame
        assert sum(-t.v_y for t in moving) == pytest.approx(0.02, abs=1e-6)
        assert sum(t.v_x for t in moving) == pytest.approx(0.0, abs=1e-6)
