import logging
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import make_grasp, pose
from dls.contact_sim import (
    DEGENERATE_BAND,
    _DualSlide,
    ContactMode,
    PalmSide,
    Phase,
    SimState,
    advance,
    check_mode,
    dissipation_objective,
    normal_forces,
    resolve_slip_twist,
    rollout,
    step,
)
from dls.errors import InvalidParameterError
from dls.frames import Twist, Wrench
from dls.limit_surface import quasi_static_residual, slip_free_wrench_margin, twist_to_wrench
from dls.planner import Plan, SolverConfig, baseline_plan

UPHILL = Twist(0.0, 0.001, 0.0)
ACROSS = Twist(0.001, 0.0, 0.0)


@pytest.fixture
def dual_slide_grasp():
    """Moving palm on top with a wide patch, static patch small: neither contact can hold alone"""
    return make_grasp(0.0, radius_static=0.01, radius_moving=0.06, moving_palm_below=False)


DUAL_SLIDE_TWIST = Twist(0.001, 0.0, 0.1)


def random_dual_slide_cases(count, seed):
    """Small static patch under a wide moving patch, twists with a large rotational part"""
    rng = np.random.default_rng(seed)
    for _ in range(count):
        grasp = make_grasp(
            rng.uniform(0.0, 40.0),
            radius_static=rng.uniform(0.005, 0.015),
            radius_moving=rng.uniform(0.05, 0.06),
            moving_palm_below=False,
            downhill_alpha=rng.uniform(-math.pi, math.pi),
        )
        heading, speed = rng.uniform(-math.pi, math.pi), rng.uniform(5e-4, 1e-3)
        spin = rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.15)
        yield grasp, Twist(speed * math.cos(heading), speed * math.sin(heading), spin)


def _plan(twists, targets):
    phases = [Phase.for_step(t) for t in range(len(twists))]
    return Plan(
        twists=list(twists),
        phases=phases,
        predicted_states=[],
        objective_value=0.0,
        converged=True,
        segment_ends=[len(twists)],
        targets=list(targets),
    )


class TestGraspConfig:
    def test_normal_forces_moving_below(self, grasp45):
        n_static, n_moving = normal_forces(grasp45)
        assert n_static == pytest.approx(20.0)
        assert n_moving == pytest.approx(20.0 + 0.5 * 9.81 * math.cos(math.radians(45.0)))
        assert grasp45.c_ratio() == pytest.approx((n_static / n_moving) ** 2)

    def test_normal_forces_moving_above(self):
        n_static, n_moving = normal_forces(make_grasp(45.0, moving_palm_below=False))
        assert n_moving == pytest.approx(20.0)
        assert n_static > n_moving

    def test_equal_contacts(self, grasp45):
        assert grasp45.equal_contacts()
        assert not make_grasp(30.0, radius_moving=0.05).equal_contacts()

    @pytest.mark.parametrize("kwargs", [dict(mass=0.0), dict(squeeze_force=-1.0), dict(incline_phi=math.pi / 2)])
    def test_validation(self, kwargs):
        with pytest.raises(InvalidParameterError):
            make_grasp(**kwargs)

    def test_gravity_rotates_with_object(self, grasp45):
        upright = grasp45.gravity_load(0.0).g_f
        turned = grasp45.gravity_load(math.pi / 2).g_f
        assert upright.f_y == pytest.approx(turned.f_x)
        assert upright.norm() == pytest.approx(turned.norm())


class TestSchedule:
    def test_alternation(self):
        assert [Phase.for_step(t) for t in range(4)] == [
            Phase.LEFT_MOVES, Phase.RIGHT_MOVES, Phase.LEFT_MOVES, Phase.RIGHT_MOVES
        ]
        assert Phase.LEFT_MOVES.static_palm is PalmSide.RIGHT
        assert PalmSide.LEFT.other is PalmSide.RIGHT


class TestCheckMode:
    def test_zero_twist_all_stick(self, grasp45):
        verdict = check_mode(Twist.zero(), grasp45)
        assert verdict.mode is ContactMode.ALL_STICK
        assert verdict.w_static == Wrench.zero()
        assert verdict.w_moving == -grasp45.gravity_load().g_f

    def test_uphill_slips_at_moving(self, grasp45):
        assert check_mode(UPHILL, grasp45).mode is ContactMode.SLIP_AT_MOVING

    def test_across_slope_sticks(self, grasp45):
        assert check_mode(ACROSS, grasp45).mode is ContactMode.STICK_MOVING_SLIDE_STATIC

    def test_horizontal_always_sticks(self, horizontal_grasp):
        rng = np.random.default_rng(5)
        for v in rng.normal(size=(50, 3)) * np.array([1e-3, 1e-3, 1e-2]):
            assert check_mode(Twist.from_array(v), horizontal_grasp).mode is ContactMode.STICK_MOVING_SLIDE_STATIC

    def test_margin_is_wrench_space_margin(self, grasp45):
        a, b = grasp45.matrices()
        gl = grasp45.gravity_load()
        for v in (UPHILL, ACROSS, Twist(0.0005, -0.0002, 0.02)):
            verdict = check_mode(v, grasp45)
            expected = slip_free_wrench_margin(twist_to_wrench(a, v), a, b, gl).value
            assert verdict.margin == pytest.approx(expected, abs=1e-12)

    def test_orientation_changes_verdict(self, grasp45):
        # the object frame is turned by 180 degrees, so "uphill" in that frame points downhill
        assert check_mode(UPHILL, grasp45, theta=math.pi).mode is ContactMode.STICK_MOVING_SLIDE_STATIC

    @pytest.mark.parametrize("margin,mode", [
        (-0.5 * DEGENERATE_BAND, ContactMode.STICK_MOVING_SLIDE_STATIC),
        (-1e-300, ContactMode.STICK_MOVING_SLIDE_STATIC),
        (0.0, ContactMode.DEGENERATE),
        (0.5 * DEGENERATE_BAND, ContactMode.DEGENERATE),
        (2.0 * DEGENERATE_BAND, ContactMode.SLIP_AT_MOVING),
    ])
    def test_sticks_exactly_when_margin_is_negative(self, grasp45, monkeypatch, margin, mode):
        monkeypatch.setattr("dls.contact_sim.sticking_margin", lambda b, w: margin)
        verdict = check_mode(ACROSS, grasp45)
        assert verdict.mode is mode
        assert verdict.margin == margin

    def test_near_boundary_step_counts_as_slip(self, grasp45, monkeypatch):
        monkeypatch.setattr("dls.contact_sim.sticking_margin", lambda b, w: 0.0)
        s0 = SimState(pose(0.0, 0.0), pose(0.0, 0.0))
        result = rollout(_plan([ACROSS], [(pose(0, 0), pose(0.001, 0))]), s0, grasp45)
        assert result.modes == [ContactMode.DEGENERATE]
        assert result.slip_events == 1
        # integrated like sticking
        assert result.states[-1].pose_obj_in_right.x == pytest.approx(0.001)


class TestResolveSlipTwist:
    def test_sticking_command_passes_through(self, grasp45):
        assert resolve_slip_twist(ACROSS, grasp45) == ACROSS
        assert resolve_slip_twist(Twist.zero(), grasp45) == Twist.zero()

    def test_uphill_sticks_at_static(self, grasp45):
        assert resolve_slip_twist(UPHILL, grasp45) == Twist.zero()

    def test_dual_slide_balances(self, dual_slide_grasp):
        assert check_mode(DUAL_SLIDE_TWIST, dual_slide_grasp).mode is ContactMode.SLIP_AT_MOVING
        v_obj = resolve_slip_twist(DUAL_SLIDE_TWIST, dual_slide_grasp)
        assert not v_obj.is_zero()
        assert v_obj != DUAL_SLIDE_TWIST

        a, b = dual_slide_grasp.matrices()
        gl = dual_slide_grasp.gravity_load()
        residual = quasi_static_residual(twist_to_wrench(a, v_obj), twist_to_wrench(b, v_obj - DUAL_SLIDE_TWIST), gl)
        assert residual.norm() < 1e-8

    def test_dual_slide_minimises_dissipation(self, dual_slide_grasp):
        a, b = dual_slide_grasp.matrices()
        gl = dual_slide_grasp.gravity_load()
        v_obj = resolve_slip_twist(DUAL_SLIDE_TWIST, dual_slide_grasp)
        scale = np.array([1e-3, 1e-3, 1e-1])

        def objective(y):
            return dissipation_objective(Twist.from_array(y * scale), DUAL_SLIDE_TWIST, a, b, gl)

        best = minimize(objective, np.array([0.3, 0.1, 0.4]), method="Nelder-Mead",
                        options=dict(xatol=1e-10, fatol=1e-14, maxiter=20000))
        assert objective(v_obj.as_array() / scale) <= best.fun + 1e-9
        assert np.allclose(best.x * scale, v_obj.as_array(), atol=1e-3 * scale.max())

    def test_dual_slide_matches_grid_search(self):
        gaps = []
        for grasp, v in random_dual_slide_cases(60, seed=11):
            if check_mode(v, grasp).mode is not ContactMode.SLIP_AT_MOVING:
                continue
            v_obj = resolve_slip_twist(v, grasp)
            if v_obj.is_zero():
                continue

            a, b = grasp.matrices()
            gl = grasp.gravity_load()
            residual = quasi_static_residual(twist_to_wrench(a, v_obj), twist_to_wrench(b, v_obj - v), gl)
            assert residual.norm() < 1e-8

            problem = _DualSlide(v.as_array(), a, b, gl, grasp.pressure_constant * grasp.radius_static_palm)
            y_palm = v.as_array() / problem.scale
            y_grid = problem.grid_minimum(3.0 * float(np.linalg.norm(y_palm)))
            grid = Twist.from_array(y_grid * problem.scale)
            assert dissipation_objective(v_obj, v, a, b, gl) <= dissipation_objective(grid, v, a, b, gl) + 1e-12
            gaps.append(np.linalg.norm(v_obj.as_array() / problem.scale - y_grid) / np.linalg.norm(y_palm))

        assert len(gaps) >= 20
        assert np.median(gaps) <= 0.05

    def test_grid_fallback_when_root_finder_fails(self, dual_slide_grasp, monkeypatch):
        expected = resolve_slip_twist(DUAL_SLIDE_TWIST, dual_slide_grasp)

        def broken_root(*args, **kwargs):
            raise ValueError("no root")

        monkeypatch.setattr("dls.contact_sim.root", broken_root)
        v_obj = resolve_slip_twist(DUAL_SLIDE_TWIST, dual_slide_grasp)
        scale = np.array([1e-3, 1e-3, 1e-1])
        assert np.allclose(v_obj.as_array() / scale, expected.as_array() / scale, atol=1e-5)

    def test_potential_gradient_is_negative_residual(self, dual_slide_grasp):
        a, b = dual_slide_grasp.matrices()
        gl = dual_slide_grasp.gravity_load()
        v = np.array([4e-4, 2e-4, 3e-2])
        h = 1e-9
        grad = []
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            plus = dissipation_objective(Twist.from_array(v + e), DUAL_SLIDE_TWIST, a, b, gl)
            minus = dissipation_objective(Twist.from_array(v - e), DUAL_SLIDE_TWIST, a, b, gl)
            grad.append((plus - minus) / (2 * h))
        v_t = Twist.from_array(v)
        residual = quasi_static_residual(twist_to_wrench(a, v_t), twist_to_wrench(b, v_t - DUAL_SLIDE_TWIST), gl)
        assert np.allclose(grad, -residual.as_array(), rtol=1e-4, atol=1e-5)


class TestAdvance:
    def test_stick_moves_static_relative_pose(self, grasp45):
        s = SimState(pose(0.0, 0.0), pose(0.01, 0.0), PalmSide.LEFT)
        record = advance(s, ACROSS, grasp45)
        assert record.mode is ContactMode.STICK_MOVING_SLIDE_STATIC
        # left palm moves, so the pose relative to the right (static) palm changes
        assert record.state.pose_obj_in_right.x == pytest.approx(0.011)
        assert record.state.pose_obj_in_left == s.pose_obj_in_left
        assert record.state.active_moving_palm is PalmSide.RIGHT
        assert record.residual_norm < 1e-12
        assert record.dissipation > 0.0

    def test_slip_leaves_object_on_static_palm(self, grasp45):
        s = SimState(pose(0.0, 0.0), pose(0.0, 0.0), PalmSide.LEFT)
        new_state, mode = step(s, UPHILL, grasp45)
        assert mode is ContactMode.SLIP_AT_MOVING
        assert new_state.pose_obj_in_right == s.pose_obj_in_right
        assert new_state.pose_obj_in_left.y == pytest.approx(-0.001)

    def test_dual_slide_residual(self, dual_slide_grasp):
        s = SimState(pose(0.0, 0.0), pose(0.0, 0.0), PalmSide.LEFT)
        record = advance(s, DUAL_SLIDE_TWIST, dual_slide_grasp)
        assert record.mode is ContactMode.SLIP_AT_MOVING
        assert record.residual_norm < 1e-8
        assert record.dissipation > 0.0

    @pytest.mark.parametrize("theta_deg", [0.0, 35.0])
    def test_slip_step_shifts_differ_by_palm_motion(self, dual_slide_grasp, theta_deg):
        s = SimState(pose(0.0, 0.0, theta_deg), pose(0.0, 0.0, theta_deg), PalmSide.LEFT)
        record = advance(s, DUAL_SLIDE_TWIST, dual_slide_grasp)
        assert record.mode is ContactMode.SLIP_AT_MOVING
        static_shift = record.state.pose_obj_in_right.as_array() - s.pose_obj_in_right.as_array()
        moving_shift = record.state.pose_obj_in_left.as_array() - s.pose_obj_in_left.as_array()
        assert np.linalg.norm(static_shift) > 0.0
        assert np.linalg.norm(moving_shift) > 0.0

        c, sn = math.cos(math.radians(theta_deg)), math.sin(math.radians(theta_deg))
        v = DUAL_SLIDE_TWIST
        palm_shift = np.array([c * v.v_x - sn * v.v_y, sn * v.v_x + c * v.v_y, v.omega_z])
        assert np.allclose(static_shift - moving_shift, palm_shift, atol=1e-9)

    def test_workspace_exit_is_logged(self, grasp45, caplog):
        s = SimState(pose(0.0, 0.0595), pose(0.0, 0.0595), PalmSide.RIGHT)
        with caplog.at_level(logging.WARNING, logger="dls"):
            record = advance(s, Twist(0.0, 0.001, 0.0), make_grasp(0.0))
        assert not record.in_workspace
        assert "workspace" in caplog.text


class TestRollout:
    def test_empty_plan_echoes_initial_errors(self, grasp45):
        s0 = SimState(pose(0.0, 0.0), pose(0.0, 0.0))
        goal = (pose(0.0, 0.003), pose(0.004, 0.0))
        result = rollout(_plan([], [goal]), s0, grasp45)
        assert result.slip_events == 0
        assert result.final_error_left == pytest.approx((0.003, 0.0))
        assert result.final_error_right == pytest.approx((0.004, 0.0))
        assert result.states == [s0]

    def test_sticking_plan_reaches_goal(self, horizontal_grasp):
        s0 = SimState(pose(0.0, 0.0), pose(0.0, 0.0))
        twists = [Twist(0.001, 0.0, 0.0), Twist(0.0, 0.002, 0.0)] * 3
        goal = (pose(0.0, 0.006), pose(0.003, 0.0))
        result = rollout(_plan(twists, [goal]), s0, horizontal_grasp)
        assert result.slip_events == 0
        assert result.final_error_left[0] == pytest.approx(0.0, abs=1e-12)
        assert result.final_error_right[0] == pytest.approx(0.0, abs=1e-12)
        assert len(result.modes) == len(twists)
        assert max(result.residual_norms) < 1e-8
        assert result.workspace_exits == 0
        assert result.waypoint_errors_left == [result.final_error_left]

    def test_slip_events_counted(self, grasp45):
        s0 = SimState(pose(0.0, 0.0), pose(0.0, 0.0))
        result = rollout(_plan([UPHILL, Twist.zero()] * 2, [(pose(0, 0), pose(0, 0))]), s0, grasp45)
        assert result.slip_events == 2
        assert result.modes[1] is ContactMode.ALL_STICK

    def test_uphill_baseline_rolls_out(self, translation_scenario45):
        s = translation_scenario45
        result = rollout(baseline_plan(s, SolverConfig()), s.initial_state(), s.grasp)
        assert result.slip_events >= 1
        assert ContactMode.SLIP_AT_MOVING in result.modes
        assert max(result.residual_norms) < 1e-8
        assert max(result.final_error_left[0], result.final_error_right[0]) > 1e-3
