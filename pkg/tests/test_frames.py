import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dls.errors import InvalidParameterError
from dls.frames import (
    GravityLoad,
    PlanarPose,
    Twist,
    Wrench,
    compose,
    gravity_decompose,
    integrate_pose,
    inverse,
    pose_error,
    wrap_angle,
)

coords = st.floats(-1.0, 1.0, allow_nan=False)
angles = st.floats(-10.0, 10.0, allow_nan=False)
poses = st.builds(PlanarPose, coords, coords, angles)


def close(a: PlanarPose, b: PlanarPose, tol: float = 1e-9) -> bool:
    trans, rot = pose_error(a, b)
    return trans <= tol and rot <= tol


class TestWrapAngle:
    def test_range(self):
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)

    @given(angles)
    def test_idempotent(self, a):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert wrap_angle(w) == pytest.approx(w)


class TestPoseGroup:
    @given(poses)
    def test_identity(self, p):
        assert close(compose(p, PlanarPose.identity()), p)
        assert close(compose(PlanarPose.identity(), p), p)

    @given(poses)
    def test_inverse(self, p):
        assert close(compose(p, inverse(p)), PlanarPose.identity())
        assert close(compose(inverse(p), p), PlanarPose.identity())

    @given(poses, poses, poses)
    def test_associative(self, a, b, c):
        assert close(compose(compose(a, b), c), compose(a, compose(b, c)))

    def test_theta_is_wrapped(self):
        assert PlanarPose(0.0, 0.0, 2 * math.pi + 0.1).theta == pytest.approx(0.1)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidParameterError):
            PlanarPose(float("nan"), 0.0, 0.0)


class TestIntegratePose:
    def test_body_fixed_update(self):
        p = integrate_pose(PlanarPose(0.0, 0.0, math.pi / 2), Twist(0.01, 0.0, 0.0))
        assert p.x == pytest.approx(0.0, abs=1e-15)
        assert p.y == pytest.approx(0.01)
        assert p.theta == pytest.approx(math.pi / 2)

    def test_rotation_wraps(self):
        p = integrate_pose(PlanarPose(0.0, 0.0, 3.0), Twist(0.0, 0.0, 0.5))
        assert p.theta == pytest.approx(3.5 - 2 * math.pi)

    @given(poses)
    def test_zero_twist_is_identity(self, p):
        assert integrate_pose(p, Twist.zero()) == p


class TestTwistWrench:
    def test_arithmetic(self):
        a, b = Twist(1.0, 2.0, 3.0), Twist(0.5, 0.5, 0.5)
        assert a + b == Twist(1.5, 2.5, 3.5)
        assert a - b == Twist(0.5, 1.5, 2.5)
        assert 2.0 * b == Twist(1.0, 1.0, 1.0)
        assert Twist.from_array(a.as_array()) == a

    def test_negation(self):
        a = Twist(1.0, -2.0, 0.5)
        assert -a == Twist(-1.0, 2.0, -0.5)
        assert a + (-a) == Twist.zero()
        assert -a == a * -1.0

    def test_wrench_norm(self):
        assert Wrench(3.0, 4.0, 0.0).norm() == pytest.approx(5.0)
        assert -Wrench(1.0, 0.0, 0.0) == Wrench(-1.0, 0.0, 0.0)

    def test_gravity_load_has_no_moment(self):
        with pytest.raises(InvalidParameterError):
            GravityLoad(Wrench(0.0, 0.0, 1.0), 0.0)


class TestGravityDecompose:
    def test_horizontal(self):
        gl = gravity_decompose(1.0, 9.81, 0.0, 0.3)
        assert gl.is_tangentially_free()
        assert gl.g_n == pytest.approx(9.81)

    def test_incline(self):
        gl = gravity_decompose(0.5, 9.81, math.radians(45.0), math.radians(-90.0))
        assert gl.g_f.f_x == pytest.approx(0.0, abs=1e-12)
        assert gl.g_f.f_y == pytest.approx(-0.5 * 9.81 * math.sin(math.radians(45.0)))
        assert gl.g_f.m_z == 0.0
        assert gl.g_n == pytest.approx(0.5 * 9.81 * math.cos(math.radians(45.0)))

    @given(st.floats(0.0, 1.5), st.floats(-4.0, 4.0))
    def test_magnitudes(self, phi, alpha):
        gl = gravity_decompose(2.0, 9.81, phi, alpha)
        assert gl.g_f.norm() ** 2 + gl.g_n ** 2 == pytest.approx((2.0 * 9.81) ** 2)

    @pytest.mark.parametrize("mass,g,phi", [(0.0, 9.81, 0.1), (1.0, -1.0, 0.1), (1.0, 9.81, math.pi / 2)])
    def test_rejects_bad_inputs(self, mass, g, phi):
        with pytest.raises(InvalidParameterError):
            gravity_decompose(mass, g, phi, 0.0)
