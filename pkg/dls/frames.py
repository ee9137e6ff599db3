"""
Planar pose algebra, contact-frame quantities and gravity decomposition.

Contact frame convention: z is the contact normal pointing from the static
palm into the object, x and y span the palm plane. Twists are body-fixed and
carry per-step units (displacement per planner step).
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import InvalidParameterError


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]"""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def _require_finite(name: str, *values: float) -> None:
    if not all(math.isfinite(v) for v in values):
        raise InvalidParameterError(f"{name} components must be finite, got {values}")


@dataclass(frozen=True)
class PlanarPose:
    """Object pose relative to a palm: x, y in meters, theta in radians"""
    x: float
    y: float
    theta: float

    def __post_init__(self):
        _require_finite("PlanarPose", self.x, self.y, self.theta)
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def identity(cls) -> "PlanarPose":
        return cls(0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def radius(self) -> float:
        """Distance of the object from the palm center (the Q = Diag{1,1,0} norm)"""
        return math.hypot(self.x, self.y)


@dataclass(frozen=True)
class Twist:
    """Planar twist (v_x, v_y, omega_z) in a contact frame, per planner step"""
    v_x: float
    v_y: float
    omega_z: float

    def __post_init__(self):
        _require_finite("Twist", self.v_x, self.v_y, self.omega_z)

    @classmethod
    def zero(cls) -> "Twist":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values) -> "Twist":
        return cls(float(values[0]), float(values[1]), float(values[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.v_x, self.v_y, self.omega_z])

    def is_zero(self) -> bool:
        return self.v_x == 0.0 and self.v_y == 0.0 and self.omega_z == 0.0

    def __neg__(self) -> "Twist":
        return Twist(-self.v_x, -self.v_y, -self.omega_z)

    def __add__(self, other: "Twist") -> "Twist":
        return Twist(self.v_x + other.v_x, self.v_y + other.v_y, self.omega_z + other.omega_z)

    def __sub__(self, other: "Twist") -> "Twist":
        return Twist(self.v_x - other.v_x, self.v_y - other.v_y, self.omega_z - other.omega_z)

    def __mul__(self, factor: float) -> "Twist":
        return Twist(self.v_x * factor, self.v_y * factor, self.omega_z * factor)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Wrench:
    """Planar friction load (f_x, f_y, m_z) in a contact frame"""
    f_x: float
    f_y: float
    m_z: float

    def __post_init__(self):
        _require_finite("Wrench", self.f_x, self.f_y, self.m_z)

    @classmethod
    def zero(cls) -> "Wrench":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values) -> "Wrench":
        return cls(float(values[0]), float(values[1]), float(values[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.f_x, self.f_y, self.m_z])

    def __neg__(self) -> "Wrench":
        return Wrench(-self.f_x, -self.f_y, -self.m_z)

    def __add__(self, other: "Wrench") -> "Wrench":
        return Wrench(self.f_x + other.f_x, self.f_y + other.f_y, self.m_z + other.m_z)

    def __sub__(self, other: "Wrench") -> "Wrench":
        return Wrench(self.f_x - other.f_x, self.f_y - other.f_y, self.m_z - other.m_z)

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


@dataclass(frozen=True)
class GravityLoad:
    """Contact-frame gravity: tangential wrench g_f (m_z = 0) and normal component g_n"""
    g_f: Wrench
    g_n: float

    def __post_init__(self):
        if self.g_f.m_z != 0.0:
            raise InvalidParameterError(f"tangential gravity carries no moment, got m_z={self.g_f.m_z}")
        _require_finite("GravityLoad", self.g_n)

    @classmethod
    def none(cls) -> "GravityLoad":
        return cls(Wrench.zero(), 0.0)

    def is_tangentially_free(self) -> bool:
        return self.g_f.f_x == 0.0 and self.g_f.f_y == 0.0


def compose(a: PlanarPose, b: PlanarPose) -> PlanarPose:
    """SE(2) composition a ∘ b"""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return PlanarPose(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def inverse(p: PlanarPose) -> PlanarPose:
    """SE(2) inverse, so that compose(p, inverse(p)) is the identity"""
    c, s = math.cos(p.theta), math.sin(p.theta)
    return PlanarPose(-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta)


def integrate_pose(x: PlanarPose, v: Twist) -> PlanarPose:
    """First-order pose update x + R_z(theta) v, theta + omega (rewrapped)"""
    c, s = math.cos(x.theta), math.sin(x.theta)
    return PlanarPose(
        x.x + c * v.v_x - s * v.v_y,
        x.y + s * v.v_x + c * v.v_y,
        x.theta + v.omega_z,
    )


def pose_error(actual: PlanarPose, goal: PlanarPose) -> Tuple[float, float]:
    """Translation error (m) and absolute wrapped rotation error (rad)"""
    return (
        math.hypot(actual.x - goal.x, actual.y - goal.y),
        abs(wrap_angle(actual.theta - goal.theta)),
    )


def gravity_decompose(mass: float, g: float, incline_phi: float, downhill_dir_alpha: float) -> GravityLoad:
    """
    Split the object weight into the tangential wrench g_f and the normal scalar g_n.

    Args:
        mass: object mass in kg
        g: gravitational acceleration in m/s^2
        incline_phi: palm-plane incline from horizontal, radians in [0, pi/2)
        downhill_dir_alpha: in-plane downhill direction in the contact frame, radians

    Returns:
        GravityLoad with |g_f| = m g sin(phi) along alpha and g_n = m g cos(phi)
    """
    if not mass > 0.0:
        raise InvalidParameterError(f"mass must be positive, got {mass}")
    if not g > 0.0:
        raise InvalidParameterError(f"gravity must be positive, got {g}")
    if not 0.0 <= incline_phi < math.pi / 2.0:
        raise InvalidParameterError(f"incline must lie in [0, pi/2), got {incline_phi}")

    weight = mass * g
    tangential = weight * math.sin(incline_phi)
    return GravityLoad(
        g_f=Wrench(tangential * math.cos(downhill_dir_alpha), tangential * math.sin(downhill_dir_alpha), 0.0),
        g_n=weight * math.cos(incline_phi),
    )
