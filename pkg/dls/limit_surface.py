"""
Ellipsoidal limit-surface friction model and the slippage-free margins built on it.

Every strict inequality is exposed as a signed margin: a negative value means
the condition holds. Twist-space margins are homogeneous in the twist, so only
the twist direction decides feasibility.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from .errors import DegenerateGravityError, DegenerateTwistError, InvalidParameterError
from .frames import GravityLoad, Twist, Wrench

logger = logging.getLogger("dls")

DEFAULT_PRESSURE_CONSTANT = 0.6


@dataclass(frozen=True)
class LimitSurfaceParams:
    """Friction model of one patch contact"""
    mu: float
    normal_force: float
    patch_radius: float
    pressure_constant: float = DEFAULT_PRESSURE_CONSTANT

    def __post_init__(self):
        if not self.mu > 0.0:
            raise InvalidParameterError(f"friction coefficient must be positive, got {self.mu}")
        if not self.normal_force > 0.0:
            raise InvalidParameterError(f"normal force must be positive, got {self.normal_force}")
        if not self.patch_radius > 0.0:
            raise InvalidParameterError(f"patch radius must be positive, got {self.patch_radius}")
        if not 0.0 < self.pressure_constant <= 1.0:
            raise InvalidParameterError(f"pressure constant must lie in (0, 1], got {self.pressure_constant}")


@dataclass(frozen=True)
class EllipsoidMatrix:
    """Diagonal limit-surface matrix; the two force entries are equal (isotropic friction)"""
    diag: Tuple[float, float, float]

    def __post_init__(self):
        values = tuple(float(d) for d in self.diag)
        if len(values) != 3:
            raise InvalidParameterError(f"ellipsoid matrix needs 3 diagonal entries, got {len(values)}")
        if not all(d > 0.0 and math.isfinite(d) for d in values):
            raise InvalidParameterError(f"ellipsoid diagonal must be strictly positive, got {values}")
        if not math.isclose(values[0], values[1], rel_tol=1e-12):
            raise InvalidParameterError(f"anisotropic friction is not supported, got {values[0]} != {values[1]}")
        object.__setattr__(self, "diag", values)

    @classmethod
    def identity(cls) -> "EllipsoidMatrix":
        return cls((1.0, 1.0, 1.0))

    def as_array(self) -> np.ndarray:
        return np.array(self.diag)

    def inverse_diag(self) -> np.ndarray:
        return 1.0 / np.array(self.diag)

    def scaled(self, factor: float) -> "EllipsoidMatrix":
        if not factor > 0.0:
            raise InvalidParameterError(f"scale factor must be positive, got {factor}")
        return EllipsoidMatrix(tuple(factor * d for d in self.diag))

    def quad(self, x: np.ndarray) -> float:
        """xᵀ M x"""
        return float(np.dot(np.array(self.diag) * x, x))

    def inv_quad(self, x: np.ndarray) -> float:
        """xᵀ M⁻¹ x"""
        return float(np.dot(x / np.array(self.diag), x))

    def inv_sqrt_norm(self, v: Twist) -> float:
        """‖M^(-1/2) v‖₂"""
        return math.sqrt(self.inv_quad(v.as_array()))


class ConstraintKind(str, Enum):
    WRENCH_SPACE = "WrenchSpace"
    TWIST_FULL = "TwistFull"
    LEADING_COEFF = "LeadingCoeff"
    SOC_EQUAL_RADIUS = "SocEqualRadius"
    NONCONVEX_FALLBACK = "NonconvexFallback"
    DECOMPOSED_QUADRATIC = "DecomposedQuadratic"
    DECOMPOSED_SOC = "DecomposedSoc"


class MiddleFactor(str, Enum):
    """
    Middle factor of the leading-coefficient margin.

    DIRECT uses Â⁻¹B̂Â⁻¹ and is the true N_b⁴ coefficient of N_b² times the
    twist margin. INVERSE uses Â⁻¹B̂⁻¹Â⁻¹ as it is commonly printed.
    """
    DIRECT = "direct"
    INVERSE = "inverse"


@dataclass(frozen=True)
class ConstraintMargin:
    """Signed constraint value; negative means satisfied"""
    value: float
    kind: ConstraintKind

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InvalidParameterError(f"{self.kind.value} margin is not finite: {self.value}")

    def satisfied(self, eps: float = 0.0) -> bool:
        return self.value <= -eps if eps > 0.0 else self.value < 0.0


def _nonzero_twist(v: Twist, what: str) -> np.ndarray:
    if v.is_zero():
        raise DegenerateTwistError(f"{what} is undefined for the zero twist")
    return v.as_array()


def ls_matrix(p: LimitSurfaceParams) -> EllipsoidMatrix:
    """A(μ, N, r) = Diag{(μN)⁻², (μN)⁻², (μcrN)⁻²}"""
    force = p.mu * p.normal_force
    moment = force * p.pressure_constant * p.patch_radius
    return EllipsoidMatrix((force ** -2, force ** -2, moment ** -2))


def hat(m: EllipsoidMatrix, normal_force: float) -> EllipsoidMatrix:
    """Normal-force-free matrix N²M, independent of the contact load"""
    return m.scaled(normal_force ** 2)


def dissipation_potential(m: EllipsoidMatrix, v: Twist) -> float:
    """sqrt(vᵀM⁻¹v): power dissipated by the maximum-dissipation friction wrench (zero for v = 0)"""
    return m.inv_sqrt_norm(v)


def twist_to_wrench(a: EllipsoidMatrix, v: Twist) -> Wrench:
    """Maximum-dissipation friction wrench w = −A⁻¹v / sqrt(vᵀA⁻¹v)"""
    x = _nonzero_twist(v, "twist_to_wrench")
    a_inv_v = x * a.inverse_diag()
    return Wrench.from_array(-a_inv_v / math.sqrt(float(np.dot(a_inv_v, x))))


def boundary_residual(a: EllipsoidMatrix, w: Wrench) -> float:
    """wᵀAw − 1: zero on the limit surface, negative inside"""
    return a.quad(w.as_array()) - 1.0


def sticking_margin(b: EllipsoidMatrix, w: Wrench) -> float:
    """wᵀBw − 1: negative iff the contact sustains w without slipping"""
    return b.quad(w.as_array()) - 1.0


def quasi_static_residual(w_a: Wrench, w_b: Wrench, gl: GravityLoad) -> Wrench:
    return w_a + w_b + gl.g_f


def slip_free_wrench_margin(w_a: Wrench, a: EllipsoidMatrix, b: EllipsoidMatrix, gl: GravityLoad) -> ConstraintMargin:
    """w_aᵀ(B−A)w_a + 2g_fᵀBw_a + g_fᵀBg_f"""
    wa = w_a.as_array()
    g = gl.g_f.as_array()
    bd, ad = b.as_array(), a.as_array()
    value = float(np.dot(wa * (bd - ad), wa) + 2.0 * np.dot(g * bd, wa) + np.dot(g * bd, g))
    return ConstraintMargin(value, ConstraintKind.WRENCH_SPACE)


def slip_free_twist_margin(v: Twist, a: EllipsoidMatrix, b: EllipsoidMatrix, gl: GravityLoad) -> ConstraintMargin:
    """vᵀ(A⁻¹BA⁻¹ − A⁻¹)v − 2·sqrt(vᵀA⁻¹v)·vᵀA⁻¹Bg_f + (g_fᵀBg_f)·vᵀA⁻¹v"""
    x = _nonzero_twist(v, "the twist margin")
    a_inv, bd = a.inverse_diag(), b.as_array()
    g = gl.g_f.as_array()
    s_sq = float(np.dot(x * a_inv, x))
    quadratic = float(np.dot(x * a_inv * bd * a_inv, x)) - s_sq
    cross = float(np.dot(x * a_inv * bd, g))
    value = quadratic - 2.0 * math.sqrt(s_sq) * cross + float(np.dot(g * bd, g)) * s_sq
    return ConstraintMargin(value, ConstraintKind.TWIST_FULL)


def leading_coeff_margin(
    v: Twist,
    a_hat: EllipsoidMatrix,
    b_hat: EllipsoidMatrix,
    middle: MiddleFactor = MiddleFactor.DIRECT,
) -> ConstraintMargin:
    """
    Leading N_b⁴ coefficient of N_b² times the twist margin.

    Args:
        v: nonzero twist
        a_hat: N_a²A
        b_hat: N_b²B
        middle: which middle factor to use (see MiddleFactor)
    """
    x = _nonzero_twist(v, "the leading-coefficient margin")
    a_inv = a_hat.inverse_diag()
    mid = b_hat.as_array() if middle is MiddleFactor.DIRECT else b_hat.inverse_diag()
    value = float(np.dot(x * a_inv * mid * a_inv, x) - np.dot(x * a_inv, x))
    return ConstraintMargin(value, ConstraintKind.LEADING_COEFF)


def soc_constant(a: EllipsoidMatrix, c_ratio: float, gl: GravityLoad) -> float:
    """c − 1 + c·g_fᵀAg_f, the scalar multiplying the cone norm"""
    return c_ratio - 1.0 + c_ratio * a.quad(gl.g_f.as_array())


def soc_equal_radius_margin(v: Twist, a: EllipsoidMatrix, c_ratio: float, gl: GravityLoad) -> ConstraintMargin:
    """(c − 1 + c·g_fᵀAg_f)·‖A^(−1/2)v‖ − 2c·g_fᵀv, valid when B = cA"""
    x = _nonzero_twist(v, "the equal-radius cone margin")
    if not c_ratio > 0.0:
        raise InvalidParameterError(f"normal-force ratio must be positive, got {c_ratio}")
    value = soc_constant(a, c_ratio, gl) * a.inv_sqrt_norm(v) - 2.0 * c_ratio * float(np.dot(gl.g_f.as_array(), x))
    return ConstraintMargin(value, ConstraintKind.SOC_EQUAL_RADIUS)


def nonconvex_fallback_margin(v: Twist, gl: GravityLoad) -> ConstraintMargin:
    """−g_fᵀv: sufficient when the cone constant is negative"""
    return ConstraintMargin(-float(np.dot(gl.g_f.as_array(), v.as_array())), ConstraintKind.NONCONVEX_FALLBACK)


def decomposed_quadratic_margin(v: Twist, a: EllipsoidMatrix, b: EllipsoidMatrix) -> ConstraintMargin:
    """vᵀ(A⁻¹BA⁻¹ − A⁻¹)v, the gravity-free part of the twist margin"""
    x = _nonzero_twist(v, "the decomposed quadratic margin")
    a_inv = a.inverse_diag()
    value = float(np.dot(x * a_inv * b.as_array() * a_inv, x) - np.dot(x * a_inv, x))
    return ConstraintMargin(value, ConstraintKind.DECOMPOSED_QUADRATIC)


def decomposed_margins(
    v: Twist, a: EllipsoidMatrix, b: EllipsoidMatrix, gl: GravityLoad
) -> Tuple[ConstraintMargin, ConstraintMargin]:
    """
    Two sufficient margins for unequal contacts.

    The twist margin equals first + (g_fᵀBg_f)·s·second with s = ‖A^(−1/2)v‖,
    so both negative implies the twist margin is negative.
    """
    first = decomposed_quadratic_margin(v, a, b)
    g = gl.g_f.as_array()
    bd = b.as_array()
    gbg = float(np.dot(g * bd, g))
    if gbg <= 0.0:
        raise DegenerateGravityError("the decomposed cone margin needs nonzero tangential gravity")

    second = a.inv_sqrt_norm(v) - (2.0 / gbg) * float(np.dot(g * a.inverse_diag() * bd, v.as_array()))
    return first, ConstraintMargin(second, ConstraintKind.DECOMPOSED_SOC)
