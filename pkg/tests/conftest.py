import math
import os

import hypothesis
import numpy as np
import pytest

from dls.contact_sim import GraspConfig
from dls.frames import PlanarPose
from dls.planner import Scenario, SolverConfig

np.seterr(all="warn")

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None, derandomize=True)
hypothesis.settings.register_profile("dev", max_examples=25, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev"))

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "data")


def make_grasp(incline_deg: float = 45.0, radius_static: float = 0.04, radius_moving: float = 0.04, **kwargs) -> GraspConfig:
    """The desk-scale grasp used across the tests"""
    params = dict(
        mass=0.5,
        gravity=9.81,
        incline_phi=math.radians(incline_deg),
        downhill_alpha=math.radians(-90.0),
        squeeze_force=20.0,
        mu_static_palm=0.8,
        mu_moving_palm=0.8,
        radius_static_palm=radius_static,
        radius_moving_palm=radius_moving,
        palm_radius=0.06,
    )
    params.update(kwargs)
    return GraspConfig(**params)


def pose(x: float, y: float, theta_deg: float = 0.0) -> PlanarPose:
    return PlanarPose(x, y, math.radians(theta_deg))


@pytest.fixture
def grasp45() -> GraspConfig:
    return make_grasp(45.0)


@pytest.fixture
def horizontal_grasp() -> GraspConfig:
    return make_grasp(0.0)


@pytest.fixture
def solver_cfg() -> SolverConfig:
    return SolverConfig()


@pytest.fixture
def translation_scenario45() -> Scenario:
    waypoints = (
        (pose(0.0, 0.01), pose(0.005, 0.01)),
        (pose(0.0, 0.02), pose(0.01, 0.02)),
        (pose(0.0, 0.03), pose(0.015, 0.03)),
    )
    return Scenario(pose(0, 0), pose(0, 0), waypoints[-1][0], waypoints[-1][1], make_grasp(45.0), waypoints)


@pytest.fixture
def data_dir() -> str:
    return DATA_DIR
