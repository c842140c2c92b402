import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dynpet.core import FrameSchedule
from dynpet.kinetics import DEFAULT_INPUT
from dynpet.projector import Geometry2D, build_system_matrix

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

DESK_DURATIONS = (10.0,) * 12 + (30.0,) * 2 + (60.0,) * 3 + (120.0,) * 2 + (300.0,) * 4 + (600.0,)


@pytest.fixture(scope="session")
def desk_schedule():
    return FrameSchedule.from_durations(DESK_DURATIONS)


@pytest.fixture(scope="session")
def short_schedule():
    # quick 6-frame protocol used by the cheaper fitting/recon tests
    return FrameSchedule.from_durations([10.0, 10.0, 20.0, 30.0, 60.0, 120.0])


@pytest.fixture(scope="session")
def cp():
    return DEFAULT_INPUT


@pytest.fixture(scope="session")
def desk_geometry():
    return Geometry2D(64, 64, 2.0, 90, 96, 2.0)


@pytest.fixture(scope="session")
def desk_system(desk_geometry):
    return build_system_matrix(desk_geometry)


@pytest.fixture(scope="session")
def tiny_geometry():
    return Geometry2D(8, 8, 4.0, 12, 12, 4.0)


@pytest.fixture(scope="session")
def tiny_system(tiny_geometry):
    return build_system_matrix(tiny_geometry)


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)
