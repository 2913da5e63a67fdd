import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from Core.event_manager import EventManager
from Core.geometry import box_polytope
from Core.lattice import GridConfig
from Managers.minkowski_solver import SolverConfig

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(autouse=True)
def clean_events():
    yield
    EventManager.get_instance().unsubscribe_all()


@pytest.fixture
def coarse_grid():
    """3D grid small enough for unit tests."""
    return GridConfig(n=3, h=0.25, box_radius=4.5, min_box_ratio=2.5)


@pytest.fixture
def fine_grid_2d():
    return GridConfig(n=2, h=0.05, box_radius=2.5, min_box_ratio=2.5)


@pytest.fixture
def solver_grid():
    """3D grid resolving bodies of half-width about 0.4."""
    return GridConfig(n=3, h=0.1, box_radius=2.0, min_box_ratio=2.5)


@pytest.fixture
def solver_cfg(solver_grid):
    return SolverConfig(grid=solver_grid)


@pytest.fixture
def cube():
    return box_polytope([1.0, 1.0, 1.0])


@pytest.fixture
def small_cube():
    return box_polytope([0.5, 0.5, 0.5])


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def warnings_seen(monkeypatch):
    """Collect (module, message) pairs passed to the logger's warning method."""
    from Utils.log_utils import get_logger

    seen = []
    monkeypatch.setattr(get_logger(), "warning", lambda module, message: seen.append((module, message)))
    return seen
