import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from glidermdo import evaluation, geometry, hydro, sizing
from glidermdo.config import load_design_space

settings.register_profile(
    "default",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def pytest_collection_modifyitems(config, items):
    if os.environ.get("GLIDERMDO_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="long-running; set GLIDERMDO_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def space():
    return load_design_space()


@pytest.fixture(scope="session")
def baseline_geometry(space):
    return geometry.build_geometry(space.baseline)


@pytest.fixture(scope="session")
def conditions():
    return hydro.FlowConditions()


@pytest.fixture(scope="session")
def budget():
    return sizing.MassBudget()


@pytest.fixture(scope="session")
def evaluator():
    return evaluation.GliderEvaluator()


@pytest.fixture(scope="session")
def baseline_polars(baseline_geometry, conditions):
    return {f: hydro.polar(baseline_geometry, conditions, f) for f in (1, 2)}

