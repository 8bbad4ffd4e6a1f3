import time

import pytest

from spatialrc.design import (
    LoopShapeSpec,
    design_feedback,
    learning_filter_spatial,
    learning_filter_traditional,
)
from spatialrc.lti import ContinuousTf, zoh_discretize
from spatialrc.scenario import ScenarioConfig, run_scenario

TS = 1e-3


@pytest.fixture(scope="session")
def plant_ct():
    return ContinuousTf([1.0], [1.0, 1.0, 1.0e4])


@pytest.fixture(scope="session")
def plant_d(plant_ct):
    return zoh_discretize(plant_ct, TS)


@pytest.fixture(scope="session")
def ctrl(plant_ct):
    return design_feedback(plant_ct, LoopShapeSpec(50.0), TS)


@pytest.fixture(scope="session")
def learn_spatial(plant_ct, ctrl):
    return learning_filter_spatial(plant_ct, ctrl, TS)


@pytest.fixture(scope="session")
def learn_traditional(plant_ct, ctrl):
    return learning_filter_traditional(plant_ct, ctrl, TS)


@pytest.fixture(scope="session")
def default_run():
    """Full default scenario (both RC variants plus the no-RC baseline)."""
    cfg = ScenarioConfig(variant="both")
    t0 = time.perf_counter()
    result = run_scenario(cfg)
    result.elapsed_s = time.perf_counter() - t0
    return result
