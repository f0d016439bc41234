import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adaptive_trl.adp import SolverConfig
from adaptive_trl.features import FeatureConfig
from adaptive_trl.geometry import VehicleState
from adaptive_trl.mdp import ScenarioConfig
from adaptive_trl.states import EncounterState

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def cfg():
    return ScenarioConfig()


@pytest.fixture
def small_cfg():
    """Coarse grids so solver tests run in well under a second."""
    return ScenarioConfig(
        features=FeatureConfig(
            n_distance=4, n_bearing=4, n_rel_heading=4, n_goal_distance=3, n_goal_bearing=3
        )
    )


@pytest.fixture
def small_solver():
    return SolverConfig(n_state=400, n_ev=5, n_vi=3, n_q=400, seed=3)


def random_states(rng, n, *, spread=1500.0, dev_prob=0.3):
    """Own near the route, intruder anywhere within ``spread`` meters."""
    out = []
    for _ in range(n):
        own = VehicleState(rng.uniform(-100, 1100), rng.uniform(-400, 400), rng.uniform(-math.pi, math.pi))
        ang = rng.uniform(-math.pi, math.pi)
        r = rng.uniform(0.0, spread)
        intr = VehicleState(own.x + r * math.cos(ang), own.y + r * math.sin(ang), rng.uniform(-math.pi, math.pi))
        out.append(EncounterState(own, intr, bool(rng.random() < dev_prob)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
