import numpy as np
import pytest

from terraincl.curriculum import Scenario, scenario_bank
from terraincl.policy import ActorCritic, PolicyConfig
from terraincl.state import EnvConfig
from terraincl.terrain import TerrainParams
from terraincl.workers import WorkerPool


@pytest.fixture
def pool():
    workers = WorkerPool(2)
    yield workers
    workers.close()


@pytest.fixture
def terrain_params():
    return TerrainParams()


@pytest.fixture
def make_bank(terrain_params):
    """
    Build a bank with one patch per terrain label.
    """
    def factory(*labels, seed=0):
        return scenario_bank(Scenario.custom(labels, 1), terrain_params, seed)
    return factory


@pytest.fixture
def surrogate_cfg():
    return EnvConfig(backend='surrogate')


@pytest.fixture
def still_cfg():
    """Walker with zero commands."""
    return EnvConfig(command_vx=(0.0, 0.0), command_vy=(0.0, 0.0), command_yaw_rate=(0.0, 0.0))


@pytest.fixture
def small_policy():
    def factory(obs_dim=235, action_dim=12, hidden_sizes=(32, 32), dtype='float64', seed=0):
        cfg = PolicyConfig(hidden_sizes=hidden_sizes, obs_dim=obs_dim, action_dim=action_dim, dtype=dtype)
        return ActorCritic(cfg, rng=np.random.default_rng(seed))
    return factory
