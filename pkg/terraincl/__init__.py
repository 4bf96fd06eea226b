from .curriculum import Scenario, build_scenario
from .env import VecEnv
from .evaluation import TransferReport, ValidationMatrix, ValidationPool, transfer_metrics
from .experiment import RunConfig, report, run, sweep
from .policy import ActorCritic, PolicyConfig
from .ppo import PpoConfig
from .terrain import TerrainBank, TerrainKind, TerrainParams, TerrainSpec, generate
