"""
Analytic surrogate backend for fast learning and forgetting checks.

Every terrain family has a fixed optimal action ``a*``; the per-step reward is
``-|a - a*|^2`` and episodes last a fixed number of steps. Observations carry nothing but the
terrain's height signature (plus a little noise), so a policy has to recognise the terrain to act
well, and training on one family pulls the actions of the others towards its optimum.
"""
import numpy as np

from terraincl.state import PROPRIO_DIM
from terraincl.terrain import TerrainKind, sample_height_grid
from terraincl.walker import nominal_clearance


def optimum(cfg, kind):
    """
    Get the optimal action of a terrain family.

    Args:
        cfg (EnvConfig): Holds the published optima (``optimum_<kind>``).
        kind (TerrainKind or TerrainSpec): The terrain; the roughness modifier does not matter.

    Returns:
        numpy.ndarray: The 12-vector ``a*``.
    """
    kind = getattr(kind, 'kind', kind)
    return np.asarray(getattr(cfg, f'optimum_{TerrainKind(kind).value}'), dtype=np.float64)


def canonical_signature(field, cfg):
    """
    Height samples of a patch seen from its centre at nominal clearance, heading +x.

    Args:
        field (HeightField): The patch.
        cfg (EnvConfig): Sampling grid and clearance geometry.

    Returns:
        numpy.ndarray: The 187 samples.
    """
    cx, cy = field.center
    base = np.array([cx, cy, field.height_at(cx, cy) + nominal_clearance(cfg)])
    return sample_height_grid(field, base, 0.0, cfg.height_grid_spacing_m, cfg.clip_height_m)


def surrogate_reward(actions, optima):
    """
    Returns:
        numpy.ndarray: ``-|a - a*|^2`` per agent.
    """
    return -np.sum((np.asarray(actions, dtype=np.float64) - optima) ** 2, axis=-1)


def surrogate_dynamics(state, actions, optima):
    """
    Step agents of the surrogate backend.

    The kinematic state does not move and nobody falls; only the reward depends on the action.

    Args:
        state (AgentStates): Agents before the step.
        actions (numpy.ndarray): ``N x 12`` actions.
        optima (numpy.ndarray): ``N x 12`` optimal action of each agent's terrain.

    Returns:
        tuple: ``(after, reward)``.
    """
    after = state.copy()
    after.base_lin_vel[:] = 0.0
    after.base_yaw_rate[:] = 0.0
    after.joint_vel[:] = 0.0
    return after, surrogate_reward(actions, optima)


class SurrogateBackend:
    """
    Surrogate dynamics bound to a terrain bank.

    Attributes:
        optima (numpy.ndarray): ``P x 12`` optimal actions, one row per patch.
        signatures (numpy.ndarray): ``P x 187`` canonical height signatures, one row per patch.
    """
    needs_noise = True

    def __init__(self, cfg, bank):
        self.cfg = cfg
        self.bank = bank
        self.clearance = nominal_clearance(cfg)
        self.optima = np.stack([optimum(cfg, field.spec) for field in bank.fields])
        self.signatures = np.stack([canonical_signature(field, cfg) for field in bank.fields])

    def advance(self, state, actions):
        """
        Returns:
            tuple: ``(after, effective_actions, reward, fell)``.
        """
        after, reward = surrogate_dynamics(state, actions, self.optima[state.terrain_id])
        return after, actions, reward, np.zeros(len(state), dtype=bool)

    def observe(self, state, noise):
        """
        Build observations: a zero proprioceptive block followed by the noisy signature.

        Args:
            state (AgentStates): The agents.
            noise (numpy.ndarray): ``N x 187`` uniform noise.

        Returns:
            numpy.ndarray: ``N x 235`` observations.
        """
        obs = np.zeros((len(state), PROPRIO_DIM + self.signatures.shape[1]))
        obs[:, PROPRIO_DIM:] = self.signatures[state.terrain_id] + noise
        return obs
