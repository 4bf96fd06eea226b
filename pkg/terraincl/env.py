"""
Vectorized multi-agent environment.

:class:`VecEnv` owns a batch of agents spread over the patches of a :class:`TerrainBank` and one
of two dynamics backends (``walker`` or ``surrogate``). A step clamps the actions, advances the
backend on disjoint agent chunks (possibly in parallel), computes rewards and terminations,
auto-resets finished agents on their patch and reports the totals of the episodes that ended.
"""
import logging
from dataclasses import dataclass

import numpy as np

from terraincl.errors import FaultError
from terraincl.observations import OBS_DIM, build_observation
from terraincl.rewards import compute_reward
from terraincl.seeding import stream
from terraincl.state import NUM_JOINTS, AgentStates, Command, EnvConfig, sample_command
from terraincl.surrogate import SurrogateBackend, surrogate_dynamics
from terraincl.terrain import NUM_HEIGHT_SAMPLES
from terraincl.walker import WalkerBackend, walker_dynamics
from terraincl.workers import WorkerPool, split_chunks

log = logging.getLogger(__name__)

__all__ = ['AgentStates', 'Command', 'EnvConfig', 'StepResult', 'VecEnv', 'build_observation', 'compute_reward',
           'sample_command', 'surrogate_dynamics', 'walker_dynamics', 'OBS_DIM']


@dataclass
class StepResult:
    """
    Outcome of one environment step, one row per agent.

    Attributes:
        observations (numpy.ndarray): ``N x 235`` observations after the step (after auto-reset).
        rewards (numpy.ndarray): Per-step rewards.
        terminated (numpy.ndarray): The agent fell (or faulted) this step.
        timed_out (numpy.ndarray): The agent reached the episode cap this step.
        episode_totals (numpy.ndarray): Total reward of the episode that ended, NaN otherwise.
        final_observations (numpy.ndarray): Observations of the state an episode ended in (rows of
            agents that did not finish hold their regular observation).
        faults (numpy.ndarray): The agent sent a non-finite action.
    """
    observations: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    timed_out: np.ndarray
    episode_totals: np.ndarray
    final_observations: np.ndarray
    faults: np.ndarray

    @property
    def done(self):
        return self.terminated | self.timed_out


class VecEnv:
    """
    A batch of agents on terrain patches.

    Attributes:
        cfg (EnvConfig): The configuration.
        bank (TerrainBank): The patches; ``state.terrain_id`` indexes them.
        state (AgentStates): The current state of every agent.
        fault_count (int): Number of non-finite actions received so far.
    """

    def __init__(self, cfg, bank, num_agents, seed=0, label='train', terrain_ids=0, pool=None):
        """
        Class constructor. Agents are placed on their patches right away.

        Args:
            cfg (EnvConfig): The configuration.
            bank (TerrainBank): The patches.
            num_agents (int): Number of agents.
            seed (int): Run seed; the env draws from the streams ``(seed, "env", label, ...)``.
            label (str): Name of the env's streams, e.g. ``"train"`` or ``"validation"``.
            terrain_ids (int or numpy.ndarray): Initial patch of every agent.
            pool (WorkerPool): Worker threads for chunked stepping; a private pool is created if omitted.
        """
        cfg.validate()
        if num_agents < 1:
            raise FaultError('an environment needs at least one agent')
        self.cfg = cfg
        self.bank = bank
        self.num_agents = num_agents
        self._rng = stream(seed, 'env', label, 'reset')
        self._noise_rng = stream(seed, 'env', label, 'noise')
        self._own_pool = pool is None
        self.pool = WorkerPool() if pool is None else pool
        self._chunks = split_chunks(num_agents, self.pool.num_workers)
        self.backend = SurrogateBackend(cfg, bank) if cfg.backend == 'surrogate' else WalkerBackend(cfg, bank)
        self.state = AgentStates.zeros(num_agents)
        self.fault_count = 0
        self._obs = np.zeros((num_agents, OBS_DIM))
        self.reset(terrain_ids=terrain_ids)

    def close(self):
        if self._own_pool:
            self.pool.close()

    @property
    def observations(self):
        """
        Get the current observations.

        Returns:
            numpy.ndarray: ``N x 235`` float32 observations.
        """
        return self._obs.astype(np.float32)

    def _noise(self, num):
        if not self.backend.needs_noise:
            return None
        return self._noise_rng.uniform(-self.cfg.surrogate_noise, self.cfg.surrogate_noise, (num, NUM_HEIGHT_SAMPLES))

    def _spawn(self, ids):
        cfg = self.cfg
        state = self.state
        num = len(ids)
        jitter = self._rng.uniform(-cfg.spawn_jitter_m, cfg.spawn_jitter_m, (num, 2))
        commands = sample_command(self._rng, cfg.command_ranges, num)
        terrain = state.terrain_id[ids]
        centers = np.array(self.bank[0].center)
        xy = centers + jitter
        state.base_pos[ids, 0] = xy[:, 0]
        state.base_pos[ids, 1] = xy[:, 1]
        state.base_pos[ids, 2] = self.bank.heights_at(terrain, xy[:, 0], xy[:, 1]) + self.backend.clearance
        state.base_yaw[ids] = 0.0
        state.base_lin_vel[ids] = 0.0
        state.base_yaw_rate[ids] = 0.0
        state.joint_pos[ids] = cfg.default_joints
        state.joint_vel[ids] = 0.0
        state.prev_action[ids] = 0.0
        state.command[ids] = commands
        state.episode_step[ids] = 0
        state.episode_time_s[ids] = 0.0
        state.air_time_s[ids] = 0.0
        state.cumulative_reward[ids] = 0.0

    def reset(self, agent_ids=None, terrain_ids=None):
        """
        Place agents at their patch's spawn area with fresh commands.

        Args:
            agent_ids (numpy.ndarray): Agents to reset; all if omitted.
            terrain_ids (int or numpy.ndarray): New patch of the agents; unchanged if omitted.

        Returns:
            numpy.ndarray: ``N x 235`` observations of all agents.

        Raises:
            ConfigurationError: If a terrain id names no patch.
        """
        ids = np.arange(self.num_agents) if agent_ids is None else np.asarray(agent_ids, dtype=np.intp)
        if terrain_ids is not None:
            self.bank.check_ids(terrain_ids)
            self.state.terrain_id[ids] = terrain_ids
        if len(ids):
            self._spawn(ids)
            self._obs[ids] = self.backend.observe(self.state.take(ids), self._noise(len(ids)))
        return self.observations

    def relocate(self, terrain_id):
        """
        Move every agent onto another patch.

        Episodes in progress end without reporting a total (administrative reset).

        Args:
            terrain_id (int): The new patch.

        Returns:
            numpy.ndarray: The new observations.
        """
        log.debug('relocating %d agents to patch %d', self.num_agents, terrain_id)
        return self.reset(terrain_ids=terrain_id)

    def _advance_chunk(self, job):
        idx, actions, noise = job
        before = self.state.take(idx)
        after, effective, reward, fell = self.backend.advance(before, actions)
        after.prev_action = effective
        after.episode_step = before.episode_step + 1
        after.episode_time_s = after.episode_step * self.cfg.dt_s
        after.cumulative_reward = before.cumulative_reward + reward
        obs = self.backend.observe(after, noise)
        return after, reward, fell, obs

    def step(self, actions):
        """
        Advance all agents by one control step.

        Non-finite action rows are recorded as faults: the agent is terminated with the fall
        penalty as its reward instead of stepping with the bad values.

        Args:
            actions (numpy.ndarray): ``N x 12`` actions.

        Returns:
            StepResult: The outcome.

        Raises:
            FaultError: If the action array has the wrong shape.
        """
        actions = np.array(actions, dtype=np.float64)
        if actions.shape != (self.num_agents, NUM_JOINTS):
            raise FaultError(f'expected actions of shape {(self.num_agents, NUM_JOINTS)}, got {actions.shape}')
        faults = ~np.all(np.isfinite(actions), axis=1)
        if faults.any():
            self.fault_count += int(faults.sum())
            log.warning('%d agent(s) sent non-finite actions; terminating them', int(faults.sum()))
            actions[faults] = 0.0
        actions = np.clip(actions, -self.cfg.clip_actions, self.cfg.clip_actions)

        noise = self._noise(self.num_agents)
        jobs = [(idx, actions[idx], None if noise is None else noise[idx]) for idx in self._chunks]
        results = self.pool.map(self._advance_chunk, jobs)

        rewards = np.empty(self.num_agents)
        fell = np.empty(self.num_agents, dtype=bool)
        for idx, (after, reward, chunk_fell, obs) in zip(self._chunks, results):
            self.state.put(idx, after)
            rewards[idx] = reward
            fell[idx] = chunk_fell
            self._obs[idx] = obs

        if faults.any():
            # faulting agents were stepped with zero actions; book the penalty instead of that reward
            penalty = -self.cfg.c_fall
            self.state.cumulative_reward[faults] += penalty - rewards[faults]
            rewards[faults] = penalty
        terminated = fell | faults | ~self.state.is_finite()
        timed_out = (self.state.episode_step >= self.cfg.max_episode_steps) & ~terminated
        done = terminated | timed_out

        episode_totals = np.full(self.num_agents, np.nan)
        episode_totals[done] = self.state.cumulative_reward[done]
        final_obs = self._obs.astype(np.float32)
        if done.any():
            self.reset(np.flatnonzero(done))
        return StepResult(self.observations, rewards, terminated, timed_out, episode_totals, final_obs, faults)

