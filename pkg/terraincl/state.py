"""
Environment configuration and the per-agent state arrays shared by both dynamics backends.
"""
import math
from dataclasses import dataclass, fields

import numpy as np

from terraincl.errors import ConfigurationError, ParameterError

NUM_JOINTS = 12
NUM_LEGS = 4
#: Length of the proprioceptive/command/previous-action block at the head of an observation.
PROPRIO_DIM = 3 + 3 + 3 + 3 + NUM_JOINTS + NUM_JOINTS + NUM_JOINTS
BACKENDS = ('walker', 'surrogate')


@dataclass
class EnvConfig:
    """
    Configuration of the vectorized environment.

    Joint triples are ordered (hip abduction, hip flexion, knee) and apply to all four legs
    (front-left, front-right, rear-left, rear-right). Actions are desired joint positions given as
    offsets from ``default_joint_pos`` scaled by ``action_scale``.
    """
    backend: str = 'walker'
    dt_s: float = 0.02
    episode_cap_s: float = 20.0

    command_vx: tuple = (-1.0, 1.0)
    command_vy: tuple = (-0.5, 0.5)
    command_yaw_rate: tuple = (-1.0, 1.0)

    w_lin: float = 1.0
    w_ang: float = 0.5
    sigma_lin: float = 0.25
    sigma_ang: float = 0.25
    c_action: float = 0.01
    c_jvel: float = 0.0005
    c_fall: float = 10.0

    thigh_length_m: float = 0.2
    shank_length_m: float = 0.2
    hip_offset_x_m: float = 0.183
    hip_offset_y_m: float = 0.13
    default_joint_pos: tuple = (0.0, 0.8, -1.5)
    joint_lower: tuple = (-0.8, -1.0, -2.7)
    joint_upper: tuple = (0.8, 2.5, -0.9)
    joint_vel_max: float = 20.0
    action_scale: float = 0.25
    clip_actions: float = 10.0

    contact_eps_m: float = 0.02
    z_relax_rate: float = 10.0
    fall_rate_mps: float = 1.0
    max_air_time_s: float = 0.5
    min_base_height_m: float = 0.05
    spawn_jitter_m: float = 0.5

    lin_vel_scale: float = 0.5
    ang_vel_scale: float = 0.5
    joint_pos_scale: float = 1.0
    joint_vel_scale: float = 0.05
    height_scale: float = 1.0
    height_grid_spacing_m: float = 0.1
    clip_height_m: float = 1.0

    surrogate_episode_steps: int = 24
    surrogate_noise: float = 0.01
    optimum_flat: tuple = (0.30, -0.20, 0.10, -0.30, 0.20, -0.10, 0.30, -0.20, 0.10, -0.30, 0.20, -0.10)
    optimum_slope_up: tuple = (-0.40, 0.30, 0.20, 0.40, -0.30, -0.20, -0.40, 0.30, 0.20, 0.40, -0.30, -0.20)
    optimum_slope_down: tuple = (0.20, 0.40, -0.30, -0.20, -0.40, 0.30, 0.20, 0.40, -0.30, -0.20, -0.40, 0.30)
    optimum_stairs_up: tuple = (-0.10, -0.40, 0.40, 0.10, 0.40, -0.40, -0.10, -0.40, 0.40, 0.10, 0.40, -0.40)
    optimum_stairs_down: tuple = (0.40, 0.10, -0.40, -0.40, -0.10, 0.40, 0.40, 0.10, -0.40, -0.40, -0.10, 0.40)
    optimum_tiles: tuple = (-0.30, -0.30, -0.30, 0.30, 0.30, 0.30, -0.30, -0.30, -0.30, 0.30, 0.30, 0.30)

    def validate(self):
        """
        Raises:
            ConfigurationError: If the backend is unknown.
            ParameterError: Naming the first violated numeric constraint.
        """
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"unknown backend '{self.backend}' (known: {', '.join(BACKENDS)})")
        if not self.dt_s > 0:
            raise ParameterError('dt_s > 0')
        steps = self.episode_cap_s / self.dt_s
        if round(steps) < 1 or not math.isclose(steps, round(steps), rel_tol=0, abs_tol=1e-6):
            raise ParameterError('episode_cap_s / dt_s is a positive integer')
        for name in ('command_vx', 'command_vy', 'command_yaw_rate'):
            low, high = getattr(self, name)
            if low > high:
                raise ParameterError(f'{name}: low <= high')
        for name in ('sigma_lin', 'sigma_ang', 'action_scale', 'joint_vel_max', 'thigh_length_m', 'shank_length_m'):
            if not getattr(self, name) > 0:
                raise ParameterError(f'{name} > 0')
        for name in ('default_joint_pos', 'joint_lower', 'joint_upper'):
            if len(getattr(self, name)) != 3:
                raise ParameterError(f'{name} has one value per joint of a leg (3)')
        if any(lo > d or d > hi for lo, d, hi in zip(self.joint_lower, self.default_joint_pos, self.joint_upper)):
            raise ParameterError('joint_lower <= default_joint_pos <= joint_upper')
        if self.surrogate_episode_steps < 1:
            raise ParameterError('surrogate_episode_steps >= 1')
        for f in fields(self):
            if f.name.startswith('optimum_'):
                values = getattr(self, f.name)
                if len(values) != NUM_JOINTS or any(abs(v) > 0.5 for v in values):
                    raise ParameterError(f'{f.name} has {NUM_JOINTS} entries in [-0.5, 0.5]')

    @property
    def max_episode_steps(self):
        """
        Get the number of steps after which an episode times out.

        Returns:
            int: ``episode_cap_s / dt_s`` for the walker, ``surrogate_episode_steps`` for the surrogate.
        """
        if self.backend == 'surrogate':
            return self.surrogate_episode_steps
        return round(self.episode_cap_s / self.dt_s)

    @property
    def default_joints(self):
        return np.tile(np.asarray(self.default_joint_pos, dtype=np.float64), NUM_LEGS)

    @property
    def lower_joints(self):
        return np.tile(np.asarray(self.joint_lower, dtype=np.float64), NUM_LEGS)

    @property
    def upper_joints(self):
        return np.tile(np.asarray(self.joint_upper, dtype=np.float64), NUM_LEGS)

    @property
    def command_ranges(self):
        return np.array([self.command_vx, self.command_vy, self.command_yaw_rate], dtype=np.float64)


@dataclass(frozen=True)
class Command:
    """A velocity command in the heading frame."""
    vx: float
    vy: float
    yaw_rate: float


def sample_command(rng, ranges, num=None):
    """
    Draw velocity commands uniformly from their ranges.

    Args:
        rng (numpy.random.Generator): The command stream.
        ranges (numpy.ndarray): ``3 x 2`` array of (low, high) for vx, vy and yaw rate.
        num (int): Number of commands; ``None`` returns a single :class:`Command`.

    Returns:
        Command or numpy.ndarray: One command, or ``num x 3`` commands.
    """
    ranges = np.asarray(ranges, dtype=np.float64)
    size = (1 if num is None else num, 3)
    commands = ranges[:, 0] + (ranges[:, 1] - ranges[:, 0]) * rng.random(size)
    if num is None:
        return Command(*(float(c) for c in commands[0]))
    return commands


@dataclass
class AgentStates:
    """
    Kinematic state of a batch of agents, one row per agent.

    The base stays level; its orientation is the yaw alone. Velocities are in the world frame.
    """
    base_pos: np.ndarray
    base_yaw: np.ndarray
    base_lin_vel: np.ndarray
    base_yaw_rate: np.ndarray
    joint_pos: np.ndarray
    joint_vel: np.ndarray
    prev_action: np.ndarray
    command: np.ndarray
    episode_step: np.ndarray
    episode_time_s: np.ndarray
    air_time_s: np.ndarray
    cumulative_reward: np.ndarray
    terrain_id: np.ndarray

    @classmethod
    def zeros(cls, num):
        return cls(
            base_pos=np.zeros((num, 3)),
            base_yaw=np.zeros(num),
            base_lin_vel=np.zeros((num, 3)),
            base_yaw_rate=np.zeros(num),
            joint_pos=np.zeros((num, NUM_JOINTS)),
            joint_vel=np.zeros((num, NUM_JOINTS)),
            prev_action=np.zeros((num, NUM_JOINTS)),
            command=np.zeros((num, 3)),
            episode_step=np.zeros(num, dtype=np.int64),
            episode_time_s=np.zeros(num),
            air_time_s=np.zeros(num),
            cumulative_reward=np.zeros(num),
            terrain_id=np.zeros(num, dtype=np.intp),
        )

    def __len__(self):
        return len(self.base_yaw)

    def take(self, idx):
        """
        Copy the rows of some agents.

        Args:
            idx (numpy.ndarray): Agent indices.

        Returns:
            AgentStates: The copied rows.
        """
        return AgentStates(**{f.name: getattr(self, f.name)[idx].copy() for f in fields(self)})

    def put(self, idx, other):
        """
        Overwrite the rows of some agents.

        Args:
            idx (numpy.ndarray): Agent indices.
            other (AgentStates): Rows in the order of ``idx``.
        """
        for f in fields(self):
            getattr(self, f.name)[idx] = getattr(other, f.name)

    def copy(self):
        return self.take(slice(None))

    def is_finite(self):
        """
        Returns:
            numpy.ndarray: Per agent, whether every float component is finite.
        """
        ok = np.ones(len(self), dtype=bool)
        for f in fields(self):
            value = getattr(self, f.name)
            if value.dtype.kind == 'f':
                ok &= np.all(np.isfinite(value.reshape(len(self), -1)), axis=1)
        return ok
