"""
Observation assembly.

An observation is 235 values in a fixed block order::

    base_lin_vel (3) | base_ang_vel (3) | projected_gravity (3) | command (3)
    | joint_pos - default (12) | joint_vel (12) | prev_action (12) | height_samples (187)

The first 48 values are the proprioceptive/command/previous-action block.
"""
import numpy as np

from terraincl.rewards import heading_frame_velocity
from terraincl.state import PROPRIO_DIM
from terraincl.terrain import NUM_HEIGHT_SAMPLES

OBS_DIM = PROPRIO_DIM + NUM_HEIGHT_SAMPLES


def build_observation(state, height_samples, cfg):
    """
    Assemble and scale observations.

    Args:
        state (AgentStates): The agents after the step.
        height_samples (numpy.ndarray): ``N x 187`` terrain-minus-base heights (already clipped).
        cfg (EnvConfig): Normalization factors and default joint angles.

    Returns:
        numpy.ndarray: ``N x 235`` observations.
    """
    num = len(state)
    ang_vel = np.zeros((num, 3))
    ang_vel[:, 2] = state.base_yaw_rate
    # the base stays level, so gravity always points straight down in the body frame
    gravity = np.tile([0.0, 0.0, -1.0], (num, 1))
    command_scale = np.array([cfg.lin_vel_scale, cfg.lin_vel_scale, cfg.ang_vel_scale])
    return np.concatenate((
        heading_frame_velocity(state) * cfg.lin_vel_scale,
        ang_vel * cfg.ang_vel_scale,
        gravity,
        state.command * command_scale,
        (state.joint_pos - cfg.default_joints) * cfg.joint_pos_scale,
        state.joint_vel * cfg.joint_vel_scale,
        state.prev_action,
        height_samples * cfg.height_scale,
    ), axis=1)
