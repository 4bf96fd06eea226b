"""
Velocity-tracking reward of the walker.

Two exponential tracking kernels (planar velocity in the heading frame, yaw rate) minus smoothness
penalties on action changes and joint velocities, minus a penalty on the step an agent falls.
"""
import numpy as np


def heading_frame_velocity(state):
    """
    Rotate world-frame base velocities into the heading frame.

    Returns:
        numpy.ndarray: ``N x 3`` velocities.
    """
    cos, sin = np.cos(state.base_yaw), np.sin(state.base_yaw)
    world = state.base_lin_vel
    return np.stack((cos * world[:, 0] + sin * world[:, 1],
                     -sin * world[:, 0] + cos * world[:, 1],
                     world[:, 2]), axis=-1)


def compute_reward(before, after, action, cfg, fell=None):
    """
    Per-step reward.

    ``r = w_lin exp(-|v_cmd,xy - v_xy|^2 / sigma_lin) + w_ang exp(-(w_cmd - w)^2 / sigma_ang)
    - c_action |a_t - a_t-1|^2 - c_jvel |qdot|^2 - c_fall [fell]``

    Args:
        before (AgentStates): Agents before the step (command, previous action).
        after (AgentStates): Agents after the step (velocities).
        action (numpy.ndarray): ``N x 12`` actions applied this step.
        cfg (EnvConfig): Weights.
        fell (numpy.ndarray): Per-agent fall flags of this step; none fell if omitted.

    Returns:
        numpy.ndarray: ``N`` rewards.
    """
    velocity = heading_frame_velocity(after)
    lin_error = np.sum((before.command[:, :2] - velocity[:, :2]) ** 2, axis=1)
    ang_error = (before.command[:, 2] - after.base_yaw_rate) ** 2
    reward = cfg.w_lin * np.exp(-lin_error / cfg.sigma_lin) + cfg.w_ang * np.exp(-ang_error / cfg.sigma_ang)
    reward = reward - cfg.c_action * np.sum((np.asarray(action) - before.prev_action) ** 2, axis=1)
    reward = reward - cfg.c_jvel * np.sum(after.joint_vel ** 2, axis=1)
    if fell is not None:
        reward = reward - cfg.c_fall * np.asarray(fell, dtype=np.float64)
    return reward
