"""
Kinematic walker: a desk-scale stand-in for rigid-body simulation of a 12-joint quadruped.

Legs are a hip-abduction joint followed by a planar two-link chain (thigh, shank). Feet that touch
the terrain drag the base along by kinematic traction: the base moves opposite to the mean
displacement of its stance feet. Without support the base sinks and the agent accumulates air time.
"""
import numpy as np

from terraincl.observations import build_observation
from terraincl.rewards import compute_reward
from terraincl.state import NUM_LEGS

# (x sign, y sign) of the hip mounts: front-left, front-right, rear-left, rear-right
_HIP_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])


def hip_mounts(cfg):
    """
    Returns:
        numpy.ndarray: ``4 x 3`` hip positions in the base frame.
    """
    mounts = np.zeros((NUM_LEGS, 3))
    mounts[:, 0] = _HIP_SIGNS[:, 0] * cfg.hip_offset_x_m
    mounts[:, 1] = _HIP_SIGNS[:, 1] * cfg.hip_offset_y_m
    return mounts


def foot_positions(joint_pos, cfg):
    """
    Forward kinematics of all legs.

    The sagittal chain puts the foot at ``x = L1 sin(q1) + L2 sin(q1 + q2)``,
    ``z = -(L1 cos(q1) + L2 cos(q1 + q2))``; abduction ``q0`` then rotates that point about the
    leg's x-axis, and the hip mount offsets it.

    Args:
        joint_pos (numpy.ndarray): ``N x 12`` joint angles.
        cfg (EnvConfig): Leg geometry.

    Returns:
        numpy.ndarray: ``N x 4 x 3`` foot positions in the (level, yaw-aligned) base frame.
    """
    q = np.asarray(joint_pos, dtype=np.float64).reshape(-1, NUM_LEGS, 3)
    abduction, hip, knee = q[..., 0], q[..., 1], q[..., 2]
    sagittal_x = cfg.thigh_length_m * np.sin(hip) + cfg.shank_length_m * np.sin(hip + knee)
    sagittal_z = -(cfg.thigh_length_m * np.cos(hip) + cfg.shank_length_m * np.cos(hip + knee))
    feet = np.empty(q.shape)
    feet[..., 0] = sagittal_x
    feet[..., 1] = -np.sin(abduction) * sagittal_z
    feet[..., 2] = np.cos(abduction) * sagittal_z
    return feet + hip_mounts(cfg)


def nominal_clearance(cfg):
    """
    Get the base height above ground at which the feet of the default stance touch the terrain.

    Returns:
        float: Meters.
    """
    return float(-np.mean(foot_positions(cfg.default_joints[np.newaxis], cfg)[0, :, 2]))


def to_world(base_pos, yaw, feet):
    """
    Rotate base-frame foot positions by the yaw and offset them by the base position.

    Returns:
        numpy.ndarray: ``N x 4 x 3`` world positions.
    """
    cos, sin = np.cos(yaw)[:, np.newaxis], np.sin(yaw)[:, np.newaxis]
    world = np.empty(feet.shape)
    world[..., 0] = base_pos[:, 0:1] + cos * feet[..., 0] - sin * feet[..., 1]
    world[..., 1] = base_pos[:, 1:2] + sin * feet[..., 0] + cos * feet[..., 1]
    world[..., 2] = base_pos[:, 2:3] + feet[..., 2]
    return world


def stance_traction(feet_before, feet_after, stance):
    """
    Kinematic traction from the stance feet.

    Args:
        feet_before (numpy.ndarray): ``N x 4 x 3`` base-frame feet before the joint update.
        feet_after (numpy.ndarray): ``N x 4 x 3`` base-frame feet after it.
        stance (numpy.ndarray): ``N x 4`` stance flags.

    Returns:
        tuple: ``(displacement, yaw_change)``: ``N x 2`` base-frame horizontal displacement and
        ``N`` yaw increments; both are zero for agents with fewer than two stance feet.
    """
    weight = stance.astype(np.float64)
    count = weight.sum(axis=1)
    supported = count >= 2
    denominator = np.maximum(count, 1.0)

    delta = feet_after[..., :2] - feet_before[..., :2]
    displacement = -(delta * weight[..., np.newaxis]).sum(axis=1) / denominator[:, np.newaxis]

    lever = feet_before[..., :2]
    radius_sq = np.maximum(np.sum(lever ** 2, axis=-1), 1e-6)
    angular = (lever[..., 0] * delta[..., 1] - lever[..., 1] * delta[..., 0]) / radius_sq
    yaw_change = -(angular * weight).sum(axis=1) / denominator

    displacement[~supported] = 0.0
    yaw_change[~supported] = 0.0
    return displacement, yaw_change


def walker_dynamics(state, joint_targets, bank, cfg):
    """
    Advance the walker by one control step.

    Args:
        state (AgentStates): Agents before the step (not modified).
        joint_targets (numpy.ndarray): ``N x 12`` desired joint positions, already within limits.
        bank (TerrainBank): The terrain patches (``state.terrain_id`` indexes them).
        cfg (EnvConfig): Geometry and rates.

    Returns:
        tuple: ``(after, stance)``: the new :class:`AgentStates` and the ``N x 4`` stance flags.
    """
    dt = cfg.dt_s
    after = state.copy()
    max_delta = cfg.joint_vel_max * dt

    q_before = state.joint_pos
    q_after = q_before + np.clip(joint_targets - q_before, -max_delta, max_delta)
    q_after = np.clip(q_after, cfg.lower_joints, cfg.upper_joints)

    feet_before = foot_positions(q_before, cfg)
    feet_after = foot_positions(q_after, cfg)
    world = to_world(state.base_pos, state.base_yaw, feet_after)
    ids = state.terrain_id[:, np.newaxis]
    ground = bank.heights_at(ids, world[..., 0], world[..., 1])
    stance = world[..., 2] <= ground + cfg.contact_eps_m
    count = stance.sum(axis=1)
    supported = count >= 2

    displacement, yaw_change = stance_traction(feet_before, feet_after, stance)
    cos, sin = np.cos(state.base_yaw), np.sin(state.base_yaw)
    after.base_pos[:, 0] += cos * displacement[:, 0] - sin * displacement[:, 1]
    after.base_pos[:, 1] += sin * displacement[:, 0] + cos * displacement[:, 1]
    after.base_yaw = state.base_yaw + yaw_change

    stance_ground = np.where(stance, ground, 0.0).sum(axis=1) / np.maximum(count, 1)
    target_z = stance_ground + nominal_clearance(cfg)
    relax = min(1.0, cfg.z_relax_rate * dt)
    after.base_pos[:, 2] = np.where(supported,
                                    state.base_pos[:, 2] + relax * (target_z - state.base_pos[:, 2]),
                                    state.base_pos[:, 2] - cfg.fall_rate_mps * dt)
    after.air_time_s = np.where(supported, 0.0, state.air_time_s + dt)

    after.joint_pos = q_after
    after.joint_vel = (q_after - q_before) / dt
    after.base_lin_vel = (after.base_pos - state.base_pos) / dt
    after.base_yaw_rate = yaw_change / dt
    return after, stance


class WalkerBackend:
    """
    Dynamics, termination and reward of the kinematic walker.
    """
    needs_noise = False

    def __init__(self, cfg, bank):
        self.cfg = cfg
        self.bank = bank
        self.clearance = nominal_clearance(cfg)

    def joint_targets(self, actions):
        """
        Map actions to desired joint positions within the limits.

        Returns:
            tuple: ``(targets, effective_actions)``; the latter are the actions that reach the
            clamped targets.
        """
        cfg = self.cfg
        targets = np.clip(cfg.default_joints + cfg.action_scale * actions, cfg.lower_joints, cfg.upper_joints)
        return targets, (targets - cfg.default_joints) / cfg.action_scale

    def fallen(self, state):
        """
        Returns:
            numpy.ndarray: Whether each agent has been airborne too long or its base is too low.
        """
        ground = self.bank.heights_at(state.terrain_id, state.base_pos[:, 0], state.base_pos[:, 1])
        return (state.air_time_s > self.cfg.max_air_time_s) | (state.base_pos[:, 2] < ground + self.cfg.min_base_height_m)

    def advance(self, state, actions):
        """
        Step a chunk of agents.

        Args:
            state (AgentStates): The chunk before the step.
            actions (numpy.ndarray): Finite, clipped ``N x 12`` actions.

        Returns:
            tuple: ``(after, effective_actions, reward, fell)``.
        """
        targets, effective = self.joint_targets(actions)
        after, _ = walker_dynamics(state, targets, self.bank, self.cfg)
        fell = self.fallen(after)
        reward = compute_reward(state, after, effective, self.cfg, fell=fell)
        return after, effective, reward, fell

    def height_samples(self, state):
        return self.bank.sample_height_grid(state.terrain_id, state.base_pos, state.base_yaw,
                                            self.cfg.height_grid_spacing_m, self.cfg.clip_height_m)

    def observe(self, state, noise=None):
        """
        Returns:
            numpy.ndarray: ``N x 235`` observations.
        """
        return build_observation(state, self.height_samples(state), self.cfg)
