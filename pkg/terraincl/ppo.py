"""
Restart-aware proximal policy optimization.

A rollout window holds ``steps_per_iteration`` steps of every agent. Agents that fall or time out
inside the window are reset by the environment, so the window holds pieces of several episodes;
:func:`compute_gae` cuts the advantage recursion at those restarts. Terminations bootstrap from
zero, timeouts bootstrap from the value of the state the episode was cut in.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from terraincl.c_code import get_c_code
from terraincl.errors import FaultError, ParameterError
from terraincl.policy import entropy, log_prob

log = logging.getLogger(__name__)


@dataclass
class PpoConfig:
    """
    Attributes:
        steps_per_iteration (int): Window length per agent.
        num_minibatches (int): Minibatches per epoch.
        epochs (int): Passes over the window per update.
        clip_ratio (float): Probability-ratio clip range ``epsilon``.
        discount (float): ``gamma``.
        gae_lambda (float): ``lambda``.
        learning_rate (float): Adam step size.
        value_coef (float): Weight of the value loss.
        entropy_coef (float): Weight of the entropy bonus.
        max_grad_norm (float): Global gradient norm clip.
        adam_beta1 (float): First-moment decay.
        adam_beta2 (float): Second-moment decay.
        adam_eps (float): Adam denominator offset.
    """
    steps_per_iteration: int = 24
    num_minibatches: int = 4
    epochs: int = 5
    clip_ratio: float = 0.2
    discount: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    value_coef: float = 1.0
    entropy_coef: float = 0.005
    max_grad_norm: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if self.steps_per_iteration < 1 or self.num_minibatches < 1 or self.epochs < 1:
            raise ParameterError('steps_per_iteration, num_minibatches and epochs are >= 1')
        if not 0.0 < self.discount <= 1.0:
            raise ParameterError('0 < discount <= 1')
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ParameterError('0 <= gae_lambda <= 1')
        if self.clip_ratio <= 0.0:
            raise ParameterError('clip_ratio > 0')
        if self.learning_rate <= 0.0 or self.max_grad_norm <= 0.0:
            raise ParameterError('learning_rate > 0 and max_grad_norm > 0')
        if self.value_coef < 0.0 or self.entropy_coef < 0.0:
            raise ParameterError('value_coef >= 0 and entropy_coef >= 0')
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0 and self.adam_eps > 0.0):
            raise ParameterError('0 <= adam betas < 1 and adam_eps > 0')


class RolloutBuffer:
    """
    One collection window, stored step-major (``T x N``).

    Attributes:
        timeout_values (numpy.ndarray): Value of the final state of every timed-out step, NaN elsewhere.
        last_values (numpy.ndarray): Values of the states after the window, NaN until collected.
    """

    def __init__(self, num_steps, num_agents, obs_dim, action_dim):
        self.num_steps = num_steps
        self.num_agents = num_agents
        self.observations = np.zeros((num_steps, num_agents, obs_dim), dtype=np.float32)
        self.actions = np.zeros((num_steps, num_agents, action_dim), dtype=np.float32)
        self.log_probs = np.zeros((num_steps, num_agents))
        self.values = np.zeros((num_steps, num_agents))
        self.rewards = np.zeros((num_steps, num_agents))
        self.terminated = np.zeros((num_steps, num_agents), dtype=bool)
        self.timed_out = np.zeros((num_steps, num_agents), dtype=bool)
        self.timeout_values = np.full((num_steps, num_agents), np.nan)
        self.last_values = np.full(num_agents, np.nan)
        self.episode_totals = []
        self.step = 0

    def clear(self):
        self.step = 0
        self.terminated[:] = False
        self.timed_out[:] = False
        self.timeout_values[:] = np.nan
        self.last_values[:] = np.nan
        self.episode_totals = []

    @property
    def full(self):
        return self.step == self.num_steps

    @property
    def num_samples(self):
        return self.num_steps * self.num_agents

    def add(self, observations, actions, log_probs, values, result, timeout_values=None):
        """
        Record one environment step of all agents.

        Args:
            observations (numpy.ndarray): Observations the actions were chosen on.
            actions (numpy.ndarray): Sampled actions.
            log_probs (numpy.ndarray): Their log-densities under the sampling policy.
            values (numpy.ndarray): Critic values of the observations.
            result (StepResult): The environment's answer.
            timeout_values (numpy.ndarray): Values of ``result.final_observations`` for the agents
                that timed out (in agent order).
        """
        if self.full:
            raise FaultError('rollout buffer is full')
        t = self.step
        self.observations[t] = observations
        self.actions[t] = actions
        self.log_probs[t] = log_probs
        self.values[t] = values
        self.rewards[t] = result.rewards
        self.terminated[t] = result.terminated
        self.timed_out[t] = result.timed_out
        if result.timed_out.any():
            if timeout_values is None:
                raise FaultError('timed-out agents need bootstrap values')
            self.timeout_values[t, result.timed_out] = timeout_values
        done = result.done
        if done.any():
            self.episode_totals.append(result.episode_totals[done])
        self.step += 1

    def finished_episode_totals(self):
        """
        Returns:
            numpy.ndarray: Totals of the episodes that ended in the window, in step and agent order.
        """
        if not self.episode_totals:
            return np.zeros(0)
        return np.concatenate(self.episode_totals)

    def bootstrap(self):
        """
        Assemble the per-step bootstrap values and restart flags.

        Returns:
            tuple: ``(next_values, resets)`` as ``T x N`` float64 arrays.

        Raises:
            FaultError: If the window is incomplete or a bootstrap value is missing.
        """
        if not self.full:
            raise FaultError(f'rollout buffer holds {self.step} of {self.num_steps} steps')
        if not np.all(np.isfinite(self.last_values)):
            raise FaultError('bootstrap values of the post-window states are missing')
        if not np.all(np.isfinite(self.timeout_values[self.timed_out])):
            raise FaultError('bootstrap values of timed-out states are missing')
        next_values = np.empty((self.num_steps, self.num_agents))
        next_values[:-1] = self.values[1:]
        next_values[-1] = self.last_values
        next_values[self.timed_out] = self.timeout_values[self.timed_out]
        next_values[self.terminated] = 0.0
        resets = (self.terminated | self.timed_out).astype(np.float64)
        return next_values, resets


@dataclass
class AdvantageSet:
    """
    Attributes:
        advantages (numpy.ndarray): ``T x N`` advantages (not normalized).
        returns (numpy.ndarray): ``T x N`` value targets, ``advantages + values``.
    """
    advantages: np.ndarray
    returns: np.ndarray


def collect_rollout(policy, env, buffer, rng):
    """
    Fill ``buffer`` with one window of the sampling policy acting in ``env``.

    Args:
        policy (ActorCritic): The sampling policy.
        env (VecEnv): The environment; finished agents are auto-reset inside the window.
        buffer (RolloutBuffer): Cleared and refilled.
        rng (numpy.random.Generator): Action sampling stream.

    Returns:
        RolloutBuffer: The filled buffer.
    """
    buffer.clear()
    obs = env.observations
    while not buffer.full:
        actions, log_probs, values = policy.act(obs, rng)
        result = env.step(actions)
        timeout_values = None
        if result.timed_out.any():
            _, timeout_values, _ = policy.forward(result.final_observations[result.timed_out])
        buffer.add(obs, actions, log_probs, values, result, timeout_values)
        obs = result.observations
    _, buffer.last_values[:], _ = policy.forward(obs)
    return buffer


def gae_numpy(rewards, values, next_values, resets, gamma, lam):
    advantages = np.zeros(np.shape(rewards))
    carry = np.zeros(np.shape(rewards)[1])
    for t in reversed(range(len(rewards))):
        delta = rewards[t] + gamma * next_values[t] - values[t]
        carry = delta + gamma * lam * (1.0 - resets[t]) * carry
        advantages[t] = carry
    return advantages


def compute_gae(buffer, cfg, use_c_code=True):
    """
    Restart-aware generalized advantage estimation.

    ``A_t = delta_t + gamma lambda (1 - reset_t) A_t+1`` with
    ``delta_t = r_t + gamma v_boot_t - v_t``; ``v_boot`` is zero after a termination, the value of
    the final state after a timeout and ``v_t+1`` otherwise.

    Args:
        buffer (RolloutBuffer): A full window.
        cfg (PpoConfig): ``discount`` and ``gae_lambda``.
        use_c_code (bool): Use the compiled kernel when it is available.

    Returns:
        AdvantageSet: Advantages and returns.

    Raises:
        FaultError: If bootstrap values are missing.
    """
    next_values, resets = buffer.bootstrap()
    c_code = get_c_code() if use_c_code else None
    if c_code is not None and c_code.c_code_loaded:
        advantages = c_code.compute_gae(buffer.rewards, buffer.values, next_values, resets,
                                        cfg.discount, cfg.gae_lambda)
    else:
        advantages = gae_numpy(buffer.rewards, buffer.values, next_values, resets, cfg.discount, cfg.gae_lambda)
    return AdvantageSet(advantages, advantages + buffer.values)


def normalize_advantages(advantages):
    advantages = np.asarray(advantages, dtype=np.float64)
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


class Adam:
    """
    Adaptive-moment optimizer over a parameter dict.
    """

    def __init__(self, params, learning_rate=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}

    def step(self, params, grads):
        """
        Update ``params`` in place.
        """
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, grad in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            step = self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            params[name] -= step.astype(params[name].dtype, copy=False)

    def state_dict(self):
        return {'t': self.t,
                'm': {k: v.copy() for k, v in self.m.items()},
                'v': {k: v.copy() for k, v in self.v.items()}}

    def load_state_dict(self, state):
        self.t = state['t']
        self.m = {k: v.copy() for k, v in state['m'].items()}
        self.v = {k: v.copy() for k, v in state['v'].items()}


@dataclass
class Minibatch:
    observations: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


@dataclass
class LossTerms:
    """
    Scalar terms of one minibatch loss.
    """
    total: float
    actor: float
    value: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def minibatch_loss(policy, batch, cfg):
    """
    Clipped-surrogate loss of one minibatch and its exact gradients.

    ``loss = -mean(min(rho A, clip(rho, 1 - eps, 1 + eps) A)) + c_v mean((V - R)^2) - c_e entropy``

    Args:
        policy (ActorCritic): The policy being trained.
        batch (Minibatch): Samples with (normalized) advantages.
        cfg (PpoConfig): Coefficients.

    Returns:
        tuple: ``(terms, grads)``: :class:`LossTerms` and the parameter gradients.
    """
    mean, value, cache = policy.forward(batch.observations)
    mean = mean.astype(np.float64)
    value = value.astype(np.float64)
    log_std = policy.params['log_std'].astype(np.float64)
    actions = batch.actions.astype(np.float64)
    size = len(actions)

    new_log_probs = log_prob(mean, log_std, actions)
    log_ratio = new_log_probs - batch.old_log_probs
    ratio = np.exp(log_ratio)
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    surrogate = ratio * batch.advantages
    surrogate_clipped = clipped * batch.advantages
    actor_loss = -np.mean(np.minimum(surrogate, surrogate_clipped))
    value_error = value - batch.returns
    value_loss = np.mean(value_error ** 2)
    ent = entropy(log_std)
    total = actor_loss + cfg.value_coef * value_loss - cfg.entropy_coef * ent

    # gradient flows through the unclipped branch only where it is the active minimum
    active = surrogate <= surrogate_clipped
    d_log_prob = np.where(active, -batch.advantages * ratio / size, 0.0)
    variance = np.exp(2.0 * log_std)
    d_mean = d_log_prob[:, np.newaxis] * (actions - mean) / variance
    z_sq = (actions - mean) ** 2 / variance
    d_log_std = (d_log_prob[:, np.newaxis] * (z_sq - 1.0)).sum(axis=0) - cfg.entropy_coef
    d_value = cfg.value_coef * 2.0 * value_error / size

    grads = policy.backward(cache, d_mean, d_value, d_log_std)
    terms = LossTerms(total=float(total), actor=float(actor_loss), value=float(value_loss), entropy=ent,
                      clip_fraction=float(np.mean(np.abs(ratio - 1.0) > cfg.clip_ratio)),
                      approx_kl=float(np.mean(ratio - 1.0 - log_ratio)))
    return terms, grads


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


@dataclass
class UpdateStats:
    """
    Averages over the minibatch steps of one update.

    Attributes:
        grad_norm (float): Mean global gradient norm before clipping.
        fault (bool): The update hit a non-finite loss or gradient and was rolled back.
    """
    loss_actor: float = float('nan')
    loss_value: float = float('nan')
    entropy: float = float('nan')
    clip_fraction: float = float('nan')
    approx_kl: float = float('nan')
    grad_norm: float = float('nan')
    fault: bool = False
    minibatch_steps: int = 0
    history: list = field(default_factory=list, repr=False)


def partition(num_samples, num_minibatches, rng):
    """
    Shuffle the sample indices and split them into minibatches covering every sample once.
    """
    return np.array_split(rng.permutation(num_samples), num_minibatches)


def update(policy, buffer, advantages, cfg, optimizer, rng):
    """
    Run the PPO epochs on one window.

    On a non-finite loss or gradient the parameters and optimizer state are restored to their
    values before the update and the returned stats are flagged as a fault.

    Args:
        policy (ActorCritic): Updated in place.
        buffer (RolloutBuffer): The window.
        advantages (AdvantageSet): Its advantages and returns.
        cfg (PpoConfig): Hyperparameters.
        optimizer (Adam): Optimizer bound to ``policy.params``.
        rng (numpy.random.Generator): Minibatch shuffle stream.

    Returns:
        UpdateStats: The statistics.
    """
    count = buffer.num_samples
    observations = buffer.observations.reshape(count, -1)
    actions = buffer.actions.reshape(count, -1)
    old_log_probs = buffer.log_probs.reshape(count)
    adv = normalize_advantages(advantages.advantages.reshape(count))
    returns = advantages.returns.reshape(count)

    saved_params = policy.copy_params()
    saved_optimizer = optimizer.state_dict()
    stats = UpdateStats()
    try:
        for epoch in range(cfg.epochs):
            for idx in partition(count, cfg.num_minibatches, rng):
                batch = Minibatch(observations[idx], actions[idx], old_log_probs[idx], adv[idx], returns[idx])
                terms, grads = minibatch_loss(policy, batch, cfg)
                norm = global_norm(grads)
                if not (math.isfinite(terms.total) and math.isfinite(norm)):
                    raise FaultError(f'non-finite loss in epoch {epoch}')
                scale = min(1.0, cfg.max_grad_norm / (norm + 1e-6))
                if scale < 1.0:
                    grads = {name: g * scale for name, g in grads.items()}
                optimizer.step(policy.params, grads)
                policy.clamp_log_std()
                stats.history.append((terms, norm))
    except FaultError as e:
        log.warning('update aborted, restoring parameters: %s', e)
        policy.load_params(saved_params)
        optimizer.load_state_dict(saved_optimizer)
        return UpdateStats(fault=True)

    terms = [t for t, _ in stats.history]
    stats.loss_actor = float(np.mean([t.actor for t in terms]))
    stats.loss_value = float(np.mean([t.value for t in terms]))
    stats.entropy = float(np.mean([t.entropy for t in terms]))
    stats.clip_fraction = float(np.mean([t.clip_fraction for t in terms]))
    stats.approx_kl = float(np.mean([t.approx_kl for t in terms]))
    stats.grad_norm = float(np.mean([n for _, n in stats.history]))
    stats.minibatch_steps = len(stats.history)
    return stats
