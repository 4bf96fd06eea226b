"""
Actor-critic multilayer perceptrons with a diagonal Gaussian action head.

Actor and critic are separate stacks of affine layers with ELU activations; the actor outputs the
action mean, the critic a scalar value, and a learnable per-dimension ``log_std`` sets the spread.
Gradients are computed by explicit reverse-mode passes over cached activations.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from terraincl.errors import FaultError, ParameterError
from terraincl.observations import OBS_DIM
from terraincl.state import NUM_JOINTS

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PolicyConfig:
    """
    Network shapes and initialization.

    Attributes:
        hidden_sizes (tuple): Widths of the hidden layers of both stacks.
        obs_dim (int): Observation length.
        action_dim (int): Action length.
        init_log_std (float): Initial value of every ``log_std`` entry.
        log_std_min (float): Lower clamp of ``log_std``.
        log_std_max (float): Upper clamp of ``log_std``.
        actor_output_gain (float): Scale of the actor's output-layer initialization.
        dtype (str): Floating point type of the parameters.
    """
    hidden_sizes: tuple = (512, 256, 128)
    obs_dim: int = OBS_DIM
    action_dim: int = NUM_JOINTS
    init_log_std: float = -1.0
    log_std_min: float = -4.0
    log_std_max: float = 1.0
    actor_output_gain: float = 0.01
    dtype: str = 'float32'

    def validate(self):
        if not self.hidden_sizes or any(int(h) < 1 for h in self.hidden_sizes):
            raise ParameterError('hidden_sizes are positive')
        if self.obs_dim < 1 or self.action_dim < 1:
            raise ParameterError('obs_dim >= 1 and action_dim >= 1')
        if not self.log_std_min <= self.init_log_std <= self.log_std_max:
            raise ParameterError('log_std_min <= init_log_std <= log_std_max')
        if self.dtype not in ('float32', 'float64'):
            raise ParameterError("dtype is 'float32' or 'float64'")

    def layer_sizes(self, stack):
        out = self.action_dim if stack == 'actor' else 1
        return [self.obs_dim, *(int(h) for h in self.hidden_sizes), out]

    def parameter_names(self):
        """
        Get the parameter names in declared order (actor layers, critic layers, log_std).

        Returns:
            list: E.g. ``['actor.W0', 'actor.b0', ..., 'critic.b3', 'log_std']``.
        """
        names = []
        for stack in ('actor', 'critic'):
            for i in range(len(self.layer_sizes(stack)) - 1):
                names += [f'{stack}.W{i}', f'{stack}.b{i}']
        return names + ['log_std']

    def parameter_shapes(self):
        shapes = {}
        for stack in ('actor', 'critic'):
            sizes = self.layer_sizes(stack)
            for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                shapes[f'{stack}.W{i}'] = (n_in, n_out)
                shapes[f'{stack}.b{i}'] = (n_out,)
        shapes['log_std'] = (self.action_dim,)
        return shapes

    def parameter_count(self):
        """
        Closed-form parameter count: ``sum(in * out + out)`` over the layers of both stacks plus
        one ``log_std`` per action dimension.
        """
        total = self.action_dim
        for stack in ('actor', 'critic'):
            sizes = self.layer_sizes(stack)
            total += sum(n_in * n_out + n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))
        return total


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0))).astype(x.dtype, copy=False)


def orthogonal(rng, shape, gain):
    """
    Draw a scaled random (semi-)orthogonal matrix.

    Args:
        rng (numpy.random.Generator): Random source.
        shape (tuple): ``(fan_in, fan_out)``.
        gain (float): Scale.

    Returns:
        numpy.ndarray: The matrix.
    """
    flat = rng.standard_normal((max(shape), min(shape)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[:shape[0], :shape[1]]


def log_prob(mean, log_std, actions):
    """
    Log-density of a diagonal Gaussian.

    ``sum_i [-(a_i - mu_i)^2 / (2 sigma_i^2) - log sigma_i - log(2 pi) / 2]``

    Returns:
        numpy.ndarray: One value per row.
    """
    std = np.exp(log_std)
    z = (actions - mean) / std
    return np.sum(-0.5 * z ** 2 - log_std - 0.5 * LOG_2PI, axis=-1)


def entropy(log_std):
    """
    Entropy of a diagonal Gaussian, ``sum_i (1 + log(2 pi sigma_i^2)) / 2``; independent of the mean.
    """
    return float(np.sum(0.5 + 0.5 * LOG_2PI + np.asarray(log_std, dtype=np.float64)))


@dataclass
class ActionDistribution:
    """
    Attributes:
        mean (numpy.ndarray): ``B x A`` means.
        log_std (numpy.ndarray): ``A`` log standard deviations.
    """
    mean: np.ndarray
    log_std: np.ndarray

    @property
    def std(self):
        return np.exp(self.log_std)

    def log_prob(self, actions):
        return log_prob(self.mean.astype(np.float64), self.log_std.astype(np.float64),
                        np.asarray(actions, dtype=np.float64))

    def entropy(self):
        return entropy(self.log_std)

    def sample(self, rng):
        noise = rng.standard_normal(self.mean.shape).astype(self.mean.dtype)
        return self.mean + self.std.astype(self.mean.dtype) * noise


@dataclass
class ForwardCache:
    """
    Activations of one forward pass, consumed by :meth:`ActorCritic.backward`.
    """
    actor_inputs: list
    actor_pre: list
    critic_inputs: list
    critic_pre: list
    batch_size: int


class ActorCritic:
    """
    The policy and value networks.

    Attributes:
        cfg (PolicyConfig): Shapes and initialization.
        params (dict): Parameter arrays by name, see :meth:`PolicyConfig.parameter_names`.
        frozen (bool): Snapshots refuse parameter updates.
    """

    def __init__(self, cfg=None, rng=None, params=None):
        """
        Class constructor.

        Args:
            cfg (PolicyConfig): Shapes; defaults to the full-size network.
            rng (numpy.random.Generator): Initialization stream (required unless ``params`` is given).
            params (dict): Existing parameters to adopt instead of initializing.
        """
        self.cfg = cfg or PolicyConfig()
        self.cfg.validate()
        self.dtype = np.dtype(self.cfg.dtype)
        self.frozen = False
        if params is None:
            if rng is None:
                raise FaultError('initializing a policy requires a random stream')
            params = self._initialize(rng)
        self.params = {}
        self.load_params(params)

    def _initialize(self, rng):
        params = {}
        shapes = self.cfg.parameter_shapes()
        for stack in ('actor', 'critic'):
            count = len(self.cfg.layer_sizes(stack)) - 1
            for i in range(count):
                if i < count - 1:
                    gain = math.sqrt(2.0)
                else:
                    gain = self.cfg.actor_output_gain if stack == 'actor' else 1.0
                params[f'{stack}.W{i}'] = orthogonal(rng, shapes[f'{stack}.W{i}'], gain)
                params[f'{stack}.b{i}'] = np.zeros(shapes[f'{stack}.b{i}'])
        params['log_std'] = np.full(self.cfg.action_dim, self.cfg.init_log_std)
        return params

    def load_params(self, params):
        """
        Replace the parameters with copies of ``params``.

        Raises:
            FaultError: If a parameter is missing, has the wrong shape or the count is off.
        """
        if self.frozen:
            raise FaultError('cannot modify a frozen policy snapshot')
        shapes = self.cfg.parameter_shapes()
        loaded = {}
        for name in self.cfg.parameter_names():
            if name not in params:
                raise FaultError(f'missing parameter {name}')
            value = np.array(params[name], dtype=self.dtype)
            if value.shape != shapes[name]:
                raise FaultError(f'parameter {name} has shape {value.shape}, expected {shapes[name]}')
            loaded[name] = value
        if sum(v.size for v in loaded.values()) != self.cfg.parameter_count():
            raise FaultError('parameter count does not match the layer sizes')
        self.params = loaded
        self.clamp_log_std()

    def clamp_log_std(self):
        np.clip(self.params['log_std'], self.cfg.log_std_min, self.cfg.log_std_max, out=self.params['log_std'])

    @property
    def num_parameters(self):
        return sum(v.size for v in self.params.values())

    def copy_params(self):
        return {name: value.copy() for name, value in self.params.items()}

    def snapshot(self):
        """
        Get an immutable copy for frozen-policy evaluation.

        Returns:
            ActorCritic: A copy with read-only parameters.
        """
        copy = ActorCritic(self.cfg, params=self.params)
        for value in copy.params.values():
            value.flags.writeable = False
        copy.frozen = True
        return copy

    def check_finite(self):
        """
        Raises:
            FaultError: If a parameter holds a non-finite value.
        """
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise FaultError(f'parameter {name} is not finite')

    def _stack_forward(self, stack, x):
        count = len(self.cfg.layer_sizes(stack)) - 1
        inputs, pre = [], []
        for i in range(count):
            inputs.append(x)
            z = x @ self.params[f'{stack}.W{i}'] + self.params[f'{stack}.b{i}']
            pre.append(z)
            x = elu(z) if i < count - 1 else z
        return x, inputs, pre

    def forward(self, obs):
        """
        Evaluate both networks.

        Args:
            obs (numpy.ndarray): ``B x obs_dim`` (or a single ``obs_dim`` row).

        Returns:
            tuple: ``(mean, value, cache)``: ``B x A`` means, ``B`` values and the
            :class:`ForwardCache` for :meth:`backward`.

        Raises:
            FaultError: If a parameter is not finite.
        """
        self.check_finite()
        x = np.atleast_2d(np.asarray(obs, dtype=self.dtype))
        mean, actor_inputs, actor_pre = self._stack_forward('actor', x)
        value, critic_inputs, critic_pre = self._stack_forward('critic', x)
        cache = ForwardCache(actor_inputs, actor_pre, critic_inputs, critic_pre, x.shape[0])
        return mean, value[:, 0], cache

    def distribution(self, obs):
        mean, value, _ = self.forward(obs)
        return ActionDistribution(mean, self.params['log_std']), value

    def act(self, obs, rng):
        """
        Sample actions.

        Returns:
            tuple: ``(actions, log_probs, values)``.
        """
        dist, value = self.distribution(obs)
        actions = dist.sample(rng)
        return actions, dist.log_prob(actions), value

    def act_deterministic(self, obs):
        """
        Returns:
            numpy.ndarray: The distribution means.
        """
        mean, _, _ = self.forward(obs)
        return mean

    def _stack_backward(self, stack, inputs, pre, upstream, grads):
        count = len(pre)
        d = upstream
        for i in reversed(range(count)):
            grads[f'{stack}.W{i}'] = inputs[i].T @ d
            grads[f'{stack}.b{i}'] = d.sum(axis=0)
            if i > 0:
                d = (d @ self.params[f'{stack}.W{i}'].T) * elu_grad(pre[i - 1])

    def backward(self, cache, d_mean, d_value, d_log_std=None):
        """
        Reverse-mode gradients of a scalar loss.

        Args:
            cache (ForwardCache): Activations of the forward pass the loss was built on.
            d_mean (numpy.ndarray): ``B x A`` gradient of the loss w.r.t. the actor output.
            d_value (numpy.ndarray): ``B`` gradient of the loss w.r.t. the critic output.
            d_log_std (numpy.ndarray): ``A`` gradient w.r.t. ``log_std`` (zero if omitted).

        Returns:
            dict: Gradients keyed like :attr:`params`.

        Raises:
            FaultError: If an upstream gradient does not match the cached batch.
        """
        batch = cache.batch_size
        d_mean = np.asarray(d_mean, dtype=self.dtype)
        d_value = np.asarray(d_value, dtype=self.dtype).reshape(-1)
        if d_mean.shape != (batch, self.cfg.action_dim):
            raise FaultError(f'd_mean has shape {d_mean.shape}, expected {(batch, self.cfg.action_dim)}')
        if d_value.shape != (batch,):
            raise FaultError(f'd_value has shape {d_value.shape}, expected {(batch,)}')
        grads = {}
        self._stack_backward('actor', cache.actor_inputs, cache.actor_pre, d_mean, grads)
        self._stack_backward('critic', cache.critic_inputs, cache.critic_pre, d_value[:, np.newaxis], grads)
        if d_log_std is None:
            grads['log_std'] = np.zeros(self.cfg.action_dim, dtype=self.dtype)
        else:
            d_log_std = np.asarray(d_log_std, dtype=self.dtype)
            if d_log_std.shape != (self.cfg.action_dim,):
                raise FaultError(f'd_log_std has shape {d_log_std.shape}, expected {(self.cfg.action_dim,)}')
            grads['log_std'] = d_log_std
        return grads
