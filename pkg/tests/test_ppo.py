import numpy as np
import pytest

from terraincl.env import VecEnv
from terraincl.ppo import (Adam, AdvantageSet, Minibatch, PpoConfig, RolloutBuffer, collect_rollout, compute_gae,
                           minibatch_loss, normalize_advantages, partition, update)
from terraincl.state import EnvConfig


def random_window(policy, rng, steps=6, agents=8):
    buffer = RolloutBuffer(steps, agents, policy.cfg.obs_dim, policy.cfg.action_dim)
    for t in range(steps):
        obs = rng.normal(size=(agents, policy.cfg.obs_dim))
        actions, log_probs, values = policy.act(obs, rng)
        buffer.observations[t] = obs
        buffer.actions[t] = actions
        buffer.log_probs[t] = log_probs
        buffer.values[t] = values
    buffer.rewards[:] = rng.normal(size=(steps, agents))
    buffer.last_values[:] = 0.0
    buffer.step = steps
    return buffer


def test_first_minibatch_has_unit_ratio(small_policy):
    policy = small_policy(obs_dim=10, action_dim=4, hidden_sizes=(16,))
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(64, 10))
    actions, log_probs, _ = policy.act(obs, rng)
    advantages = rng.normal(size=64)
    batch = Minibatch(obs, actions, log_probs, advantages, np.zeros(64))
    terms, _ = minibatch_loss(policy, batch, PpoConfig())
    assert terms.actor == pytest.approx(-np.mean(advantages), rel=1e-12, abs=1e-15)
    assert terms.clip_fraction == 0.0
    assert terms.approx_kl == pytest.approx(0.0, abs=1e-15)


def test_zero_advantages_leave_actor_alone(small_policy):
    policy = small_policy(obs_dim=10, action_dim=4, hidden_sizes=(16,))
    rng = np.random.default_rng(1)
    obs = rng.normal(size=(32, 10))
    actions, log_probs, _ = policy.act(obs, rng)
    cfg = PpoConfig()
    _, grads = minibatch_loss(policy, Minibatch(obs, actions, log_probs, np.zeros(32), rng.normal(size=32)), cfg)
    for name, grad in grads.items():
        if name.startswith('actor.'):
            assert np.all(grad == 0.0), name
        elif name.startswith('critic.W'):
            assert np.any(grad != 0.0), name
    assert np.allclose(grads['log_std'], -cfg.entropy_coef)


def test_unclipped_gradient_is_policy_gradient(small_policy):
    policy = small_policy(obs_dim=5, action_dim=2, hidden_sizes=(8,))
    rng = np.random.default_rng(2)
    obs = rng.normal(size=(1, 5))
    actions, log_probs, _ = policy.act(obs, rng)
    cfg = PpoConfig(value_coef=0.0, entropy_coef=0.0)
    _, grads = minibatch_loss(policy, Minibatch(obs, actions, log_probs, np.array([0.7]), np.zeros(1)), cfg)
    mean, _, cache = policy.forward(obs)
    variance = np.exp(2 * policy.params['log_std'])
    expected = policy.backward(cache, -0.7 * (actions - mean) / variance, np.zeros(1))
    for name in ('actor.W0', 'actor.b1'):
        assert np.allclose(grads[name], expected[name], rtol=1e-10, atol=1e-14)


def test_clipped_samples_carry_no_gradient(small_policy):
    policy = small_policy(obs_dim=5, action_dim=2, hidden_sizes=(8,))
    rng = np.random.default_rng(3)
    obs = rng.normal(size=(4, 5))
    actions, log_probs, _ = policy.act(obs, rng)
    # ratio e^1 with positive advantage is clipped and the clipped branch is the minimum
    batch = Minibatch(obs, actions, log_probs - 1.0, np.ones(4), np.zeros(4))
    terms, grads = minibatch_loss(policy, batch, PpoConfig(value_coef=0.0))
    assert terms.clip_fraction == 1.0
    assert terms.actor == pytest.approx(-1.2)
    assert np.all(grads['actor.W0'] == 0.0)


def test_normalize_advantages():
    adv = normalize_advantages(np.random.default_rng(0).normal(3.0, 5.0, 1000))
    assert abs(adv.mean()) < 1e-9
    assert adv.std() == pytest.approx(1.0, abs=1e-6)


def test_partition_covers_every_sample():
    batches = partition(100, 4, np.random.default_rng(0))
    assert [len(b) for b in batches] == [25, 25, 25, 25]
    assert np.array_equal(np.sort(np.concatenate(batches)), np.arange(100))


def test_adam_first_step_is_learning_rate():
    params = {'w': np.array([1.0, -2.0])}
    optimizer = Adam(params, learning_rate=0.1)
    optimizer.step(params, {'w': np.array([3.0, -0.5])})
    assert params['w'] == pytest.approx([0.9, -1.9])
    state = optimizer.state_dict()
    optimizer.step(params, {'w': np.array([1.0, 1.0])})
    optimizer.load_state_dict(state)
    assert optimizer.t == 1


def run_update(policy, seed=0):
    rng = np.random.default_rng(seed)
    buffer = random_window(policy, rng)
    cfg = PpoConfig()
    advantages = compute_gae(buffer, cfg, use_c_code=False)
    optimizer = Adam(policy.params, cfg.learning_rate)
    return update(policy, buffer, advantages, cfg, optimizer, np.random.default_rng(seed + 1)), optimizer


def test_update_is_deterministic(small_policy):
    a = small_policy(obs_dim=10, action_dim=4, hidden_sizes=(16, 16))
    b = small_policy(obs_dim=10, action_dim=4, hidden_sizes=(16, 16))
    before = a.copy_params()
    stats_a, _ = run_update(a)
    stats_b, _ = run_update(b)
    assert stats_a.minibatch_steps == 20 and not stats_a.fault
    assert stats_a.loss_value == stats_b.loss_value
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    assert any(not np.array_equal(a.params[name], before[name]) for name in before)


def test_fault_restores_parameters(small_policy):
    policy = small_policy(obs_dim=10, action_dim=4, hidden_sizes=(16,))
    rng = np.random.default_rng(0)
    buffer = random_window(policy, rng)
    buffer.observations[2, 3, 0] = np.nan
    cfg = PpoConfig()
    advantages = AdvantageSet(np.ones((6, 8)) + rng.normal(size=(6, 8)), np.zeros((6, 8)))
    optimizer = Adam(policy.params, cfg.learning_rate)
    before = policy.copy_params()
    stats = update(policy, buffer, advantages, cfg, optimizer, rng)
    assert stats.fault
    assert optimizer.t == 0
    for name in before:
        assert np.array_equal(policy.params[name], before[name])


def test_collect_rollout_bookkeeping(make_bank, small_policy, pool):
    cfg = EnvConfig(backend='surrogate', surrogate_episode_steps=11)
    env = VecEnv(cfg, make_bank('flat'), 5, pool=pool)
    policy = small_policy(hidden_sizes=(16,), dtype='float32')
    buffer = RolloutBuffer(24, 5, 235, 12)
    collect_rollout(policy, env, buffer, np.random.default_rng(0))
    assert buffer.full and buffer.num_samples == 120
    assert not buffer.terminated.any()
    assert np.flatnonzero(buffer.timed_out.all(axis=1)).tolist() == [10, 21]
    assert buffer.timed_out.sum() == 10
    assert np.all(np.isfinite(buffer.timeout_values[buffer.timed_out]))
    assert np.all(np.isfinite(buffer.last_values))
    assert len(buffer.finished_episode_totals()) == 10
    assert np.all(buffer.finished_episode_totals() <= 0.0)


def test_collect_rollout_replays(make_bank, small_policy, surrogate_cfg):
    buffers = []
    for _ in range(2):
        env = VecEnv(surrogate_cfg, make_bank('tiles'), 4, seed=5)
        policy = small_policy(hidden_sizes=(16,), dtype='float32')
        buffers.append(collect_rollout(policy, env, RolloutBuffer(24, 4, 235, 12), np.random.default_rng(1)))
        env.close()
    assert np.array_equal(buffers[0].actions, buffers[1].actions)
    assert np.array_equal(buffers[0].rewards, buffers[1].rewards)
    assert np.array_equal(buffers[0].values, buffers[1].values)


@pytest.mark.slow
def test_surrogate_reward_improves(make_bank, small_policy, surrogate_cfg, pool):
    env = VecEnv(surrogate_cfg, make_bank('flat'), 64, seed=0, pool=pool)
    policy = small_policy(hidden_sizes=(64, 64), dtype='float32')
    cfg = PpoConfig(learning_rate=1e-3)
    optimizer = Adam(policy.params, cfg.learning_rate)
    rng = np.random.default_rng(0)
    buffer = RolloutBuffer(24, 64, 235, 12)
    means = []
    for _ in range(50):
        collect_rollout(policy, env, buffer, rng)
        means.append(float(np.mean(buffer.finished_episode_totals())))
        stats = update(policy, buffer, compute_gae(buffer, cfg), cfg, optimizer, rng)
        assert not stats.fault
    assert np.mean(means[-5:]) > np.mean(means[:5]) + 5.0
