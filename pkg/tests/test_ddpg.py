import numpy as np
import pytest

from cmplab.ddpg import (
    actor_loss_grad,
    actor_update,
    critic_loss_grad,
    critic_update,
    gaussian_noise_action,
    make_agent,
    soft_update,
    tabular_q_update,
    td_targets,
)
from cmplab.nn import MlpParams, finite_diff_grad, max_rel_error
from cmplab.rl import Batch


def bandit_agent(seed=0, **kw):
    return make_agent(1, 1, [-1.0], [1.0], np.random.default_rng(seed), **kw)


def bandit_batch(rng, n=64):
    s = rng.uniform(-1, 1, (n, 1))
    a = rng.uniform(-1, 1, (n, 1))
    r = -((a - 0.5 * s) ** 2)[:, 0]
    return Batch(s, a, r, s.copy(), np.ones(n, dtype=bool))


def grid():
    v = np.linspace(-1, 1, 21)
    S, A = np.meshgrid(v, v, indexing="ij")
    return S.reshape(-1, 1), A.reshape(-1, 1)


@pytest.fixture(scope="module")
def fitted_bandit_critic():
    """Critic regressed onto the single-step bandit, where Q*(s, a) = -(a - s/2)^2."""
    agent = bandit_agent(0)
    rng = np.random.default_rng(1)
    for _ in range(6000):
        critic_update(agent, bandit_batch(rng, 128))
    return agent


def test_tabular_q_learning_step():
    assert tabular_q_update(1.0, 1.0, 0.9, 2.0, 0.5) == 1.9


def test_terminal_masking():
    agent = bandit_agent()
    rng = np.random.default_rng(0)
    b = bandit_batch(rng, 8)
    np.testing.assert_array_equal(td_targets(agent, b), b.rew)
    live = b._replace(done=np.zeros(8, dtype=bool))
    expect = b.rew + 0.99 * agent.q(b.next_obs, agent.act(b.next_obs, target=True), target=True)
    np.testing.assert_allclose(td_targets(agent, live), expect, rtol=0, atol=1e-14)


def test_critic_converges_on_bandit(fitted_bandit_critic):
    S, A = grid()
    q = fitted_bandit_critic.q(S, A)
    assert np.abs(q - (-((A - 0.5 * S) ** 2))[:, 0]).max() < 0.05


def test_actor_climbs_frozen_critic(fitted_bandit_critic):
    agent = fitted_bandit_critic.copy()
    agent.actor_lr = 1e-3
    frozen = [t.copy() for t in agent.critic.tensors()]
    rng = np.random.default_rng(2)
    for _ in range(1500):
        actor_update(agent, bandit_batch(rng))
    assert all(np.array_equal(a, b) for a, b in zip(frozen, agent.critic.tensors()))
    s = np.linspace(-1, 1, 21)[:, None]
    assert np.abs(agent.act(s) - 0.5 * s).mean() < 0.05


def test_critic_update_returns_pre_step_loss_and_spares_actor():
    agent = bandit_agent()
    b = bandit_batch(np.random.default_rng(3))
    expected, _ = critic_loss_grad(agent, b)
    actor = [t.copy() for t in agent.actor.tensors()]
    assert critic_update(agent, b) == expected
    assert all(np.array_equal(a, c) for a, c in zip(actor, agent.actor.tensors()))
    assert critic_loss_grad(agent, b)[0] < expected


def test_actor_update_spares_critic():
    agent = bandit_agent()
    b = bandit_batch(np.random.default_rng(3))
    critic = [t.copy() for t in agent.critic.tensors()]
    expected = -float(agent.q(b.obs, agent.act(b.obs)).mean())
    assert actor_update(agent, b) == pytest.approx(expected, abs=1e-14)
    assert all(np.array_equal(a, c) for a, c in zip(critic, agent.critic.tensors()))


def test_zero_lr_leaves_actor():
    agent = bandit_agent(actor_lr=0.0)
    before = [t.copy() for t in agent.actor.tensors()]
    actor_update(agent, bandit_batch(np.random.default_rng(0)))
    assert all(np.array_equal(a, b) for a, b in zip(before, agent.actor.tensors()))


@pytest.mark.parametrize("seed", range(3))
def test_actor_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    agent = make_agent(3, 2, [-2.0, -1.0], [2.0, 1.0], rng, hidden=(16, 16))
    agent.actor = agent.actor.with_tensors([t + 0.3 * rng.standard_normal(t.shape) for t in agent.actor.tensors()])
    obs = rng.standard_normal((10, 3))
    _, g = actor_loss_grad(agent, obs)
    num = finite_diff_grad(lambda p: actor_loss_grad(agent, obs, p)[0], agent.actor)
    assert max_rel_error(g.tensors, num.tensors) < 1e-4


class TestSoftUpdate:
    def net(self, value):
        return MlpParams([np.full((1, 1), float(value))], [np.full(1, float(value))])

    def test_full_copy(self):
        out = soft_update(self.net(3), self.net(10), 1.0)
        assert out.weights[0][0, 0] == 10.0

    def test_no_op(self):
        out = soft_update(self.net(3), self.net(10), 0.0)
        assert out.weights[0][0, 0] == 3.0

    def test_scalar(self):
        out = soft_update(self.net(0), self.net(10), 0.1)
        assert out.weights[0][0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_contraction(self):
        rng = np.random.default_rng(0)
        agent = bandit_agent()
        online = agent.critic.with_tensors([rng.standard_normal(t.shape) for t in agent.critic.tensors()])
        target = agent.critic
        dist = lambda a, b: np.sqrt(sum(((x - y) ** 2).sum() for x, y in zip(a.tensors(), b.tensors())))
        d0 = dist(target, online)
        for k in range(1, 6):
            target = soft_update(target, online, 0.2)
            assert dist(target, online) == pytest.approx(d0 * 0.8**k, rel=1e-9)


class TestGaussianNoise:
    def test_zero_sigma_is_deterministic(self):
        agent = make_agent(3, 1, [-2.0], [2.0], np.random.default_rng(0))
        o = np.array([0.2, -0.1, 0.4])
        assert np.array_equal(gaussian_noise_action(agent, o, 0.0, np.random.default_rng(1)), agent.act(o))

    def test_empirical_std(self):
        agent = make_agent(3, 1, [-2.0], [2.0], np.random.default_rng(0))
        o = np.array([0.2, -0.1, 0.4])
        rng = np.random.default_rng(2)
        sigma, n = 0.1, 100_000
        d = np.array([gaussian_noise_action(agent, o, sigma, rng)[0] for _ in range(n)]) - agent.act(o)[0]
        # sample std of n normals has sd ~ sigma / sqrt(2n)
        assert abs(d.std() - sigma) < 3 * sigma / np.sqrt(2 * n)

    def test_within_bounds(self):
        agent = make_agent(2, 2, [-1.0, -1.0], [1.0, 1.0], np.random.default_rng(0))
        rng = np.random.default_rng(3)
        acts = np.array([gaussian_noise_action(agent, rng.standard_normal(2), 5.0, rng) for _ in range(500)])
        assert acts.min() >= -1.0 and acts.max() <= 1.0

    def test_negative_sigma(self):
        agent = bandit_agent()
        with pytest.raises(ValueError):
            gaussian_noise_action(agent, np.zeros(1), -0.1, np.random.default_rng(0))
