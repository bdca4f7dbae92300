"""Policy/critic network tests: shapes, init conventions, gradient oracles."""

import numpy as np
import pytest

from evtrack.config import NetConfig
from evtrack.errors import ContractViolation
from evtrack.nn import (
    ActorNet,
    CriticNet,
    Tensor,
    VectorActor,
    deterministic_action,
    sample_action,
    sample_action_graph,
)


def tiny_net_cfg(**kw):
    base = dict(
        feature_dim=16,
        encoder_channels=(4, 4, 8, 8),
        head_hidden=16,
        critic_hidden=16,
        baseline_hidden=16,
    )
    base.update(kw)
    return NetConfig(**base)


RNG = np.random.default_rng(7)


def test_actor_forward_shapes_and_init():
    cfg = tiny_net_cfg()
    net = ActorNet(cfg, frames=3, in_channels=2, action_dim=4, rng=RNG)
    obs = RNG.random((5, 3, 2, 32, 32)).astype(np.float32)
    mean, log_std = net(Tensor(obs))
    assert mean.data.shape == (5, 4)
    assert log_std.data.shape == (5, 4)
    # final layer is scaled near zero, so raw outputs start near zero
    assert np.abs(mean.data).max() < 0.1
    assert np.abs(log_std.data).max() < 0.1


def test_actor_rejects_wrong_observation_shape():
    cfg = tiny_net_cfg()
    net = ActorNet(cfg, frames=3, in_channels=2, action_dim=4, rng=RNG)
    with pytest.raises(ContractViolation):
        net(Tensor(np.zeros((5, 2, 2, 32, 32), dtype=np.float32)))


def test_actor_log_std_hard_clipped():
    cfg = tiny_net_cfg()
    net = ActorNet(cfg, frames=3, in_channels=2, action_dim=4, rng=RNG)
    # blow up the head weights so pre-clip values are far outside the band
    head = net.head.out
    head.w.data[:] = 100.0
    head.b.data[:] = 100.0
    obs = RNG.random((2, 3, 2, 32, 32)).astype(np.float32)
    _, log_std = net(Tensor(obs))
    assert np.all(log_std.data <= cfg.log_std_max)
    assert np.all(log_std.data >= cfg.log_std_min)
    head.b.data[:] = -1000.0
    _, log_std = net(Tensor(obs))
    assert np.all(log_std.data == cfg.log_std_min)


def test_actor_shares_one_encoder_across_frames():
    cfg = tiny_net_cfg()
    net = ActorNet(cfg, frames=3, in_channels=2, action_dim=4, rng=RNG)
    names = [n for n, _ in net.named_parameters()]
    enc_names = [n for n in names if n.startswith("encoder.")]
    # exactly one copy of the encoder parameters, regardless of frame count
    assert len(enc_names) == len(set(enc_names))
    net5 = ActorNet(cfg, frames=5, in_channels=2, action_dim=4, rng=RNG)
    enc_params = sum(
        p.data.size for n, p in net.named_parameters() if n.startswith("encoder.")
    )
    enc_params5 = sum(
        p.data.size for n, p in net5.named_parameters() if n.startswith("encoder.")
    )
    assert enc_params == enc_params5


def test_actor_frame_order_matters_but_batch_is_independent():
    cfg = tiny_net_cfg()
    net = ActorNet(cfg, frames=3, in_channels=2, action_dim=4, rng=RNG)
    obs = RNG.random((2, 3, 2, 32, 32)).astype(np.float32)
    mean, _ = net(Tensor(obs))
    # permuting one sample's frames changes its output but not its neighbor's
    swapped = obs.copy()
    swapped[1] = swapped[1, ::-1]
    mean2, _ = net(Tensor(swapped))
    np.testing.assert_allclose(mean.data[0], mean2.data[0], atol=1e-6)
    assert not np.allclose(mean.data[1], mean2.data[1], atol=1e-6)


def test_vector_actor_shapes():
    cfg = tiny_net_cfg()
    net = VectorActor(cfg, obs_dim=12, action_dim=4, rng=RNG)
    mean, log_std = net(Tensor(RNG.random((3, 12)).astype(np.float32)))
    assert mean.data.shape == (3, 4)
    assert log_std.data.shape == (3, 4)
    with pytest.raises(ContractViolation):
        net(Tensor(np.zeros((3, 11), dtype=np.float32)))


def test_critic_shapes_and_optional_squash():
    cfg = tiny_net_cfg()
    critic = CriticNet(cfg, state_dim=9, action_dim=4, rng=RNG)
    s = Tensor(RNG.random((6, 9)).astype(np.float32))
    a = Tensor(RNG.random((6, 4)).astype(np.float32))
    q = critic(s, a)
    assert q.data.shape == (6, 1)

    squashed = CriticNet(
        tiny_net_cfg(critic_tanh=True), state_dim=9, action_dim=4, rng=RNG
    )
    for layer in (squashed.l1, squashed.l2, squashed.out):
        layer.w.data[:] = 5.0
        layer.b.data[:] = 5.0
    q2 = squashed(s, a)
    assert np.all(np.abs(q2.data) <= 1.0)


# ---------------------------------------------------------------------------
# squashed-Gaussian sampling
# ---------------------------------------------------------------------------


def test_sample_action_matches_graph_path():
    mean = RNG.standard_normal((4, 3))
    log_std = RNG.uniform(-2.0, 0.5, (4, 3))
    eps = RNG.standard_normal((4, 3))

    class FixedRng:
        def standard_normal(self, shape, dtype=np.float64):
            assert shape == eps.shape
            return eps.astype(dtype)

    a_np, logp_np = sample_action(mean, log_std, FixedRng())
    a_t, logp_t = sample_action_graph(
        Tensor(mean, requires_grad=True), Tensor(log_std, requires_grad=True), eps
    )
    np.testing.assert_allclose(a_np, a_t.data, rtol=1e-9)
    np.testing.assert_allclose(logp_np, logp_t.data, rtol=1e-6, atol=1e-8)


def test_sample_action_log_density_against_change_of_variables():
    # one dimension, hand-computed: a = tanh(u), u ~ N(mu, sigma)
    mu, log_sigma, eps = 0.3, -0.5, 0.7
    sigma = np.exp(log_sigma)
    u = mu + sigma * eps
    a = np.tanh(u)
    log_normal = -0.5 * eps**2 - log_sigma - 0.5 * np.log(2 * np.pi)
    expected = log_normal - np.log(1.0 - a**2 + 1e-6)

    class FixedRng:
        def standard_normal(self, shape, dtype=np.float64):
            return np.full(shape, eps, dtype=dtype)

    a_np, logp = sample_action(
        np.array([[mu]]), np.array([[log_sigma]]), FixedRng()
    )
    np.testing.assert_allclose(a_np, [[a]], rtol=1e-12)
    np.testing.assert_allclose(logp, [expected], rtol=1e-9)


def test_actions_bounded_and_deterministic_path():
    mean = RNG.standard_normal((64, 4)) * 10.0
    log_std = np.full((64, 4), 1.5)
    a, logp = sample_action(mean, log_std, np.random.default_rng(3))
    # tanh saturates to exactly +/-1 for extreme inputs; log-probs must
    # survive that thanks to the squash-correction epsilon
    assert np.all(np.abs(a) <= 1.0)
    assert np.all(np.isfinite(logp))
    assert logp.shape == (64,)
    np.testing.assert_allclose(deterministic_action(mean), np.tanh(mean))


def test_sample_action_graph_gradients():
    mean = Tensor(RNG.standard_normal((3, 2)), requires_grad=True)
    log_std = Tensor(RNG.uniform(-1.0, 0.0, (3, 2)), requires_grad=True)
    eps = RNG.standard_normal((3, 2))

    def loss_fn():
        a, logp = sample_action_graph(mean, log_std, eps)
        return (a * 0.25).sum() + logp.sum()

    loss = loss_fn()
    loss.backward()
    g_mean = mean.grad.copy()
    g_log_std = log_std.grad.copy()

    h = 1e-6
    for t, g in ((mean, g_mean), (log_std, g_log_std)):
        num = np.zeros_like(t.data)
        flat, nf = t.data.ravel(), num.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(loss_fn().data)
            flat[i] = orig - h
            lo = float(loss_fn().data)
            flat[i] = orig
            nf[i] = (hi - lo) / (2 * h)
        np.testing.assert_allclose(g, num, rtol=1e-3, atol=1e-4)


def test_actor_end_to_end_gradcheck_sampled_params():
    """Finite differences through the full conv actor on a tiny input."""
    cfg = tiny_net_cfg(feature_dim=8, encoder_channels=(2, 2, 4, 4), head_hidden=8)
    net = ActorNet(
        cfg, frames=2, in_channels=2, action_dim=2, rng=np.random.default_rng(0),
        dtype=np.float64,
    )
    obs = np.random.default_rng(1).random((2, 2, 2, 16, 16))
    proj = np.random.default_rng(2).standard_normal((2, 2))

    def loss_fn():
        mean, log_std = net(Tensor(obs))
        return (mean * proj).sum() + (log_std.exp() * 0.1).sum()

    loss = loss_fn()
    loss.backward()

    rng = np.random.default_rng(5)
    params = dict(net.named_parameters())
    names = list(params)
    h = 1e-6
    checked = 0
    for name in names:
        p = params[name]
        idx = tuple(rng.integers(0, s) for s in p.data.shape)
        orig = p.data[idx]
        p.data[idx] = orig + h
        hi = float(loss_fn().data)
        p.data[idx] = orig - h
        lo = float(loss_fn().data)
        p.data[idx] = orig
        num = (hi - lo) / (2 * h)
        np.testing.assert_allclose(
            p.grad[idx], num, rtol=1e-3, atol=1e-4, err_msg=name
        )
        checked += 1
    assert checked == len(names)


def test_critic_gradcheck_sampled_params():
    cfg = tiny_net_cfg(critic_hidden=8)
    critic = CriticNet(
        cfg, state_dim=4, action_dim=2, rng=np.random.default_rng(0), dtype=np.float64
    )
    s = np.random.default_rng(1).standard_normal((3, 4))
    a = np.random.default_rng(2).standard_normal((3, 2))

    def loss_fn():
        return (critic(Tensor(s), Tensor(a)) ** 2.0).mean()

    loss = loss_fn()
    loss.backward()
    h = 1e-6
    for name, p in critic.named_parameters():
        idx = tuple(np.random.default_rng(9).integers(0, sh) for sh in p.data.shape)
        orig = p.data[idx]
        p.data[idx] = orig + h
        hi = float(loss_fn().data)
        p.data[idx] = orig - h
        lo = float(loss_fn().data)
        p.data[idx] = orig
        np.testing.assert_allclose(
            p.grad[idx], (hi - lo) / (2 * h), rtol=1e-3, atol=1e-4, err_msg=name
        )
