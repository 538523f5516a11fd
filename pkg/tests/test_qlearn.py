import math

import numpy as np
import pytest

from ntnsplit.cost_model import default_scenario
from ntnsplit.env import RewardConfig, SplitEnv
from ntnsplit.errors import WeightsFormatError
from ntnsplit.qlearn import (
    Batch,
    EpsilonSchedule,
    QNetwork,
    ReplayBuffer,
    RMSprop,
    TrainConfig,
    act,
    backward,
    forward,
    load_weights,
    rmsprop_update,
    save_weights,
    td_loss,
    td_targets,
    train,
)

TOY = dict(n_inputs=2, hidden=2, n_actions=2)


def toy_net():
    A = np.array
    params = [
        A([[1.0, -1.0], [0.5, 2.0]]), A([0.1, -0.2]),
        A([[1.0, 0.0], [-1.0, 1.0]]), A([0.0, 0.5]),
        A([[0.5, 0.0], [0.0, -1.0]]), A([0.0, 0.0]),
        A([[1.0, 1.0], [0.0, 1.0]]), A([-0.1, 0.0]),
        A([[-1.0, 1.0], [1.0, 1.0]]), A([0.2, 0.0]),
        A([[0.5, -0.5], [1.0, 0.0]]), A([0.0, 0.1]),
        A([[1.0, 2.0], [-1.0, 0.5]]), A([0.3, -0.3]),
    ]
    return QNetwork(params, **TOY)


def random_batch(rng, n, n_inputs=11, n_actions=6, terminal=False):
    return Batch(rng.uniform(0, 1, (n, n_inputs)), rng.integers(0, n_actions, n), rng.normal(0, 1, n),
                 rng.uniform(0, 1, (n, n_inputs)), np.full(n, terminal))


def test_topology():
    net = QNetwork.init(np.random.default_rng(0))
    assert net.n_layers == 7  # six hidden + head
    assert [p.shape for p in net.params[::2]] == [(11, 128)] + [(128, 128)] * 5 + [(128, 6)]


def test_zero_net_outputs_zero():
    q = forward(QNetwork.zeros(), np.random.default_rng(0).normal(size=11))
    np.testing.assert_array_equal(q, np.zeros(6))


def test_hand_computed_toy_forward():
    # Worked by hand: h0=[2.1,2.8], h1=[0,3.3], block 1 passes [0,3.3]
    # through, block 2 gives [5.05,3.3], head gives [2.05,11.45].
    q = forward(toy_net(), [1.0, 2.0])
    np.testing.assert_allclose(q, [2.05, 11.45], rtol=0, atol=1e-12)


def test_zeroed_residual_blocks_are_identity():
    net = QNetwork.init(np.random.default_rng(3))
    for k in range(4, 12):
        net.params[k][...] = 0.0
    x = np.random.default_rng(4).uniform(size=(5, 11))
    relu = lambda z: np.maximum(z, 0)
    h = relu(relu(x @ net.params[0] + net.params[1]) @ net.params[2] + net.params[3])
    np.testing.assert_allclose(net.forward(x), h @ net.params[12] + net.params[13], rtol=1e-13)


def test_forward_pure_and_checked():
    net = QNetwork.init(np.random.default_rng(0))
    x = np.linspace(0, 1, 11)
    np.testing.assert_array_equal(net.forward(x), net.forward(x))
    with pytest.raises(ValueError):
        net.forward(np.zeros(10))


def const_q_net(values):
    net = QNetwork.zeros()
    net.params[-1][...] = values
    return net


def test_td_targets():
    rng = np.random.default_rng(0)
    net = const_q_net([1.0, 3.0, 2.0, 0.0, -1.0, 0.5])
    b = random_batch(rng, 4)
    np.testing.assert_array_equal(td_targets(b, net, 0.0), b.rewards)
    b = Batch(b.states[:2], b.actions[:2], np.array([0.5, -1.0]), b.next_states[:2], np.array([False, True]))
    np.testing.assert_allclose(td_targets(b, net, 0.9), [0.5 + 0.9 * 3.0, -1.0])


def finite_difference_errors(net, batch, targets, rng, per_array=None, h=1e-5):
    grads = backward(net, batch, targets)
    worst = 0.0
    for p, g in zip(net.params, grads):
        flat = range(p.size) if per_array is None else rng.choice(p.size, min(per_array, p.size), replace=False)
        for j in flat:
            i = np.unravel_index(j, p.shape)
            old = p[i]
            p[i] = old + h
            up = td_loss(net, batch, targets)
            p[i] = old - h
            down = td_loss(net, batch, targets)
            p[i] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-6))
    return worst


def random_net(rng, hidden):
    # Random biases keep pre-activations off the ReLU kink at exactly zero.
    net = QNetwork.init(rng, hidden=hidden)
    for b in net.params[1::2]:
        b[...] = rng.normal(0, 0.1, b.shape)
    return net


def test_gradient_matches_finite_differences_small_net():
    rng = np.random.default_rng(10)
    net = random_net(rng, 6)
    b = random_batch(rng, 12)
    assert finite_difference_errors(net, b, td_targets(b, net, 0.9), rng) < 1e-4


def test_perfect_fit_has_zero_gradient():
    rng = np.random.default_rng(0)
    net = QNetwork.init(rng, hidden=16)
    b = random_batch(rng, 8)
    q = net.forward(b.states)[np.arange(8), b.actions]
    assert all(not g.any() for g in backward(net, b, q))


def test_gradient_linear_in_residual():
    rng = np.random.default_rng(1)
    net = QNetwork.init(rng, hidden=16)
    b = random_batch(rng, 8)
    y = rng.normal(size=8)
    q = net.forward(b.states)[np.arange(8), b.actions]
    g1 = backward(net, b, y)
    g2 = backward(net, b, q - 2 * (q - y))
    for a, c in zip(g1, g2):
        np.testing.assert_allclose(c, 2 * a, rtol=1e-12, atol=1e-15)


def scalar_net():
    return QNetwork.zeros(n_inputs=1, hidden=1, n_actions=1)


def test_rmsprop_scalar_step():
    net = scalar_net()
    grads = [np.ones_like(p) for p in net.params]
    opt = RMSprop(net, lr=0.1, rho=0.9, eps=0.0)
    rmsprop_update(net, grads, opt)
    assert opt.v[0][0, 0] == pytest.approx(0.1)
    assert net.params[0][0, 0] == pytest.approx(-0.1 / math.sqrt(0.1))
    assert net.params[0][0, 0] == pytest.approx(-0.31623, abs=1e-5)


def test_rmsprop_zero_gradient_decays_state():
    net = QNetwork.init(np.random.default_rng(0), hidden=4)
    before = [p.copy() for p in net.params]
    opt = RMSprop(net)
    for v in opt.v:
        v[...] = 1.0
    opt.update(net, [np.zeros_like(p) for p in net.params])
    for p, b, v in zip(net.params, before, opt.v):
        np.testing.assert_array_equal(p, b)
        np.testing.assert_allclose(v, 0.9)


def test_rmsprop_constant_gradient_step_tends_to_lr():
    net = scalar_net()
    opt = RMSprop(net, lr=0.01, rho=0.9, eps=0.0)
    g = [np.full_like(p, 3.0) for p in net.params]
    prev = 0.0
    for _ in range(200):
        opt.update(net, g)
        step, prev = prev - net.params[0][0, 0], net.params[0][0, 0]
    assert step == pytest.approx(0.01, rel=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("lr", [1e-3, 3e-4, 1e-4])
def test_frozen_batch_loss_decreases_monotonically(seed, lr):
    rng = np.random.default_rng(seed)
    b = random_batch(rng, 10, terminal=True)
    y = rng.normal(3, 1, 10)
    net = QNetwork.init(np.random.default_rng(seed + 10), hidden=8)
    opt = RMSprop(net, lr=lr)
    losses = [td_loss(net, b, y)]
    for _ in range(100):
        opt.update(net, backward(net, b, y))
        losses.append(td_loss(net, b, y))
    assert np.all(np.diff(losses) < 0)


def test_act_greedy_and_ties():
    rng = np.random.default_rng(0)
    assert act(const_q_net([0, 1, 5, 2, 0, 0]), np.zeros(11), 0.0, rng) == 2
    assert act(const_q_net([1, 3, 0, 3, 3, 0]), np.zeros(11), 0.0, rng) == 1
    mask = np.array([True, False, True, True, True, True])
    assert act(const_q_net([1, 3, 0, 2, 3, 0]), np.zeros(11), 0.0, rng, mask) == 4


def test_act_uniform_exploration():
    rng = np.random.default_rng(123)
    net = const_q_net([0, 0, 9, 0, 0, 0])
    n = 100_000
    counts = np.bincount([act(net, np.zeros(11), 1.0, rng) for _ in range(n)], minlength=6)
    sigma = math.sqrt(n * (1 / 6) * (5 / 6))
    assert np.all(np.abs(counts - n / 6) < 3 * sigma)


def test_epsilon_schedule():
    e = EpsilonSchedule()
    assert e(0) == 0.5
    assert e(1) == pytest.approx(0.49750, abs=5e-6)
    first = next(n for n in range(5000) if 0.5 * 0.995 ** n <= 0.0005)
    assert first == 1379
    assert e(1378) > 0.0005 and e(1379) == 0.0005 and e(10**6) == 0.0005
    values = [e(n) for n in range(2000)]
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_replay_fifo():
    buf = ReplayBuffer(200)
    for i in range(1, 301):
        buf.push(i)
        assert len(buf) <= 200
    assert list(buf) == list(range(101, 301))
    sample = buf.sample(100, np.random.default_rng(0))
    assert len(set(sample)) == 100 and set(sample) <= set(range(101, 301))


def test_weights_roundtrip(tmp_path):
    net = QNetwork.init(np.random.default_rng(9))
    path = tmp_path / "w.bin"
    save_weights(net, path)
    loaded = load_weights(path, expect_topology=(11, 128, 6, 2))
    for a, b in zip(net.params, loaded.params):
        assert a.tobytes() == b.tobytes()
    x = np.random.default_rng(1).uniform(size=(4, 11))
    assert net.forward(x).tobytes() == loaded.forward(x).tobytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_weights_rejects_corruption(tmp_path):
    path = tmp_path / "w.bin"
    save_weights(QNetwork.init(np.random.default_rng(0), hidden=4), path)
    data = path.read_bytes()
    bad = tmp_path / "bad.bin"
    for blob in (data[:-100], data[:20], b"hello", data[:8] + b"\x02\x00\x00\x00" + data[12:]):
        bad.write_bytes(blob)
        with pytest.raises(WeightsFormatError):
            load_weights(bad)
    bad.write_bytes(data[:8] + b"\x07\x00\x00\x00" + data[12:])
    with pytest.raises(WeightsFormatError, match="version 7"):
        load_weights(bad)
    with pytest.raises(WeightsFormatError, match="topology"):
        load_weights(path, expect_topology=(11, 128, 6, 2))
    with pytest.raises(WeightsFormatError):
        load_weights(tmp_path / "missing.bin")


def small_train(seed=0, episodes=3, on_step=None):
    env = SplitEnv(default_scenario(), reward=RewardConfig())
    return train(env, TrainConfig(episodes=episodes, seed=seed, hidden=32), on_step=on_step)


def test_train_metrics_and_update_start():
    seen = []
    net, metrics = small_train(on_step=seen.append)
    assert len(metrics) == 3 and len(seen) == 3 * 96
    assert metrics[0].updates == 0  # 96 transitions < minibatch of 100
    assert metrics[1].updates == 2 * 96 - 99
    assert [r.epsilon for r in seen[:2]] == [0.5, 0.5 * 0.995]


def test_train_bit_identical():
    net1, m1 = small_train(seed=4)
    net2, m2 = small_train(seed=4)
    assert m1 == m2
    assert all(a.tobytes() == b.tobytes() for a, b in zip(net1.params, net2.params))
    _, m3 = small_train(seed=5)
    assert m3 != m1


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(minibatch_size=300)
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.0)
