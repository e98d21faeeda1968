import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alcc.data import SyntheticProfileSpec, generate_synthetic_pv, synthetic_population
from alcc.ddpg import (
    Agent,
    Batch,
    DdpgConfig,
    ReplayBuffer,
    make_agent,
    read_training_log,
    select_action,
    soft_update,
    train,
    update_actor,
    update_critic,
    write_training_log,
)
from alcc.environment import EnvConfig, MixedTrafficEnv
from alcc.neural import NetworkParams, NetworkSpec, forward, make_optimizer


def tiny_agent(ws=0.5, wa=-0.7, b0=0.2, v=1.5, b1=0.1, k=0.8, c=0.1, u=-1.2, d=0.05):
    """One-unit actor (1 -> 1 -> 1, tanh) and critic ((s, a) -> 1 -> 1) with chosen weights."""
    actor_spec = NetworkSpec((1, 1, 1), output_activation="tanh")
    critic_spec = NetworkSpec((2, 1, 1))
    actor = NetworkParams([np.array([[k]]), np.array([[u]])], [np.array([c]), np.array([d])])
    critic = NetworkParams([np.array([[ws], [wa]]), np.array([[v]])], [np.array([b0]), np.array([b1])])
    return Agent(
        mode="reference",
        actor_spec=actor_spec,
        critic_spec=critic_spec,
        actor=actor,
        critic=critic,
        actor_target=actor.copy(),
        critic_target=critic.copy(),
        actor_opt=make_optimizer(actor, 1e-3),
        critic_opt=make_optimizer(critic, 1e-3),
        state_scale=np.ones(1),
    )


def relu(x):
    return max(x, 0.0)


def test_desk_preset_and_defaults():
    full = DdpgConfig()
    assert (full.gamma, full.batch_size, full.lr_actor, full.tau, full.buffer_capacity) == (0.9, 1024, 1e-3, 0.005, 20000)
    desk = DdpgConfig.desk()
    assert (desk.episodes, desk.batch_size, desk.update_every) == (500, 128, 1)
    assert DdpgConfig.desk(episodes=3).episodes == 3


def test_config_validation():
    with pytest.raises(ValueError):
        DdpgConfig(gamma=0.0)
    with pytest.raises(ValueError):
        DdpgConfig(batch_size=30000)
    with pytest.raises(ValueError):
        DdpgConfig(optimizer="rmsprop")


def test_exploration_schedule():
    cfg = DdpgConfig(episodes=100)
    assert cfg.sigma(0) == 1.0
    assert cfg.sigma(40) == pytest.approx(1.0 + 0.5 * (0.05 - 1.0))
    assert cfg.sigma(80) == 0.05 == cfg.sigma(99)


def test_make_agent_shapes():
    agent = make_agent("proposed", DdpgConfig())
    assert agent.actor_spec.layer_widths == (7, 200, 100, 50, 1)
    assert agent.critic_spec.layer_widths == (8, 200, 100, 50, 1)
    assert make_agent("reference", DdpgConfig()).state_dim == 4
    with pytest.raises(ValueError):
        make_agent("other", DdpgConfig())


def test_zero_actor_without_noise_gives_zero_action():
    agent = make_agent("reference", DdpgConfig())
    agent.actor = agent.actor.zeros_like()
    assert select_action(agent, np.array([10.0, 10.0, 0.0, 20.0]), 0.0) == 0.0


@settings(max_examples=50)
@given(
    obs=st.lists(st.floats(-50.0, 200.0), min_size=4, max_size=4),
    sigma=st.sampled_from([0.0, 1.0, 10.0]),
    seed=st.integers(0, 2**31),
)
def test_actions_always_within_bounds(obs, sigma, seed):
    agent = make_agent("reference", DdpgConfig(), seed=seed % 7)
    a = select_action(agent, np.array(obs), sigma, np.random.default_rng(seed))
    assert -3.0 <= a <= 3.0


def test_normalisation_width_checked():
    agent = make_agent("proposed", DdpgConfig())
    with pytest.raises(ValueError):
        agent.policy(np.ones(4))


def test_replay_buffer_is_fifo():
    buf = ReplayBuffer(3, 2)
    for i in range(5):
        buf.add(np.full(2, i), float(i), -float(i), np.full(2, i + 1), i == 4)
    assert len(buf) == 3
    assert list(buf.actions[buf.ordered_indices(), 0]) == [2.0, 3.0, 4.0]
    batch = buf.sample(50, np.random.default_rng(0))
    assert set(batch.actions[:, 0]) <= {2.0, 3.0, 4.0}
    with pytest.raises(ValueError):
        ReplayBuffer(3, 2).sample(1, np.random.default_rng(0))


def test_replay_sampling_is_uniform():
    buf = ReplayBuffer(20, 1)
    for i in range(20):
        buf.add(np.zeros(1), float(i), 0.0, np.zeros(1), False)
    rng = np.random.default_rng(3)
    counts = np.zeros(20)
    for _ in range(500):
        counts += np.bincount(buf.sample(40, rng).actions[:, 0].astype(int), minlength=20)
    expected = counts.sum() / 20
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 43.8  # 99.9% quantile of chi-square with 19 degrees of freedom


def test_terminal_zero_critic_loss_is_zero():
    agent = tiny_agent()
    agent.critic = agent.critic.zeros_like()
    batch = Batch(np.ones((4, 1)), np.zeros((4, 1)), np.zeros(4), np.ones((4, 1)), np.ones(4))
    assert update_critic(agent, batch, DdpgConfig()) == 0.0


def test_single_transition_loss_by_hand():
    agent = tiny_agent()
    s, a, r, s2 = 0.6, 0.3, -0.25, 0.9
    cfg = DdpgConfig(gamma=0.9)
    mu2 = math.tanh(-1.2 * relu(0.8 * s2 + 0.1) + 0.05)
    q_next = 1.5 * relu(0.5 * s2 - 0.7 * mu2 + 0.2) + 0.1
    y = r + 0.9 * q_next
    q = 1.5 * relu(0.5 * s - 0.7 * a + 0.2) + 0.1
    batch = Batch(np.array([[s]]), np.array([[a]]), np.array([r]), np.array([[s2]]), np.array([0.0]))
    assert update_critic(agent, batch, cfg) == pytest.approx((y - q) ** 2, rel=1e-12)
    # The same transition flagged terminal drops the bootstrap term.
    agent = tiny_agent()
    batch = batch._replace(dones=np.array([1.0]))
    assert update_critic(agent, batch, cfg) == pytest.approx((r - q) ** 2, rel=1e-12)


def test_critic_step_reduces_loss_on_fixed_batch():
    agent = make_agent("reference", DdpgConfig(hidden=(16, 8)), seed=1)
    rng = np.random.default_rng(0)
    batch = Batch(rng.normal(size=(64, 4)), rng.uniform(-1, 1, (64, 1)), rng.normal(size=64),
                  rng.normal(size=(64, 4)), np.zeros(64))
    cfg = DdpgConfig(hidden=(16, 8))
    losses = [update_critic(agent, batch, cfg) for _ in range(100)]
    assert losses[-1] < losses[0]


def test_actor_ignores_critic_without_action_dependence():
    agent = tiny_agent(wa=0.0)
    before = agent.actor.copy()
    batch = Batch(np.array([[0.4], [1.1]]), np.zeros((2, 1)), np.zeros(2), np.zeros((2, 1)), np.zeros(2))
    update_actor(agent, batch, DdpgConfig())
    assert all(np.array_equal(x, y) for x, y in zip(agent.actor.arrays(), before.arrays()))


def test_actor_step_moves_towards_higher_q():
    # Critic increasing in a on the whole batch: every state's action should grow.
    agent = tiny_agent(wa=1.0, b0=5.0)
    states = np.array([[0.4], [-0.3], [1.2], [2.0]])
    before = forward(agent.actor, agent.actor_spec, states)[:, 0]
    n = len(states)
    update_actor(agent, Batch(states, np.zeros((n, 1)), np.zeros(n), states, np.zeros(n)), DdpgConfig())
    assert np.all(forward(agent.actor, agent.actor_spec, states)[:, 0] > before)


def test_mean_q_never_decreases_under_small_actor_steps():
    agent = make_agent("reference", DdpgConfig(hidden=(16, 8)), seed=5)
    agent.actor_opt = make_optimizer(agent.actor, 1e-4)
    states = np.random.default_rng(1).normal(size=(64, 4))
    batch = Batch(states, np.zeros((64, 1)), np.zeros(64), states, np.zeros(64))
    # update_actor returns mean Q on the batch before its step.
    values = [update_actor(agent, batch, DdpgConfig(hidden=(16, 8))) for _ in range(51)]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] > values[0]


def test_soft_update_arithmetic():
    zero = NetworkParams([np.zeros((1, 1)), np.zeros((1, 1))], [np.zeros(1), np.zeros(1)])
    one = NetworkParams([np.ones((1, 1)), np.ones((1, 1))], [np.ones(1), np.ones(1)])
    t = zero.copy()
    soft_update(t, one, 0.5)
    soft_update(t, one, 0.5)
    assert all(np.all(a == 0.75) for a in t.arrays())
    t = zero.copy()
    soft_update(t, one, 1.0)
    assert all(np.all(a == 1.0) for a in t.arrays())
    t = zero.copy()
    soft_update(t, one, 0.0)
    assert all(np.all(a == 0.0) for a in t.arrays())
    with pytest.raises(ValueError):
        soft_update(zero.copy(), NetworkParams([np.ones((2, 1))], [np.ones(1)]), 0.5)


@settings(max_examples=30)
@given(
    taus=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8),
    seed=st.integers(0, 1000),
)
def test_target_stays_inside_envelope_of_online_values(taus, seed):
    rng = np.random.default_rng(seed)
    target = NetworkParams([rng.normal(size=(2, 3))], [rng.normal(size=3)])
    lo = [a.copy() for a in target.arrays()]
    hi = [a.copy() for a in target.arrays()]
    for tau in taus:
        online = NetworkParams([rng.normal(size=(2, 3))], [rng.normal(size=3)])
        for low, high, o in zip(lo, hi, online.arrays()):
            np.minimum(low, o, out=low)
            np.maximum(high, o, out=high)
        soft_update(target, online, tau)
        for t, low, high in zip(target.arrays(), lo, hi):
            assert np.all(t >= low - 1e-12) and np.all(t <= high + 1e-12)


def _short_training(mode="reference", seed=0, episodes=3):
    pop = synthetic_population(n=50)
    pv = generate_synthetic_pv(SyntheticProfileSpec(seed=100))
    cfg = DdpgConfig(episodes=episodes, batch_size=32, hidden=(16, 8), seed=seed, update_every=4)
    env_cfg = replace(EnvConfig(), reward_mode=mode, online_fit=False)
    return train(lambda: MixedTrafficEnv(env_cfg, pop), pop, [pv], cfg)


def test_training_is_deterministic_under_seed(tmp_path):
    a1, log1 = _short_training(seed=4)
    a2, log2 = _short_training(seed=4)
    assert log1 == log2
    write_training_log(log1, tmp_path / "a.csv")
    write_training_log(log2, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert read_training_log(tmp_path / "a.csv") == log1
    assert all(np.array_equal(x, y) for x, y in zip(a1.actor.arrays(), a2.actor.arrays()))


def test_training_log_has_one_row_per_episode():
    agent, log = _short_training("proposed", episodes=2)
    # Penalty-only reward: non-positive apart from the collision penalty.
    assert all(e.reward <= 0.0 for e in log)
    assert [e.episode for e in log] == [0, 1]
    assert all(e.done_reason in ("horizon", "collision") for e in log)
    assert agent.mode == "proposed" and agent.meta["episodes"] == 2
    assert log[1].rolling_mean == pytest.approx((log[0].reward + log[1].reward) / 2)


def test_training_errors_name_the_episode():
    pop = synthetic_population(n=20)
    with pytest.raises(RuntimeError, match="episode 0"):
        train(lambda: MixedTrafficEnv(EnvConfig(), pop), pop, [np.full(10, 5.0)], DdpgConfig(episodes=1))
