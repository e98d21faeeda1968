"""Deep deterministic policy gradient for the CAV acceleration policy."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .calibration import DriverPopulation, sample_driver
from .environment import STATE_WIDTH, MixedTrafficEnv
from .neural import (
    NetworkParams,
    NetworkSpec,
    OptimizerState,
    backward,
    forward,
    forward_cache,
    init_params,
    make_optimizer,
    optimizer_step,
)
from .vehicle import IdmParams

log = logging.getLogger(__name__)

ACTION_SCALE = 3.0
# Divisors applied to raw observations: speeds, relative speeds, gaps.
STATE_SCALE = {
    "proposed": (30.0, 30.0, 30.0, 10.0, 10.0, 100.0, 100.0),
    "reference": (30.0, 30.0, 10.0, 100.0),
}
TRAINING_LOG_HEADER = ("episode", "reward", "rolling_mean", "driver_v0", "driver_T", "done_reason")


@dataclass(frozen=True)
class DdpgConfig:
    gamma: float = 0.9
    batch_size: int = 1024
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    tau: float = 0.005
    exploration_sigma_initial: float = 1.0
    exploration_sigma_final: float = 0.05
    exploration_decay_fraction: float = 0.8
    episodes: int = 3000
    seed: int = 0
    buffer_capacity: int = 20000
    hidden: tuple = (200, 100, 50)
    # One critic + actor update every `update_every` environment steps once
    # the buffer holds a full batch.
    update_every: int = 1
    optimizer: str = "adam"
    rolling_window: int = 100

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.batch_size <= self.buffer_capacity:
            raise ValueError("batch_size must be positive and no larger than the buffer")
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        if self.episodes < 0 or self.update_every < 1 or self.rolling_window < 1:
            raise ValueError("episodes >= 0, update_every >= 1 and rolling_window >= 1 required")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be adam or sgd")

    @classmethod
    def desk(cls, **overrides) -> "DdpgConfig":
        """Desk-scale preset: 500 episodes with a smaller batch."""
        base = dict(episodes=500, batch_size=128)
        base.update(overrides)
        return cls(**base)

    def sigma(self, episode: int) -> float:
        """Linearly decaying exploration noise (m/s^2)."""
        horizon = self.exploration_decay_fraction * self.episodes
        if horizon <= 0 or episode >= horizon:
            return self.exploration_sigma_final
        frac = episode / horizon
        return self.exploration_sigma_initial + frac * (self.exploration_sigma_final - self.exploration_sigma_initial)


class Transition(NamedTuple):
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray
    done: bool


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.state_dim = state_dim
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, 1))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self._next = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, state, action: float, reward: float, next_state, done: bool) -> None:
        i = self._next
        self.states[i] = state
        self.actions[i, 0] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered_indices(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(batch_size, rng)
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx])


@dataclass
class Agent:
    """Actor, critic, their target copies and optimiser state."""

    mode: str
    actor_spec: NetworkSpec
    critic_spec: NetworkSpec
    actor: NetworkParams
    critic: NetworkParams
    actor_target: NetworkParams
    critic_target: NetworkParams
    actor_opt: OptimizerState
    critic_opt: OptimizerState
    state_scale: np.ndarray
    action_scale: float = ACTION_SCALE
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def state_dim(self) -> int:
        return self.actor_spec.n_in

    def normalize(self, state) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        if state.shape[-1] != self.state_dim:
            raise ValueError(f"state width {state.shape[-1]} does not match agent width {self.state_dim}")
        return state / self.state_scale

    def policy(self, state) -> float:
        """Deterministic acceleration in m/s^2 for a raw observation."""
        return float(self.action_scale * forward(self.actor, self.actor_spec, self.normalize(state))[0])

    def act(self, observation, step_index: int = 0) -> float:
        return self.policy(observation)


def make_agent(mode: str, cfg: DdpgConfig, seed: int | None = None) -> Agent:
    if mode not in STATE_WIDTH:
        raise ValueError(f"mode must be proposed or reference, got {mode!r}")
    seed = cfg.seed if seed is None else seed
    actor_seed, critic_seed = (int(s) for s in np.random.SeedSequence([seed, 1]).generate_state(2))
    width = STATE_WIDTH[mode]
    actor_spec = NetworkSpec((width, *cfg.hidden, 1), output_activation="tanh", init_seed=actor_seed)
    critic_spec = NetworkSpec((width + 1, *cfg.hidden, 1), output_activation="identity", init_seed=critic_seed)
    actor, critic = init_params(actor_spec), init_params(critic_spec)
    return Agent(
        mode=mode,
        actor_spec=actor_spec,
        critic_spec=critic_spec,
        actor=actor,
        critic=critic,
        actor_target=actor.copy(),
        critic_target=critic.copy(),
        actor_opt=make_optimizer(actor, cfg.lr_actor, cfg.optimizer),
        critic_opt=make_optimizer(critic, cfg.lr_critic, cfg.optimizer),
        state_scale=np.array(STATE_SCALE[mode]),
        seed=seed,
    )


def select_action(agent: Agent, state, sigma: float, rng: np.random.Generator | None = None) -> float:
    """Scaled tanh policy output plus Gaussian exploration, clipped to the action bounds."""
    a = agent.policy(state)
    if sigma > 0:
        a += rng.normal(0.0, sigma)
    return min(max(a, -agent.action_scale), agent.action_scale)


def _critic_input(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.concatenate([states, actions.reshape(-1, 1)], axis=1)


def update_critic(agent: Agent, batch: Batch, cfg: DdpgConfig) -> float:
    """One step on the mean squared TD error; returns the loss before the step."""
    if len(batch.rewards) == 0:
        raise ValueError("empty batch")
    next_actions = forward(agent.actor_target, agent.actor_spec, batch.next_states)
    next_q = forward(agent.critic_target, agent.critic_spec, _critic_input(batch.next_states, next_actions))[:, 0]
    y = batch.rewards + cfg.gamma * (1.0 - batch.dones) * next_q
    x = _critic_input(batch.states, batch.actions)
    q, cache = forward_cache(agent.critic, agent.critic_spec, x)
    err = q[:, 0] - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise FloatingPointError(f"critic loss is not finite (max |y| = {np.max(np.abs(y))})")
    grads, _ = backward(agent.critic, agent.critic_spec, x, (2.0 / err.size * err)[:, None], cache)
    optimizer_step(agent.critic, grads, agent.critic_opt)
    return loss


def update_actor(agent: Agent, batch: Batch, cfg: DdpgConfig) -> float:
    """One ascent step on mean Q(s, mu(s)); returns the objective before the step."""
    n = len(batch.states)
    if n == 0:
        raise ValueError("empty batch")
    mu, actor_cache = forward_cache(agent.actor, agent.actor_spec, batch.states)
    x = _critic_input(batch.states, mu)
    q, critic_cache = forward_cache(agent.critic, agent.critic_spec, x)
    objective = float(np.mean(q))
    if not np.isfinite(objective):
        raise FloatingPointError("actor objective is not finite")
    _, grad_x = backward(agent.critic, agent.critic_spec, x, np.full((n, 1), 1.0 / n), critic_cache)
    dq_da = grad_x[:, -1:]
    grads, _ = backward(agent.actor, agent.actor_spec, batch.states, -dq_da, actor_cache)
    optimizer_step(agent.actor, grads, agent.actor_opt)
    return objective


def soft_update(target: NetworkParams, online: NetworkParams, tau: float) -> NetworkParams:
    """``target <- tau * online + (1 - tau) * target`` in place."""
    t_arrays, o_arrays = target.arrays(), online.arrays()
    if [a.shape for a in t_arrays] != [a.shape for a in o_arrays]:
        raise ValueError("target and online networks differ in shape")
    for t, o in zip(t_arrays, o_arrays):
        t *= 1.0 - tau
        t += tau * o
    return target


@dataclass(frozen=True)
class TrainLogEntry:
    episode: int
    reward: float
    rolling_mean: float
    driver_v0: float
    driver_T: float
    done_reason: str


def _pick_profile(pv_source, rng: np.random.Generator, episode: int):
    if callable(pv_source):
        return pv_source(rng, episode)
    profiles = list(pv_source)
    if not profiles:
        raise ValueError("no PV profiles supplied")
    if len(profiles) == 1:
        return profiles[0]
    return profiles[int(rng.integers(0, len(profiles)))]


def train(
    env_factory: Callable[[], MixedTrafficEnv],
    population: DriverPopulation,
    pv_source: Sequence | Callable,
    cfg: DdpgConfig,
    base: IdmParams = IdmParams(),
    progress: Callable[[TrainLogEntry], None] | None = None,
) -> tuple:
    """Run the DDPG episode loop.

    Each episode samples an HDV driver from ``population`` and a PV profile
    from ``pv_source`` (a sequence, or a callable ``(rng, episode) -> profile``).
    Returns ``(agent, log)`` with one :class:`TrainLogEntry` per episode.
    """
    env = env_factory()
    mode = env.mode
    agent = make_agent(mode, cfg)
    streams = np.random.SeedSequence([cfg.seed, 2]).spawn(4)
    driver_rng, env_rng, explore_rng, replay_rng = (np.random.default_rng(s) for s in streams)
    buffer = ReplayBuffer(cfg.buffer_capacity, agent.state_dim)
    entries: list = []
    rewards: list = []
    steps = 0
    for ep in range(cfg.episodes):
        sigma = cfg.sigma(ep)
        driver = sample_driver(population, driver_rng, base)
        try:
            pv = _pick_profile(pv_source, driver_rng, ep)
            env.reset(pv, driver, env_rng)
            state = agent.normalize(env.observation())
            total = 0.0
            while True:
                action = select_action(agent, env.observation(), sigma, explore_rng)
                out = env.step(action)
                next_state = agent.normalize(out.next_state.observation(mode))
                # Running out of time is a truncation, not a terminal state.
                terminal = out.done_reason == "collision"
                buffer.add(state, action / agent.action_scale, out.reward, next_state, terminal)
                total += out.reward
                steps += 1
                if len(buffer) >= cfg.batch_size and steps % cfg.update_every == 0:
                    batch = buffer.sample(cfg.batch_size, replay_rng)
                    update_critic(agent, batch, cfg)
                    update_actor(agent, batch, cfg)
                    soft_update(agent.actor_target, agent.actor, cfg.tau)
                    soft_update(agent.critic_target, agent.critic, cfg.tau)
                if out.done:
                    break
                state = next_state
        except Exception as exc:
            raise RuntimeError(f"training failed in episode {ep}: {exc}") from exc
        rewards.append(total)
        window = rewards[-cfg.rolling_window:]
        entry = TrainLogEntry(ep, total, float(np.mean(window)), driver.v0, driver.T, out.done_reason)
        entries.append(entry)
        if progress is not None:
            progress(entry)
    agent.meta.update(episodes=cfg.episodes, buffer_size=len(buffer), env_steps=steps)
    return agent, entries


def write_training_log(entries: Sequence[TrainLogEntry], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAINING_LOG_HEADER)
        for e in entries:
            w.writerow([e.episode, repr(e.reward), repr(e.rolling_mean), repr(e.driver_v0), repr(e.driver_T), e.done_reason])


def read_training_log(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        TrainLogEntry(int(r["episode"]), float(r["reward"]), float(r["rolling_mean"]),
                      float(r["driver_v0"]), float(r["driver_T"]), r["done_reason"])
        for r in rows
    ]
