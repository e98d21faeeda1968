"""Three-vehicle PV -> CAV -> HDV car-following environment.

The preceding vehicle (PV) replays a recorded speed profile, the CAV is driven
by the agent's acceleration command and the human-driven follower (HDV) runs
the IDM with multiplicative actuation noise. Rewards are penalties only.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .calibration import MIN_ONLINE_SAMPLES, DriverPopulation, fit_online
from .vehicle import EnergyCoefficients, IdmParams, idm_acceleration, idm_equilibrium_gap, motor_power

# Keeps ln(TTC / threshold) finite when the gap is already closed.
TTC_FLOOR = 1e-3

TRACE_HEADER = (
    "t", "v_pv", "v_cav", "v_hdv", "a_cav", "a_hdv", "gap01", "gap12", "r_safe", "r_eff", "r_cav", "r_hdv",
)
STATE_WIDTH = {"proposed": 7, "reference": 4}


@dataclass(frozen=True)
class EnvConfig:
    dt: float = 0.1
    episode_steps: int = 300
    accel_bounds: tuple = (-3.0, 3.0)
    ttc_threshold: float = 4.0
    tg_threshold: float = 2.5
    power_scale: float = 20000.0
    hdv_noise_max: float = 0.05
    warmup_steps: int = 50
    collision_gap: float = 1.0
    collision_penalty: float = -10.0
    reward_mode: str = "proposed"
    refit_every: int = 10
    # False keeps the population-mean HDV predictor for the whole episode (no refits).
    online_fit: bool = True
    # Initial CAV gap is kept below this fraction of the TG threshold.
    initial_tg_fraction: float = 0.9

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not self.accel_bounds[0] < self.accel_bounds[1]:
            raise ValueError("accel_bounds must be ordered (low, high)")
        if self.ttc_threshold <= 0 or self.tg_threshold <= 0 or self.power_scale <= 0:
            raise ValueError("thresholds and power_scale must be positive")
        if self.episode_steps < 1 or self.refit_every < 1:
            raise ValueError("episode_steps and refit_every must be >= 1")
        if self.hdv_noise_max < 0:
            raise ValueError("hdv_noise_max must be non-negative")
        if self.reward_mode not in STATE_WIDTH:
            raise ValueError(f"reward_mode must be 'proposed' or 'reference', got {self.reward_mode!r}")

    @property
    def state_width(self) -> int:
        return STATE_WIDTH[self.reward_mode]


@dataclass(frozen=True)
class EnvState:
    v_pv: float
    v_cav: float
    v_hdv: float
    gap_pv_cav: float
    gap_cav_hdv: float

    @property
    def dv_pv_cav(self) -> float:
        return self.v_pv - self.v_cav

    @property
    def dv_cav_hdv(self) -> float:
        return self.v_cav - self.v_hdv

    def observation(self, mode: str) -> np.ndarray:
        if mode == "proposed":
            return np.array([
                self.v_pv, self.v_cav, self.v_hdv, self.dv_pv_cav, self.dv_cav_hdv, self.gap_pv_cav, self.gap_cav_hdv,
            ])
        if mode == "reference":
            return np.array([self.v_pv, self.v_cav, self.dv_pv_cav, self.gap_pv_cav])
        raise ValueError(f"unknown mode {mode!r}")


class RewardTerms(NamedTuple):
    safe: float
    eff: float
    cav: float
    hdv: float


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    reward_terms: RewardTerms
    done: bool
    done_reason: str | None
    action_clipped: bool = False
    cav_accel: float = 0.0
    hdv_accel: float = 0.0


# ------------------------------------------------------------------ rewards


def ttc(gap_pv_cav: float, dv_pv_cav: float) -> float:
    """Time to collision; negative values mean the gap is opening."""
    if not gap_pv_cav > 0:
        raise ValueError(f"gap must be positive, got {gap_pv_cav}")
    if dv_pv_cav == 0:
        return math.inf
    return -gap_pv_cav / dv_pv_cav


def reward_safety(ttc_value: float, cfg: EnvConfig = EnvConfig()) -> float:
    if 0.0 <= ttc_value <= cfg.ttc_threshold:
        return math.log(max(ttc_value, TTC_FLOOR) / cfg.ttc_threshold)
    return 0.0


def reward_efficiency(gap_pv_cav: float, v_cav: float, cfg: EnvConfig = EnvConfig()) -> float:
    time_gap = gap_pv_cav / v_cav if v_cav > 0 else math.inf
    return -1.0 if time_gap >= cfg.tg_threshold else 0.0


def reward_cav(power: float, cfg: EnvConfig = EnvConfig()) -> float:
    return -power / cfg.power_scale * cfg.dt


def reward_hdv(
    v_hdv: float, predicted_accel: float, cfg: EnvConfig = EnvConfig(), coeffs: EnergyCoefficients = EnergyCoefficients()
) -> float:
    """Energy penalty of the follower, evaluated at the *predicted* acceleration."""
    return reward_cav(motor_power(coeffs, v_hdv, predicted_accel), cfg)


def population_mean_accel(population: DriverPopulation, v_hdv: float, approach_rate: float, gap: float,
                          base: IdmParams = IdmParams()) -> float:
    """Mean IDM response over every (v0, T) pair of the population at the current kinematics."""
    if len(population) == 0:
        raise ValueError("population is empty")
    if not gap > 0:
        raise ValueError(f"gap must be positive, got {gap}")
    v0, T = population.v0, population.T
    s_star = base.s0 + np.maximum(0.0, v_hdv * T + v_hdv * approach_rate / (2.0 * math.sqrt(base.a * base.b)))
    acc = base.a * (1.0 - (v_hdv / v0) ** base.delta - (s_star / gap) ** 2)
    return float(np.mean(acc))


def predict_hdv_accel(
    estimate: tuple | None,
    v_hdv: float,
    approach_rate: float,
    gap: float,
    population: DriverPopulation,
    step_index: int,
    cfg: EnvConfig = EnvConfig(),
    base: IdmParams = IdmParams(),
) -> float:
    """Expected HDV acceleration.

    Before ``warmup_steps`` (or without an estimate) this is the population mean
    response; afterwards it is the IDM with the fitted ``(v0, T)`` estimate.
    """
    if step_index < cfg.warmup_steps or estimate is None:
        return population_mean_accel(population, v_hdv, approach_rate, gap, base)
    return idm_acceleration(base.with_preferences(*estimate), v_hdv, approach_rate, gap)


class HdvPredictor:
    """Accumulates the observed HDV history and refits its (v0, T) on a fixed cadence."""

    def __init__(self, population: DriverPopulation, cfg: EnvConfig, base: IdmParams = IdmParams()):
        self.population = population
        self.cfg = cfg
        self.base = base
        self.reset()

    def reset(self):
        self.hdv_speed: list = []
        self.cav_speed: list = []
        self.gap: list = []
        self.estimate: tuple | None = None

    def observe(self, state: EnvState, step_index: int):
        self.hdv_speed.append(state.v_hdv)
        self.cav_speed.append(state.v_cav)
        self.gap.append(state.gap_cav_hdv)
        cfg = self.cfg
        due = step_index >= cfg.warmup_steps and (step_index - cfg.warmup_steps) % cfg.refit_every == 0
        if cfg.online_fit and due and len(self.hdv_speed) >= MIN_ONLINE_SAMPLES:
            self.estimate = fit_online(
                self.hdv_speed, self.cav_speed, self.gap, self.population, cfg.dt, self.base
            )

    def predict(self, state: EnvState, step_index: int) -> float:
        return predict_hdv_accel(
            self.estimate, state.v_hdv, -state.dv_cav_hdv, state.gap_cav_hdv,
            self.population, step_index, self.cfg, self.base,
        )


# --------------------------------------------------------------- dynamics


def profile_speed(profile, k: int) -> float:
    """PV speed at step ``k``; the last sample is held past the end of the profile."""
    return float(profile[min(k, len(profile) - 1)])


def profile_accels(profile, steps: int, dt: float) -> np.ndarray:
    """Forward-difference PV accelerations for ``steps`` steps (zero once the profile is exhausted)."""
    return np.array([(profile_speed(profile, k + 1) - profile_speed(profile, k)) / dt for k in range(steps)])


def trapezoid_gap(gap: float, dv_now: float, dv_next: float, dt: float) -> float:
    return gap + (dv_now + dv_next) / 2.0 * dt


def initial_gap(population_mean: IdmParams, speed: float, cfg: EnvConfig) -> float:
    """Equilibrium gap of the mean driver, kept inside the time-gap band."""
    gap = idm_equilibrium_gap(population_mean, min(speed, 0.95 * population_mean.v0))
    if speed > 0:
        gap = min(gap, cfg.initial_tg_fraction * cfg.tg_threshold * speed)
    return max(gap, population_mean.s0)


class MixedTrafficEnv:
    """Episodic PV -> CAV -> HDV simulation.

    Call :meth:`reset` with a PV profile, the HDV's true IDM parameters and a
    random generator (which drives the actuation noise), then :meth:`step`
    with CAV accelerations until ``done``.
    """

    def __init__(
        self,
        cfg: EnvConfig = EnvConfig(),
        population: DriverPopulation | None = None,
        coeffs: EnergyCoefficients = EnergyCoefficients(),
        base: IdmParams = IdmParams(),
    ):
        if population is None:
            raise ValueError("a driver population is required for initial gaps and HDV prediction")
        self.cfg = cfg
        self.population = population
        self.coeffs = coeffs
        self.base = base
        self.mean_driver = population.mean_params(base)
        self.predictor = HdvPredictor(population, cfg, base)
        self.state: EnvState | None = None
        self.trace: list = []
        self.done = True

    @property
    def mode(self) -> str:
        return self.cfg.reward_mode

    def reset(self, pv_profile, driver: IdmParams, rng: np.random.Generator) -> EnvState:
        cfg = self.cfg
        if len(pv_profile) < cfg.episode_steps:
            raise ValueError(f"PV profile has {len(pv_profile)} samples, need >= {cfg.episode_steps}")
        self.pv = np.asarray(pv_profile, dtype=float)
        self.driver = driver
        self.rng = rng
        v = float(self.pv[0])
        gap = initial_gap(self.mean_driver, v, cfg)
        self.state = EnvState(v, v, v, gap, gap)
        self.step_index = 0
        self.done = False
        self.trace = []
        self.predictor.reset()
        if cfg.reward_mode == "proposed":
            self.predictor.observe(self.state, 0)
        return self.state

    def observation(self) -> np.ndarray:
        return self.state.observation(self.cfg.reward_mode)

    def step(self, cav_accel: float) -> StepOutcome:
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        cfg, s, dt = self.cfg, self.state, self.cfg.dt
        lo, hi = cfg.accel_bounds
        clipped = not lo <= cav_accel <= hi
        a_cmd = min(max(float(cav_accel), lo), hi)

        xi = self.rng.uniform(0.0, cfg.hdv_noise_max)
        a_hdv_cmd = idm_acceleration(self.driver, s.v_hdv, s.v_hdv - s.v_cav, s.gap_cav_hdv) * (1.0 + xi)

        k = self.step_index
        v_pv = profile_speed(self.pv, k + 1)
        v_cav = max(s.v_cav + a_cmd * dt, 0.0)
        v_hdv = max(s.v_hdv + a_hdv_cmd * dt, 0.0)
        # Accelerations actually realised once the speed floor is applied.
        a_cav = (v_cav - s.v_cav) / dt
        a_hdv = (v_hdv - s.v_hdv) / dt
        gap01 = trapezoid_gap(s.gap_pv_cav, s.v_pv - s.v_cav, v_pv - v_cav, dt)
        gap12 = trapezoid_gap(s.gap_cav_hdv, s.v_cav - s.v_hdv, v_cav - v_hdv, dt)
        nxt = EnvState(v_pv, v_cav, v_hdv, gap01, gap12)
        self.step_index = k + 1
        self.state = nxt

        collided = gap01 <= cfg.collision_gap or gap12 <= cfg.collision_gap
        r_safe = reward_safety(ttc(gap01, nxt.dv_pv_cav), cfg) if gap01 > 0 else reward_safety(0.0, cfg)
        r_eff = reward_efficiency(gap01, v_cav, cfg)
        r_cav = reward_cav(motor_power(self.coeffs, s.v_cav, a_cav), cfg)
        r_hdv = 0.0
        if cfg.reward_mode == "proposed" and gap12 > 0:
            self.predictor.observe(nxt, self.step_index)
            r_hdv = reward_hdv(v_hdv, self.predictor.predict(nxt, self.step_index), cfg, self.coeffs)
        terms = RewardTerms(r_safe, r_eff, r_cav, r_hdv)
        reward = r_safe + r_eff + r_cav + r_hdv

        reason = None
        if collided:
            reason = "collision"
            reward += cfg.collision_penalty
        elif self.step_index >= cfg.episode_steps:
            reason = "horizon"
        self.done = reason is not None

        self.trace.append((k * dt, s.v_pv, s.v_cav, s.v_hdv, a_cav, a_hdv, s.gap_pv_cav, s.gap_cav_hdv) + tuple(terms))
        return StepOutcome(nxt, reward, terms, self.done, reason, clipped, a_cav, a_hdv)

    def trace_array(self) -> np.ndarray:
        return np.array(self.trace, dtype=float).reshape(-1, len(TRACE_HEADER))


def write_trace(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


class FollowResult(NamedTuple):
    speed: np.ndarray
    accel: np.ndarray
    gap: np.ndarray
    collided: bool


def simulate_follow_profile(
    leader_profile, driver: IdmParams, gap0: float, cfg: EnvConfig, rng: np.random.Generator
) -> FollowResult:
    """Two-vehicle run: the HDV follows a recorded leader profile directly (Scenario B).

    Noise is drawn exactly as in :meth:`MixedTrafficEnv.step`, one draw per
    step, so a shared seed gives both scenarios the same noise sequence.
    """
    dt = cfg.dt
    v = profile_speed(leader_profile, 0)
    gap = float(gap0)
    speeds, accels, gaps = [], [], []
    collided = False
    for k in range(cfg.episode_steps):
        vl = profile_speed(leader_profile, k)
        xi = rng.uniform(0.0, cfg.hdv_noise_max)
        a_cmd = idm_acceleration(driver, v, v - vl, gap) * (1.0 + xi)
        v_next = max(v + a_cmd * dt, 0.0)
        speeds.append(v)
        accels.append((v_next - v) / dt)
        gaps.append(gap)
        gap = trapezoid_gap(gap, vl - v, profile_speed(leader_profile, k + 1) - v_next, dt)
        v = v_next
        if gap <= cfg.collision_gap:
            collided = True
            break
    return FollowResult(np.array(speeds), np.array(accels), np.array(gaps), collided)
