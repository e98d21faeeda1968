"""Glue between the configuration and the library: fixtures, training and the evaluation suite."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .calibration import DriverPopulation
from .config import RunConfig
from .data import SyntheticProfileSpec, generate_synthetic_pv
from .ddpg import train
from .environment import MixedTrafficEnv
from .evaluation import EvalSetup, compare_scenarios, compare_strategies, generalization_suite

# Sub-stream tags so fixtures drawn from one run seed stay independent.
_DRIVER_STREAM = 7


def pv_profile(cfg: RunConfig, seed: int) -> np.ndarray:
    """Synthetic PV speed profile covering one episode."""
    spec = SyntheticProfileSpec(
        duration=cfg.env.episode_steps * cfg.env.dt,
        dt=cfg.env.dt,
        speed_band=cfg.data.speed_band,
        smoothness=cfg.data.smoothness,
        seed=seed,
    )
    return generate_synthetic_pv(spec)


def training_profile(cfg: RunConfig) -> np.ndarray:
    """The PV profile used for the scenario and strategy evaluations."""
    return pv_profile(cfg, cfg.data.pv_seed)


def training_pool(cfg: RunConfig) -> list:
    """PV profiles sampled per training episode; the first is ``training_profile``."""
    extra = range(cfg.data.train_pool_seed, cfg.data.train_pool_seed + cfg.data.train_profiles - 1)
    return [training_profile(cfg), *(pv_profile(cfg, s) for s in extra)]


def heldout_profiles(cfg: RunConfig) -> list:
    return [pv_profile(cfg, s) for s in cfg.data.heldout_pv_seeds]


def fixture_drivers(population: DriverPopulation, n: int, seed: int, base) -> list:
    """``n`` distinct drivers from the population (with replacement only if it is too small)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _DRIVER_STREAM]))
    drivers = population.drivers(base)
    idx = rng.choice(len(drivers), size=n, replace=n > len(drivers))
    return [drivers[int(i)] for i in idx]


def train_agent(cfg: RunConfig, mode: str, population: DriverPopulation, progress=None):
    env_cfg = replace(cfg.env, reward_mode=mode)

    def make_env():
        return MixedTrafficEnv(env_cfg, population, cfg.energy, cfg.idm)

    return train(make_env, population, training_pool(cfg), cfg.ddpg, cfg.idm, progress)


@dataclass
class SuiteResult:
    seed: int
    scenarios: object
    strategies: object
    generalization: list

    def reports(self) -> list:
        return [self.scenarios, self.strategies, *self.generalization]


def evaluation_suite(
    cfg: RunConfig, proposed, reference, population: DriverPopulation, noise: bool | None = None, workers: int = 1
) -> list:
    """Scenario, strategy and held-out comparisons for every evaluation seed."""
    noise = cfg.evaluation.noise if noise is None else noise
    setup = EvalSetup(cfg.env, population, cfg.energy, cfg.idm, noise)
    drivers = fixture_drivers(population, cfg.evaluation.drivers, cfg.seed, cfg.idm)
    pv = training_profile(cfg)
    held = heldout_profiles(cfg)
    results = []
    for offset in cfg.evaluation.seed_offsets:
        seed = cfg.seed + offset
        scen = compare_scenarios(proposed, drivers, pv, setup, seed=seed, workers=workers)
        scen.label = f"seed_{seed}/scenario_A_vs_B"
        strat = compare_strategies(proposed, reference, drivers, pv, setup, seed=seed, workers=workers,
                                   label=f"seed_{seed}/proposed_vs_reference")
        gen = generalization_suite(proposed, reference, drivers, held, setup, seed=seed, workers=workers) \
            if len(held) >= 2 else []
        for rep, s in zip(gen, cfg.data.heldout_pv_seeds):
            rep.label = f"seed_{seed}/heldout_pv_{s}"
        results.append(SuiteResult(seed, scen, strat, gen))
    return results
