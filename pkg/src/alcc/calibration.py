"""IDM calibration: follower replay, RMSPE fitness, GA search, driver population, online refit."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .vehicle import IdmParams

V0_BOUNDS = (1.0, 40.0)
T_BOUNDS = (0.1, 5.0)

# Fitness assigned to a candidate whose replay collides with the leader.
COLLISION_RMSPE = 10.0

DEFAULT_BOUNDS = {
    "v0": V0_BOUNDS,
    "T": T_BOUNDS,
    "a": (0.3, 4.0),
    "s0": (0.5, 6.0),
    "b": (0.5, 5.0),
}
MODE_GENES = {
    "local": ("v0", "T"),
    "global": ("a", "v0", "s0", "T", "b"),
}


@dataclass(frozen=True)
class CarFollowingEpisode:
    """One leader/follower record sampled at a fixed rate."""

    leader_speed: np.ndarray
    follower_speed: np.ndarray
    initial_gap: float
    dt: float = 0.1
    episode_id: str = ""

    def __post_init__(self):
        leader = np.asarray(self.leader_speed, dtype=float)
        follower = np.asarray(self.follower_speed, dtype=float)
        object.__setattr__(self, "leader_speed", leader)
        object.__setattr__(self, "follower_speed", follower)
        if leader.ndim != 1 or leader.shape != follower.shape:
            raise ValueError(f"leader and follower series must be equal-length 1-D arrays, got {leader.shape} and {follower.shape}")
        if leader.size < 50:
            raise ValueError(f"episode needs at least 50 samples, got {leader.size}")
        if not (np.all(np.isfinite(leader)) and np.all(np.isfinite(follower))):
            raise ValueError("speed series contain non-finite values")
        if np.any(leader < 0) or np.any(follower < 0):
            raise ValueError("speeds must be non-negative")
        if not self.initial_gap > 0:
            raise ValueError(f"initial_gap must be positive, got {self.initial_gap}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def __len__(self):
        return self.leader_speed.size


class FollowerSim(NamedTuple):
    speed: np.ndarray
    gap: np.ndarray
    collided: bool


@njit(cache=True)
def _follow_kernel(v0, T, a, b, s0, delta, leader, v, gap, dt, speeds, gaps):
    """Euler replay of an IDM follower into ``speeds``/``gaps``; returns True on collision.

    After a collision the remaining samples hold the last speed and a zero gap.
    """
    two_sqrt_ab = 2.0 * math.sqrt(a * b)
    n = leader.shape[0]
    speeds[0] = v
    gaps[0] = gap
    for k in range(n - 1):
        dv_now = leader[k] - v
        s_star = s0 + max(0.0, v * T + v * -dv_now / two_sqrt_ab)
        acc = a * (1.0 - (v / v0) ** delta - (s_star / gap) ** 2)
        v_next = v + acc * dt
        if v_next < 0.0:
            v_next = 0.0
        dv_next = leader[k + 1] - v_next
        gap = gap + (dv_now + dv_next) / 2.0 * dt
        v = v_next
        speeds[k + 1] = v
        gaps[k + 1] = gap
        if gap <= 0.0:
            for j in range(k + 1, n):
                speeds[j] = v
                gaps[j] = 0.0
            return True
    return False


@njit(cache=True)
def _batch_fitness_kernel(params, leader, observed, v, gap, dt, collision_value):
    """RMSPE for each row (v0, T, a, b, s0, delta) of ``params``."""
    n = leader.shape[0]
    speeds = np.empty(n)
    gaps = np.empty(n)
    denom = 0.0
    for k in range(n):
        denom += observed[k] * observed[k]
    out = np.empty(params.shape[0])
    for i in range(params.shape[0]):
        p = params[i]
        if _follow_kernel(p[0], p[1], p[2], p[3], p[4], p[5], leader, v, gap, dt, speeds, gaps):
            out[i] = collision_value
            continue
        num = 0.0
        for k in range(n):
            d = speeds[k] - observed[k]
            num += d * d
        out[i] = math.sqrt(num / denom)
    return out


def _follow(p: IdmParams, leader, v: float, gap: float, dt: float):
    leader = np.ascontiguousarray(leader, dtype=float)
    speeds = np.empty(leader.size)
    gaps = np.empty(leader.size)
    collided = _follow_kernel(p.v0, p.T, p.a, p.b, p.s0, p.delta, leader, float(v), float(gap), float(dt), speeds, gaps)
    return speeds, gaps, bool(collided)


def simulate_idm_follower(p: IdmParams, episode: CarFollowingEpisode) -> FollowerSim:
    """Replay the follower of ``episode`` with IDM parameters ``p`` against the recorded leader.

    Speed is Euler-integrated at the episode step and the gap by the trapezoid
    rule on the relative speed.
    """
    speeds, gaps, collided = _follow(
        p, episode.leader_speed, float(episode.follower_speed[0]), float(episode.initial_gap), episode.dt
    )
    return FollowerSim(speeds, gaps, collided)


def batch_fitness(params: np.ndarray, episode: CarFollowingEpisode) -> np.ndarray:
    """RMSPE of many candidates; ``params`` rows are (v0, T, a, b, s0, delta)."""
    return _batch_fitness_kernel(
        np.ascontiguousarray(params, dtype=float), episode.leader_speed, episode.follower_speed,
        float(episode.follower_speed[0]), float(episode.initial_gap), float(episode.dt), COLLISION_RMSPE,
    )


def rmspe(simulated, observed) -> float:
    """Root mean square percentage error of a simulated speed series."""
    sim = np.asarray(simulated, dtype=float)
    obs = np.asarray(observed, dtype=float)
    if sim.shape != obs.shape:
        raise ValueError(f"series lengths differ: {sim.shape} vs {obs.shape}")
    denom = float(np.sum(obs * obs))
    if denom == 0.0:
        raise ValueError("observed series is identically zero; RMSPE undefined")
    return math.sqrt(float(np.sum((sim - obs) ** 2)) / denom)


def episode_fitness(p: IdmParams, episode: CarFollowingEpisode) -> float:
    sim = simulate_idm_follower(p, episode)
    if sim.collided:
        return COLLISION_RMSPE
    return rmspe(sim.speed, episode.follower_speed)


# --------------------------------------------------------------------------- GA


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 50
    generations: int = 100
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    mutation_sigma: float = 0.1
    seed: int = 0
    mode: str = "local"
    elitism: int = 1
    # Early stop once the best fitness improves by less than stall_tol over
    # stall_generations consecutive generations; 0 disables.
    stall_generations: int = 20
    stall_tol: float = 1e-7
    # population_size is quoted for the two-gene problem and grows in
    # proportion to the number of genes when this is set.
    scale_population: bool = True
    fixed: IdmParams = field(default_factory=IdmParams)
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))

    def __post_init__(self):
        if self.population_size < 4:
            raise ValueError("population_size must be >= 4")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.mutation_sigma < 0:
            raise ValueError("mutation_sigma must be non-negative")
        if self.mode not in MODE_GENES:
            raise ValueError(f"mode must be one of {sorted(MODE_GENES)}, got {self.mode!r}")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must be smaller than the population")
        for gene in MODE_GENES[self.mode]:
            if gene not in self.bounds:
                raise ValueError(f"missing bounds for gene {gene}")
            lo, hi = self.bounds[gene]
            if not (0 < lo < hi and math.isfinite(hi)):
                raise ValueError(f"infeasible bounds for {gene}: ({lo}, {hi})")

    @property
    def genes(self) -> tuple:
        return MODE_GENES[self.mode]

    @property
    def effective_population(self) -> int:
        if not self.scale_population:
            return self.population_size
        return int(math.ceil(self.population_size * len(self.genes) / 2))


@dataclass
class GaResult:
    params: IdmParams
    fitness: float
    history: list
    generations_run: int
    elapsed: float


PARAM_ORDER = ("v0", "T", "a", "b", "s0", "delta")


def _ga_fitness(cfg: GaConfig, pop: np.ndarray, episode: CarFollowingEpisode) -> np.ndarray:
    params = np.tile([getattr(cfg.fixed, name) for name in PARAM_ORDER], (pop.shape[0], 1))
    for col, name in enumerate(cfg.genes):
        params[:, PARAM_ORDER.index(name)] = pop[:, col]
    return batch_fitness(params, episode)


def _tournament(fitness: np.ndarray, rng: np.random.Generator, k: int) -> np.ndarray:
    contenders = rng.integers(0, fitness.size, size=(k, 2))
    return np.where(fitness[contenders[:, 0]] <= fitness[contenders[:, 1]], contenders[:, 0], contenders[:, 1])


def calibrate_episode(episode: CarFollowingEpisode, cfg: GaConfig, seed=None) -> GaResult:
    """Run the GA on one episode.

    Tournament-2 selection, arithmetic crossover, per-gene Gaussian mutation and
    elitism, so the best fitness per generation never increases.
    """
    if float(np.sum(episode.follower_speed**2)) == 0.0:
        raise ValueError(f"episode {episode.episode_id!r} has an all-zero follower speed")
    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    lo = np.array([cfg.bounds[g][0] for g in cfg.genes])
    hi = np.array([cfg.bounds[g][1] for g in cfg.genes])
    span = hi - lo
    n, d = cfg.effective_population, len(cfg.genes)

    pop = lo + rng.random((n, d)) * span
    fit = _ga_fitness(cfg, pop, episode)
    history = [float(fit.min())]
    gen = 0
    for gen in range(1, cfg.generations + 1):
        order = np.argsort(fit, kind="stable")
        elite = pop[order[: cfg.elitism]].copy()
        elite_fit = fit[order[: cfg.elitism]].copy()
        n_children = n - cfg.elitism

        p1 = pop[_tournament(fit, rng, n_children)]
        p2 = pop[_tournament(fit, rng, n_children)]
        lam = rng.random((n_children, 1))
        cross = rng.random(n_children) < cfg.crossover_rate
        children = np.where(cross[:, None], lam * p1 + (1.0 - lam) * p2, p1)
        mutate = rng.random((n_children, d)) < cfg.mutation_rate
        noise = rng.normal(0.0, 1.0, (n_children, d)) * (cfg.mutation_sigma * span)
        children = np.clip(children + np.where(mutate, noise, 0.0), lo, hi)

        child_fit = _ga_fitness(cfg, children, episode)
        pop = np.vstack([elite, children])
        # Elite fitness is carried over rather than recomputed so the best never regresses.
        fit = np.concatenate([elite_fit, child_fit])
        history.append(float(fit.min()))

        w = cfg.stall_generations
        if w and len(history) > w and history[-w - 1] - history[-1] < cfg.stall_tol:
            break

    best = pop[int(np.argmin(fit))]
    params = replace(cfg.fixed, **{g: float(x) for g, x in zip(cfg.genes, best)})
    # Reported fitness is the scalar replay, so re-simulating reproduces it exactly.
    fitness = episode_fitness(params, episode)
    return GaResult(params, fitness, history, gen, time.perf_counter() - start)


def _episode_seeds(cfg: GaConfig, n: int) -> list:
    return [np.random.SeedSequence([cfg.seed, i]) for i in range(n)]


def _calibrate_job(args):
    episode, cfg, seed = args
    return calibrate_episode(episode, cfg, seed)


def ga_calibrate_detailed(episodes: Sequence[CarFollowingEpisode], cfg: GaConfig, workers: int = 1) -> list:
    """Calibrate every episode; per-episode seeds derive from ``cfg.seed`` and the index, so results do not depend on ``workers``."""
    if not episodes:
        raise ValueError("at least one episode is required")
    jobs = list(zip(episodes, [cfg] * len(episodes), _episode_seeds(cfg, len(episodes))))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_calibrate_job, jobs))
    return [_calibrate_job(job) for job in jobs]


def ga_calibrate(episodes: Sequence[CarFollowingEpisode], cfg: GaConfig, workers: int = 1):
    results = ga_calibrate_detailed(episodes, cfg, workers)
    return [r.params for r in results], [r.fitness for r in results]


# ------------------------------------------------------------------ population


@dataclass(frozen=True)
class DriverPopulation:
    """Empirical joint sample of (v0, T) preferences, one pair per driver."""

    v0: np.ndarray
    T: np.ndarray
    jitter_scale: float = 0.0

    def __post_init__(self):
        v0 = np.asarray(self.v0, dtype=float).ravel()
        T = np.asarray(self.T, dtype=float).ravel()
        object.__setattr__(self, "v0", v0)
        object.__setattr__(self, "T", T)
        if v0.shape != T.shape:
            raise ValueError("v0 and T must pair up one-to-one")
        if v0.size == 0:
            raise ValueError("population is empty")
        if np.any((v0 < V0_BOUNDS[0]) | (v0 > V0_BOUNDS[1])):
            raise ValueError(f"v0 entries must lie in {V0_BOUNDS}")
        if np.any((T < T_BOUNDS[0]) | (T > T_BOUNDS[1])):
            raise ValueError(f"T entries must lie in {T_BOUNDS}")
        if self.jitter_scale < 0:
            raise ValueError("jitter_scale must be non-negative")

    def __len__(self):
        return self.v0.size

    @property
    def correlation(self) -> float:
        if self.v0.size < 2 or np.std(self.v0) == 0 or np.std(self.T) == 0:
            return float("nan")
        return float(np.corrcoef(self.v0, self.T)[0, 1])

    def mean_params(self, base: IdmParams = IdmParams()) -> IdmParams:
        return base.with_preferences(float(np.mean(self.v0)), float(np.mean(self.T)))

    def drivers(self, base: IdmParams = IdmParams()) -> list:
        return [base.with_preferences(v, t) for v, t in zip(self.v0, self.T)]


def sample_driver(pop: DriverPopulation, rng: np.random.Generator, base: IdmParams = IdmParams()) -> IdmParams:
    """Draw one driver; the (v0, T) pair is drawn jointly so their correlation survives."""
    idx = int(rng.integers(0, len(pop)))
    v0, T = float(pop.v0[idx]), float(pop.T[idx])
    if pop.jitter_scale > 0:
        jitter = rng.normal(0.0, 1.0, 2) * pop.jitter_scale
        v0 = min(max(v0 + jitter[0] * float(np.std(pop.v0)), V0_BOUNDS[0]), V0_BOUNDS[1])
        T = min(max(T + jitter[1] * float(np.std(pop.T)), T_BOUNDS[0]), T_BOUNDS[1])
    return base.with_preferences(v0, T)


# ------------------------------------------------------------------ online fit

MIN_ONLINE_SAMPLES = 50


def fit_online(
    observed_speeds,
    leader_speeds,
    gaps,
    prior: DriverPopulation,
    dt: float = 0.1,
    base: IdmParams = IdmParams(),
    grid_shape: tuple = (9, 9),
    max_evals: int = 60,
) -> tuple:
    """Estimate (v0, T) of a follower from its recent speed history.

    A coarse vectorised grid over the bounds locates a basin; Nelder-Mead then
    refines from both the grid optimum and the population mean and the better
    end point wins. The replay starts from the first observed speed and gap.
    """
    obs = np.ascontiguousarray(observed_speeds, dtype=float)
    leader = np.ascontiguousarray(leader_speeds, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if obs.size < MIN_ONLINE_SAMPLES:
        raise ValueError(f"online fit needs >= {MIN_ONLINE_SAMPLES} samples, got {obs.size}")
    if leader.shape != obs.shape or gaps.shape != obs.shape:
        raise ValueError("observed, leader and gap series must have equal length")
    mean = prior.mean_params(base)
    denom = float(np.sum(obs * obs))
    if denom == 0.0:
        return mean.v0, mean.T

    v_init, gap_init = float(obs[0]), float(gaps[0])
    fixed = [base.a, base.b, base.s0, base.delta]
    scratch = (np.empty(obs.size), np.empty(obs.size))

    def objective(x):
        v0 = min(max(x[0], V0_BOUNDS[0]), V0_BOUNDS[1])
        T = min(max(x[1], T_BOUNDS[0]), T_BOUNDS[1])
        if _follow_kernel(v0, T, *fixed, leader, v_init, gap_init, dt, *scratch):
            return COLLISION_RMSPE
        diff = scratch[0] - obs
        return math.sqrt(float(diff @ diff) / denom)

    gv, gt = np.meshgrid(np.linspace(*V0_BOUNDS, grid_shape[0]), np.linspace(*T_BOUNDS, grid_shape[1]), indexing="ij")
    grid = np.column_stack([gv.ravel(), gt.ravel(), np.tile(fixed, (gv.size, 1))])
    grid_fit = _batch_fitness_kernel(grid, leader, obs, v_init, gap_init, float(dt), COLLISION_RMSPE)
    g = int(np.argmin(grid_fit))
    starts = [(float(grid[g, 0]), float(grid[g, 1])), (mean.v0, mean.T)]

    best_x, best_f = starts[0], float(grid_fit[g])
    for x0 in starts:
        res = minimize(
            objective,
            np.array(x0),
            method="Nelder-Mead",
            bounds=[V0_BOUNDS, T_BOUNDS],
            options={"maxfev": max_evals, "xatol": 1e-4, "fatol": 1e-9},
        )
        if res.fun < best_f:
            best_x, best_f = (float(res.x[0]), float(res.x[1])), float(res.fun)
    v0 = min(max(best_x[0], V0_BOUNDS[0]), V0_BOUNDS[1])
    T = min(max(best_x[1], T_BOUNDS[0]), T_BOUNDS[1])
    return v0, T
