"""Corpus and population files, plus the synthetic stand-ins used when no NGSIM export is at hand.

Episode files are CSV with header ``t,leader_speed,follower_speed,gap`` sampled
at 10 Hz; population files are CSV with header ``v0,T``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .calibration import T_BOUNDS, V0_BOUNDS, CarFollowingEpisode, DriverPopulation, _follow
from .vehicle import IdmParams, idm_acceleration, idm_equilibrium_gap

EPISODE_HEADER = ("t", "leader_speed", "follower_speed", "gap")
POPULATION_HEADER = ("v0", "T")


class CorpusError(ValueError):
    """The corpus as a whole is unusable (e.g. nothing valid was found)."""


class CorpusWarning(UserWarning):
    """A single corpus file was skipped."""


# ------------------------------------------------------------------ profiles


@dataclass(frozen=True)
class SyntheticProfileSpec:
    """Mean-reverting, acceleration-smoothed random speed profile.

    ``smoothness`` is the correlation time of the acceleration process in s;
    ``math.inf`` yields a constant profile.
    """

    duration: float = 30.0
    dt: float = 0.1
    speed_band: tuple = (5.0, 20.0)
    smoothness: float = 2.0
    accel_sigma: float = 1.0
    accel_limit: float = 2.5
    reversion: float = 0.3
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.speed_band
        if not 0 <= lo < hi:
            raise ValueError(f"speed band must satisfy 0 <= lo < hi, got {self.speed_band}")
        if self.dt <= 0 or self.duration < self.dt:
            raise ValueError("need dt > 0 and duration >= dt")
        if self.smoothness <= 0:
            raise ValueError("smoothness must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt))


def generate_synthetic_pv(spec: SyntheticProfileSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.speed_band
    width = hi - lo
    v_mid = rng.uniform(lo + 0.25 * width, hi - 0.25 * width)
    rho = math.exp(-spec.dt / spec.smoothness)
    kick = math.sqrt(1.0 - rho * rho) * spec.accel_sigma
    out = np.empty(spec.n_samples)
    v, acc = v_mid, 0.0
    eps = rng.normal(size=spec.n_samples)
    for k in range(spec.n_samples):
        out[k] = v
        acc = rho * acc + kick * eps[k] - (1.0 - rho) * spec.reversion * (v - v_mid)
        acc = min(max(acc, -spec.accel_limit), spec.accel_limit)
        v_next = v + acc * spec.dt
        if v_next < lo or v_next > hi:
            v_next = min(max(v_next, lo), hi)
            acc = 0.0
        v = v_next
    return out


# ---------------------------------------------------------------- population


def synthetic_population(
    n: int = 923,
    seed: int = 0,
    v0_mean: float = 25.0,
    v0_std: float = 4.0,
    T_mean: float = 1.2,
    T_std: float = 0.3,
    correlation: float = 0.24,
    v0_range: tuple = (12.0, 38.0),
    T_range: tuple = (0.5, 2.5),
) -> DriverPopulation:
    """Joint-Gaussian stand-in for a calibrated population.

    The raw draws are whitened so the sample moments hit the targets exactly
    before clipping to the plausible ranges.
    """
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, 2))
    z -= z.mean(axis=0)
    chol = np.linalg.cholesky(np.cov(z, rowvar=False))
    z = z @ np.linalg.inv(chol).T
    target = np.linalg.cholesky(np.array([[1.0, correlation], [correlation, 1.0]]))
    z = z @ target.T
    v0 = np.clip(v0_mean + v0_std * z[:, 0], *v0_range)
    T = np.clip(T_mean + T_std * z[:, 1], *T_range)
    return DriverPopulation(v0=v0, T=T)


def load_population(path, jitter_scale: float = 0.0) -> DriverPopulation:
    path = Path(path)
    rows = _read_csv(path, POPULATION_HEADER)
    if not rows:
        raise CorpusError(f"{path}: population file has no rows")
    v0, T = zip(*rows)
    return DriverPopulation(v0=np.array(v0), T=np.array(T), jitter_scale=jitter_scale)


def save_population(pop: DriverPopulation, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POPULATION_HEADER)
        for v0, T in zip(pop.v0, pop.T):
            w.writerow((repr(float(v0)), repr(float(T))))


def population_from_params(params: Iterable[IdmParams], jitter_scale: float = 0.0) -> DriverPopulation:
    params = list(params)
    return DriverPopulation(
        v0=np.array([p.v0 for p in params]), T=np.array([p.T for p in params]), jitter_scale=jitter_scale
    )


# ------------------------------------------------------------------ episodes


def synthesize_episode(
    driver: IdmParams,
    leader: np.ndarray,
    dt: float = 0.1,
    accel_noise: float = 0.0,
    rng: np.random.Generator | None = None,
    episode_id: str = "",
):
    """Follower trajectory of ``driver`` behind ``leader``, starting at equilibrium.

    With ``accel_noise`` > 0 each IDM acceleration is scaled by
    ``1 + U(-accel_noise, accel_noise)``. Returns ``(episode, gaps)``.
    """
    leader = np.asarray(leader, dtype=float)
    v = float(leader[0])
    gap = idm_equilibrium_gap(driver, min(v, 0.95 * driver.v0))
    if accel_noise == 0.0:
        speeds, gaps, collided = _follow(driver, leader, v, gap, dt)
    else:
        if rng is None:
            raise ValueError("a random generator is required when accel_noise > 0")
        speeds, gaps, collided = _noisy_follow(driver, leader, v, gap, dt, accel_noise, rng)
    if collided:
        raise ValueError(f"synthetic follower collided in episode {episode_id!r}")
    ep = CarFollowingEpisode(leader, np.asarray(speeds), gap, dt, episode_id)
    return ep, np.array(gaps)


def _noisy_follow(p: IdmParams, leader, v, gap, dt, noise, rng):
    speeds, gaps = [v], [gap]
    for k in range(leader.size - 1):
        dv_now = leader[k] - v
        acc = idm_acceleration(p, v, -dv_now, gap) * (1.0 + rng.uniform(-noise, noise))
        v_next = max(v + acc * dt, 0.0)
        gap = gap + (dv_now + (leader[k + 1] - v_next)) / 2.0 * dt
        v = v_next
        speeds.append(v)
        gaps.append(gap)
        if gap <= 0:
            return speeds, gaps, True
    return speeds, gaps, False


def synthetic_corpus(
    drivers: Sequence[IdmParams],
    seed: int = 0,
    duration: float = 30.0,
    dt: float = 0.1,
    speed_band: tuple = (3.0, 25.0),
    accel_noise: float = 0.0,
) -> tuple:
    """One synthetic episode per driver with a fresh leader profile each.

    Returns ``(episodes, gap_series)``.
    """
    episodes, gaps = [], []
    root = np.random.SeedSequence(seed)
    for i, (driver, child) in enumerate(zip(drivers, root.spawn(len(drivers)))):
        pv_seed, noise_seed = child.generate_state(2)
        leader = generate_synthetic_pv(
            SyntheticProfileSpec(duration=duration, dt=dt, speed_band=speed_band, seed=int(pv_seed))
        )
        ep, g = synthesize_episode(
            driver, leader, dt, accel_noise, np.random.default_rng(int(noise_seed)), episode_id=f"ep{i:04d}"
        )
        episodes.append(ep)
        gaps.append(g)
    return episodes, gaps


def save_episode(episode: CarFollowingEpisode, gaps, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_HEADER)
        for k, (vl, vf, g) in enumerate(zip(episode.leader_speed, episode.follower_speed, gaps)):
            w.writerow((repr(round(k * episode.dt, 10)), repr(float(vl)), repr(float(vf)), repr(float(g))))


def _read_csv(path: Path, header: tuple) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or tuple(c.strip() for c in first) != header:
            raise ValueError(f"{path}:1: expected header {','.join(header)}, got {first}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                values = tuple(float(x) for x in row)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in {row}") from None
            if not all(math.isfinite(x) for x in values):
                raise ValueError(f"{path}:{lineno}: non-finite value in {row}")
            rows.append(values)
    return rows


def read_episode(path) -> CarFollowingEpisode:
    path = Path(path)
    rows = _read_csv(path, EPISODE_HEADER)
    for lineno, (t, vl, vf, gap) in enumerate(rows, start=2):
        if vl < 0 or vf < 0:
            raise ValueError(f"{path}:{lineno}: negative speed")
        if gap <= 0:
            raise ValueError(f"{path}:{lineno}: non-positive gap")
    if len(rows) < 50:
        raise ValueError(f"{path}: {len(rows)} samples, need at least 50")
    t = np.array([r[0] for r in rows])
    dt = float(np.median(np.diff(t)))
    return CarFollowingEpisode(
        leader_speed=np.array([r[1] for r in rows]),
        follower_speed=np.array([r[2] for r in rows]),
        initial_gap=rows[0][3],
        dt=round(dt, 6),
        episode_id=path.stem,
    )


def load_episodes(path) -> list:
    """Load every ``*.csv`` episode under ``path`` (or a single file).

    Malformed files are skipped with a :class:`CorpusWarning` naming the
    offending line; an empty result raises :class:`CorpusError`.
    """
    path = Path(path)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    episodes = []
    for f in files:
        try:
            episodes.append(read_episode(f))
        except (ValueError, OSError) as exc:
            warnings.warn(str(exc), CorpusWarning, stacklevel=2)
    if not episodes:
        raise CorpusError(f"no valid episodes found under {path}")
    return episodes


def ngsim_pairs_to_episode(t, leader_speed, follower_speed, gap, episode_id: str = "") -> tuple:
    """Adapter for car-following pairs already extracted from NGSIM trajectories.

    Inputs are per-sample arrays in SI units at 10 Hz (resample before calling
    otherwise). Returns ``(episode, gaps)`` ready for :func:`save_episode`.
    """
    t = np.asarray(t, dtype=float)
    dt = float(np.median(np.diff(t)))
    ep = CarFollowingEpisode(
        np.clip(np.asarray(leader_speed, dtype=float), 0.0, None),
        np.clip(np.asarray(follower_speed, dtype=float), 0.0, None),
        float(gap[0]),
        round(dt, 6),
        episode_id,
    )
    return ep, np.asarray(gap, dtype=float)


__all__ = [
    "CorpusError",
    "CorpusWarning",
    "SyntheticProfileSpec",
    "generate_synthetic_pv",
    "synthetic_population",
    "load_population",
    "save_population",
    "population_from_params",
    "synthesize_episode",
    "synthetic_corpus",
    "save_episode",
    "read_episode",
    "load_episodes",
    "ngsim_pairs_to_episode",
    "V0_BOUNDS",
    "T_BOUNDS",
]
