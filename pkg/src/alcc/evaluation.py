"""Monte Carlo energy evaluation of trained CAV policies.

Three comparisons are supported: the HDV behind the CAV versus directly behind
the PV (scenarios A and B), the HDV-aware policy versus the reference policy
that ignores the follower, and the latter repeated over held-out PV profiles.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import DriverPopulation
from .environment import EnvConfig, MixedTrafficEnv, initial_gap, simulate_follow_profile
from .vehicle import EnergyCoefficients, IdmParams, idm_equilibrium_gap, trip_energy

REPORT_HEADER = (
    "condition", "driver", "driver_v0", "driver_T", "cav_energy_J", "hdv_energy_J", "total_energy_J", "collided",
)


@dataclass(frozen=True)
class DriverRecord:
    driver: int
    v0: float
    T: float
    cav_energy: float
    hdv_energy: float
    collided: bool = False

    @property
    def total_energy(self) -> float:
        return self.cav_energy + self.hdv_energy


@dataclass(frozen=True)
class ImprovementSummary:
    count: int
    mean: float
    minimum: float
    maximum: float
    positive_fraction: float
    negative_fraction: float
    excluded_collisions: int
    best_driver: int | None
    worst_driver: int | None


@dataclass
class EvalReport:
    """Per-driver records for two compared conditions plus improvement statistics.

    ``improvements`` maps driver index to the percentage saving of ``metric``
    in ``candidate`` relative to ``baseline``.
    """

    baseline: str
    candidate: str
    metric: str
    records: dict
    improvements: dict = field(default_factory=dict)
    label: str = ""

    @property
    def summary(self) -> ImprovementSummary:
        return summarize(self)

    def mean_energy(self, condition: str, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.records[condition] if not r.collided]
        return float(np.mean(vals)) if vals else math.nan


def improvement_percent(baseline: float, candidate: float) -> float:
    return (baseline - candidate) / baseline * 100.0


def _metric(record: DriverRecord, metric: str) -> float:
    return record.total_energy if metric == "total" else getattr(record, f"{metric}_energy")


def _build_report(baseline: str, base_recs: list, candidate: str, cand_recs: list, metric: str, label: str = "") -> EvalReport:
    if len(base_recs) != len(cand_recs):
        raise ValueError("compared conditions must cover the same drivers")
    improvements = {}
    for b, c in zip(base_recs, cand_recs):
        if not (b.collided or c.collided):
            improvements[b.driver] = improvement_percent(_metric(b, metric), _metric(c, metric))
    return EvalReport(baseline, candidate, metric, {baseline: base_recs, candidate: cand_recs}, improvements, label)


def summarize(report: EvalReport) -> ImprovementSummary:
    n_total = len(report.records[report.baseline])
    vals = report.improvements
    if not vals:
        return ImprovementSummary(0, math.nan, math.nan, math.nan, math.nan, math.nan, n_total, None, None)
    arr = np.array(list(vals.values()))
    keys = list(vals)
    return ImprovementSummary(
        count=arr.size,
        mean=float(arr.mean()),
        minimum=float(arr.min()),
        maximum=float(arr.max()),
        positive_fraction=float(np.mean(arr > 0)),
        negative_fraction=float(np.mean(arr < 0)),
        excluded_collisions=n_total - arr.size,
        best_driver=keys[int(np.argmax(arr))],
        worst_driver=keys[int(np.argmin(arr))],
    )


# ------------------------------------------------------------------ rollouts


class ScriptedController:
    """Open-loop or rule-based CAV controller usable wherever an agent is."""

    def __init__(self, mode: str, fn):
        self.mode = mode
        self.fn = fn

    def act(self, observation, step_index: int) -> float:
        return float(self.fn(observation, step_index))


def _act(controller, observation, step_index: int) -> float:
    if hasattr(controller, "act"):
        return controller.act(observation, step_index)
    return controller.policy(observation)


def _driver_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, i]))


@dataclass(frozen=True)
class EvalSetup:
    env_cfg: EnvConfig
    population: DriverPopulation
    coeffs: EnergyCoefficients = EnergyCoefficients()
    base: IdmParams = IdmParams()
    noise: bool = True

    def env_config(self, mode: str) -> EnvConfig:
        cfg = replace(self.env_cfg, reward_mode=mode, online_fit=False)
        if not self.noise:
            cfg = replace(cfg, hdv_noise_max=0.0)
        return cfg


def rollout(controller, driver: IdmParams, pv_profile, setup: EvalSetup, rng: np.random.Generator):
    """One exploration-free episode; returns ``(env, cav_energy, hdv_energy, collided)``."""
    cfg = setup.env_config(controller.mode)
    env = MixedTrafficEnv(cfg, setup.population, setup.coeffs, setup.base)
    env.reset(pv_profile, driver, rng)
    out = None
    while out is None or not out.done:
        out = env.step(_act(controller, env.observation(), env.step_index))
    tr = env.trace_array()
    cav = trip_energy(setup.coeffs, tr[:, 2], tr[:, 4], cfg.dt)
    hdv = trip_energy(setup.coeffs, tr[:, 3], tr[:, 5], cfg.dt)
    return env, cav, hdv, out.done_reason == "collision"


def _policy_job(args):
    controller, i, driver, pv_profile, setup, seed = args
    _, cav, hdv, collided = rollout(controller, driver, pv_profile, setup, _driver_rng(seed, i))
    return DriverRecord(i, driver.v0, driver.T, cav, hdv, collided)


def _map(fn, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(job) for job in jobs]


def evaluate_policy(
    controller,
    drivers: Sequence[IdmParams],
    pv_profile,
    setup: EvalSetup,
    mode: str | None = None,
    seed: int = 0,
    workers: int = 1,
) -> list:
    """Roll one episode per driver and record CAV and HDV trip energy.

    Driver ``i`` gets its own noise stream derived from ``(seed, i)``, so the
    outcome does not depend on ``workers`` or on the driver order.
    """
    if mode is not None and controller.mode != mode:
        raise ValueError(f"controller was built for {controller.mode!r} mode, {mode!r} requested")
    jobs = [(controller, i, d, pv_profile, setup, seed) for i, d in enumerate(drivers)]
    return _map(_policy_job, jobs, workers)


def _scenario_b_job(args):
    i, driver, pv_profile, setup, seed, gap0 = args
    cfg = setup.env_config("reference")
    if gap0 is None:
        gap0 = idm_equilibrium_gap(driver, min(float(pv_profile[0]), 0.95 * driver.v0))
    res = simulate_follow_profile(pv_profile, driver, gap0, cfg, _driver_rng(seed, i))
    return DriverRecord(i, driver.v0, driver.T, 0.0, trip_energy(setup.coeffs, res.speed, res.accel, cfg.dt), res.collided)


def compare_scenarios(
    controller,
    drivers: Sequence[IdmParams],
    pv_profile,
    setup: EvalSetup,
    seed: int = 0,
    workers: int = 1,
    match_initial_gap: bool = False,
) -> EvalReport:
    """HDV energy behind the CAV (scenario A) versus directly behind the PV (scenario B).

    Scenario B starts at the driver's own equilibrium gap unless
    ``match_initial_gap`` reuses the CAV-HDV gap of scenario A.
    """
    a_recs = evaluate_policy(controller, drivers, pv_profile, setup, seed=seed, workers=workers)
    gap0 = None
    if match_initial_gap:
        gap0 = initial_gap(setup.population.mean_params(setup.base), float(pv_profile[0]), setup.env_cfg)
    jobs = [(i, d, pv_profile, setup, seed, gap0) for i, d in enumerate(drivers)]
    b_recs = _map(_scenario_b_job, jobs, workers)
    return _build_report("scenario_B", b_recs, "scenario_A", a_recs, "hdv")


def compare_strategies(
    proposed,
    reference,
    drivers: Sequence[IdmParams],
    pv_profile,
    setup: EvalSetup,
    seed: int = 0,
    workers: int = 1,
    label: str = "",
) -> EvalReport:
    """Total (CAV + HDV) energy of the proposed policy against the reference policy, driver by driver."""
    ref = evaluate_policy(reference, drivers, pv_profile, setup, seed=seed, workers=workers)
    prop = evaluate_policy(proposed, drivers, pv_profile, setup, seed=seed, workers=workers)
    return _build_report("reference", ref, "proposed", prop, "total", label)


def generalization_suite(
    proposed,
    reference,
    drivers: Sequence[IdmParams],
    pv_profiles: Sequence,
    setup: EvalSetup,
    seed: int = 0,
    workers: int = 1,
) -> list:
    if len(pv_profiles) < 2:
        raise ValueError("the generalization suite needs at least two held-out profiles")
    return [
        compare_strategies(proposed, reference, drivers, pv, setup, seed, workers, label=f"profile_{k}")
        for k, pv in enumerate(pv_profiles)
    ]


# ------------------------------------------------------------------- output


def write_report_table(report: EvalReport, path, append: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append:
            w.writerow(("report",) + REPORT_HEADER)
        for condition in (report.candidate, report.baseline):
            for r in report.records[condition]:
                w.writerow((report.label or f"{report.candidate}_vs_{report.baseline}", condition, r.driver,
                            repr(r.v0), repr(r.T), repr(r.cav_energy), repr(r.hdv_energy), repr(r.total_energy),
                            int(r.collided)))


def _kj(x: float) -> str:
    return f"{x / 1000.0:9.2f} kJ"


def format_summary(report: EvalReport) -> str:
    """Human-readable block with most/least/mean improvement rows."""
    s = report.summary
    cand, base = report.candidate, report.baseline
    title = report.label or f"{cand} vs {base}"
    lines = [f"== {title}: {report.metric} energy, {cand} relative to {base} =="]
    lines.append(f"drivers evaluated: {len(report.records[base])}, compared: {s.count}, "
                 f"excluded (collision): {s.excluded_collisions}")
    if s.count == 0:
        lines.append("no comparable drivers")
        return "\n".join(lines) + "\n"
    by_id = {c: {r.driver: r for r in report.records[c]} for c in (cand, base)}
    head = f"{'':18s}| {cand + ' HDV':>14s} {cand + ' CAV':>14s} {cand + ' total':>14s} | " \
           f"{base + ' HDV':>14s} {base + ' CAV':>14s} {base + ' total':>14s} | improvement"
    lines.append(head)

    def row(name, c, b, imp):
        return (f"{name:18s}| {_kj(c[0]):>14s} {_kj(c[1]):>14s} {_kj(c[2]):>14s} | "
                f"{_kj(b[0]):>14s} {_kj(b[1]):>14s} {_kj(b[2]):>14s} | {imp:8.2f} %")

    for name, idx in (("most improvement", s.best_driver), ("least improvement", s.worst_driver)):
        c, b = by_id[cand][idx], by_id[base][idx]
        lines.append(row(name, (c.hdv_energy, c.cav_energy, c.total_energy),
                         (b.hdv_energy, b.cav_energy, b.total_energy), report.improvements[idx]))
    keep = list(report.improvements)

    def means(cond):
        recs = [by_id[cond][i] for i in keep]
        return (float(np.mean([r.hdv_energy for r in recs])), float(np.mean([r.cav_energy for r in recs])),
                float(np.mean([r.total_energy for r in recs])))

    cm, bm = means(cand), means(base)
    lines.append(row("mean", cm, bm, improvement_percent(bm[2] if report.metric == "total" else bm[0],
                                                           cm[2] if report.metric == "total" else cm[0])))
    lines.append(f"per-driver improvement: mean {s.mean:.2f} %, min {s.minimum:.2f} %, max {s.maximum:.2f} %, "
                 f"positive {s.positive_fraction:.1%}, negative {s.negative_fraction:.1%}")
    return "\n".join(lines) + "\n"
