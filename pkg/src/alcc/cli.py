"""Command-line front end: ``alcc {gen-data,calibrate,train,evaluate,simulate}``.

Exit status is 0 on success, 1 on a usage or configuration error and 2 when
a command fails at run time.  Output files never contain timings, so a
repeated run with the same config and seed reproduces them byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .calibration import ga_calibrate_detailed
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, dump_config, load_config
from .data import CorpusError, load_episodes, load_population, population_from_params, save_episode, \
    save_population, synthetic_corpus, synthetic_population
from .ddpg import write_training_log
from .environment import MixedTrafficEnv, write_trace
from .evaluation import format_summary, write_report_table
from .vehicle import trip_energy

MODES = ("proposed", "reference")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI run configuration (defaults used when omitted)")
    p.add_argument("--seed", type=int, help="override the configured run seed")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory (default: runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alcc", description="Adaptive leading cruise control experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write the synthetic corpus, population and PV profiles")
    _common(p)

    p = sub.add_parser("calibrate", help="fit IDM preferences to every corpus episode")
    _common(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--corpus", type=Path, help="episode file or directory (default: <out>/corpus)")

    p = sub.add_parser("train", help="train a DDPG agent")
    _common(p)
    p.add_argument("--mode", choices=MODES, default="proposed")
    p.add_argument("--episodes", type=int)
    p.add_argument("--no-noise", action="store_true", help="disable HDV actuation noise")

    p = sub.add_parser("evaluate", help="run the energy comparisons with both trained agents")
    _common(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-noise", action="store_true")

    p = sub.add_parser("simulate", help="roll one episode and write its trace")
    _common(p)
    p.add_argument("--mode", choices=MODES, default="proposed")
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--driver", type=int, default=0, help="population row of the HDV driver")
    p.add_argument("--v0", type=float, help="HDV desired speed (overrides --driver)")
    p.add_argument("--T", type=float, help="HDV desired time gap (overrides --driver)")
    return parser


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    seed = cfg.seed if args.seed is None else args.seed
    cfg = cfg.seeded(seed)
    if getattr(args, "episodes", None) is not None:
        if args.episodes < 0:
            raise UsageError("--episodes must be >= 0")
        cfg = replace(cfg, ddpg=replace(cfg.ddpg, episodes=args.episodes))
    if getattr(args, "no_noise", False):
        cfg = replace(cfg, env=replace(cfg.env, hdv_noise_max=0.0), evaluation=replace(cfg.evaluation, noise=False))
    if getattr(args, "workers", 1) < 1:
        raise UsageError("--workers must be >= 1")
    return cfg


def _echo(cfg: RunConfig, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"effective_{command}.ini").write_text(dump_config(cfg))


def _population(cfg: RunConfig, out: Path):
    path = cfg.resolve(out, "population")
    if not path.exists():
        raise FileNotFoundError(f"population file {path} not found (run gen-data first)")
    return load_population(path)


def cmd_gen_data(cfg: RunConfig, args) -> None:
    out = args.out
    pop = synthetic_population(n=cfg.data.population_size, seed=cfg.seed)
    save_population(pop, cfg.resolve(out, "population"))
    drivers = pipeline.fixture_drivers(pop, cfg.data.corpus_episodes, cfg.seed, cfg.idm)
    episodes, gaps = synthetic_corpus(drivers, seed=cfg.seed, dt=cfg.env.dt, accel_noise=cfg.data.corpus_accel_noise)
    corpus = cfg.resolve(out, "corpus")
    for ep, g in zip(episodes, gaps):
        save_episode(ep, g, corpus / f"{ep.episode_id}.csv")
    with open(out / "corpus_truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("episode_id", "v0", "T"))
        for ep, d in zip(episodes, drivers):
            w.writerow((ep.episode_id, repr(d.v0), repr(d.T)))
    profiles = {"pv_train": pipeline.training_profile(cfg)}
    for s, prof in zip(cfg.data.heldout_pv_seeds, pipeline.heldout_profiles(cfg)):
        profiles[f"pv_heldout_{s}"] = prof
    for name, prof in profiles.items():
        with open(out / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("t", "speed"))
            for k, v in enumerate(prof):
                w.writerow((repr(round(k * cfg.env.dt, 10)), repr(float(v))))
    print(f"wrote {len(pop)} population rows, {len(episodes)} corpus episodes and {len(profiles)} PV profiles to {out}")


def cmd_calibrate(cfg: RunConfig, args) -> None:
    out = args.out
    corpus = args.corpus or cfg.resolve(out, "corpus")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        episodes = load_episodes(corpus)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    t0 = time.perf_counter()
    results = ga_calibrate_detailed(episodes, cfg.ga, workers=args.workers)
    elapsed = time.perf_counter() - t0
    mode = cfg.ga.mode
    with open(out / f"calibration_{mode}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("episode_id", "v0", "T", "a", "b", "s0", "rmspe", "generations"))
        for ep, r in zip(episodes, results):
            p = r.params
            w.writerow((ep.episode_id, repr(p.v0), repr(p.T), repr(p.a), repr(p.b), repr(p.s0), repr(r.fitness),
                        r.generations_run))
    save_population(population_from_params([r.params for r in results]), out / f"calibrated_population_{mode}.csv")
    fit = np.array([r.fitness for r in results])
    summary = (f"mode {mode}: {len(results)} episodes, RMSPE mean {fit.mean():.3f} %, "
               f"median {np.median(fit):.3f} %, max {fit.max():.3f} %\n")
    (out / f"calibration_{mode}_summary.txt").write_text(summary)
    print(summary, end="")
    print(f"elapsed {elapsed:.1f} s")


def cmd_train(cfg: RunConfig, args) -> None:
    out = args.out
    pop = _population(cfg, out)
    every = max(1, cfg.ddpg.episodes // 20)

    def progress(e):
        if e.episode % every == 0 or e.episode == cfg.ddpg.episodes - 1:
            print(f"episode {e.episode:5d} reward {e.reward:9.2f} rolling {e.rolling_mean:9.2f} {e.done_reason}",
                  file=sys.stderr)

    agent, log = pipeline.train_agent(cfg, args.mode, pop, progress)
    ckpt = save_checkpoint(agent, cfg.resolve(out, "checkpoints") / f"{args.mode}.npz")
    write_training_log(log, out / f"training_log_{args.mode}.csv")
    print(f"wrote {ckpt} and a {len(log)}-row training log")


def _load_agents(cfg: RunConfig, out: Path):
    ckdir = cfg.resolve(out, "checkpoints")
    return [load_checkpoint(ckdir / f"{m}.npz", expected_mode=m) for m in MODES]


def cmd_evaluate(cfg: RunConfig, args) -> None:
    out = args.out
    pop = _population(cfg, out)
    proposed, reference = _load_agents(cfg, out)
    results = pipeline.evaluation_suite(cfg, proposed, reference, pop, workers=args.workers)
    reports_dir = cfg.resolve(out, "reports")
    table = reports_dir / "energy_table.csv"
    blocks = []
    first = True
    for res in results:
        for rep in res.reports():
            write_report_table(rep, table, append=not first)
            first = False
            blocks.append(format_summary(rep))
    text = "\n".join(blocks) + "\n# effective configuration\n" + dump_config(cfg)
    (reports_dir / "summary.txt").write_text(text)
    print("\n".join(blocks))
    print(f"wrote {table} and {reports_dir / 'summary.txt'}")


def cmd_simulate(cfg: RunConfig, args) -> None:
    out = args.out
    pop = _population(cfg, out)
    if args.v0 is not None or args.T is not None:
        v0 = args.v0 if args.v0 is not None else cfg.idm.v0
        T = args.T if args.T is not None else cfg.idm.T
    else:
        if not 0 <= args.driver < len(pop):
            raise UsageError(f"--driver must lie in [0, {len(pop) - 1}]")
        v0, T = float(pop.v0[args.driver]), float(pop.T[args.driver])
    driver = cfg.idm.with_preferences(v0, T)
    agent = load_checkpoint(cfg.resolve(out, "checkpoints") / f"{args.mode}.npz", expected_mode=args.mode)
    env = MixedTrafficEnv(replace(cfg.env, reward_mode=args.mode), pop, cfg.energy, cfg.idm)
    env.reset(pipeline.training_profile(cfg), driver, np.random.default_rng(np.random.SeedSequence([cfg.seed, 0])))
    step = None
    while step is None or not step.done:
        step = env.step(agent.act(env.observation(), env.step_index))
    path = out / f"trace_{args.mode}.csv"
    write_trace(env.trace, path)
    tr = env.trace_array()
    cav = trip_energy(cfg.energy, tr[:, 2], tr[:, 4], cfg.env.dt)
    hdv = trip_energy(cfg.energy, tr[:, 3], tr[:, 5], cfg.env.dt)
    print(f"driver v0={v0:.3f} T={T:.3f}: {len(tr)} steps, end {step.done_reason}, "
          f"CAV {cav / 1000:.2f} kJ, HDV {hdv / 1000:.2f} kJ; wrote {path}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "calibrate": cmd_calibrate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _effective_config(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"seed: {cfg.seed}")
    try:
        _echo(cfg, args.out, args.command)
        COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, CorpusError, CheckpointError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
