"""Train proposed and reference agents for several seeds and save checkpoints and logs."""
import argparse
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from alcc.checkpoint import save_checkpoint
from alcc.config import RunConfig, load_config
from alcc.data import synthetic_population
from alcc.ddpg import write_training_log
from alcc.pipeline import train_agent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--modes", nargs="+", default=["proposed", "reference"], choices=["proposed", "reference"])
    ap.add_argument("--out", type=Path, default=Path("runs"))
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    pop = synthetic_population(n=cfg.data.population_size, seed=cfg.seed)
    for mode in args.modes:
        for seed in args.seeds:
            run_cfg = replace(cfg, ddpg=replace(cfg.ddpg, seed=seed))
            start = time.perf_counter()
            agent, log = train_agent(run_cfg, mode, pop)
            rewards = np.array([e.reward for e in log])
            save_checkpoint(agent, args.out / f"{mode}_seed{seed}.npz")
            write_training_log(log, args.out / f"training_log_{mode}_seed{seed}.csv")
            k = min(100, len(rewards))
            print(f"{mode} seed {seed}: first {k} mean {rewards[:k].mean():.1f}, last {k} mean "
                  f"{rewards[-k:].mean():.1f}, {time.perf_counter() - start:.0f} s")


if __name__ == "__main__":
    main()
