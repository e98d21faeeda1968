"""Every CLI stage in order: data, calibration, both trainings and the evaluation."""
import argparse
import sys

from alcc.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="run")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    common = ["--seed", str(args.seed), "--out", args.out] + (["--config", args.config] if args.config else [])
    stages = [
        ["gen-data"],
        ["calibrate", "--workers", str(args.workers)],
        ["train", "--mode", "reference"],
        ["train", "--mode", "proposed"],
        ["evaluate", "--workers", str(args.workers)],
        ["simulate", "--mode", "proposed"],
    ]
    for stage in stages:
        code = cli(stage + common)
        if code:
            sys.exit(code)


if __name__ == "__main__":
    main()
