"""Run the evaluation suite on a pair of saved checkpoints and print the summaries."""
import argparse
from pathlib import Path

from alcc.checkpoint import load_checkpoint
from alcc.config import RunConfig, load_config
from alcc.data import synthetic_population
from alcc.evaluation import format_summary, write_report_table
from alcc.pipeline import evaluation_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("proposed", type=Path)
    ap.add_argument("reference", type=Path)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--table", type=Path, help="optional CSV path for the machine-readable table")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else RunConfig()
    pop = synthetic_population(n=cfg.data.population_size, seed=cfg.seed)
    proposed = load_checkpoint(args.proposed, "proposed")
    reference = load_checkpoint(args.reference, "reference")
    first = True
    for result in evaluation_suite(cfg, proposed, reference, pop, workers=args.workers):
        for report in result.reports():
            print(format_summary(report))
            if args.table:
                write_report_table(report, args.table, append=not first)
                first = False


if __name__ == "__main__":
    main()
