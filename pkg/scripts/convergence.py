"""Surrogate convergence of a finished run against an exact cost grid.

Refits the surrogate on the first n evaluations of the run history for several
n and reports the mean absolute error against the exact grid together with the
mean predicted uncertainty. Exact costs are cached next to the run.
"""

import argparse
import csv
import warnings

import numpy as np

from dimerfit.cli import rebuild
from dimerfit.gpr import TrainingSet, fit, read_history
from dimerfit.landscape import CostCache, GridSpec, error_metric, exact_grid, surrogate_grid, uncertainty_metric
from dimerfit.spectra import CoverageWarning


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("run", help="run directory or manifest")
    p.add_argument("--points", type=int, default=11, help="exact grid nodes per axis")
    p.add_argument("--sizes", default="50,100,200,400,700,1000")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--max-hyper-points", type=int, default=200,
                   help="subset size for the likelihood search (all points enter the final fit)")
    p.add_argument("--csv", help="write the table here as well")
    args = p.parse_args()

    path, doc, cfg, evaluator, _, _ = rebuild(args.run)
    space = evaluator.space
    grid = GridSpec.build(space, space.names, args.points)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoverageWarning)
        exact = exact_grid(evaluator, grid, cache=CostCache(path.parent / "exact_cache.jsonl"),
                           max_nodes=cfg.landscape.max_exact_nodes, workers=args.workers)
    history = [r for r in read_history(path.parent / doc["files"]["history"], space) if r.status == "ok"]
    rows = []
    for n in sorted({min(int(s), len(history)) for s in args.sizes.split(",")}):
        part = history[:n]
        model = fit(TrainingSet(space, [r.params for r in part], [r.cost for r in part]), space, seed=cfg.seed,
                    max_hyper_points=args.max_hyper_points)
        land = surrogate_grid(model, grid)
        rows.append((n, error_metric(exact, land), uncertainty_metric(land),
                     float(np.nanmin(exact.exact)), min(r.cost for r in part)))
        print(f"n={n:5d}  error={rows[-1][1]:.4f}  uncertainty={rows[-1][2]:.4f}  best={rows[-1][4]:.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["evaluations", "error_metric", "uncertainty_metric", "grid_min_cost", "best_cost"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
