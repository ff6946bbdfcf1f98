"""Head-to-head regret benchmark: optimistic controller vs explore-then-commit.

Both algorithms face identical disturbance and cost realizations per seed, and
regret is measured against the shared best disturbance action policy in
hindsight. Writes per-run CSVs plus the suite summary.

Usage: python scripts/run_control_benchmark.py [--out DIR] [--horizon T] [--seeds N]
"""

import argparse
from pathlib import Path

import numpy as np

from ofucontrol import bench
from ofucontrol.cli import write_run_csv, write_summary_csv, write_timings_csv
from ofucontrol.controller import parameters_for_memory


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="runs/control_benchmark")
    parser.add_argument("--horizon", type=int, default=2**14)
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--alpha-scale", type=float, default=0.02)
    parser.add_argument("--parallel", type=int, default=1)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sys_ = bench.default_scalar_system()
    costs = bench.default_cost(sys_)
    cfg = parameters_for_memory(
        sys_, 1.0, args.horizon, 0.1, h=2,
        alpha_scale=args.alpha_scale, budget=1500, batch=128,
    )
    cells = [
        bench.SuiteCell(
            horizon=args.horizon, seed=seed, algorithms=("ofu", "etc"),
            sys=sys_, costs=costs, cfg=cfg, explore_fraction=0.15,
            comparator_budget=250,
        )
        for seed in range(1, args.seeds + 1)
    ]
    results = bench.run_experiment_suite(cells, parallel=args.parallel)
    summaries = []
    for summary, rec in results:
        summaries.append(summary)
        if rec is not None:
            write_run_csv(rec, out / f"{summary.algo}_T{summary.horizon}_seed{summary.seed}.csv")
    write_summary_csv(summaries, out / "summary.csv")
    write_timings_csv(summaries, out / "timings.csv")
    for algo in ("ofu", "etc"):
        vals = [s.final_regret for s in summaries if s.algo == algo]
        print(f"{algo}: median final regret {np.median(vals):.1f} over {len(vals)} seeds")


if __name__ == "__main__":
    main()
