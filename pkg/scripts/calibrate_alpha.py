"""Sweep the optimism rescaling knob and report the regret scaling it induces.

The theoretical optimism weight is never tight at desk scale; this sweep shows
how the fitted pseudo-regret slope and regret levels respond to scaling it down.

Usage: python scripts/calibrate_alpha.py [--seeds N]
"""

import argparse

import numpy as np

from ofucontrol import bench
from ofucontrol.sco import ScoConfig, pseudo_regret_report, run_sco, sco_alpha_formula
from ofucontrol.system import RngStream


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, default=6)
    parser.add_argument("--scales", default="0.03,0.1,0.3,1.0")
    parser.add_argument("--grid", default="256,1024,4096,16384")
    args = parser.parse_args()

    grid = [int(tok) for tok in args.grid.split(",")]
    inst = bench.default_sco_instance()
    for scale in (float(tok) for tok in args.scales.split(",")):
        medians = []
        for t in grid:
            cfg = ScoConfig(
                horizon=t, alpha=sco_alpha_formula(inst, t, 0.1),
                lam=inst.decision_set.r_a**2, budget=24, batch=24, alpha_scale=scale,
            )
            regs = [
                pseudo_regret_report(
                    run_sco(inst, cfg, RngStream(seed, t)), inst, 3000,
                    RngStream(987654321, t),
                ).total
                for seed in range(1, args.seeds + 1)
            ]
            medians.append(float(np.median(regs)))
        slope = float(np.polyfit(np.log(grid), np.log(np.maximum(medians, 1e-12)), 1)[0])
        meds = ", ".join(f"{m:.1f}" for m in medians)
        print(f"alpha_scale={scale:g}: medians [{meds}]  slope {slope:.3f}")


if __name__ == "__main__":
    main()
