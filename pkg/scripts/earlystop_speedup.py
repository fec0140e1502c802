#!/usr/bin/env python3
"""Measure the median early-stopping gate's speedup and performance cost.

Runs the same workload with the per-child median gate on and off and reports
the epoch ratio (theory floor for iid early losses is 2 / (1/t_g + 1)) and
the relative change in the final best-seen validation loss.
"""

import argparse

import numpy as np

from gpbt import (
    Dimension,
    EarlyStopConfig,
    FixedC,
    RunConfig,
    SearcherConfig,
    SearchSpace,
    TrainerSpec,
    make_trainer,
    run,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--t-g", type=int, default=5)
    ap.add_argument("--t-max", type=int, default=8)
    args = ap.parse_args()

    spec = TrainerSpec(
        kind="weight_sensitive", dim=4, curvatures=(1.2,) * 4, noise=0.3, r_max=2.0
    )
    space = SearchSpace([Dimension("lr", 0.0, 2.0, "linear")])

    ratios, degradation = [], []
    for seed in range(args.seeds):
        trainer = make_trainer(spec)
        base = dict(
            n=16, t_max=args.t_max, t_g=args.t_g, c=FixedC(1.0),
            searcher=SearcherConfig(kind="tpe"), seed=seed,
        )
        off = run(RunConfig(**base), space, trainer)
        on = run(
            RunConfig(early_stop=EarlyStopConfig(level3=True), **base), space, trainer
        )
        ratios.append(off.total_epochs / on.total_epochs)
        degradation.append(on.final_best_val / off.final_best_val - 1.0)
        print(
            f"seed {seed}: epochs {off.total_epochs} -> {on.total_epochs} "
            f"(x{ratios[-1]:.2f}), final val {off.final_best_val:.4g} -> {on.final_best_val:.4g}"
        )

    theory = 2.0 / (1.0 / args.t_g + 1.0)
    print(f"\nmedian speedup: {np.median(ratios):.3f} (iid theory {theory:.3f})")
    print(f"median relative degradation: {np.median(degradation):+.3%}")


if __name__ == "__main__":
    main()
