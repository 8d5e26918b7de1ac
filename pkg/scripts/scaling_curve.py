#!/usr/bin/env python3
"""Success rate as a function of the number of generated episodes.

Generates once at the largest n and evaluates prefixes of the retained set;
per-attempt seeding makes each prefix identical to a smaller run.

Example:
    python3 scripts/scaling_curve.py --sizes 100 300 1000 --trials 200
"""

import argparse

from corrgen import datagen, evalbench, policy
from corrgen.evalbench import ExperimentPlan, prepare_shared
from corrgen.datagen import episode_seed
from corrgen.trajectory import Dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--task", default="planar_peg_insert")
    ap.add_argument("--corruption", default="peg_noise")
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 300, 1000])
    ap.add_argument("--m", type=int, default=10)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    n_max = max(args.sizes)
    plan = ExperimentPlan(task=args.task, corruption=args.corruption,
                          arms=("base", "ivg"), m=args.m, n=n_max, k=args.k,
                          trials=args.trials, seeds=(args.seed,))
    sh = prepare_shared(plan, args.seed)
    synthetic, _ = datagen.generate(sh.base_model, sh.task, sh.z,
                                    sh.interventions, n_max,
                                    seed=episode_seed(args.seed, 7))
    eval_seed = episode_seed(args.seed, 50)
    base = evalbench.evaluate(sh.base_model, sh.task, sh.z, args.trials,
                              seed=eval_seed)
    print(f"n=0 (base only): {base.success_rate:.3f}")
    for n in sorted(args.sizes):
        subset = Dataset(task_id=sh.task.task_id,
                         episodes=synthetic.episodes[:n])
        model = policy.fit(datagen.aggregate(sh.base_expanded, subset),
                           sh.task, k=args.k)
        stats = evalbench.evaluate(model, sh.task, sh.z, args.trials,
                                   seed=eval_seed)
        print(f"n={n}: {stats.success_rate:.3f}")


if __name__ == "__main__":
    main()
