#!/usr/bin/env python3
"""End-to-end pipeline on one task: demos, base policy, interventions,
synthetic generation, retrained policy, and a paired evaluation.

Example:
    python3 scripts/run_pipeline.py --config configs/peg_run.json --out out/
"""

import argparse
from pathlib import Path

from corrgen import datagen, evalbench, policy, store
from corrgen.datagen import episode_seed
from corrgen.world import CorruptionModel, World, corruption_preset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="run config JSON (defaults used if omitted)")
    ap.add_argument("--out", default="out", help="artifact directory")
    args = ap.parse_args()

    config = store.RunConfig.load(args.config) if args.config \
        else store.RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    task = config.build_task()
    z = corruption_preset(config.corruption)
    clean = CorruptionModel()

    print(f"[1/6] {config.m} expert demonstrations (clean scenes)")
    demos = datagen.collect_demos(lambda: World(task, clean), task, config.m,
                                  seed=episode_seed(config.seed, 1))
    store.write_dataset(demos, out / "demos.jsonl")

    print(f"[2/6] expand to {config.n} episodes and fit the base policy")
    expanded, _ = datagen.generate_demo_mode(
        demos, task, clean, config.n, seed=episode_seed(config.seed, 2))
    base_model = policy.fit(expanded, task, k=config.k)
    store.write_model(base_model, out / "base_model.npz")

    print(f"[3/6] {config.m} gated interventions under corruption")
    interventions = datagen.collect_interventions(
        base_model, lambda: World(task, z), task, config.m,
        seed=episode_seed(config.seed, 3))
    store.write_dataset(interventions, out / "interventions.jsonl")

    print(f"[4/6] generate {config.n} synthetic interventions")
    synthetic, report = datagen.generate(
        base_model, task, z, interventions, config.n,
        seed=episode_seed(config.seed, 7), workers=config.workers)
    store.write_dataset(synthetic, out / "synthetic.jsonl")
    store.write_report(report, out / "generation_report.json")
    print(f"      {report.attempts} attempts, {report.wall_clock_s:.1f}s")

    print("[5/6] retrain on expanded demos + synthetic interventions")
    final_model = policy.fit(datagen.aggregate(expanded, synthetic), task,
                             k=config.k)
    store.write_model(final_model, out / "final_model.npz")

    print(f"[6/6] paired evaluation, {config.eval_trials} trials")
    eval_seed = episode_seed(config.seed, 50)
    for name, model in (("base", base_model), ("retrained", final_model)):
        stats = evalbench.evaluate(model, task, z, config.eval_trials,
                                   seed=eval_seed)
        print(f"      {name}: {stats.successes}/{stats.trials} "
              f"= {stats.success_rate:.3f}")


if __name__ == "__main__":
    main()
