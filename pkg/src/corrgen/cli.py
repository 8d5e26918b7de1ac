"""Command-line entry points for the collection/generation/eval pipeline."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import datagen, evalbench, policy as policy_mod, store
from .store import RunConfig
from .world import CorruptionModel, World, corruption_preset


def _load_config(path) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def _world_factory(task, z, config):
    return lambda: World(task, z)


@click.group()
def main():
    """Interventional data generation for desk-scale manipulation tasks."""


@main.command("collect-demos")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--clean/--corrupted", default=True,
              help="Collect under no corruption (default) or the config's.")
def collect_demos_cmd(config_path, out, clean):
    """Collect m expert demonstrations."""
    config = _load_config(config_path)
    task = config.build_task()
    z = CorruptionModel() if clean else corruption_preset(config.corruption)
    provenance = "base" if clean else "source-human"
    ds = datagen.collect_demos(_world_factory(task, z, config), task, config.m,
                               seed=config.seed, provenance=provenance)
    store.write_dataset(ds, out)
    click.echo(f"wrote {len(ds.episodes)} episodes to {out}")


@main.command("collect-interventions")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--model", "model_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--gate", type=click.Choice(["oracle", "teleop"]),
              default="oracle")
@click.option("--offline", is_flag=True,
              help="Scripted-mistake demonstrations instead of gated rollouts.")
@click.option("--port", default=8765, help="Teleop gate only.")
def collect_interventions_cmd(config_path, model_path, out, gate, offline,
                              port):
    """Collect m intervention trajectories."""
    config = _load_config(config_path)
    task = config.build_task()
    z = corruption_preset(config.corruption)
    if offline:
        rng_z = z

        def scripted(j, rng):
            from .world import corrupt
            base = np.zeros(3)
            return corrupt(base, rng_z, rng)

        ds = datagen.offline_collect(_world_factory(task, z, config), task,
                                     scripted, config.m, seed=config.seed)
        store.write_dataset(ds, out)
        click.echo(f"wrote {len(ds.episodes)} offline episodes to {out}")
        return
    if gate == "teleop":
        from . import teleop
        teleop.serve(config, port, out)
        return
    if model_path is None:
        raise click.UsageError("--model is required with --gate oracle")
    model = store.read_model(model_path)
    ds = datagen.collect_interventions(model, _world_factory(task, z, config),
                                       task, config.m, seed=config.seed)
    store.write_dataset(ds, out)
    click.echo(f"wrote {len(ds.episodes)} interventions to {out}")


@main.command("generate")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--model", "model_path", type=click.Path(exists=True))
@click.option("--source", "source_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--report", "report_path", type=click.Path())
@click.option("--ablation", type=click.Choice(["no-policy"]))
@click.option("--demo-mode", is_flag=True,
              help="Expand full demonstrations; no policy execution.")
def generate_cmd(config_path, model_path, source_path, out, report_path,
                 ablation, demo_mode):
    """Generate n synthetic episodes from m source trajectories."""
    config = _load_config(config_path)
    task = config.build_task()
    z = corruption_preset(config.corruption)
    source = store.read_dataset(source_path)
    try:
        if demo_mode:
            ds, report = datagen.generate_demo_mode(
                source, task, z, config.n, seed=config.seed,
                attempt_cap=config.attempt_cap)
        elif ablation == "no-policy":
            replayer = datagen.SourceMistakeReplayer(source, task)
            m = len(source.episodes)

            def offsets_by_attempt(i):
                ep = datagen.episode_seed(config.seed, i)
                return datagen.source_offsets(source.episodes[ep % m], task)

            ds, report = datagen.generate(
                replayer, task, z, source, config.n, seed=config.seed,
                workers=config.workers, attempt_cap=config.attempt_cap,
                offsets_by_attempt=offsets_by_attempt)
        else:
            if model_path is None:
                raise click.UsageError("--model is required without --demo-mode")
            model = store.read_model(model_path)
            ds, report = datagen.generate(
                model, task, z, source, config.n, seed=config.seed,
                workers=config.workers, attempt_cap=config.attempt_cap)
    except datagen.GenerationCapReached as e:
        store.write_dataset(e.dataset, out)
        if report_path:
            store.write_report(e.report, report_path)
        raise click.ClickException(
            f"attempt cap reached with {len(e.dataset.episodes)} episodes")
    store.write_dataset(ds, out)
    if report_path:
        store.write_report(report, report_path)
    click.echo(f"wrote {len(ds.episodes)} episodes to {out} "
               f"({report.attempts} attempts, {report.wall_clock_s:.1f}s)")


@main.command("fit")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--data", "data_paths", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
def fit_cmd(config_path, data_paths, out):
    """Fit the nonparametric policy on one or more datasets."""
    config = _load_config(config_path)
    task = config.build_task()
    ds = store.read_dataset(data_paths[0])
    for p in data_paths[1:]:
        ds = datagen.aggregate(ds, store.read_dataset(p))
    model = policy_mod.fit(ds, task, k=config.k,
                           weights_mode=config.weights_mode)
    store.write_model(model, out)
    click.echo(f"fit {len(model.features)} steps from "
               f"{len(ds.episodes)} episodes to {out}")


@main.command("eval")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
def eval_cmd(config_path, model_path, out_path):
    """Evaluate a fitted policy's success rate under the config corruption."""
    config = _load_config(config_path)
    task = config.build_task()
    z = corruption_preset(config.corruption)
    model = store.read_model(model_path)
    stats = evalbench.evaluate(model, task, z, config.eval_trials,
                               seed=config.seed)
    click.echo(f"success {stats.successes}/{stats.trials} "
               f"= {stats.success_rate:.3f}")
    if out_path:
        Path(out_path).write_text(json.dumps({
            "trials": stats.trials, "successes": stats.successes,
            "success_rate": stats.success_rate,
            "per_trial": stats.per_trial, "seeds": stats.seeds,
        }, indent=2) + "\n", encoding="utf-8")


@main.command("experiment")
@click.option("--plan", "plan_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
@click.option("--table", "table_path", type=click.Path())
@click.option("--assert", "check", is_flag=True,
              help="Exit nonzero if the ladder ordering assertions fail.")
def experiment_cmd(plan_path, out_path, table_path, check):
    """Run the full baseline ladder for one plan file."""
    plan = evalbench.ExperimentPlan.load(plan_path)
    result = evalbench.run_experiment(plan, progress=click.echo)
    table = evalbench.format_table(result)
    click.echo(table)
    if table_path:
        Path(table_path).write_text(table + "\n", encoding="utf-8")
    if out_path:
        Path(out_path).write_text(
            json.dumps(evalbench.result_to_json(result), indent=2) + "\n",
            encoding="utf-8")
    if result.errors:
        sys.exit(1)
    if check:
        fails = evalbench.ordering_assertions(result)
        for f in fails:
            click.echo(f"ASSERTION FAILED: {f}", err=True)
        if fails:
            sys.exit(1)


@main.command("validate")
@click.argument("dataset", type=click.Path(exists=True))
def validate_cmd(dataset):
    """Check a dataset file against the schema and pipeline invariants."""
    violations = store.validate(dataset)
    for v in violations:
        click.echo(v)
    if violations:
        sys.exit(1)
    click.echo("ok")


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--port", default=8765)
@click.option("--out", required=True, type=click.Path())
def serve_cmd(config_path, port, out):
    """Run the teleoperation session server."""
    from . import teleop
    config = _load_config(config_path)
    teleop.serve(config, port, out)


if __name__ == "__main__":
    main()
