"""Success-rate evaluation and the baseline ladder of dataset recipes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import policy as policy_mod
from .datagen import (
    SourceMistakeReplayer, aggregate, collect_demos, collect_interventions,
    episode_seed, generate, generate_demo_mode, source_offsets,
)
from .policy import rollout
from .trajectory import Dataset
from .world import (
    CorruptionModel, TASK_GEOMETRY, TaskSpec, World, corruption_preset,
    make_task,
)

ARM_NAMES = ("base", "source_int", "weighted_src_int", "source_demo",
             "mg_demo", "ivg_minus_policy", "ivg")


@dataclass
class SuccessStats:
    trials: int
    successes: int
    per_trial: list
    seeds: list
    mean_steps_to_goal: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials


def evaluate(model, task: TaskSpec, z: CorruptionModel, trials: int,
             seed: int) -> SuccessStats:
    """Paired rollouts with derived seeds; success = goal at episode end.
    The model only ever sees robot-role observations."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    outcomes, seeds, steps_to_goal = [], [], []
    for i in range(trials):
        s = episode_seed(seed, i)
        seeds.append(s)
        world = World(task, z)
        traj = rollout(model, world, s)
        outcomes.append(bool(traj.goal))
        if traj.goal:
            steps_to_goal.append(len(traj.steps))
    return SuccessStats(
        trials=trials, successes=sum(outcomes), per_trial=outcomes,
        seeds=seeds,
        mean_steps_to_goal=float(np.mean(steps_to_goal)) if steps_to_goal
        else float("nan"))


@dataclass
class ExperimentPlan:
    task: str
    corruption: str           # preset name for the test-time corruption
    arms: tuple = ARM_NAMES
    m: int = 10
    n: int = 1000
    k: int = 3
    trials: int = 200
    seeds: tuple = (0, 1, 2)
    workers: int = 1

    def __post_init__(self):
        if len(set(self.arms)) != len(self.arms):
            raise ValueError("arm names must be unique")
        for a in self.arms:
            if a not in ARM_NAMES:
                raise ValueError(f"unknown arm {a!r}")

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        data = json.loads(open(path, encoding="utf-8").read())
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        for key in ("arms", "seeds"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass
class SharedInputs:
    """Per-seed artifacts every arm builds from."""
    task: TaskSpec
    z: CorruptionModel
    seed: int
    m: int
    n: int
    k: int
    base_demos: Dataset = None
    base_expanded: Dataset = None
    base_model: object = None
    interventions: Dataset = None
    corrupted_demos: Dataset = None


def prepare_shared(plan: ExperimentPlan, seed: int) -> SharedInputs:
    task = make_task(plan.task)
    z = corruption_preset(plan.corruption)
    sh = SharedInputs(task=task, z=z, seed=seed, m=plan.m, n=plan.n, k=plan.k)
    clean = CorruptionModel()
    sh.base_demos = collect_demos(lambda: World(task, clean), task, plan.m,
                                  seed=episode_seed(seed, 1))
    sh.base_expanded, _ = generate_demo_mode(
        sh.base_demos, task, clean, plan.n, seed=episode_seed(seed, 2))
    sh.base_model = policy_mod.fit(sh.base_expanded, task, k=plan.k)
    sh.interventions = collect_interventions(
        sh.base_model, lambda: World(task, z), task, plan.m,
        seed=episode_seed(seed, 3))
    sh.corrupted_demos = collect_demos(
        lambda: World(task, z), task, plan.m, seed=episode_seed(seed, 4),
        provenance="source-human")
    return sh


def build_arm_dataset(arm: str, sh: SharedInputs):
    """Dataset recipe for one ladder arm. Returns (dataset, fit_kwargs)."""
    task, z = sh.task, sh.z
    fit_kwargs = {"k": sh.k, "weights_mode": "uniform"}
    if arm == "base":
        return sh.base_expanded, fit_kwargs
    if arm == "source_int":
        return aggregate(sh.base_expanded, sh.interventions), fit_kwargs
    if arm == "weighted_src_int":
        return (aggregate(sh.base_expanded, sh.interventions),
                {**fit_kwargs, "weights_mode": "balanced"})
    if arm == "source_demo":
        return sh.corrupted_demos, fit_kwargs
    if arm == "mg_demo":
        ds, _ = generate_demo_mode(sh.corrupted_demos, task, z, sh.n,
                                   seed=episode_seed(sh.seed, 5),
                                   provenance="base")
        return ds, fit_kwargs
    if arm == "ivg_minus_policy":
        replayer = SourceMistakeReplayer(sh.interventions, task)
        m = len(sh.interventions.episodes)

        # forced offsets follow the attempt's own episode seed so the
        # replayer can pick the same source (it keys on seed % m)
        def offsets_by_attempt(i):
            ep = episode_seed(episode_seed(sh.seed, 6), i)
            j = ep % m
            return source_offsets(sh.interventions.episodes[j], task)

        ds, _ = generate(replayer, task, z, sh.interventions, sh.n,
                         seed=episode_seed(sh.seed, 6),
                         offsets_by_attempt=offsets_by_attempt)
        return aggregate(sh.base_expanded, ds), fit_kwargs
    if arm == "ivg":
        ds, _ = generate(sh.base_model, task, z, sh.interventions, sh.n,
                         seed=episode_seed(sh.seed, 7))
        return aggregate(sh.base_expanded, ds), fit_kwargs
    raise ValueError(f"unknown arm {arm!r}")


def _eval_corruptions(plan: ExperimentPlan, z: CorruptionModel):
    """Geometry experiments report per-geometry columns plus the mixture."""
    if plan.task == TASK_GEOMETRY:
        return {
            "geometry_1": replace(z, flip_probability=0.0),
            "geometry_2": replace(z, flip_probability=1.0),
            "mixture": replace(z, flip_probability=0.5),
        }
    return {"corrupted": z}


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    # arm -> column -> list of SuccessStats (one per seed)
    stats: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def mean_rate(self, arm: str, column: Optional[str] = None) -> float:
        cols = self.stats[arm]
        if column is None:
            column = next(iter(cols))
        return float(np.mean([s.success_rate for s in cols[column]]))


def run_experiment(plan: ExperimentPlan, progress=None) -> ExperimentResult:
    result = ExperimentResult(plan=plan)
    columns = None
    for seed in plan.seeds:
        sh = prepare_shared(plan, seed)
        eval_zs = _eval_corruptions(plan, sh.z)
        columns = list(eval_zs)
        for arm in plan.arms:
            try:
                ds, fit_kwargs = build_arm_dataset(arm, sh)
                model = policy_mod.fit(ds, sh.task, **fit_kwargs)
            except Exception as e:  # arm failures recorded, run continues
                result.errors.setdefault(arm, []).append(f"seed {seed}: {e}")
                continue
            for col, z_eval in eval_zs.items():
                stats = evaluate(model, sh.task, z_eval, plan.trials,
                                 seed=episode_seed(seed, 50))
                result.stats.setdefault(arm, {}).setdefault(col, []).append(stats)
            if progress:
                progress(f"seed {seed} arm {arm}: " + " ".join(
                    f"{c}={result.stats[arm][c][-1].success_rate:.2f}"
                    for c in columns))
    return result


def format_table(result: ExperimentResult) -> str:
    plan = result.plan
    arms = [a for a in plan.arms if a in result.stats]
    columns = list(next(iter(result.stats.values()))) if arms else []
    widths = max([len(a) for a in arms] + [7])
    lines = []
    header = "dataset".ljust(widths) + "".join(c.rjust(14) for c in columns)
    lines.append(header)
    lines.append("-" * len(header))
    for arm in arms:
        row = arm.ljust(widths)
        for c in columns:
            row += f"{result.mean_rate(arm, c):14.3f}"
        lines.append(row)
    lines.append("")
    lines.append(f"trials={plan.trials} per seed, seeds={list(plan.seeds)}, "
                 f"m={plan.m}, n={plan.n}, k={plan.k}")
    lines.append("single deterministic fit per arm (no checkpoint sweep)")
    if result.errors:
        for arm, msgs in result.errors.items():
            for msg in msgs:
                lines.append(f"ERROR {arm}: {msg}")
    return "\n".join(lines)


def result_to_json(result: ExperimentResult) -> dict:
    out = {"plan": {**result.plan.__dict__,
                    "arms": list(result.plan.arms),
                    "seeds": list(result.plan.seeds)},
           "arms": {}, "errors": result.errors}
    for arm, cols in result.stats.items():
        out["arms"][arm] = {
            col: {
                "rates": [s.success_rate for s in stats],
                "mean": float(np.mean([s.success_rate for s in stats])),
                "successes": [s.successes for s in stats],
                "trials": [s.trials for s in stats],
            } for col, stats in cols.items()}
    return out


def ordering_assertions(result: ExperimentResult) -> list:
    """The qualitative ladder orderings; returns human-readable failures."""
    fails = []
    plan = result.plan

    def mean(arm, col=None):
        return result.mean_rate(arm, col)

    have = set(result.stats)
    if plan.task == TASK_GEOMETRY:
        if {"base", "ivg"} <= have:
            if mean("base", "geometry_1") < 0.95:
                fails.append("base should be >= 0.95 on geometry 1")
            if mean("base", "geometry_2") > 0.10:
                fails.append("base should be <= 0.10 on geometry 2")
            for col in ("geometry_1", "geometry_2"):
                if mean("ivg", col) < 0.75:
                    fails.append(f"ivg should be >= 0.75 on {col}")
            others = [a for a in have if a != "ivg"]
            best = max(mean(a, "mixture") for a in others)
            if mean("ivg", "mixture") < best + 0.15:
                fails.append("ivg mixture should beat baselines by >= 0.15")
        return fails

    slack = 0.05
    if {"base", "ivg"} <= have:
        if mean("ivg") - mean("base") < 0.40:
            fails.append("ivg - base gain should be >= 0.40")
        if mean("ivg") < 0.80:
            fails.append("ivg should be >= 0.80")
    pairs = [("base", "source_int"), ("source_int", "ivg_minus_policy"),
             ("ivg_minus_policy", "ivg")]
    for lo, hi in pairs:
        if {lo, hi} <= have and mean(lo) > mean(hi) + slack:
            fails.append(f"{lo} should not exceed {hi} by more than {slack}")
    if {"ivg", "ivg_minus_policy"} <= have \
            and mean("ivg") - mean("ivg_minus_policy") < 0.10:
        fails.append("policy-execution component should add >= 0.10")
    return fails
