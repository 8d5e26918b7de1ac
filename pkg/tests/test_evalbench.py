"""Evaluation-bench tests: stats, plans, arm recipes, report determinism."""

import json

import numpy as np
import pytest

from corrgen import datagen, evalbench, policy
from corrgen.evalbench import (
    ExperimentPlan, build_arm_dataset, evaluate, format_table,
    ordering_assertions, prepare_shared, result_to_json, run_experiment,
)
from corrgen.policy import OracleExpert
from corrgen.world import CorruptionModel, World, corruption_preset, make_task

PEG = make_task("planar_peg_insert")


@pytest.fixture(scope="module")
def small_plan():
    return ExperimentPlan(task="planar_peg_insert", corruption="peg_noise",
                          arms=("base", "source_int", "weighted_src_int",
                                "source_demo", "mg_demo", "ivg_minus_policy",
                                "ivg"),
                          m=3, n=12, k=3, trials=10, seeds=(0,))


@pytest.fixture(scope="module")
def shared(small_plan):
    return prepare_shared(small_plan, 0)


class TestEvaluate:
    def test_oracle_clean_full_success(self):
        stats = evaluate(OracleExpert(PEG), PEG, CorruptionModel(), 50, seed=0)
        assert stats.successes == 50
        assert stats.success_rate == 1.0

    def test_single_demo_policy_near_zero_under_corruption(self):
        demos = datagen.collect_demos(lambda: World(PEG), PEG, 1, seed=0)
        model = policy.fit(demos, PEG, k=1)
        stats = evaluate(model, PEG, corruption_preset("peg_noise"), 30,
                         seed=0)
        assert stats.success_rate <= 0.2

    def test_same_seed_identical_stats(self):
        a = evaluate(OracleExpert(PEG), PEG, corruption_preset("peg_noise"),
                     20, seed=7)
        b = evaluate(OracleExpert(PEG), PEG, corruption_preset("peg_noise"),
                     20, seed=7)
        assert a.per_trial == b.per_trial
        assert a.seeds == b.seeds

    def test_success_rate_recomputes_from_per_trial(self):
        stats = evaluate(OracleExpert(PEG), PEG, CorruptionModel(), 20, seed=1)
        assert stats.successes == sum(stats.per_trial)
        assert stats.success_rate == stats.successes / stats.trials

    def test_zero_trials_rejected(self):
        with pytest.raises(ValueError):
            evaluate(OracleExpert(PEG), PEG, CorruptionModel(), 0, seed=0)


class TestPlan:
    def test_duplicate_arms_rejected(self):
        with pytest.raises(ValueError):
            ExperimentPlan(task="planar_peg_insert", corruption="peg_noise",
                           arms=("base", "base"))

    def test_unknown_arm_rejected(self):
        with pytest.raises(ValueError):
            ExperimentPlan(task="planar_peg_insert", corruption="peg_noise",
                           arms=("base", "sota"))

    def test_load_rejects_unknown_keys(self, tmp_path):
        p = tmp_path / "plan.json"
        p.write_text(json.dumps({"task": "planar_peg_insert",
                                 "corruption": "peg_noise", "epochs": 5}))
        with pytest.raises(ValueError):
            ExperimentPlan.load(p)

    def test_load_round_trip(self, tmp_path):
        p = tmp_path / "plan.json"
        p.write_text(json.dumps({"task": "planar_peg_insert",
                                 "corruption": "peg_noise",
                                 "arms": ["base", "ivg"], "m": 3, "n": 10,
                                 "trials": 5, "seeds": [0, 1]}))
        plan = ExperimentPlan.load(p)
        assert plan.arms == ("base", "ivg")
        assert plan.seeds == (0, 1)


class TestArmRecipes:
    def test_base_expands_demos(self, shared, small_plan):
        ds, cfg = build_arm_dataset("base", shared)
        assert len(ds.episodes) == small_plan.n
        assert set(ds.provenance_counts()) == {"base"}
        # demonstration expansion carries no mistake states
        for ep in ds.episodes:
            assert all(s.contact is None for s in ep.steps)
            assert ep.goal

    def test_source_int_adds_raw_interventions(self, shared, small_plan):
        ds, cfg = build_arm_dataset("source_int", shared)
        counts = ds.provenance_counts()
        assert counts["base"] == small_plan.n
        assert counts["source-human"] == small_plan.m
        assert cfg["weights_mode"] == "uniform"

    def test_weighted_src_int_balanced_fit(self, shared):
        ds, cfg = build_arm_dataset("weighted_src_int", shared)
        assert cfg["weights_mode"] == "balanced"

    def test_source_demo_is_m_corrupted_demos(self, shared, small_plan):
        ds, _ = build_arm_dataset("source_demo", shared)
        assert len(ds.episodes) == small_plan.m
        # expert sees truth: no contact, no active feedback anywhere
        for ep in ds.episodes:
            assert ep.goal
            assert all(not s.obs.contact_feedback.active for s in ep.steps)

    def test_mg_demo_expansion_size(self, shared, small_plan):
        ds, _ = build_arm_dataset("mg_demo", shared)
        assert len(ds.episodes) == small_plan.n
        for ep in ds.episodes:
            assert all(not s.obs.contact_feedback.active for s in ep.steps)

    def test_ivg_minus_policy_offsets_subset_of_sources(self, shared,
                                                        small_plan):
        ds, _ = build_arm_dataset("ivg_minus_policy", shared)
        source_offs = set()
        for ep in shared.interventions.episodes:
            off = datagen.source_offsets(ep, shared.task)[(0, "peg")]
            source_offs.add(tuple(np.round(off, 9)))
        for ep in ds.episodes:
            if ep.provenance != "synthetic":
                continue
            off = datagen.source_offsets(ep, shared.task)[(0, "peg")]
            assert tuple(np.round(off, 9)) in source_offs

    def test_ivg_mixes_base_and_synthetic(self, shared, small_plan):
        ds, _ = build_arm_dataset("ivg", shared)
        counts = ds.provenance_counts()
        assert counts["base"] == small_plan.n
        assert counts["synthetic"] == small_plan.n

    def test_unknown_arm_named_in_error(self, shared):
        with pytest.raises(ValueError) as info:
            build_arm_dataset("sota", shared)
        assert "sota" in str(info.value)


@pytest.fixture(scope="module")
def tiny_result():
    plan = ExperimentPlan(task="planar_peg_insert", corruption="peg_noise",
                          arms=("base", "ivg"), m=3, n=10, trials=8,
                          seeds=(0,))
    return plan, run_experiment(plan)


class TestRunExperiment:
    def test_paired_eval_seeds_across_arms(self, tiny_result):
        _, result = tiny_result
        seeds = {arm: stats["corrupted"][0].seeds
                 for arm, stats in result.stats.items()}
        assert seeds["base"] == seeds["ivg"]

    def test_report_bytes_reproducible(self, tiny_result):
        plan, result = tiny_result
        again = run_experiment(plan)
        assert json.dumps(result_to_json(result), sort_keys=True) \
            == json.dumps(result_to_json(again), sort_keys=True)
        assert format_table(result) == format_table(again)

    def test_table_has_row_per_arm(self, tiny_result):
        _, result = tiny_result
        table = format_table(result)
        assert "base" in table and "ivg" in table
        assert "no checkpoint sweep" in table

    def test_counts_reconcile(self, tiny_result):
        _, result = tiny_result
        for arm, cols in result.stats.items():
            for stats_list in cols.values():
                for s in stats_list:
                    assert s.successes == sum(s.per_trial)

    def test_arm_failure_recorded_run_continues(self, monkeypatch):
        plan = ExperimentPlan(task="planar_peg_insert",
                              corruption="peg_noise",
                              arms=("base", "ivg"), m=3, n=6, trials=4,
                              seeds=(0,))
        real = evalbench.build_arm_dataset

        def failing(arm, sh):
            if arm == "ivg":
                raise RuntimeError("boom")
            return real(arm, sh)

        monkeypatch.setattr(evalbench, "build_arm_dataset", failing)
        result = run_experiment(plan)
        assert "base" in result.stats
        assert "ivg" in result.errors
        assert "boom" in result.errors["ivg"][0]

    def test_ordering_assertions_flag_inversion(self, tiny_result):
        _, result = tiny_result
        # swap the arms' stats: the gain assertions must fire
        swapped = evalbench.ExperimentResult(plan=result.plan, stats={
            "base": result.stats["ivg"], "ivg": result.stats["base"]})
        fails = ordering_assertions(swapped)
        assert any("gain" in f or ">=" in f for f in fails)
