"""Persistence tests: canonical bytes, validation, version gates, configs."""

import json

import numpy as np
import pytest

from corrgen import datagen, policy, store
from corrgen.store import (
    MalformedLineError, RunConfig, SchemaVersionError, read_dataset,
    read_model, validate, write_dataset, write_model,
)
from corrgen.trajectory import Dataset
from corrgen.world import World, corruption_preset, make_task

PEG = make_task("planar_peg_insert")
PEG_NOISE = corruption_preset("peg_noise")


@pytest.fixture(scope="module")
def demos():
    return datagen.collect_demos(lambda: World(PEG), PEG, 3, seed=0)


@pytest.fixture(scope="module")
def generated(demos):
    model = policy.fit(demos, PEG, k=3)
    source = datagen.collect_interventions(
        model, lambda: World(PEG, PEG_NOISE), PEG, 3, seed=1)
    ds, _ = datagen.generate(model, PEG, PEG_NOISE, source, 5, seed=2)
    return ds


class TestDatasetRoundTrip:
    def test_write_read_write_byte_identical(self, demos, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_dataset(demos, p1)
        write_dataset(read_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_empty_dataset_header_only(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        write_dataset(Dataset(task_id=PEG.task_id), p)
        lines = p.read_text().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["episodes"] == 0
        assert len(read_dataset(p).episodes) == 0

    def test_equal_values_equal_bytes(self, demos):
        assert store.dataset_bytes(demos) == store.dataset_bytes(demos)

    def test_corrupted_line_names_line_number(self, demos, tmp_path):
        p = tmp_path / "bad.jsonl"
        write_dataset(demos, p)
        lines = p.read_text().splitlines()
        lines[2] = lines[2][:40] + "#broken"
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(MalformedLineError) as info:
            read_dataset(p)
        assert "line 3" in str(info.value)
        assert info.value.line_no == 3

    def test_future_schema_version_refused(self, demos, tmp_path):
        p = tmp_path / "future.jsonl"
        write_dataset(demos, p)
        lines = p.read_text().splitlines()
        header = json.loads(lines[0])
        header["schema_version"] = store.SCHEMA_VERSION + 1
        lines[0] = json.dumps(header, separators=(",", ":"))
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaVersionError):
            read_dataset(p)

    def test_preserves_all_fields(self, generated, tmp_path):
        p = tmp_path / "gen.jsonl"
        write_dataset(generated, p)
        back = read_dataset(p)
        for a, b in zip(generated.episodes, back.episodes):
            assert a.seed == b.seed
            assert a.provenance == b.provenance
            assert a.goal == b.goal
            assert a.termination_index == b.termination_index
            assert len(a.steps) == len(b.steps)
            s, t = a.steps[0], b.steps[0]
            assert np.array_equal(s.obs.ee_pose.position,
                                  t.obs.ee_pose.position)
            assert np.array_equal(s.action.translation, t.action.translation)
            assert s.actor == t.actor
            assert (s.contact is None) == (t.contact is None)


class TestValidate:
    def test_valid_generated_dataset_clean(self, generated, tmp_path):
        p = tmp_path / "gen.jsonl"
        write_dataset(generated, p)
        assert validate(p) == []

    def test_goal_filter_violation(self, generated, tmp_path):
        bad = Dataset(task_id=generated.task_id,
                      episodes=[generated.episodes[0]])
        bad.episodes[0].goal = False
        p = tmp_path / "bad.jsonl"
        write_dataset(bad, p)
        try:
            assert any("goal-filter" in v for v in validate(p))
        finally:
            bad.episodes[0].goal = True

    def test_monotone_t_violation(self, generated, tmp_path):
        p = tmp_path / "mono.jsonl"
        write_dataset(generated, p)
        lines = p.read_text().splitlines()
        ep = json.loads(lines[1])
        ep["steps"][2]["t"] = 1
        lines[1] = json.dumps(ep, separators=(",", ":"))
        p.write_text("\n".join(lines) + "\n")
        assert any("monotone-t" in v for v in validate(p))

    def test_unreadable_file_reported_not_raised(self, tmp_path):
        p = tmp_path / "junk.jsonl"
        p.write_text("not json\n")
        out = validate(p)
        assert len(out) == 1 and "unreadable" in out[0]


class TestModelRoundTrip:
    def test_model_read_back_acts_identically(self, demos, tmp_path):
        model = policy.fit(demos, PEG, k=3)
        p = tmp_path / "model.npz"
        write_model(model, p)
        back = read_model(p)
        for ep in demos.episodes[:1]:
            for step in ep.steps[:20]:
                a = policy.act(model, step.obs)
                b = policy.act(back, step.obs)
                assert np.array_equal(a.translation, b.translation)
                assert a.gripper == b.gripper

    def test_future_model_version_refused(self, demos, tmp_path):
        model = policy.fit(demos, PEG, k=3)
        p = tmp_path / "model.npz"
        write_model(model, p)
        data = dict(np.load(p, allow_pickle=False))
        meta = json.loads(bytes(data["meta"]).decode())
        meta["schema_version"] += 1
        data["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(p, "wb") as fh:
            np.savez(fh, **data)
        with pytest.raises(SchemaVersionError):
            read_model(p)


class TestRunConfig:
    def test_defaults_valid(self):
        RunConfig()

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError) as info:
            RunConfig.from_dict({"task": "planar_peg_insert", "warp": 9})
        assert "warp" in str(info.value)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            RunConfig.from_dict({"k": 0})
        with pytest.raises(ValueError):
            RunConfig.from_dict({"workers": 1000})

    def test_bad_enum_rejected(self):
        with pytest.raises(ValueError):
            RunConfig.from_dict({"weights_mode": "quadratic"})
        with pytest.raises(ValueError):
            RunConfig.from_dict({"observability": "psychic"})

    def test_save_load_round_trip(self, tmp_path):
        cfg = RunConfig(task="geometry_assembly", corruption="geometry_flip",
                        k=5, m=7, n=42, seed=9)
        p = tmp_path / "cfg.json"
        cfg.save(p)
        assert RunConfig.load(p) == cfg

    def test_observability_override_applied(self):
        cfg = RunConfig(observability="partial")
        assert cfg.build_task().feedback_mode == "partial"
