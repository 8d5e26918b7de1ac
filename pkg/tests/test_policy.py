"""Policy tests: k-NN fit/act contracts, the oracle expert, and rollouts."""

import numpy as np
import pytest

from corrgen import datagen, geom, policy, store
from corrgen.geom import DeltaAction, Pose
from corrgen.trajectory import Dataset, Step, Trajectory
from corrgen.world import (
    CorruptionModel, FeedbackFeatures, Observation, ROLE_EXPERT, World,
    corruption_preset, make_task,
)

PEG = make_task("planar_peg_insert")


def make_obs(ee=(0, 0, 0.1), width=0.08, peg=(0, 0, 0), payload=(0, 0, 0),
             active=False, subtask=0):
    return Observation(
        ee_pose=Pose(np.array(ee, dtype=float)),
        gripper_width=width,
        observed_object_poses={"peg": Pose(np.array(peg, dtype=float))},
        contact_feedback=FeedbackFeatures(active=active,
                                          payload=np.array(payload, dtype=float),
                                          mode="full"),
        subtask_index=subtask)


def make_step(obs, translation, gripper="hold"):
    return Step(obs=obs,
                action=DeltaAction(np.array(translation, dtype=float),
                                   np.zeros(3), gripper),
                actor="policy", contact=None,
                true_object_positions={"peg": (0.0, 0.0, 0.0)})


def make_dataset(steps, provenance="base"):
    traj = Trajectory(task_id=PEG.task_id, seed=0,
                      corruption=CorruptionModel(), geometry_variant=1,
                      steps=steps, provenance=provenance)
    return Dataset(task_id=PEG.task_id, episodes=[traj])


@pytest.fixture(scope="module")
def clean_demos():
    return datagen.collect_demos(lambda: World(PEG), PEG, 5, seed=0)


@pytest.fixture(scope="module")
def base_model(clean_demos):
    return policy.fit(clean_demos, PEG, k=3)


class TestFit:
    def test_single_step_memorization(self):
        obs = make_obs(ee=(0.01, 0.02, 0.05))
        ds = make_dataset([make_step(obs, [0.003, -0.001, 0.002], "close")])
        model = policy.fit(ds, PEG, k=1)
        out = policy.act(model, obs)
        assert np.array_equal(out.translation, [0.003, -0.001, 0.002])
        assert out.gripper == "close"

    def test_k1_memorizes_every_training_pair(self, clean_demos):
        model = policy.fit(clean_demos, PEG, k=1)
        for ep in clean_demos.episodes[:2]:
            for step in ep.steps:
                out = policy.act(model, step.obs)
                assert np.array_equal(out.translation, step.action.translation)
                assert np.array_equal(out.rotation, step.action.rotation)
                assert out.gripper == step.action.gripper

    def test_balanced_weights_arithmetic(self):
        # 900 base steps and 100 intervention steps -> weight 9.0 each
        base_steps = [make_step(make_obs(ee=(0.001 * i, 0, 0.1)), [0, 0, 0])
                      for i in range(900)]
        int_steps = [make_step(make_obs(ee=(0.001 * i, 0.05, 0.1)), [0, 0, 0])
                     for i in range(100)]
        ds = make_dataset(base_steps)
        ds.episodes.append(Trajectory(
            task_id=PEG.task_id, seed=1, corruption=CorruptionModel(),
            geometry_variant=1, steps=int_steps, provenance="source-human"))
        model = policy.fit(ds, PEG, weights_mode="balanced")
        assert np.all(model.weights[:900] == 1.0)
        assert np.all(model.weights[900:] == 9.0)

    def test_uniform_weights_all_one(self, base_model):
        assert np.all(base_model.weights == 1.0)

    def test_empty_dataset_rejected(self):
        with pytest.raises(policy.EmptyDatasetError):
            policy.fit(Dataset(task_id=PEG.task_id), PEG)

    def test_layout_mismatch_rejected(self, clean_demos):
        geo = make_task("geometry_assembly")
        with pytest.raises(policy.LayoutMismatchError):
            policy.fit(clean_demos, geo)


class TestAct:
    def test_duplicate_rows_tie_break_lowest_index(self):
        obs = make_obs(ee=(0.01, 0.0, 0.1))
        ds = make_dataset([make_step(obs, [0.001, 0, 0]),
                           make_step(obs, [-0.001, 0, 0])])
        model = policy.fit(ds, PEG, k=1)
        out = policy.act(model, obs)
        assert np.array_equal(out.translation, [0.001, 0, 0])

    def test_equidistant_neighbors_average_to_midpoint(self):
        a = make_obs(ee=(0.01, 0.0, 0.1))
        b = make_obs(ee=(-0.01, 0.0, 0.1))
        ds = make_dataset([make_step(a, [0.004, 0, 0]),
                           make_step(b, [0.002, 0.002, 0])])
        model = policy.fit(ds, PEG, k=2)
        out = policy.act(model, make_obs(ee=(0.0, 0.0, 0.1)))
        assert np.allclose(out.translation, [0.003, 0.001, 0])

    def test_output_clamped_to_limits(self):
        obs = make_obs()
        ds = make_dataset([make_step(obs, [0.004, 0.003, 0.0])])
        model = policy.fit(ds, PEG, k=1)
        model.max_step_translation = 0.001
        out = policy.act(model, obs)
        assert np.linalg.norm(out.translation) <= 0.001 + 1e-12

    def test_normalization_invariance_of_neighbors(self, clean_demos):
        """Rescaling a raw feature column (gripper width) in both the data
        and the query leaves the retrieved neighbor indices unchanged."""
        model = policy.fit(clean_demos, PEG, k=3)
        scaled = Dataset(task_id=PEG.task_id)
        for ep in clean_demos.episodes:
            steps = [Step(obs=Observation(
                        ee_pose=s.obs.ee_pose,
                        gripper_width=s.obs.gripper_width * 10.0,
                        observed_object_poses=s.obs.observed_object_poses,
                        contact_feedback=s.obs.contact_feedback,
                        subtask_index=s.obs.subtask_index),
                      action=s.action, actor=s.actor, contact=s.contact,
                      true_object_positions=s.true_object_positions)
                     for s in ep.steps]
            scaled.episodes.append(Trajectory(
                task_id=ep.task_id, seed=ep.seed, corruption=ep.corruption,
                geometry_variant=ep.geometry_variant, steps=steps,
                provenance=ep.provenance))
        model_scaled = policy.fit(scaled, PEG, k=3)
        for ep, ep_s in zip(clean_demos.episodes[:1], scaled.episodes[:1]):
            for s, s_s in zip(ep.steps, ep_s.steps):
                idx, _ = policy.neighbors(model, s.obs)
                idx_s, _ = policy.neighbors(model_scaled, s_s.obs)
                assert np.array_equal(idx, idx_s)

    def test_gripper_majority_vote_ties_toward_hold(self):
        a = make_obs(ee=(0.01, 0.0, 0.1))
        b = make_obs(ee=(-0.01, 0.0, 0.1))
        ds = make_dataset([make_step(a, [0, 0, 0], "open"),
                           make_step(b, [0, 0, 0], "close")])
        model = policy.fit(ds, PEG, k=2)
        out = policy.act(model, make_obs(ee=(0.0, 0.0, 0.1)))
        assert out.gripper == "hold"

    def test_feedback_active_query_retrieves_intervention_rows(self):
        """Neighbor provenance audit: with the feedback flag set, every
        retrieved row comes from intervention data."""
        z = corruption_preset("peg_noise")
        demos = datagen.collect_demos(lambda: World(PEG), PEG, 5, seed=0)
        base = policy.fit(demos, PEG, k=3)
        ints = datagen.collect_interventions(base, lambda: World(PEG, z),
                                             PEG, 5, seed=1)
        model = policy.fit(datagen.aggregate(demos, ints), PEG, k=3)
        audited = 0
        for ep in ints.episodes:
            for step in ep.steps:
                if step.obs.contact_feedback.active:
                    idx, _ = policy.neighbors(model, step.obs)
                    assert all(model.provenance[i] != "base" for i in idx)
                    audited += 1
        assert audited > 0


class TestOracle:
    def test_at_target_zero_translation(self):
        expert = policy.OracleExpert(PEG)
        obs = make_obs(ee=(0.0, 0.0, 0.0), peg=(0, 0, 0))
        out = expert.act(obs)
        assert np.allclose(out.translation, 0.0)

    def test_far_target_clamped_step(self):
        expert = policy.OracleExpert(PEG)
        # at hover height, 0.1 m left: pure clamped x step toward the peg
        obs = make_obs(ee=(-0.1, 0.0, 0.05), peg=(0, 0, 0))
        out = expert.act(obs)
        assert np.allclose(out.translation, [0.005, 0.0, 0.0])

    @pytest.mark.parametrize("task_id", ["planar_peg_insert",
                                         "geometry_assembly"])
    def test_oracle_full_success_1000_seeds(self, task_id):
        task = make_task(task_id)
        expert = policy.OracleExpert(task)
        for seed in range(1000):
            traj = policy.rollout(expert, World(task), seed)
            assert traj.goal, f"oracle failed on seed {seed}"


class TestRollout:
    def test_fixed_seed_identical_trajectory(self, base_model):
        world = World(PEG, corruption_preset("peg_noise"))
        runs = []
        for _ in range(2):
            traj = policy.rollout(base_model, world, 17)
            ds = Dataset(task_id=PEG.task_id, episodes=[traj])
            runs.append(store.dataset_bytes(ds))
        assert runs[0] == runs[1]

    def test_mistake_rate_above_half_under_corruption(self, base_model):
        z = corruption_preset("peg_noise")
        mistakes = 0
        for seed in range(100):
            traj = policy.rollout(base_model, World(PEG, z), seed)
            if any(s.contact is not None for s in traj.steps):
                mistakes += 1
        assert mistakes > 50

    def test_rollout_records_robot_role_observations(self, base_model):
        # under corruption the recorded observed pose must differ from truth
        z = corruption_preset("peg_noise")
        traj = policy.rollout(base_model, World(PEG, z), 3)
        step = traj.steps[0]
        observed = step.obs.observed_object_poses["peg"].position
        true = np.array(step.true_object_positions["peg"])
        assert np.linalg.norm(observed - true) >= 0.02 - 1e-12

    def test_gated_rollout_alternates_actors(self, base_model):
        z = corruption_preset("peg_noise")
        gate = policy.OracleGate(policy.OracleExpert(PEG), "contact")
        for seed in range(20):
            traj = policy.rollout(base_model, World(PEG, z), seed, gate=gate)
            if traj.goal and any(s.actor == "expert" for s in traj.steps):
                actors = [s.actor for s in traj.steps]
                first_expert = actors.index("expert")
                assert all(a == "policy" for a in actors[:first_expert])
                assert traj.steps[first_expert - 1].contact is not None \
                    or traj.steps[first_expert].contact is not None
                return
        pytest.fail("no gated intervention observed in 20 seeds")
