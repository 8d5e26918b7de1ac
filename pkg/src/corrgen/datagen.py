"""End-to-end interventional data generation: gated collection, mistake
generation by closed-loop policy execution, recovery generation by retargeted
open-loop replay, filtering, and aggregation."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geom, policy as policy_mod
from .geom import DeltaAction, Pose
from .policy import OracleExpert, OracleGate, rollout
from .trajectory import (
    ACTOR_EXPERT, ACTOR_POLICY, Dataset, PROV_BASE, PROV_SOURCE_HUMAN,
    PROV_SYNTHETIC, Segment, Step, Trajectory,
)
from .world import (
    CorruptionModel, EpisodeOver, ROLE_EXPERT, ROLE_ROBOT, TaskSpec, World,
)

FAIL_GOAL = "goal-failed"
FAIL_HORIZON = "horizon"
FAIL_NO_MISTAKE = "no-mistake"
FAIL_INFEASIBLE = "infeasible-adapt"

CRIT_CONTACT = "contact"
CRIT_GRIPPER = "gripper-closed-empty"
CRIT_COMPOSITE = "composite"


class CollectionError(RuntimeError):
    pass


class GenerationCapReached(RuntimeError):
    def __init__(self, dataset, report):
        super().__init__("attempt cap reached before n episodes were retained")
        self.dataset = dataset
        self.report = report


@dataclass
class GenerationReport:
    attempts: int = 0
    successes: int = 0
    failures: dict = field(default_factory=lambda: {
        FAIL_GOAL: 0, FAIL_HORIZON: 0, FAIL_NO_MISTAKE: 0, FAIL_INFEASIBLE: 0})
    wall_clock_s: float = 0.0
    episode_seeds: list = field(default_factory=list)

    def consistent(self) -> bool:
        return self.successes + sum(self.failures.values()) == self.attempts


def episode_seed(seed: int, index: int) -> int:
    """Stable per-episode seed derived from (run seed, episode index)."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def default_criterion(task: TaskSpec) -> str:
    return CRIT_COMPOSITE if len(task.subtasks) > 1 else CRIT_CONTACT


# -- segmentation ---------------------------------------------------------

def segment(traj: Trajectory, task: TaskSpec) -> list:
    """Maximal actor runs; expert segments annotated with the true
    reference-object position at segment start."""
    segs = []
    start = 0
    for i in range(1, len(traj.steps) + 1):
        if i == len(traj.steps) or traj.steps[i].actor != traj.steps[start].actor:
            first = traj.steps[start]
            sub = min(first.obs.subtask_index, len(task.subtasks) - 1)
            ref = None
            if first.actor == ACTOR_EXPERT:
                obj = task.subtasks[sub].reference_object
                ref = first.true_object_positions[obj]
            segs.append(Segment(start=start, end=i, actor=first.actor,
                                subtask_index=first.obs.subtask_index,
                                reference_position=ref))
            start = i
    return segs


def detect_termination(steps, criterion: str,
                       start: int = 0) -> Optional[int]:
    """Smallest step index at which the mistake criterion fires within the
    current subtask run; None if it never does."""
    for i in range(start, len(steps)):
        step = steps[i]
        if criterion in (CRIT_CONTACT, CRIT_COMPOSITE) and step.contact is not None:
            return i
        if criterion in (CRIT_GRIPPER, CRIT_COMPOSITE) \
                and step.obs.gripper_width <= 0.0:
            return i
    return None


# -- adaptation and replay ------------------------------------------------

class InfeasibleAdapt(RuntimeError):
    pass


def adapt(current_ee: Pose, recovery_poses: list, obj_src: Pose,
          obj_current: Pose, task: TaskSpec) -> list:
    """Interpolation bridge to the head of the retargeted recovery segment,
    followed by the segment itself (ee-to-object relative poses preserved)."""
    if not recovery_poses:
        raise InfeasibleAdapt("empty recovery segment")
    transformed = geom.transform_segment(recovery_poses, obj_src, obj_current)
    bridge = geom.interpolate(current_ee, transformed[0],
                              task.max_step_translation, task.max_step_rotation)
    out = bridge + transformed[1:]
    lo, hi = task.workspace_min, task.workspace_max
    for p in out:
        if np.any(p.position < lo - 1e-9) or np.any(p.position > hi + 1e-9):
            raise InfeasibleAdapt("adapted pose leaves the workspace")
    return out


def replay(world: World, state, poses: list, grippers: Optional[list] = None,
           traj: Optional[Trajectory] = None, tracking_tol: float = 1e-6):
    """Open-loop execution of a pose sequence; no policy consulted.

    Gripper commands are applied at their relative indices (bridge steps use
    hold). Steps are recorded with actor=expert. Returns the final state.
    """
    task = world.task
    n_bridge = len(poses) - (len(grippers) if grippers else 0)
    for i in range(1, len(poses)):
        target = poses[i]
        if grippers and i >= n_bridge:
            grip = grippers[i - n_bridge]
        else:
            grip = geom.GRIPPER_HOLD
        action, _ = geom.delta_between(state.ee_pose, target,
                                       task.max_step_translation,
                                       task.max_step_rotation, grip)
        obs_robot = world.observe(state, ROLE_ROBOT)
        new_state, event = world.step(state, action)
        if traj is not None:
            traj.steps.append(Step(
                obs=obs_robot, action=action, actor=ACTOR_EXPERT,
                contact=event,
                true_object_positions={
                    o: tuple(state.object_poses[o].position)
                    for o in task.object_ids}))
        # guard against open-loop drift (cannot occur in this kinematic world
        # unless the motion was blocked by an obstruction)
        err = np.linalg.norm(new_state.ee_pose.position - target.position)
        state = new_state
        if err > tracking_tol:
            raise InfeasibleAdapt(f"open-loop tracking error {err:.3g}")
    return state


# -- collection -----------------------------------------------------------

def collect_demos(world_factory, task: TaskSpec, m: int, seed: int,
                  provenance: str = PROV_BASE) -> Dataset:
    """m oracle demonstrations (no gate; the expert drives throughout)."""
    expert = OracleExpert(task)
    ds = Dataset(task_id=task.task_id)
    attempt = 0
    while len(ds.episodes) < m:
        ep_seed = episode_seed(seed, attempt)
        attempt += 1
        if attempt > 100 * m:
            raise CollectionError("expert kept failing during demo collection")
        world = world_factory()
        traj = rollout(expert, world, ep_seed, provenance=provenance)
        if traj.goal:
            ds.episodes.append(traj)
    return ds


def collect_interventions(model, world_factory, task: TaskSpec, m: int,
                          seed: int, criterion: Optional[str] = None,
                          max_attempts_factor: int = 100) -> Dataset:
    """m gated trajectories, each goal-satisfied with >= 1 expert segment."""
    criterion = criterion or default_criterion(task)
    gate = OracleGate(OracleExpert(task), criterion)
    ds = Dataset(task_id=task.task_id)
    attempt = 0
    while len(ds.episodes) < m:
        if attempt >= max_attempts_factor * m:
            raise CollectionError(
                f"{FAIL_NO_MISTAKE}: no gated episode after {attempt} attempts")
        ep_seed = episode_seed(seed, attempt)
        attempt += 1
        world = world_factory()
        traj = rollout(model, world, ep_seed, gate=gate,
                       provenance=PROV_SOURCE_HUMAN)
        if not traj.goal:
            continue
        if not any(s.actor == ACTOR_EXPERT for s in traj.steps):
            continue  # policy succeeded unassisted; not an intervention
        ds.episodes.append(traj)
    return ds


def offline_collect(world_factory, task: TaskSpec, scripted_mistakes, m: int,
                    seed: int) -> Dataset:
    """Expert-driven collection where mistakes are demonstrated on purpose:
    approach a perturbed target until contact, then recover to the goal.

    scripted_mistakes: callable (episode_index, rng) -> offset 3-vector or
    None (None yields a plain demonstration)."""
    expert = OracleExpert(task)
    ds = Dataset(task_id=task.task_id)
    for j in range(m):
        ep_seed = episode_seed(seed, j)
        rng = np.random.default_rng(np.random.SeedSequence([ep_seed, 900]))
        offset = scripted_mistakes(j, rng)
        world = world_factory()
        state = world.reset(ep_seed)
        traj = Trajectory(task_id=task.task_id, seed=ep_seed,
                          corruption=world.z,
                          geometry_variant=state.geometry_variant,
                          provenance=PROV_SOURCE_HUMAN)
        mistaken = False
        for _ in range(task.horizon):
            if world.goal_satisfied(state):
                break
            obs_exp = world.observe(state, ROLE_EXPERT)
            if offset is not None and not mistaken:
                # steer toward the perturbed target until contact fires
                shifted = _shift_observation(obs_exp, offset)
                action = expert.act(shifted)
                actor = ACTOR_POLICY  # mistake portion stands in for the policy
            else:
                action = expert.act(obs_exp)
                actor = ACTOR_EXPERT
            obs_robot = world.observe(state, ROLE_ROBOT)
            new_state, event = world.step(state, action)
            traj.steps.append(Step(
                obs=obs_robot, action=action, actor=actor, contact=event,
                true_object_positions={
                    o: tuple(state.object_poses[o].position)
                    for o in task.object_ids}))
            if event is not None or new_state.gripper_closed_empty:
                mistaken = True
            state = new_state
        traj.goal = world.goal_satisfied(state)
        # plain demonstrations (no scripted mistake fired) carry no
        # termination index; downstream code treats them as no-mistake
        traj.termination_index = (
            detect_termination(traj.steps, default_criterion(task))
            if mistaken else None)
        if traj.goal:
            ds.episodes.append(traj)
    return ds


def _shift_observation(obs, offset):
    from dataclasses import replace as dc_replace
    shifted = {k: Pose(p.position + np.asarray(offset), p.orientation)
               for k, p in obs.observed_object_poses.items()}
    return dc_replace(obs, observed_object_poses=shifted)


# -- generation -----------------------------------------------------------

def segments_by_subtask(traj: Trajectory) -> dict:
    """Step spans grouped by subtask index (for full-demonstration sources)."""
    spans = {}
    start = 0
    for i in range(1, len(traj.steps) + 1):
        if i == len(traj.steps) \
                or traj.steps[i].obs.subtask_index \
                != traj.steps[start].obs.subtask_index:
            spans[traj.steps[start].obs.subtask_index] = (start, i)
            start = i
    return spans


def source_offsets(traj: Trajectory, task: TaskSpec) -> dict:
    """(subtask, object) -> corruption offset recorded in a source episode."""
    out = {}
    for sub, (start, _end) in segments_by_subtask(traj).items():
        step = traj.steps[start]
        for obj, pose in step.obs.observed_object_poses.items():
            true = np.asarray(step.true_object_positions[obj])
            out[(sub, obj)] = np.asarray(pose.position) - true
    return out


def generate_demo_mode(source: Dataset, task: TaskSpec, z: CorruptionModel,
                       n: int, seed: int, provenance: str = PROV_BASE,
                       attempt_cap: Optional[int] = None):
    """Expand full demonstrations by per-subtask retargeted open-loop replay:
    no policy execution, no mistake states. The plain data-expansion analog
    used for the base and mg_demo recipes."""
    cap = attempt_cap if attempt_cap is not None else 20 * n
    t0 = time.monotonic()
    report = GenerationReport()
    ds = Dataset(task_id=task.task_id)
    index = 0
    while len(ds.episodes) < n and index < cap:
        ep_seed = episode_seed(seed, index)
        index += 1
        report.attempts += 1
        rng = np.random.default_rng(np.random.SeedSequence([ep_seed, 29]))
        world = World(task, z)
        state = world.reset(ep_seed)
        traj = Trajectory(task_id=task.task_id, seed=ep_seed, corruption=z,
                          geometry_variant=state.geometry_variant,
                          provenance=provenance)
        src = source.episodes[int(rng.integers(len(source.episodes)))]
        spans = segments_by_subtask(src)
        failed = None
        for sub in range(len(task.subtasks)):
            if sub not in spans:
                failed = FAIL_INFEASIBLE
                break
            start, end = spans[sub]
            seg = Segment(start=start, end=end, actor=ACTOR_EXPERT,
                          subtask_index=sub)
            poses, grippers = _segment_poses(src, seg)
            obj = task.subtasks[sub].reference_object
            obj_src = Pose(np.asarray(src.steps[start].true_object_positions[obj]))
            obj_now = state.object_poses[obj]
            try:
                plan = adapt(state.ee_pose, poses, obj_src, obj_now, task)
                state = replay(world, state, plan, grippers, traj)
            except EpisodeOver:
                failed = FAIL_HORIZON
                break
            except InfeasibleAdapt:
                failed = FAIL_INFEASIBLE
                break
            if state.subtask_index <= sub:
                failed = FAIL_GOAL
                break
        if failed is None and world.goal_satisfied(state):
            traj.goal = True
            ds.episodes.append(traj)
            report.successes += 1
            report.episode_seeds.append(ep_seed)
        else:
            report.failures[failed or FAIL_GOAL] += 1
    report.wall_clock_s = time.monotonic() - t0
    if len(ds.episodes) < n:
        raise GenerationCapReached(ds, report)
    return ds, report


def _segment_poses(traj: Trajectory, seg: Segment):
    """Pose sequence of a segment including the landing pose of its last
    action, plus the per-step gripper commands."""
    steps = traj.steps[seg.start:seg.end]
    poses = [s.obs.ee_pose for s in steps]
    if seg.end < len(traj.steps):
        poses.append(traj.steps[seg.end].obs.ee_pose)
    else:
        poses.append(geom.apply_delta(poses[-1], steps[-1].action))
    grippers = [s.action.gripper for s in steps]
    return poses, grippers


def _recovery_for_subtask(source: Dataset, task: TaskSpec, subtask: int, rng):
    """Sample a source trajectory uniformly; use its first recovery segment
    for the subtask, falling back to the other sources if it has none."""
    start = int(rng.integers(len(source.episodes)))
    for shift in range(len(source.episodes)):
        traj = source.episodes[(start + shift) % len(source.episodes)]
        for seg in segment(traj, task):
            if seg.actor != ACTOR_EXPERT or seg.subtask_index != subtask:
                continue
            poses, grippers = _segment_poses(traj, seg)
            return poses, grippers, Pose(np.asarray(seg.reference_position))
    return None


def generate_one(model, task: TaskSpec, z: CorruptionModel, source: Dataset,
                 ep_seed: int, criterion: Optional[str] = None,
                 keep_unassisted: bool = False,
                 forced_offsets: Optional[dict] = None):
    """One synthetic-intervention attempt. Returns (trajectory_or_None, cause).

    The retained trajectory is the suffix from the first mistake-termination
    index onward, and only if the final state satisfies the goal.
    """
    criterion = criterion or default_criterion(task)
    rng = np.random.default_rng(np.random.SeedSequence([ep_seed, 17]))
    world = World(task, z, forced_offsets=forced_offsets)
    state = world.reset(ep_seed)
    traj = Trajectory(task_id=task.task_id, seed=ep_seed, corruption=z,
                      geometry_variant=state.geometry_variant,
                      provenance=PROV_SYNTHETIC)
    first_t: Optional[int] = None
    guard = 0
    while not world.goal_satisfied(state) and guard < 4 * len(task.subtasks):
        guard += 1
        # closed-loop policy execution until the mistake criterion fires
        state, ended = _run_policy_until(model, world, state, traj, criterion)
        if world.goal_satisfied(state):
            break
        if ended is None:
            return None, FAIL_HORIZON
        if first_t is None:
            first_t = ended
        subtask = state.subtask_index
        picked = _recovery_for_subtask(source, task, subtask, rng)
        if picked is None:
            return None, FAIL_INFEASIBLE
        poses, grippers, obj_src = picked
        obj_now = state.object_poses[task.subtasks[subtask].reference_object]
        try:
            plan = adapt(state.ee_pose, poses, obj_src, obj_now, task)
            state = replay(world, state, plan, grippers, traj)
        except EpisodeOver:
            return None, FAIL_HORIZON
        except InfeasibleAdapt:
            return None, FAIL_INFEASIBLE
    if not world.goal_satisfied(state):
        return None, FAIL_GOAL
    if first_t is None:
        if keep_unassisted:
            traj.goal = True
            traj.termination_index = 0
            return traj, None
        return None, FAIL_NO_MISTAKE
    kept = Trajectory(task_id=traj.task_id, seed=traj.seed,
                      corruption=traj.corruption,
                      geometry_variant=traj.geometry_variant,
                      steps=traj.steps[first_t:], provenance=PROV_SYNTHETIC,
                      goal=True, termination_index=first_t)
    return kept, None


def _run_policy_until(model, world, state, traj, criterion):
    """Step the policy closed-loop; stop at mistake, goal, or horizon.
    Returns (state, termination_index_or_None)."""
    task = world.task
    if mistake_replayer(model):
        return model.run(world, state, traj, criterion)
    while not world.goal_satisfied(state):
        if state.step_count >= task.horizon:
            return state, None
        obs_robot = world.observe(state, ROLE_ROBOT)
        action = policy_mod.act(model, obs_robot)
        new_state, event = world.step(state, action)
        traj.steps.append(Step(
            obs=obs_robot, action=action, actor=ACTOR_POLICY, contact=event,
            true_object_positions={
                o: tuple(state.object_poses[o].position)
                for o in task.object_ids}))
        state = new_state
        t = len(traj.steps) - 1
        fired = (criterion in (CRIT_CONTACT, CRIT_COMPOSITE) and event is not None) \
            or (criterion in (CRIT_GRIPPER, CRIT_COMPOSITE)
                and state.gripper_closed_empty and state.held_object is None)
        if fired:
            return state, t
    return state, None


def mistake_replayer(model) -> bool:
    return hasattr(model, "run") and not hasattr(model, "layout")


class SourceMistakeReplayer:
    """Mistake generation without policy execution: the source trajectory's
    mistake segment is retargeted and replayed open-loop instead."""

    def __init__(self, source: Dataset, task: TaskSpec, rng_tag: int = 23):
        self.source = source
        self.task = task
        self.rng_tag = rng_tag

    def run(self, world, state, traj, criterion):
        task = self.task
        subtask = state.subtask_index
        # same source the forced corruption offsets were copied from
        start_j = state.seed % len(self.source.episodes)
        for shift in range(len(self.source.episodes)):
            src = self.source.episodes[(start_j + shift)
                                       % len(self.source.episodes)]
            for seg in segment(src, task):
                if seg.actor != ACTOR_POLICY or seg.subtask_index != subtask:
                    continue
                steps = src.steps[seg.start:seg.end]
                poses, grippers = _segment_poses(src, seg)
                obj = task.subtasks[subtask].reference_object
                obj_src = Pose(np.asarray(steps[0].true_object_positions[obj]))
                obj_now = state.object_poses[obj]
                try:
                    plan = adapt(state.ee_pose, poses, obj_src, obj_now, task)
                    before = len(traj.steps)
                    state = replay(world, state, plan, grippers, traj,
                                   tracking_tol=np.inf)
                except (InfeasibleAdapt, EpisodeOver):
                    return state, None
                # relabel: the replayed mistake stands in for the policy
                for i in range(before, len(traj.steps)):
                    traj.steps[i] = Step(
                        obs=traj.steps[i].obs, action=traj.steps[i].action,
                        actor=ACTOR_POLICY, contact=traj.steps[i].contact,
                        true_object_positions=traj.steps[i].true_object_positions)
                t = detect_termination(traj.steps, criterion, start=before)
                if t is None:
                    # the source segment ends at the contact-clamped pose, so
                    # the replay stops just above the surface; one descent
                    # step reproduces the contact itself
                    state, t = self._probe_down(world, state, traj, criterion)
                return state, t
        return state, None

    def _probe_down(self, world, state, traj, criterion):
        task = self.task
        action = DeltaAction(
            np.array([0.0, 0.0, -task.max_step_translation]),
            np.zeros(3), geom.GRIPPER_HOLD)
        obs_robot = world.observe(state, ROLE_ROBOT)
        try:
            new_state, event = world.step(state, action)
        except EpisodeOver:
            return state, None
        traj.steps.append(Step(
            obs=obs_robot, action=action, actor=ACTOR_POLICY, contact=event,
            true_object_positions={
                o: tuple(state.object_poses[o].position)
                for o in task.object_ids}))
        t = detect_termination(traj.steps, criterion,
                               start=len(traj.steps) - 1)
        return new_state, t


def _attempt(args):
    (model, task, z, source, seed, index, criterion, keep_unassisted,
     offsets_by_attempt) = args
    ep_seed = episode_seed(seed, index)
    forced = offsets_by_attempt(index) if offsets_by_attempt else None
    traj, cause = generate_one(model, task, z, source, ep_seed,
                               criterion=criterion,
                               keep_unassisted=keep_unassisted,
                               forced_offsets=forced)
    return index, traj, cause, ep_seed


def generate(model, task: TaskSpec, z: CorruptionModel, source: Dataset,
             n: int, seed: int, workers: int = 1,
             criterion: Optional[str] = None, attempt_cap: Optional[int] = None,
             keep_unassisted: bool = False,
             offsets_by_attempt=None):
    """Generate n retained synthetic interventions.

    Per-episode seeds derive from (seed, attempt index); attempts are
    independent, so the retained set (the first n successes in index order)
    does not depend on worker scheduling.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cap = attempt_cap if attempt_cap is not None else 20 * n
    t0 = time.monotonic()
    report = GenerationReport()
    retained = {}
    causes = {}

    def args_for(i):
        return (model, task, z, source, seed, i, criterion, keep_unassisted,
                offsets_by_attempt)

    next_index = 0
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while len(retained) < n and next_index < cap:
            # size batches by the remaining need and the observed success rate
            if next_index == 0:
                batch = max(32, int(n * 1.3))
            else:
                rate = max(len(retained) / next_index, 0.05)
                batch = max(32, int((n - len(retained)) / rate * 1.2))
            indices = list(range(next_index, min(next_index + batch, cap)))
            next_index = indices[-1] + 1
            if pool is not None:
                results = list(pool.map(_attempt, [args_for(i) for i in indices],
                                        chunksize=8))
            else:
                results = [_attempt(args_for(i)) for i in indices]
            for index, traj, cause, ep_seed in results:
                if traj is not None:
                    retained[index] = traj
                else:
                    causes[index] = cause
    finally:
        if pool is not None:
            pool.shutdown()

    # keep the first n successes by attempt index; attempts beyond the nth
    # success are not charged, so the result is worker-count independent
    kept_indices = sorted(retained)[:n]
    ds = Dataset(task_id=task.task_id,
                 episodes=[retained[i] for i in kept_indices])
    if len(kept_indices) == n:
        cutoff = kept_indices[-1]
    else:
        cutoff = next_index - 1
    report.attempts = cutoff + 1
    for i in range(cutoff + 1):
        if i in retained:
            report.successes += 1
            report.episode_seeds.append(episode_seed(seed, i))
        else:
            report.failures[causes[i]] += 1
    report.wall_clock_s = time.monotonic() - t0
    if len(ds.episodes) < n:
        raise GenerationCapReached(ds, report)
    return ds, report


# -- aggregation ----------------------------------------------------------

def aggregate(base: Dataset, new: Dataset) -> Dataset:
    """Concatenate datasets (stable order), preserving provenance tags."""
    if base.task_id != new.task_id and new.episodes:
        raise ValueError(
            f"layout mismatch: {base.task_id} vs {new.task_id}")
    return Dataset(task_id=base.task_id,
                   episodes=list(base.episodes) + list(new.episodes))
