"""The learner (nonparametric cloned policy) and the oracle expert that
stands in for the human during automated collection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import geom
from .geom import DeltaAction, Pose
from .trajectory import ACTOR_EXPERT, ACTOR_POLICY, Step, Trajectory
from .world import (
    Observation, ROLE_EXPERT, ROLE_ROBOT, TASK_GEOMETRY, TASK_PLANAR_PEG,
    TaskSpec, World,
)

GRIPPER_CODES = {geom.GRIPPER_OPEN: 0, geom.GRIPPER_CLOSE: 1,
                 geom.GRIPPER_HOLD: 2}
GRIPPER_NAMES = {v: k for k, v in GRIPPER_CODES.items()}

_DIST_EPS = 1e-6
# extra neighbors fetched so exact ties resolve by lowest row index
_TIE_SLACK = 8


class EmptyDatasetError(ValueError):
    pass


class LayoutMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureLayout:
    """Flattened observation layout: ordered (name, size) pairs."""
    fields: tuple

    @property
    def dim(self) -> int:
        return sum(s for _, s in self.fields)

    @classmethod
    def for_task(cls, task: TaskSpec) -> "FeatureLayout":
        fields = [("ee_position", 3), ("gripper_width", 1)]
        for obj in task.object_ids:
            fields.append((f"obj:{obj}", 3))
        fields.append(("feedback_payload", 3))
        fields.append(("feedback_active", 1))
        fields.append(("subtask_onehot", len(task.subtasks)))
        return cls(tuple(fields))


def features_from_obs(obs: Observation, layout: FeatureLayout) -> np.ndarray:
    out = np.empty(layout.dim)
    i = 0
    for name, size in layout.fields:
        if name == "ee_position":
            out[i:i + 3] = obs.ee_pose.position
        elif name == "gripper_width":
            out[i] = obs.gripper_width
        elif name.startswith("obj:"):
            out[i:i + 3] = obs.observed_object_poses[name[4:]].position
        elif name == "feedback_payload":
            out[i:i + 3] = obs.contact_feedback.payload
        elif name == "feedback_active":
            out[i] = 1.0 if obs.contact_feedback.active else 0.0
        elif name == "subtask_onehot":
            out[i:i + size] = 0.0
            idx = min(obs.subtask_index, size - 1)
            out[i + idx] = 1.0
        else:
            raise ValueError(f"unknown feature field {name!r}")
        i += size
    return out


@dataclass
class PolicyModel:
    layout: FeatureLayout
    features: np.ndarray        # raw, one row per training step
    translations: np.ndarray
    rotations: np.ndarray
    grippers: np.ndarray        # int codes
    weights: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    k: int
    max_step_translation: float
    max_step_rotation: float
    provenance: np.ndarray = None  # per-row episode provenance (audit only)
    _tree: cKDTree = field(default=None, repr=False, compare=False)

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree((self.features - self.mean) / self.scale)
        return self._tree

    def __getstate__(self):
        d = dict(self.__dict__)
        d["_tree"] = None  # rebuilt lazily after unpickling
        return d


def fit(dataset, task: TaskSpec, k: int = 3,
        weights_mode: str = "uniform") -> PolicyModel:
    """Build the nonparametric cloned policy from a dataset.

    With weights_mode="balanced", steps of intervention episodes (provenance
    other than base) are up-weighted by base_steps / intervention_steps so the
    two pools carry equal total weight.
    """
    if dataset is None or len(dataset.episodes) == 0:
        raise EmptyDatasetError("cannot fit on an empty dataset")
    layout = FeatureLayout.for_task(task)
    rows, trans, rots, grips, prov = [], [], [], [], []
    for ep in dataset.episodes:
        for step in ep.steps:
            try:
                rows.append(features_from_obs(step.obs, layout))
            except KeyError as e:
                raise LayoutMismatchError(f"observation missing field {e}") from e
            trans.append(step.action.translation)
            rots.append(step.action.rotation)
            grips.append(GRIPPER_CODES[step.action.gripper])
            prov.append(ep.provenance)
    if not rows:
        raise EmptyDatasetError("dataset has no steps")
    X = np.asarray(rows)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    scale = np.where(std > 0, std, 1.0)
    prov = np.asarray(prov)
    weights = np.ones(len(X))
    if weights_mode == "balanced":
        is_int = prov != "base"
        n_int = int(is_int.sum())
        n_base = len(X) - n_int
        if n_int and n_base:
            weights[is_int] = n_base / n_int
    elif weights_mode != "uniform":
        raise ValueError(f"unknown weights mode {weights_mode!r}")
    return PolicyModel(
        layout=layout, features=X,
        translations=np.asarray(trans), rotations=np.asarray(rots),
        grippers=np.asarray(grips), weights=weights, mean=mean, scale=scale,
        k=k, max_step_translation=task.max_step_translation,
        max_step_rotation=task.max_step_rotation, provenance=prov)


def neighbors(model: PolicyModel, obs: Observation):
    """k nearest training rows with deterministic (distance, index) ordering."""
    x = (features_from_obs(obs, model.layout) - model.mean) / model.scale
    kq = min(model.k + _TIE_SLACK, len(model.features))
    dist, idx = model.tree().query(x, k=kq)
    dist, idx = np.atleast_1d(dist), np.atleast_1d(idx)
    order = np.lexsort((idx, dist))
    sel = order[:model.k]
    return idx[sel], dist[sel]


def act(model: PolicyModel, obs: Observation) -> DeltaAction:
    """Inverse-distance weighted average over the k nearest neighbors;
    gripper by weighted majority vote (ties toward hold)."""
    idx, dist = neighbors(model, obs)
    w = model.weights[idx] / (dist + _DIST_EPS)
    w = w / w.sum()
    t = w @ model.translations[idx]
    r = w @ model.rotations[idx]
    votes = np.zeros(3)
    for i, wi in zip(idx, w):
        votes[model.grippers[i]] += wi
    best = float(votes.max())
    winners = [c for c in range(3) if votes[c] == best]
    code = GRIPPER_CODES[geom.GRIPPER_HOLD] if len(winners) > 1 else winners[0]
    action, _ = geom.clamp_action(
        DeltaAction(t, r, GRIPPER_NAMES[code]),
        model.max_step_translation, model.max_step_rotation)
    return action


@dataclass
class OracleExpert:
    """Privileged proportional controller toward the current subtask's
    true-object waypoints. Only ever consumes expert-role observations."""
    task: TaskSpec
    align_tol: float = 0.002

    def act(self, obs: Observation) -> DeltaAction:
        task = self.task
        ee = obs.ee_pose.position
        if obs.subtask_index >= len(task.subtasks):
            return geom.zero_action()
        sub = task.subtasks[obs.subtask_index]
        if task.task_id == TASK_PLANAR_PEG:
            peg = obs.observed_object_poses["peg"].position
            return self._approach_and_descend(ee, peg, target_z=0.0)
        if sub.predicate == "grasped":
            handle = obs.observed_object_poses["handle"].position
            near = np.linalg.norm(ee - handle) <= task.grasp_radius * 0.5
            if obs.gripper_width <= 0.0:
                # missed grasp: travel with the gripper still closed so the
                # zero width marks every recovery state, reopen on arrival
                if near:
                    return geom.zero_action(geom.GRIPPER_OPEN)
                return self._approach_and_descend(ee, handle,
                                                  target_z=handle[2])
            if near:
                return geom.zero_action(geom.GRIPPER_CLOSE)
            return self._approach_and_descend(ee, handle,
                                              target_z=handle[2])
        # place the held nut onto the goal
        goal = obs.observed_object_poses["goal"].position
        nut_off = obs.observed_object_poses["handle"].position \
            - obs.observed_object_poses["nut"].position
        # steer the nut center (ee is offset by the handle-to-nut vector)
        carry = ee - nut_off
        target_ee_xy = goal[:2] + nut_off[:2]
        d_xy = np.linalg.norm(carry[:2] - goal[:2])
        if ee[2] < task.hover_z and d_xy > self.align_tol:
            return self._clamp(np.array([0.0, 0.0, task.hover_z - ee[2]]))
        if d_xy > self.align_tol:
            return self._clamp(np.concatenate(
                [target_ee_xy - ee[:2], [task.hover_z - ee[2]]]))
        # descend until the nut bottoms out at the insert height, still
        # correcting xy so the funnel stays attractive under interpolation
        nut_z = obs.observed_object_poses["nut"].position[2]
        return self._clamp(np.concatenate(
            [target_ee_xy - ee[:2], [-(nut_z - 0.0)]]))

    def _approach_and_descend(self, ee, target, target_z,
                              gripper=geom.GRIPPER_HOLD) -> DeltaAction:
        d_xy = np.linalg.norm(ee[:2] - target[:2])
        if d_xy > self.align_tol:
            if ee[2] < self.task.hover_z - 1e-9 and d_xy > 0.02:
                # climb first so the approach clears obstructions
                return self._clamp(np.array([0.0, 0.0, self.task.hover_z - ee[2]]),
                                   gripper)
            return self._clamp(np.concatenate(
                [target[:2] - ee[:2],
                 [max(self.task.hover_z, target_z + 0.01) - ee[2]]]), gripper)
        return self._clamp(np.concatenate([target[:2] - ee[:2],
                                           [target_z - ee[2]]]), gripper)

    def _clamp(self, t, gripper=geom.GRIPPER_HOLD) -> DeltaAction:
        action, _ = geom.clamp_action(
            DeltaAction(t, np.zeros(3), gripper),
            self.task.max_step_translation, self.task.max_step_rotation)
        return action


class OracleGate:
    """Oracle stand-in for the human gate: takes control when the mistake
    criterion fires, hands back once the current subtask completes."""

    def __init__(self, expert: OracleExpert, criterion: str = "composite"):
        self.expert = expert
        self.criterion = criterion

    def should_take_over(self, state, event) -> bool:
        if self.criterion in ("contact", "composite") and event is not None:
            return True
        if self.criterion in ("gripper-closed-empty", "composite") \
                and state.gripper_closed_empty and state.held_object is None:
            return True
        return False


def rollout(actor, world: World, seed: int, gate: Optional[OracleGate] = None,
            max_steps: Optional[int] = None,
            provenance: str = "base") -> Trajectory:
    """Run one episode. Records robot-role observations and per-step actor
    labels; with a gate, control alternates policy -> expert per mistake."""
    task = world.task
    state = world.reset(seed)
    traj = Trajectory(task_id=task.task_id, seed=seed, corruption=world.z,
                      geometry_variant=state.geometry_variant,
                      provenance=provenance)
    horizon = max_steps if max_steps is not None else task.horizon
    control = ACTOR_POLICY if gate is not None else None
    gate_subtask = None
    for _ in range(horizon):
        if world.goal_satisfied(state):
            break
        obs_robot = world.observe(state, ROLE_ROBOT)
        if gate is not None and control == ACTOR_EXPERT:
            action = gate.expert.act(world.observe(state, ROLE_EXPERT))
            actor_label = ACTOR_EXPERT
        elif isinstance(actor, OracleExpert):
            action = actor.act(world.observe(state, ROLE_EXPERT))
            actor_label = ACTOR_EXPERT
        else:
            action = act(actor, obs_robot)
            actor_label = ACTOR_POLICY
        new_state, event = world.step(state, action)
        traj.steps.append(Step(
            obs=obs_robot, action=action, actor=actor_label, contact=event,
            true_object_positions={
                o: tuple(state.object_poses[o].position)
                for o in task.object_ids}))
        if gate is not None:
            if control == ACTOR_POLICY and gate.should_take_over(new_state, event):
                control = ACTOR_EXPERT
                gate_subtask = new_state.subtask_index
            elif control == ACTOR_EXPERT \
                    and new_state.subtask_index != gate_subtask:
                control = ACTOR_POLICY
        state = new_state
    traj.goal = world.goal_satisfied(state)
    return traj
