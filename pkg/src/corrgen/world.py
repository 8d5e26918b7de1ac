"""Quasi-static kinematic simulator for the two desk-scale tasks.

The world owns task geometry, initial-state sampling, contact detection, goal
predicates, and the observation-corruption function. A WorldState is a value;
stepping is a pure transition, so many worlds can advance concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import geom
from .geom import DeltaAction, Pose

TASK_PLANAR_PEG = "planar_peg_insert"
TASK_GEOMETRY = "geometry_assembly"

PRED_GRASPED = "grasped"
PRED_INSERTED = "inserted"
PRED_PLACED = "placed"

ROLE_ROBOT = "robot"
ROLE_EXPERT = "expert"

FEEDBACK_FULL = "full"
FEEDBACK_PARTIAL = "partial"
FEEDBACK_NONE = "none"

# rng stream tags so each random decision has its own substream per episode
_STREAM_PLACEMENT = 0
_STREAM_VARIANT = 1
_STREAM_CORRUPTION = 2


class EpisodeOver(Exception):
    """Raised when step() is called on a state already at the horizon."""


class InfeasibleCorruption(Exception):
    """Rejection sampling could not satisfy the min-offset constraint."""


@dataclass(frozen=True)
class SubtaskSpec:
    reference_object: str
    predicate: str


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    workspace_min: np.ndarray
    workspace_max: np.ndarray
    placement_min: np.ndarray
    placement_max: np.ndarray
    goal_tol: float
    subtasks: tuple
    horizon: int
    max_step_translation: float = 0.005
    max_step_rotation: float = 0.05
    grasp_radius: float = 0.01
    obstruction_radius: float = 0.08
    hover_z: float = 0.05
    contact_z: float = 0.01
    insert_z: float = 0.005
    handle_z: float = 0.02
    handle_offset: float = 0.03
    gripper_max: float = 0.08
    object_width: float = 0.02
    ee_home: np.ndarray = field(default_factory=lambda: np.array([-0.15, 0.0, 0.10]))
    place_target: np.ndarray = field(default_factory=lambda: np.array([0.12, 0.12, 0.0]))
    feedback_mode: str = FEEDBACK_FULL

    def __post_init__(self):
        if self.goal_tol <= 0 or self.horizon <= 0 or not self.subtasks:
            raise ValueError("goal_tol, horizon, subtasks must be nonempty/positive")
        if (np.any(self.placement_min < self.workspace_min)
                or np.any(self.placement_max > self.workspace_max)):
            raise ValueError("placement region must lie inside the workspace")

    @property
    def object_ids(self):
        if self.task_id == TASK_GEOMETRY:
            return ("goal", "handle", "nut")
        return tuple(sorted({s.reference_object for s in self.subtasks}))


def make_task(task_id: str, **overrides) -> TaskSpec:
    """Build one of the two desk-scale tasks with the default scene layout."""
    ws_min = np.array([-0.2, -0.2, 0.0])
    ws_max = np.array([0.2, 0.2, 0.2])
    pl_min = np.array([-0.05, -0.05, 0.0])
    pl_max = np.array([0.05, 0.05, 0.0])
    if task_id == TASK_PLANAR_PEG:
        spec = TaskSpec(
            task_id=task_id,
            workspace_min=ws_min, workspace_max=ws_max,
            placement_min=pl_min, placement_max=pl_max,
            goal_tol=0.01,
            subtasks=(SubtaskSpec("peg", PRED_INSERTED),),
            horizon=400,
            feedback_mode=FEEDBACK_FULL,
        )
    elif task_id == TASK_GEOMETRY:
        spec = TaskSpec(
            task_id=task_id,
            workspace_min=ws_min, workspace_max=ws_max,
            placement_min=pl_min, placement_max=pl_max,
            goal_tol=0.01,
            subtasks=(SubtaskSpec("nut", PRED_GRASPED),
                      SubtaskSpec("goal", PRED_PLACED)),
            horizon=400,
            feedback_mode=FEEDBACK_NONE,
        )
    else:
        raise ValueError(f"unknown task {task_id!r}")
    return replace(spec, **overrides) if overrides else spec


@dataclass(frozen=True)
class CorruptionModel:
    """The observation-corruption function z applied to robot-side poses."""
    kind: str = "none"  # none | uniform_box | geometry_flip | radial_ring
    half_widths: tuple = (0.0, 0.0, 0.0)
    min_offset: float = 0.0
    min_offset_axis: str = "any"  # "any" or "x"/"y"/"z"
    radial_range: tuple = (0.0, 0.0)
    flip_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if any(h < 0 for h in self.half_widths):
            raise ValueError("half-widths must be >= 0")
        if self.kind == "uniform_box" and self.min_offset > max(self.half_widths):
            raise ValueError("min_offset exceeds every half-width")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError("flip_probability outside [0,1]")


def corruption_preset(name: str) -> CorruptionModel:
    presets = {
        "none": CorruptionModel(),
        # +-4 cm per planar axis, at least 2 cm in one dimension
        "peg_noise": CorruptionModel(kind="uniform_box",
                                     half_widths=(0.04, 0.04, 0.0),
                                     min_offset=0.02),
        # +-4 cm per planar axis, at least 1 cm in one dimension
        "receptacle_noise": CorruptionModel(kind="uniform_box",
                                            half_widths=(0.04, 0.04, 0.0),
                                            min_offset=0.01),
        # radial noise between 2 and 4 cm
        "coffee_radial": CorruptionModel(kind="radial_ring",
                                         radial_range=(0.02, 0.04)),
        # +-1 cm in x and +-7 cm in y, at least 2.5 cm in y
        "block_noise": CorruptionModel(kind="uniform_box",
                                       half_widths=(0.01, 0.07, 0.0),
                                       min_offset=0.025, min_offset_axis="y"),
        "geometry_flip": CorruptionModel(kind="geometry_flip",
                                         flip_probability=0.5),
    }
    if name not in presets:
        raise ValueError(f"unknown corruption preset {name!r}")
    return presets[name]


def corrupt(true_position: np.ndarray, z: CorruptionModel, rng) -> np.ndarray:
    """Sample a corrupted position. Deterministic given the rng state."""
    if z.kind == "uniform_box":
        hw = np.asarray(z.half_widths)
        axes = {"any": None, "x": 0, "y": 1, "z": 2}[z.min_offset_axis]
        for _ in range(10_000):
            off = rng.uniform(-hw, hw)
            if z.min_offset == 0.0:
                return true_position + off
            if axes is None:
                if np.max(np.abs(off)) >= z.min_offset:
                    return true_position + off
            elif abs(off[axes]) >= z.min_offset:
                return true_position + off
        raise InfeasibleCorruption("min-offset constraint unsatisfiable")
    if z.kind == "radial_ring":
        r = rng.uniform(*z.radial_range)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        return true_position + np.array([r * math.cos(theta),
                                         r * math.sin(theta), 0.0])
    return np.array(true_position, dtype=float, copy=True)


@dataclass(frozen=True)
class FeedbackFeatures:
    active: bool = False
    payload: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mode: str = FEEDBACK_NONE


@dataclass(frozen=True)
class ContactEvent:
    objects: tuple
    location: np.ndarray
    step: int


@dataclass(frozen=True)
class Observation:
    ee_pose: Pose
    gripper_width: float
    observed_object_poses: dict
    contact_feedback: FeedbackFeatures
    subtask_index: int


@dataclass(frozen=True)
class WorldState:
    ee_pose: Pose
    gripper_width: float
    object_poses: dict
    held_object: Optional[str]
    held_rel: Optional[Pose]
    geometry_variant: int
    step_count: int
    subtask_index: int
    seed: int
    # corrupted positions for the current subtask, frozen at subtask start
    observed_positions: dict = field(default_factory=dict)
    feedback_active: bool = False
    feedback_payload: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gripper_closed_empty: bool = False


class World:
    """One task instance factory: reset produces states, step advances them."""

    def __init__(self, task: TaskSpec, z: CorruptionModel = CorruptionModel(),
                 forced_offsets: Optional[dict] = None):
        self.task = task
        self.z = z
        # (subtask, object) -> offset; overrides z sampling when present
        self.forced_offsets = forced_offsets

    # -- sampling ---------------------------------------------------------

    def _episode_rng(self, seed: int, stream: int, *extra) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([seed, stream, *extra]))

    def _sample_corruption(self, seed: int, subtask: int, obj_index: int,
                           true_position: np.ndarray) -> np.ndarray:
        rng = self._episode_rng(seed, _STREAM_CORRUPTION, subtask, obj_index)
        return corrupt(true_position, self.z, rng)

    def _true_position(self, state_objects: dict, obj: str) -> np.ndarray:
        return state_objects[obj].position

    def _frozen_observed(self, seed: int, subtask: int, objects: dict,
                         held: Optional[str] = None) -> dict:
        out = {}
        for i, obj in enumerate(self.task.object_ids):
            true_pos = self._believed_true(objects, obj, held)
            out[obj] = self._sample_corruption(seed, subtask, i, true_pos)
        return out

    def _believed_true(self, objects: dict, obj: str,
                       held: Optional[str] = None) -> np.ndarray:
        """Ground-truth position fed to z. The geometry-flip error reports the
        variant-1 handle regardless of the true variant; once the nut is held
        the handle sits in the gripper, so its true side is known."""
        if self.task.task_id == TASK_GEOMETRY and obj == "handle" \
                and self.z.kind == "geometry_flip" and held != "nut":
            nut = objects["nut"].position
            return nut + np.array([self.task.handle_offset, 0.0,
                                   self.task.handle_z])
        return objects[obj].position

    def reset(self, seed: int) -> WorldState:
        """Sample an initial state. Deterministic given seed."""
        task = self.task
        rng = self._episode_rng(seed, _STREAM_PLACEMENT)
        variant = 1
        if task.task_id == TASK_GEOMETRY:
            vr = self._episode_rng(seed, _STREAM_VARIANT)
            p = self.z.flip_probability if self.z.kind == "geometry_flip" else 0.0
            variant = 2 if vr.uniform() < p else 1
        objects = {}
        if task.task_id == TASK_PLANAR_PEG:
            pos = rng.uniform(task.placement_min, task.placement_max)
            objects["peg"] = Pose(pos)
        else:
            pos = rng.uniform(task.placement_min, task.placement_max)
            objects["nut"] = Pose(pos)
            sign = 1.0 if variant == 1 else -1.0
            objects["handle"] = Pose(pos + np.array(
                [sign * task.handle_offset, 0.0, task.handle_z]))
            objects["goal"] = Pose(np.array(task.place_target))
        state = WorldState(
            ee_pose=Pose(np.array(task.ee_home)),
            gripper_width=task.gripper_max,
            object_poses=objects,
            held_object=None,
            held_rel=None,
            geometry_variant=variant,
            step_count=0,
            subtask_index=0,
            seed=seed,
        )
        observed = self._observed_for_subtask(state, 0)
        return replace(state, observed_positions=observed)

    def _observed_for_subtask(self, state: WorldState, subtask: int) -> dict:
        held = state.held_object
        if self.forced_offsets is not None:
            out = {}
            for obj in self.task.object_ids:
                base = self._believed_true(state.object_poses, obj, held)
                out[obj] = base + np.asarray(
                    self.forced_offsets.get((subtask, obj), np.zeros(3)))
            return out
        if self.z.kind in ("none", "geometry_flip"):
            return {obj: self._believed_true(state.object_poses, obj, held)
                    for obj in self.task.object_ids}
        return self._frozen_observed(state.seed, subtask, state.object_poses,
                                     held)

    # -- observation ------------------------------------------------------

    def observe(self, state: WorldState, role: str = ROLE_ROBOT) -> Observation:
        task = self.task
        if role == ROLE_EXPERT:
            observed = {obj: state.object_poses[obj]
                        for obj in self._visible_objects()}
            feedback = FeedbackFeatures(mode=task.feedback_mode)
        else:
            observed = {obj: Pose(state.observed_positions[obj])
                        for obj in self._visible_objects()}
            feedback = FeedbackFeatures(
                active=state.feedback_active,
                payload=np.array(state.feedback_payload),
                mode=task.feedback_mode)
        return Observation(
            ee_pose=state.ee_pose,
            gripper_width=state.gripper_width,
            observed_object_poses=observed,
            contact_feedback=feedback,
            subtask_index=state.subtask_index,
        )

    def _visible_objects(self):
        return self.task.object_ids

    # -- dynamics ---------------------------------------------------------

    def _probe_position(self, state: WorldState, ee_pos: np.ndarray) -> np.ndarray:
        """Point checked against the target's tolerance and obstruction."""
        sub = self.task.subtasks[state.subtask_index]
        if sub.predicate == PRED_PLACED and state.held_object is not None:
            held = geom.compose(Pose(ee_pos, state.ee_pose.orientation),
                                state.held_rel)
            return held.position
        return ee_pos

    def _target_position(self, state: WorldState) -> np.ndarray:
        sub = self.task.subtasks[state.subtask_index]
        return state.object_poses[sub.reference_object].position

    def step(self, state: WorldState, action: DeltaAction):
        """Advance one tick. Returns (new_state, contact_event_or_None)."""
        task = self.task
        if state.step_count >= task.horizon:
            raise EpisodeOver(f"horizon {task.horizon} reached")
        action, _ = geom.clamp_action(action, task.max_step_translation,
                                      task.max_step_rotation)
        ee = geom.apply_delta(state.ee_pose, action)
        pos = np.clip(ee.position, task.workspace_min, task.workspace_max)

        event = None
        done_subtask = state.subtask_index < len(task.subtasks)
        sub = task.subtasks[state.subtask_index] if done_subtask else None

        feedback_active = state.feedback_active
        feedback_payload = state.feedback_payload

        if sub is not None:
            target = self._target_position(state)
            probe = self._probe_position(state, pos)
            miss = float(np.linalg.norm((probe - target)[:2]))
            if (probe[2] < task.contact_z
                    and task.goal_tol < miss <= task.obstruction_radius):
                # descent blocked on the obstruction rim
                lift = task.contact_z - probe[2]
                pos = pos + np.array([0.0, 0.0, lift])
                probe = probe + np.array([0.0, 0.0, lift])
                event = ContactEvent(
                    objects=("ee" if state.held_object is None
                             else state.held_object, sub.reference_object),
                    location=np.array([probe[0], probe[1], task.contact_z]),
                    step=state.step_count)
                if not feedback_active and task.feedback_mode != FEEDBACK_NONE:
                    feedback_active = True
                    if task.feedback_mode == FEEDBACK_FULL:
                        feedback_payload = np.array(target)
                    else:
                        d = target - event.location
                        n = np.linalg.norm(d)
                        feedback_payload = d / n if n > 0 else np.zeros(3)

        ee = Pose(pos, ee.orientation)

        # gripper + grasp/release
        width = state.gripper_width
        held = state.held_object
        held_rel = state.held_rel
        closed_empty = state.gripper_closed_empty
        if action.gripper == geom.GRIPPER_OPEN:
            width = task.gripper_max
            held, held_rel = None, None
            closed_empty = False
        elif action.gripper == geom.GRIPPER_CLOSE and held is None:
            grabbed = None
            if task.task_id == TASK_GEOMETRY:
                handle = state.object_poses["handle"].position
                if np.linalg.norm(ee.position - handle) <= task.grasp_radius:
                    grabbed = "nut"
            if grabbed is not None:
                held = grabbed
                held_rel = geom.compose(geom.inverse(ee),
                                        state.object_poses[grabbed])
                width = task.object_width
                closed_empty = False
            else:
                width = 0.0
                closed_empty = True

        objects = state.object_poses
        if held is not None:
            objects = dict(objects)
            objects[held] = geom.compose(ee, held_rel)
            if held == "nut":
                sign = 1.0 if state.geometry_variant == 1 else -1.0
                objects["handle"] = geom.compose(
                    objects["nut"],
                    Pose(np.array([sign * task.handle_offset, 0.0,
                                   task.handle_z])))

        new_state = replace(
            state, ee_pose=ee, gripper_width=width, object_poses=objects,
            held_object=held, held_rel=held_rel,
            step_count=state.step_count + 1,
            feedback_active=feedback_active, feedback_payload=feedback_payload,
            gripper_closed_empty=closed_empty)

        if sub is not None and self._predicate_holds(new_state, sub):
            next_sub = new_state.subtask_index + 1
            new_state = replace(new_state, subtask_index=next_sub,
                                feedback_active=False,
                                feedback_payload=np.zeros(3),
                                gripper_closed_empty=False)
            if next_sub < len(task.subtasks):
                new_state = replace(
                    new_state,
                    observed_positions=self._observed_for_subtask(
                        new_state, next_sub))
        return new_state, event

    def _predicate_holds(self, state: WorldState, sub: SubtaskSpec) -> bool:
        task = self.task
        if sub.predicate == PRED_GRASPED:
            return state.held_object == sub.reference_object \
                or (sub.reference_object == "nut" and state.held_object == "nut")
        if sub.predicate == PRED_INSERTED:
            target = state.object_poses[sub.reference_object].position
            miss = np.linalg.norm((state.ee_pose.position - target)[:2])
            return miss <= task.goal_tol and state.ee_pose.position[2] <= task.insert_z
        if sub.predicate == PRED_PLACED:
            if state.held_object is None:
                return False
            held = state.object_poses[state.held_object].position
            target = state.object_poses[sub.reference_object].position
            miss = np.linalg.norm((held - target)[:2])
            return miss <= task.goal_tol and held[2] <= task.insert_z
        raise ValueError(f"unknown predicate {sub.predicate!r}")

    def goal_satisfied(self, state: WorldState) -> bool:
        return state.subtask_index >= len(self.task.subtasks)

    # -- rendering --------------------------------------------------------

    def render_frame(self, state: WorldState) -> dict:
        """Drawable 2D scene description (top-down); pure projection."""
        task = self.task
        shapes = [{
            "kind": "workspace",
            "min": [float(v) for v in task.workspace_min[:2]],
            "max": [float(v) for v in task.workspace_max[:2]],
        }]
        for obj in task.object_ids:
            true_p = state.object_poses[obj].position
            believed = state.observed_positions[obj]
            shapes.append({
                "kind": "object", "id": obj,
                "true": [float(v) for v in true_p],
                "believed": [float(v) for v in believed],
                "radius": float(task.goal_tol),
                "obstruction_radius": float(task.obstruction_radius),
                "debug_only": bool(np.linalg.norm(true_p - believed) > 0),
            })
        shapes.append({
            "kind": "ee",
            "position": [float(v) for v in state.ee_pose.position],
            "gripper_width": float(state.gripper_width),
            "held": state.held_object,
        })
        return {
            "shapes": shapes,
            "step": int(state.step_count),
            "subtask": int(state.subtask_index),
            "feedback_active": bool(state.feedback_active),
            "goal": bool(self.goal_satisfied(state)),
        }
