"""Bit-exact persistence for datasets, models, configs, and reports.

Dataset files are UTF-8 JSON lines: the first line is a header object, every
following line one episode. Field order is fixed and floats use shortest
round-trip formatting, so equal values always produce equal bytes.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Optional

import numpy as np

from . import geom
from .geom import DeltaAction, Pose
from .policy import FeatureLayout, PolicyModel
from .trajectory import Dataset, Step, Trajectory
from .world import (
    ContactEvent, CorruptionModel, FeedbackFeatures, Observation, TaskSpec,
    make_task,
)

SCHEMA_VERSION = 1
MODEL_SCHEMA_VERSION = 1


class SchemaVersionError(ValueError):
    pass


class MalformedLineError(ValueError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _floats(v) -> list:
    return [float(x) for x in v]


# -- pose / action / observation codecs -----------------------------------

def _pose_to_json(p: Pose) -> list:
    return _floats(p.position) + _floats(p.orientation)


def _pose_from_json(v) -> Pose:
    return Pose(np.array(v[:3]), np.array(v[3:]))


def _corruption_to_json(z: CorruptionModel) -> dict:
    return {
        "kind": z.kind,
        "half_widths": _floats(z.half_widths),
        "min_offset": float(z.min_offset),
        "min_offset_axis": z.min_offset_axis,
        "radial_range": _floats(z.radial_range),
        "flip_probability": float(z.flip_probability),
        "seed": int(z.seed),
    }


def _corruption_from_json(d) -> CorruptionModel:
    return CorruptionModel(
        kind=d["kind"], half_widths=tuple(d["half_widths"]),
        min_offset=d["min_offset"], min_offset_axis=d["min_offset_axis"],
        radial_range=tuple(d["radial_range"]),
        flip_probability=d["flip_probability"], seed=d["seed"])


def _step_to_json(t: int, s: Step) -> dict:
    obs = s.obs
    rec = {
        "t": t,
        "ee": _pose_to_json(obs.ee_pose),
        "width": float(obs.gripper_width),
        "objects": {k: _pose_to_json(v)
                    for k, v in sorted(obs.observed_object_poses.items())},
        "feedback": {
            "active": bool(obs.contact_feedback.active),
            "payload": _floats(obs.contact_feedback.payload),
            "mode": obs.contact_feedback.mode,
        },
        "subtask": int(obs.subtask_index),
        "action": {
            "translation": _floats(s.action.translation),
            "rotation": _floats(s.action.rotation),
            "gripper": s.action.gripper,
        },
        "actor": s.actor,
        "contact": None,
        "true_objects": {k: _floats(v)
                         for k, v in sorted(s.true_object_positions.items())},
    }
    if s.contact is not None:
        rec["contact"] = {
            "objects": list(s.contact.objects),
            "location": _floats(s.contact.location),
            "step": int(s.contact.step),
        }
    return rec


def _step_from_json(d) -> Step:
    contact = None
    if d["contact"] is not None:
        contact = ContactEvent(objects=tuple(d["contact"]["objects"]),
                               location=np.array(d["contact"]["location"]),
                               step=d["contact"]["step"])
    obs = Observation(
        ee_pose=_pose_from_json(d["ee"]),
        gripper_width=d["width"],
        observed_object_poses={k: _pose_from_json(v)
                               for k, v in d["objects"].items()},
        contact_feedback=FeedbackFeatures(
            active=d["feedback"]["active"],
            payload=np.array(d["feedback"]["payload"]),
            mode=d["feedback"]["mode"]),
        subtask_index=d["subtask"])
    action = DeltaAction(np.array(d["action"]["translation"]),
                         np.array(d["action"]["rotation"]),
                         d["action"]["gripper"])
    return Step(obs=obs, action=action, actor=d["actor"], contact=contact,
                true_object_positions={k: tuple(v)
                                       for k, v in d["true_objects"].items()})


def _episode_to_json(ep: Trajectory) -> dict:
    return {
        "header": {
            "task_id": ep.task_id,
            "seed": int(ep.seed),
            "corruption": _corruption_to_json(ep.corruption),
            "geometry_variant": int(ep.geometry_variant),
            "provenance": ep.provenance,
            "goal": bool(ep.goal),
            "termination_index": ep.termination_index,
        },
        "steps": [_step_to_json(t, s) for t, s in enumerate(ep.steps)],
    }


def _episode_from_json(d) -> Trajectory:
    h = d["header"]
    return Trajectory(
        task_id=h["task_id"], seed=h["seed"],
        corruption=_corruption_from_json(h["corruption"]),
        geometry_variant=h["geometry_variant"],
        steps=[_step_from_json(s) for s in d["steps"]],
        provenance=h["provenance"], goal=h["goal"],
        termination_index=h["termination_index"])


# -- dataset files --------------------------------------------------------

def write_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    lines = [_dumps({"schema_version": SCHEMA_VERSION, "task_id": ds.task_id,
                     "episodes": len(ds.episodes)})]
    lines.extend(_dumps(_episode_to_json(ep)) for ep in ds.episodes)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dataset(path) -> Dataset:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MalformedLineError(1, "empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise MalformedLineError(1, str(e)) from e
    version = header.get("schema_version")
    if version is None or version > SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported schema version {version}")
    ds = Dataset(task_id=header["task_id"])
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            ds.episodes.append(_episode_from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise MalformedLineError(i, str(e)) from e
    return ds


def dataset_bytes(ds: Dataset) -> bytes:
    """Canonical serialization without touching disk (fingerprintable)."""
    lines = [_dumps({"schema_version": SCHEMA_VERSION, "task_id": ds.task_id,
                     "episodes": len(ds.episodes)})]
    lines.extend(_dumps(_episode_to_json(ep)) for ep in ds.episodes)
    return ("\n".join(lines) + "\n").encode("utf-8")


# -- validation -----------------------------------------------------------

def validate(path) -> list:
    """Schema and invariant checks; violations are returned, not raised."""
    violations = []
    try:
        ds = read_dataset(path)
    except (SchemaVersionError, MalformedLineError, OSError) as e:
        return [f"unreadable: {e}"]
    for i, ep in enumerate(ds.episodes):
        tag = f"episode {i}"
        if ep.task_id != ds.task_id:
            violations.append(f"{tag}: task mismatch")
        if not ep.steps:
            violations.append(f"{tag}: empty")
            continue
        if ep.provenance == "synthetic":
            if not ep.goal:
                violations.append(f"{tag}: goal-filter")
            if ep.termination_index is None:
                violations.append(f"{tag}: missing termination index")
            else:
                # suffix filter: the retained episode must begin at the
                # mistake boundary (contact, or a closed-empty gripper)
                head = ep.steps[:2]
                boundary = any(s.contact is not None for s in head) \
                    or any(s.obs.gripper_width <= 0.0 for s in head)
                if not boundary:
                    violations.append(f"{tag}: suffix-filter")
    violations.extend(_raw_step_checks(path))
    return violations


def _raw_step_checks(path) -> list:
    out = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        d = json.loads(line)
        ts = [s["t"] for s in d["steps"]]
        if ts != list(range(len(ts))):
            out.append(f"line {i}: monotone-t")
    return out


# -- model files ----------------------------------------------------------

def write_model(model: PolicyModel, path) -> None:
    path = Path(path)
    meta = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "layout": [list(f) for f in model.layout.fields],
        "k": model.k,
        "max_step_translation": model.max_step_translation,
        "max_step_rotation": model.max_step_rotation,
    }
    with open(path, "wb") as fh:
        np.savez(fh,
             meta=np.frombuffer(_dumps(meta).encode("utf-8"), dtype=np.uint8),
             features=model.features, translations=model.translations,
             rotations=model.rotations, grippers=model.grippers,
             weights=model.weights, mean=model.mean, scale=model.scale,
             provenance=model.provenance.astype("U"))


def read_model(path) -> PolicyModel:
    with np.load(path, allow_pickle=False) as f:
        meta = json.loads(bytes(f["meta"]).decode("utf-8"))
        if meta["schema_version"] > MODEL_SCHEMA_VERSION:
            raise SchemaVersionError(
                f"unsupported model schema {meta['schema_version']}")
        layout = FeatureLayout(tuple((n, int(s)) for n, s in meta["layout"]))
        return PolicyModel(
            layout=layout, features=f["features"],
            translations=f["translations"], rotations=f["rotations"],
            grippers=f["grippers"], weights=f["weights"], mean=f["mean"],
            scale=f["scale"], k=meta["k"],
            max_step_translation=meta["max_step_translation"],
            max_step_rotation=meta["max_step_rotation"],
            provenance=f["provenance"])


# -- run config -----------------------------------------------------------

@dataclasses.dataclass
class RunConfig:
    task: str = "planar_peg_insert"
    corruption: str = "peg_noise"
    k: int = 3
    weights_mode: str = "uniform"
    max_step_translation: float = 0.005
    max_step_rotation: float = 0.05
    m: int = 10
    n: int = 1000
    seed: int = 0
    workers: int = 1
    attempt_cap: Optional[int] = None
    observability: str = "default"  # default | full | partial | none
    eval_trials: int = 200

    _RANGES = {
        "k": (1, 64), "m": (1, 10_000), "n": (1, 1_000_000),
        "workers": (1, 256), "eval_trials": (1, 1_000_000),
    }

    def __post_init__(self):
        for key, (lo, hi) in self._RANGES.items():
            v = getattr(self, key)
            if not lo <= v <= hi:
                raise ValueError(f"{key}={v} outside [{lo}, {hi}]")
        if self.weights_mode not in ("uniform", "balanced"):
            raise ValueError(f"bad weights_mode {self.weights_mode!r}")
        if self.observability not in ("default", "full", "partial", "none"):
            raise ValueError(f"bad observability {self.observability!r}")

    @classmethod
    def load(cls, path) -> "RunConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(dataclasses.asdict(self), indent=2) + "\n",
            encoding="utf-8")

    def build_task(self) -> TaskSpec:
        task = make_task(self.task,
                         max_step_translation=self.max_step_translation,
                         max_step_rotation=self.max_step_rotation)
        if self.observability != "default":
            task = dataclasses.replace(task, feedback_mode=self.observability)
        return task


def write_report(report, path) -> None:
    d = {
        "attempts": report.attempts,
        "successes": report.successes,
        "failures": report.failures,
        "wall_clock_s": report.wall_clock_s,
        "episode_seeds": report.episode_seeds,
    }
    Path(path).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
