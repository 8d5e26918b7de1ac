"""Episode records shared by the simulator, policies, and the data pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .geom import DeltaAction
from .world import ContactEvent, CorruptionModel, Observation

ACTOR_POLICY = "policy"
ACTOR_EXPERT = "expert"

PROV_BASE = "base"
PROV_SYNTHETIC = "synthetic"
PROV_SOURCE_HUMAN = "source-human"


@dataclass(frozen=True)
class Step:
    obs: Observation            # robot-role observation (what the policy sees)
    action: DeltaAction
    actor: str                  # ACTOR_POLICY | ACTOR_EXPERT
    contact: Optional[ContactEvent]
    true_object_positions: dict  # privileged; generator-side only


@dataclass
class Trajectory:
    task_id: str
    seed: int
    corruption: CorruptionModel
    geometry_variant: int
    steps: list = field(default_factory=list)
    provenance: str = PROV_BASE
    goal: bool = False
    termination_index: Optional[int] = None

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class Segment:
    start: int
    end: int                    # [start, end)
    actor: str
    subtask_index: int
    # true reference-object position at segment start (expert segments)
    reference_position: Optional[tuple] = None


@dataclass
class Dataset:
    task_id: str
    episodes: list = field(default_factory=list)

    def __len__(self):
        return len(self.episodes)

    def step_count(self) -> int:
        return sum(len(e) for e in self.episodes)

    def provenance_counts(self) -> dict:
        out = {}
        for e in self.episodes:
            out[e.provenance] = out.get(e.provenance, 0) + 1
        return out
