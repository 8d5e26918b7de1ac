"""WebSocket session server for live monitoring and human-gated takeover.

One session per connection. The tick loop owns the world; client messages
land in a last-write-wins mailbox and are applied at tick boundaries, so
every recorded step has exactly one actor label.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from . import geom, policy as policy_mod, store
from .geom import DeltaAction
from .trajectory import (
    ACTOR_EXPERT, ACTOR_POLICY, Dataset, PROV_SOURCE_HUMAN, Step, Trajectory,
)
from .world import ROLE_ROBOT, CorruptionModel, TaskSpec, World, corruption_preset

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
CLOSE_VERSION_MISMATCH = 4000

CONTROL_POLICY = "policy"
CONTROL_HUMAN = "human"

_GRIPS = ("open", "close", "hold")


@dataclass
class Mailbox:
    """Last-write-wins intake between the reader and the tick loop."""
    action: Optional[DeltaAction] = None
    control_request: Optional[str] = None   # CONTROL_POLICY | CONTROL_HUMAN
    episode_cmd: Optional[str] = None       # "start" | "abort"

    def take(self):
        out = (self.action, self.control_request, self.episode_cmd)
        self.action = None
        self.control_request = None
        self.episode_cmd = None
        return out


@dataclass
class SessionState:
    world: World
    task: TaskSpec
    model: Optional[policy_mod.PolicyModel]
    out_path: Optional[str]
    tick_hz: float
    control: str = CONTROL_POLICY
    episode: int = 0
    tick: int = 0
    recording: Optional[Trajectory] = None
    world_state: object = None
    mailbox: Mailbox = field(default_factory=Mailbox)
    dataset: Dataset = None

    def __post_init__(self):
        if self.dataset is None:
            self.dataset = Dataset(task_id=self.task.task_id)


def _clamped_action(msg, task: TaskSpec) -> DeltaAction:
    grip = msg.get("grip", geom.GRIPPER_HOLD)
    if grip not in _GRIPS:
        raise ValueError(f"bad grip {grip!r}")
    t = np.array([float(msg.get("dx", 0.0)), float(msg.get("dy", 0.0)),
                  float(msg.get("dz", 0.0))])
    action, _ = geom.clamp_action(
        DeltaAction(t, np.zeros(3), grip),
        task.max_step_translation, task.max_step_rotation)
    return action


def handle_message(session: SessionState, msg) -> dict:
    """Mailbox update for one client message; returns the reply object."""
    if not isinstance(msg, dict) or "type" not in msg:
        return {"type": "error", "reason": "unknown-type"}
    kind = msg["type"]
    if kind == "takeover":
        session.mailbox.control_request = CONTROL_HUMAN
        return {"type": "ack", "tick": session.tick}
    if kind == "release":
        session.mailbox.control_request = CONTROL_POLICY
        return {"type": "ack", "tick": session.tick}
    if kind == "action":
        try:
            action = _clamped_action(msg, session.task)
        except (ValueError, TypeError):
            return {"type": "error", "reason": "malformed-action"}
        session.mailbox.action = action
        return {"type": "ack", "tick": session.tick,
                "applied": {"dx": float(action.translation[0]),
                            "dy": float(action.translation[1]),
                            "dz": float(action.translation[2]),
                            "grip": action.gripper}}
    if kind == "episode":
        cmd = msg.get("cmd")
        if cmd not in ("start", "abort"):
            return {"type": "error", "reason": "unknown-type"}
        session.mailbox.episode_cmd = cmd
        return {"type": "ack", "tick": session.tick}
    return {"type": "error", "reason": "unknown-type"}


def _begin_episode(session: SessionState) -> None:
    # the episode counter doubles as the world seed so replays are exact
    state = session.world.reset(session.episode)
    session.world_state = state
    session.recording = Trajectory(
        task_id=session.task.task_id, seed=session.episode,
        corruption=session.world.z, geometry_variant=state.geometry_variant,
        provenance=PROV_SOURCE_HUMAN)
    session.tick = 0


def _step_episode(session: SessionState, human_action):
    """One tick: pick the actor's action, step, record. Returns done flag."""
    world, state = session.world, session.world_state
    obs_robot = world.observe(state, ROLE_ROBOT)
    if session.control == CONTROL_HUMAN:
        action = human_action if human_action is not None else geom.zero_action()
        actor = ACTOR_EXPERT
    elif session.model is not None:
        action = policy_mod.act(session.model, obs_robot)
        actor = ACTOR_POLICY
    else:
        action = geom.zero_action()
        actor = ACTOR_POLICY
    new_state, event = world.step(state, action)
    session.recording.steps.append(Step(
        obs=obs_robot, action=action, actor=actor, contact=event,
        true_object_positions={
            o: tuple(state.object_poses[o].position)
            for o in session.task.object_ids}))
    session.world_state = new_state
    session.tick += 1
    done = world.goal_satisfied(new_state) \
        or new_state.step_count >= session.task.horizon
    return done


async def _session_loop(ws: WebSocket, session: SessionState) -> None:
    stop = asyncio.Event()

    async def reader():
        try:
            while True:
                msg = await ws.receive_json()
                await ws.send_json(handle_message(session, msg))
        except (WebSocketDisconnect, RuntimeError):
            stop.set()

    async def ticker():
        period = 1.0 / session.tick_hz
        while not stop.is_set():
            action, control_req, episode_cmd = session.mailbox.take()
            if control_req is not None:
                session.control = control_req
            if episode_cmd == "abort" and session.recording is not None:
                session.recording = None
                session.world_state = None
                session.episode += 1
                await ws.send_json({"type": "episode_end", "goal": False})
            if episode_cmd == "start" and session.recording is None:
                _begin_episode(session)
            if session.recording is not None:
                done = _step_episode(session, action)
                await ws.send_json({
                    "type": "frame",
                    "tick": session.tick,
                    "scene": session.world.render_frame(session.world_state),
                    "control": session.control,
                    "episode": session.episode,
                    "subtask": int(session.world_state.subtask_index),
                })
                if done:
                    goal = session.world.goal_satisfied(session.world_state)
                    traj = session.recording
                    traj.goal = bool(goal)
                    session.recording = None
                    session.world_state = None
                    session.episode += 1
                    session.dataset.episodes.append(traj)
                    if session.out_path:
                        store.write_dataset(session.dataset, session.out_path)
                    await ws.send_json({"type": "episode_end",
                                        "goal": bool(goal)})
            await asyncio.sleep(period)

    reader_task = asyncio.create_task(reader())
    try:
        await ticker()
    finally:
        reader_task.cancel()
        if session.recording is not None:
            log.info("client disconnected mid-episode; episode discarded")


def make_app(task: TaskSpec, z: CorruptionModel,
             model: Optional[policy_mod.PolicyModel] = None,
             out_path: Optional[str] = None,
             tick_hz: float = 20.0) -> FastAPI:
    app = FastAPI()

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket):
        await ws.accept()
        await ws.send_json({"type": "hello", "version": PROTOCOL_VERSION})
        try:
            hello = await ws.receive_json()
        except (WebSocketDisconnect, RuntimeError):
            return
        if not isinstance(hello, dict) or hello.get("type") != "hello" \
                or hello.get("version") != PROTOCOL_VERSION:
            await ws.close(code=CLOSE_VERSION_MISMATCH)
            return
        session = SessionState(world=World(task, z), task=task, model=model,
                               out_path=out_path, tick_hz=tick_hz)
        try:
            await _session_loop(ws, session)
        except (WebSocketDisconnect, RuntimeError):
            if session.recording is not None:
                log.info("client disconnected mid-episode; episode discarded")

    return app


def serve(config: store.RunConfig, port: int, out_path: str,
          model_path: Optional[str] = None, tick_hz: float = 20.0) -> None:
    """Blocking entry point used by the CLI."""
    import uvicorn
    task = config.build_task()
    z = corruption_preset(config.corruption)
    model = store.read_model(model_path) if model_path else None
    app = make_app(task, z, model=model, out_path=out_path, tick_hz=tick_hz)
    uvicorn.run(app, host="127.0.0.1", port=port)
