"""Rigid-body pose algebra, segment retargeting, and bounded-step interpolation.

Poses are position + unit quaternion (w, x, y, z), canonical sign w >= 0.
Everything here is a pure function on immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_TOL = 1e-9

GRIPPER_OPEN = "open"
GRIPPER_CLOSE = "close"
GRIPPER_HOLD = "hold"
GRIPPER_COMMANDS = (GRIPPER_OPEN, GRIPPER_CLOSE, GRIPPER_HOLD)


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    """Normalize and fix the sign: w >= 0, with the w == 0 ambiguity broken
    toward a positive first nonzero axis component."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    elif q[0] == 0.0:
        for c in q[1:]:
            if c != 0.0:
                if c < 0.0:
                    q = -q
                break
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector v by quaternion q."""
    w, x, y, z = q
    u = np.array([x, y, z])
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def quat_to_axis_angle(q: np.ndarray) -> np.ndarray:
    """Rotation vector (axis * angle) of a canonical-sign quaternion.

    atan2 keeps the angle well conditioned near identity, where acos(w)
    loses all precision below ~1e-8 rad.
    """
    q = _canonical_quat(q)
    s = float(np.linalg.norm(q[1:]))
    if s < 1e-12:
        return np.zeros(3)
    angle = 2.0 * math.atan2(s, q[0])
    return (q[1:] / s) * angle


def axis_angle_to_quat(r: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(r))
    if angle < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    axis = np.asarray(r, dtype=float) / angle
    h = 0.5 * angle
    return _canonical_quat(np.concatenate(([math.cos(h)], math.sin(h) * axis)))


def quat_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    d = min(1.0, abs(float(np.dot(a, b))))
    return 2.0 * math.acos(d)


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = _canonical_quat(self.orientation)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)
        p.setflags(write=False)
        q.setflags(write=False)

    def almost_equal(self, other: "Pose", tol: float = QUAT_TOL) -> bool:
        # Rotation compared up to the q/-q double cover: near w == 0 the
        # canonical sign can flip under rounding while the rotation is equal.
        qd = min(float(np.abs(self.orientation - other.orientation).max()),
                 float(np.abs(self.orientation + other.orientation).max()))
        return bool(np.allclose(self.position, other.position, atol=tol)
                    and qd <= tol)


def identity() -> Pose:
    return Pose(np.zeros(3))


def translation(x: float, y: float, z: float = 0.0) -> Pose:
    return Pose(np.array([x, y, z]))


def from_yaw(yaw: float, position=(0.0, 0.0, 0.0)) -> Pose:
    return Pose(np.asarray(position, dtype=float),
                np.array([math.cos(yaw / 2.0), 0.0, 0.0, math.sin(yaw / 2.0)]))


def compose(a: Pose, b: Pose) -> Pose:
    """Homogeneous-matrix product semantics: (a * b) x = a(b(x))."""
    return Pose(a.position + quat_rotate(a.orientation, b.position),
                quat_mul(a.orientation, b.orientation))


def inverse(p: Pose) -> Pose:
    qc = quat_conj(p.orientation)
    return Pose(-quat_rotate(qc, p.position), qc)


def transform_segment(seg: list, obj_src: Pose, obj_dst: Pose) -> list:
    """Retarget an end-effector pose sequence from one object frame to another,
    preserving every ee-to-object relative pose."""
    if not seg:
        raise ValueError("empty segment")
    t = compose(obj_dst, inverse(obj_src))
    return [compose(t, p) for p in seg]


def slerp(a: Pose, b: Pose, s: float) -> Pose:
    """Shortest-arc interpolation; the 180-degree ambiguity is resolved by the
    canonical sign of the relative quaternion."""
    rel = _canonical_quat(quat_mul(quat_conj(a.orientation), b.orientation))
    rv = quat_to_axis_angle(rel)
    q = quat_mul(a.orientation, axis_angle_to_quat(s * rv))
    return Pose((1.0 - s) * a.position + s * b.position, q)


def interpolate(start: Pose, end: Pose, max_step_translation: float,
                max_step_rotation: float) -> list:
    """Pose sequence from start to end, linear in position, shortest-arc in
    orientation, with every consecutive step inside the controller limits.

    Length is 1 + ceil(max(dpos / max_t, drot / max_r)).
    """
    if max_step_translation <= 0 or max_step_rotation <= 0:
        raise ValueError("step limits must be positive")
    dpos = float(np.linalg.norm(end.position - start.position))
    drot = quat_angle_between(start.orientation, end.orientation)
    n_steps = max(math.ceil(dpos / max_step_translation - 1e-12),
                  math.ceil(drot / max_step_rotation - 1e-12))
    if n_steps == 0:
        return [start]
    out = [start]
    for i in range(1, n_steps):
        out.append(slerp(start, end, i / n_steps))
    out.append(end)
    return out


@dataclass(frozen=True)
class DeltaAction:
    translation: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gripper: str = GRIPPER_HOLD

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        r = np.asarray(self.rotation, dtype=float).reshape(3)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)
        t.setflags(write=False)
        r.setflags(write=False)
        if self.gripper not in GRIPPER_COMMANDS:
            raise ValueError(f"bad gripper command {self.gripper!r}")


def zero_action(gripper: str = GRIPPER_HOLD) -> DeltaAction:
    return DeltaAction(np.zeros(3), np.zeros(3), gripper)


def _clamp_vec(v: np.ndarray, limit: float):
    mag = float(np.linalg.norm(v))
    # relative slack keeps clamping idempotent under float rounding
    if mag <= limit * (1.0 + 1e-12) or mag == 0.0:
        return v, False
    return v * (limit / mag), True


def clamp_action(d: DeltaAction, max_step_translation: float,
                 max_step_rotation: float):
    """Clamp magnitudes (direction preserved). Returns (action, clamped)."""
    t, ct = _clamp_vec(d.translation, max_step_translation)
    r, cr = _clamp_vec(d.rotation, max_step_rotation)
    if not (ct or cr):
        return d, False
    return DeltaAction(t, r, d.gripper), True


def delta_between(a: Pose, b: Pose, max_step_translation: float,
                  max_step_rotation: float, gripper: str = GRIPPER_HOLD):
    """Delta-pose command taking a to b, clamped to controller limits.

    Returns (action, clamped); clamped=True flags that one step cannot reach b.
    """
    t = b.position - a.position
    r = quat_to_axis_angle(quat_mul(b.orientation, quat_conj(a.orientation)))
    return clamp_action(DeltaAction(t, r, gripper), max_step_translation,
                        max_step_rotation)


def apply_delta(p: Pose, d: DeltaAction) -> Pose:
    """World-frame delta: translate the position, pre-multiply the rotation."""
    return Pose(p.position + d.translation,
                quat_mul(axis_angle_to_quat(d.rotation), p.orientation))
