/**
 * Wire protocol for the teleoperation session WebSocket.
 *
 * The server speaks the same protocol; the shared fixtures in
 * ../protocol/fixtures.json pin the message shapes on both sides.
 */

export const PROTOCOL_VERSION = 1;
export const CLOSE_VERSION_MISMATCH = 4000;

export type Grip = "open" | "close" | "hold";
export type Control = "policy" | "human";

// -- client -> server -----------------------------------------------------

export interface HelloMessage {
  type: "hello";
  version: number;
}

export interface TakeoverMessage {
  type: "takeover";
}

export interface ReleaseMessage {
  type: "release";
}

export interface ActionMessage {
  type: "action";
  dx: number;
  dy: number;
  dz: number;
  grip: Grip;
}

export interface EpisodeCommandMessage {
  type: "episode";
  cmd: "start" | "abort";
}

export type ClientMessage =
  | HelloMessage
  | TakeoverMessage
  | ReleaseMessage
  | ActionMessage
  | EpisodeCommandMessage;

export function hello(): HelloMessage {
  return { type: "hello", version: PROTOCOL_VERSION };
}

export function takeover(): TakeoverMessage {
  return { type: "takeover" };
}

export function release(): ReleaseMessage {
  return { type: "release" };
}

export function action(dx: number, dy: number, dz: number,
                       grip: Grip): ActionMessage {
  return { type: "action", dx, dy, dz, grip };
}

export function episodeCommand(cmd: "start" | "abort"): EpisodeCommandMessage {
  return { type: "episode", cmd };
}

// -- server -> client -----------------------------------------------------

export interface WorkspaceShape {
  kind: "workspace";
  min: [number, number];
  max: [number, number];
}

export interface ObjectShape {
  kind: "object";
  id: string;
  true: [number, number, number];
  believed: [number, number, number];
  radius: number;
  obstruction_radius: number;
  debug_only: boolean;
}

export interface EeShape {
  kind: "ee";
  position: [number, number, number];
  gripper_width: number;
  held: string | null;
}

export type Shape = WorkspaceShape | ObjectShape | EeShape;

export interface Scene {
  shapes: Shape[];
  step: number;
  subtask: number;
  feedback_active: boolean;
  goal: boolean;
}

export interface FrameMessage {
  type: "frame";
  tick: number;
  scene: Scene;
  control: Control;
  episode: number;
  subtask: number;
}

export interface ServerHelloMessage {
  type: "hello";
  version: number;
}

export interface AckMessage {
  type: "ack";
  tick: number;
  applied?: { dx: number; dy: number; dz: number; grip: Grip };
}

export interface ErrorMessage {
  type: "error";
  reason: string;
}

export interface EpisodeEndMessage {
  type: "episode_end";
  goal: boolean;
}

export type ServerMessage =
  | ServerHelloMessage
  | FrameMessage
  | AckMessage
  | ErrorMessage
  | EpisodeEndMessage;

const SERVER_TYPES = new Set(["hello", "frame", "ack", "error", "episode_end"]);

export class ProtocolError extends Error {}

/** Parse and shape-check one server message; throws ProtocolError. */
export function parseServerMessage(raw: string): ServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new ProtocolError("not JSON");
  }
  if (typeof data !== "object" || data === null) {
    throw new ProtocolError("not an object");
  }
  const msg = data as Record<string, unknown>;
  if (typeof msg.type !== "string" || !SERVER_TYPES.has(msg.type)) {
    throw new ProtocolError(`unknown server message type ${String(msg.type)}`);
  }
  switch (msg.type) {
    case "hello":
      if (typeof msg.version !== "number") {
        throw new ProtocolError("hello without version");
      }
      break;
    case "frame":
      for (const key of ["tick", "scene", "control", "episode", "subtask"]) {
        if (!(key in msg)) throw new ProtocolError(`frame missing ${key}`);
      }
      break;
    case "ack":
      if (typeof msg.tick !== "number") {
        throw new ProtocolError("ack without tick");
      }
      break;
    case "error":
      if (typeof msg.reason !== "string") {
        throw new ProtocolError("error without reason");
      }
      break;
    case "episode_end":
      if (typeof msg.goal !== "boolean") {
        throw new ProtocolError("episode_end without goal");
      }
      break;
  }
  return msg as unknown as ServerMessage;
}
