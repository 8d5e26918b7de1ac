/**
 * Session client: version handshake, typed message dispatch, and the
 * takeover / action / episode commands.
 *
 * The socket is injected behind a minimal interface so the state machine is
 * testable without a browser WebSocket.
 */

import {
  CLOSE_VERSION_MISMATCH,
  ClientMessage,
  FrameMessage,
  PROTOCOL_VERSION,
  ProtocolError,
  ServerMessage,
  episodeCommand,
  hello,
  parseServerMessage,
  release,
  takeover,
} from "./protocol.js";
import type { ActionMessage, Control } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(code?: number): void;
}

export interface SessionEvents {
  onReady?: () => void;
  onFrame?: (frame: FrameMessage) => void;
  onEpisodeEnd?: (goal: boolean) => void;
  onAck?: (tick: number) => void;
  onServerError?: (reason: string) => void;
  onVersionMismatch?: (serverVersion: number) => void;
  onClosed?: (code: number) => void;
}

export type ClientState = "handshaking" | "ready" | "closed";

export class SessionClient {
  private socket: SocketLike;
  private events: SessionEvents;
  private _state: ClientState = "handshaking";
  private _control: Control = "policy";
  private _lastFrame: FrameMessage | null = null;

  constructor(socket: SocketLike, events: SessionEvents = {}) {
    this.socket = socket;
    this.events = events;
  }

  get state(): ClientState {
    return this._state;
  }

  get control(): Control {
    return this._control;
  }

  get lastFrame(): FrameMessage | null {
    return this._lastFrame;
  }

  /** Feed one raw message from the socket into the state machine. */
  handleRaw(raw: string): void {
    let msg: ServerMessage;
    try {
      msg = parseServerMessage(raw);
    } catch (e) {
      if (e instanceof ProtocolError) {
        this.events.onServerError?.(e.message);
        return;
      }
      throw e;
    }
    this.handleMessage(msg);
  }

  handleMessage(msg: ServerMessage): void {
    if (this._state === "handshaking") {
      if (msg.type !== "hello") {
        return; // ignore anything before the server hello
      }
      if (msg.version !== PROTOCOL_VERSION) {
        this.events.onVersionMismatch?.(msg.version);
        this.socket.close(CLOSE_VERSION_MISMATCH);
        this._state = "closed";
        return;
      }
      this.send(hello());
      this._state = "ready";
      this.events.onReady?.();
      return;
    }
    switch (msg.type) {
      case "frame":
        this._lastFrame = msg;
        this._control = msg.control;
        this.events.onFrame?.(msg);
        break;
      case "ack":
        this.events.onAck?.(msg.tick);
        break;
      case "error":
        this.events.onServerError?.(msg.reason);
        break;
      case "episode_end":
        this.events.onEpisodeEnd?.(msg.goal);
        break;
      case "hello":
        break; // duplicate hello after the handshake; ignore
    }
  }

  handleClose(code: number): void {
    this._state = "closed";
    if (code === CLOSE_VERSION_MISMATCH) {
      this.events.onVersionMismatch?.(-1);
    }
    this.events.onClosed?.(code);
  }

  private send(msg: ClientMessage): void {
    if (this._state === "closed") {
      return;
    }
    this.socket.send(JSON.stringify(msg));
  }

  requestTakeover(): void {
    this.send(takeover());
  }

  requestRelease(): void {
    this.send(release());
  }

  toggleControl(): void {
    if (this._control === "human") {
      this.requestRelease();
    } else {
      this.requestTakeover();
    }
  }

  sendAction(a: ActionMessage): void {
    this.send(a);
  }

  startEpisode(): void {
    this.send(episodeCommand("start"));
  }

  abortEpisode(): void {
    this.send(episodeCommand("abort"));
  }
}

/** Wire a SessionClient to a live browser WebSocket. */
export function connect(url: string, events: SessionEvents = {}): SessionClient {
  const ws = new WebSocket(url);
  const client = new SessionClient(
    { send: (d) => ws.send(d), close: (c) => ws.close(c) },
    events,
  );
  ws.onmessage = (ev) => client.handleRaw(String(ev.data));
  ws.onclose = (ev) => client.handleClose(ev.code);
  return client;
}
