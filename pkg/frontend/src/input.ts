/**
 * Keyboard teleoperation input with per-tick coalescing.
 *
 * Held movement keys accumulate into a single action per tick:
 *   W / ArrowUp     +y        S / ArrowDown   -y
 *   A / ArrowLeft   -x        D / ArrowRight  +x
 *   Q               +z        E               -z
 *   G               toggle the gripper (open <-> close), sent once
 *   Space           toggle takeover / release
 *
 * Each held axis contributes GAIN meters per tick; the server clamps the
 * resulting step to its own limits.
 */

import type { ActionMessage, Grip } from "./protocol.js";
import { action } from "./protocol.js";

export const GAIN = 0.005;

const AXIS_KEYS: Record<string, [number, number, number]> = {
  KeyW: [0, 1, 0],
  ArrowUp: [0, 1, 0],
  KeyS: [0, -1, 0],
  ArrowDown: [0, -1, 0],
  KeyA: [-1, 0, 0],
  ArrowLeft: [-1, 0, 0],
  KeyD: [1, 0, 0],
  ArrowRight: [1, 0, 0],
  KeyQ: [0, 0, 1],
  KeyE: [0, 0, -1],
};

export interface InputEvents {
  onToggleControl?: () => void;
  onToggleDebug?: () => void;
}

export class InputTracker {
  private held = new Set<string>();
  private gripperOpen = true;
  private pendingGrip: Grip | null = null;
  private events: InputEvents;

  constructor(events: InputEvents = {}) {
    this.events = events;
  }

  keyDown(code: string): void {
    if (code === "Space") {
      this.events.onToggleControl?.();
      return;
    }
    if (code === "KeyB") {
      this.events.onToggleDebug?.();
      return;
    }
    if (code === "KeyG") {
      this.gripperOpen = !this.gripperOpen;
      this.pendingGrip = this.gripperOpen ? "open" : "close";
      return;
    }
    if (code in AXIS_KEYS) {
      this.held.add(code);
    }
  }

  keyUp(code: string): void {
    this.held.delete(code);
  }

  /**
   * One action for the current tick, or null when there is nothing to send.
   * Movement from all held keys is summed; a pending gripper toggle rides
   * along (and is consumed) even with no movement.
   */
  coalesce(): ActionMessage | null {
    let dx = 0;
    let dy = 0;
    let dz = 0;
    for (const code of this.held) {
      const [ax, ay, az] = AXIS_KEYS[code];
      dx += ax * GAIN;
      dy += ay * GAIN;
      dz += az * GAIN;
    }
    const grip = this.pendingGrip ?? "hold";
    this.pendingGrip = null;
    if (dx === 0 && dy === 0 && dz === 0 && grip === "hold") {
      return null;
    }
    return action(dx, dy, dz, grip);
  }

  reset(): void {
    this.held.clear();
    this.pendingGrip = null;
    this.gripperOpen = true;
  }
}
