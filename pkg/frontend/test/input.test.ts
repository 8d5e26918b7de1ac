import { describe, expect, it, vi } from "vitest";

import { GAIN, InputTracker } from "../src/input.js";

describe("InputTracker", () => {
  it("emits nothing when idle", () => {
    const input = new InputTracker();
    expect(input.coalesce()).toBeNull();
  });

  it("maps movement keys to axes with the fixed gain", () => {
    const cases: Array<[string, [number, number, number]]> = [
      ["KeyW", [0, GAIN, 0]],
      ["ArrowUp", [0, GAIN, 0]],
      ["KeyS", [0, -GAIN, 0]],
      ["KeyA", [-GAIN, 0, 0]],
      ["ArrowRight", [GAIN, 0, 0]],
      ["KeyQ", [0, 0, GAIN]],
      ["KeyE", [0, 0, -GAIN]],
    ];
    for (const [code, [dx, dy, dz]] of cases) {
      const input = new InputTracker();
      input.keyDown(code);
      expect(input.coalesce()).toEqual(
        { type: "action", dx, dy, dz, grip: "hold" });
    }
  });

  it("coalesces simultaneously held keys into one action per tick", () => {
    const input = new InputTracker();
    input.keyDown("KeyW");
    input.keyDown("KeyD");
    input.keyDown("KeyQ");
    expect(input.coalesce()).toEqual(
      { type: "action", dx: GAIN, dy: GAIN, dz: GAIN, grip: "hold" });
    // still held: the next tick emits the same movement again
    expect(input.coalesce()).toEqual(
      { type: "action", dx: GAIN, dy: GAIN, dz: GAIN, grip: "hold" });
  });

  it("opposing keys cancel to no action", () => {
    const input = new InputTracker();
    input.keyDown("KeyW");
    input.keyDown("KeyS");
    expect(input.coalesce()).toBeNull();
  });

  it("stops on key release", () => {
    const input = new InputTracker();
    input.keyDown("KeyW");
    input.keyUp("KeyW");
    expect(input.coalesce()).toBeNull();
  });

  it("sends a gripper toggle exactly once", () => {
    const input = new InputTracker();
    input.keyDown("KeyG");
    expect(input.coalesce()).toEqual(
      { type: "action", dx: 0, dy: 0, dz: 0, grip: "close" });
    expect(input.coalesce()).toBeNull();
    input.keyDown("KeyG");
    expect(input.coalesce()).toEqual(
      { type: "action", dx: 0, dy: 0, dz: 0, grip: "open" });
  });

  it("rides a gripper toggle along with movement", () => {
    const input = new InputTracker();
    input.keyDown("KeyG");
    input.keyDown("KeyE");
    expect(input.coalesce()).toEqual(
      { type: "action", dx: 0, dy: 0, dz: -GAIN, grip: "close" });
    expect(input.coalesce()).toEqual(
      { type: "action", dx: 0, dy: 0, dz: -GAIN, grip: "hold" });
  });

  it("space toggles control instead of moving", () => {
    const onToggleControl = vi.fn();
    const input = new InputTracker({ onToggleControl });
    input.keyDown("Space");
    expect(onToggleControl).toHaveBeenCalledTimes(1);
    expect(input.coalesce()).toBeNull();
  });

  it("B toggles the debug overlay", () => {
    const onToggleDebug = vi.fn();
    const input = new InputTracker({ onToggleDebug });
    input.keyDown("KeyB");
    expect(onToggleDebug).toHaveBeenCalledTimes(1);
  });

  it("reset clears held keys and pending grip", () => {
    const input = new InputTracker();
    input.keyDown("KeyW");
    input.keyDown("KeyG");
    input.reset();
    expect(input.coalesce()).toBeNull();
  });
});
