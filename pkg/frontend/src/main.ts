/**
 * Browser entry point: connect to the session server, draw frames to the
 * canvas, and forward keyboard teleoperation.
 */

import { SessionClient, connect } from "./client.js";
import { InputTracker } from "./input.js";
import { paint, sceneToDrawOps, Viewport } from "./render.js";

const TICK_MS = 50;

function statusLine(text: string): void {
  const el = document.getElementById("status");
  if (el) el.textContent = text;
}

export function start(url: string): void {
  const canvas = document.getElementById("scene") as HTMLCanvasElement | null;
  if (!canvas) throw new Error("missing #scene canvas");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("no 2d context");
  const view: Viewport = { width: canvas.width, height: canvas.height,
                           scale: canvas.width / 0.7 };
  let debug = false;

  let client: SessionClient;
  const input = new InputTracker({
    onToggleControl: () => client.toggleControl(),
    onToggleDebug: () => { debug = !debug; },
  });

  client = connect(url, {
    onReady: () => {
      statusLine("connected; Space takes over, B toggles the debug overlay");
      client.startEpisode();
    },
    onFrame: (frame) => {
      paint(ctx, view, sceneToDrawOps(frame.scene, view, { debug }));
      statusLine(`episode ${frame.episode} tick ${frame.tick} `
                 + `control=${frame.control}${debug ? " [debug]" : ""}`);
      if (frame.control === "human") {
        const a = input.coalesce();
        if (a) client.sendAction(a);
      }
    },
    onEpisodeEnd: (goal) => {
      statusLine(goal ? "episode done: goal reached" : "episode discarded");
      input.reset();
      client.startEpisode();
    },
    onVersionMismatch: () =>
      statusLine("protocol version mismatch; refresh after updating"),
    onClosed: (code) => statusLine(`disconnected (code ${code})`),
  });

  window.addEventListener("keydown", (ev) => {
    input.keyDown(ev.code);
    ev.preventDefault();
  });
  window.addEventListener("keyup", (ev) => input.keyUp(ev.code));

  // actions are also flushed on a fixed cadence so held keys keep moving
  // the arm between frames
  setInterval(() => {
    if (client.control === "human") {
      const a = input.coalesce();
      if (a) client.sendAction(a);
    }
  }, TICK_MS);
}
