/**
 * Top-down scene rendering as a pure transform from a frame's scene to a
 * list of draw primitives, plus a thin canvas painter for them.
 *
 * The believed object pose is always drawn; the true pose and the offset
 * line between them appear only with the debug overlay enabled (and only
 * for objects the server flagged as perturbed).
 */

import type { Scene, Shape } from "./protocol.js";

export interface Viewport {
  width: number;
  height: number;
  /** world meters -> pixels */
  scale: number;
}

export type DrawOp =
  | { op: "rect"; x: number; y: number; w: number; h: number; stroke: string }
  | { op: "circle"; x: number; y: number; r: number; stroke: string;
      fill?: string }
  | { op: "line"; x1: number; y1: number; x2: number; y2: number;
      stroke: string; dashed?: boolean }
  | { op: "text"; x: number; y: number; text: string; fill: string };

export interface RenderOptions {
  debug: boolean;
}

function toPx(v: Viewport, x: number, y: number): [number, number] {
  // world origin at the canvas center, +y up
  return [v.width / 2 + x * v.scale, v.height / 2 - y * v.scale];
}

export function sceneToDrawOps(scene: Scene, view: Viewport,
                               options: RenderOptions): DrawOp[] {
  const ops: DrawOp[] = [];
  for (const shape of scene.shapes) {
    ops.push(...shapeOps(shape, view, options));
  }
  const status = [
    `step ${scene.step}`,
    `subtask ${scene.subtask}`,
    scene.feedback_active ? "CONTACT" : "",
    scene.goal ? "GOAL" : "",
  ].filter(Boolean).join("  ");
  ops.push({ op: "text", x: 8, y: 16, text: status, fill: "#222" });
  return ops;
}

function shapeOps(shape: Shape, view: Viewport,
                  options: RenderOptions): DrawOp[] {
  switch (shape.kind) {
    case "workspace": {
      const [x0, y0] = toPx(view, shape.min[0], shape.max[1]);
      const [x1, y1] = toPx(view, shape.max[0], shape.min[1]);
      return [{ op: "rect", x: x0, y: y0, w: x1 - x0, h: y1 - y0,
                stroke: "#999" }];
    }
    case "object": {
      const ops: DrawOp[] = [];
      const [bx, by] = toPx(view, shape.believed[0], shape.believed[1]);
      ops.push({ op: "circle", x: bx, y: by,
                 r: shape.obstruction_radius * view.scale, stroke: "#ddd" });
      ops.push({ op: "circle", x: bx, y: by, r: shape.radius * view.scale,
                 stroke: "#06c", fill: "#e8f0ff" });
      ops.push({ op: "text", x: bx + 6, y: by - 6, text: shape.id,
                 fill: "#06c" });
      if (options.debug && shape.debug_only) {
        const [tx, ty] = toPx(view, shape.true[0], shape.true[1]);
        ops.push({ op: "circle", x: tx, y: ty, r: shape.radius * view.scale,
                   stroke: "#c30" });
        ops.push({ op: "line", x1: bx, y1: by, x2: tx, y2: ty,
                   stroke: "#c30", dashed: true });
      }
      return ops;
    }
    case "ee": {
      const [x, y] = toPx(view, shape.position[0], shape.position[1]);
      const open = shape.gripper_width > 0;
      const ops: DrawOp[] = [
        { op: "circle", x, y, r: 6, stroke: "#000",
          fill: open ? "#fff" : "#000" },
      ];
      if (shape.held) {
        ops.push({ op: "text", x: x + 8, y: y + 4,
                   text: `holding ${shape.held}`, fill: "#000" });
      }
      return ops;
    }
  }
}

export function paint(ctx: CanvasRenderingContext2D, view: Viewport,
                      ops: DrawOp[]): void {
  ctx.clearRect(0, 0, view.width, view.height);
  ctx.font = "12px sans-serif";
  for (const op of ops) {
    switch (op.op) {
      case "rect":
        ctx.strokeStyle = op.stroke;
        ctx.setLineDash([]);
        ctx.strokeRect(op.x, op.y, op.w, op.h);
        break;
      case "circle":
        ctx.beginPath();
        ctx.arc(op.x, op.y, op.r, 0, 2 * Math.PI);
        if (op.fill) {
          ctx.fillStyle = op.fill;
          ctx.fill();
        }
        ctx.strokeStyle = op.stroke;
        ctx.setLineDash([]);
        ctx.stroke();
        break;
      case "line":
        ctx.beginPath();
        ctx.setLineDash(op.dashed ? [4, 3] : []);
        ctx.moveTo(op.x1, op.y1);
        ctx.lineTo(op.x2, op.y2);
        ctx.strokeStyle = op.stroke;
        ctx.stroke();
        break;
      case "text":
        ctx.fillStyle = op.fill;
        ctx.fillText(op.text, op.x, op.y);
        break;
    }
  }
}
