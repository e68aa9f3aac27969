// Top-down scene rendering. Scene construction is pure (same frame, same
// scene) so it can be tested without a canvas; painting walks the scene
// against a 2D context.

import { StateFrame, VehicleShape } from "./protocol.js";

export const FSM_COLORS: Record<string, string> = {
  L: "#2e9e4f", // lane keep: green
  F: "#2b6fd4", // follow: blue
  O: "#d4b82b", // overtake: yellow
  A: "#d43b2b", // abort: red
};

export interface Camera {
  centerX: number;
  centerY: number;
  pixelsPerMeter: number;
  width: number;
  height: number;
}

export type SceneNode =
  | { kind: "lane_line"; y: number; dashed: boolean }
  | { kind: "road_fill"; yMin: number; yMax: number }
  | { kind: "vehicle"; shape: VehicleShape; ego: boolean }
  | { kind: "ssr_points"; points: [number, number][] }
  | { kind: "reach_outline"; points: [number, number][] }
  | { kind: "horizon_line"; points: [number, number][] }
  | { kind: "marker"; label: "p_ref" | "p_interim"; x: number; y: number }
  | { kind: "badge"; fsm: string; color: string; t: number; vRef: number };

export function buildScene(frame: StateFrame): SceneNode[] {
  const halfLane = frame.lane_width / 2;
  const top = frame.lane_width * (frame.lane_count - 0.5);
  const scene: SceneNode[] = [];
  scene.push({ kind: "road_fill", yMin: -halfLane, yMax: top });
  // outer edges solid, inner dividers dashed
  scene.push({ kind: "lane_line", y: -halfLane, dashed: false });
  for (let lane = 1; lane < frame.lane_count; lane++) {
    scene.push({ kind: "lane_line", y: lane * frame.lane_width - halfLane, dashed: true });
  }
  scene.push({ kind: "lane_line", y: top, dashed: false });

  if (frame.ssr.length > 0) scene.push({ kind: "ssr_points", points: frame.ssr });
  if (frame.reach.length > 2) scene.push({ kind: "reach_outline", points: frame.reach });
  for (const actor of frame.actors) {
    scene.push({ kind: "vehicle", shape: actor, ego: false });
  }
  scene.push({ kind: "vehicle", shape: frame.ego, ego: true });
  if (frame.horizon.length > 1) {
    scene.push({ kind: "horizon_line", points: frame.horizon });
  }
  scene.push({ kind: "marker", label: "p_interim", x: frame.p_interim[0], y: frame.p_interim[1] });
  scene.push({ kind: "marker", label: "p_ref", x: frame.p_ref[0], y: frame.p_ref[1] });
  scene.push({
    kind: "badge",
    fsm: frame.fsm,
    color: FSM_COLORS[frame.fsm] ?? "#888888",
    t: frame.t,
    vRef: frame.v_ref,
  });
  return scene;
}

export function cameraFor(frame: StateFrame, width: number, height: number,
                          pixelsPerMeter = 14): Camera {
  return {
    centerX: frame.ego.x + 12,
    centerY: frame.ego.y,
    pixelsPerMeter,
    width,
    height,
  };
}

export function worldToScreen(cam: Camera, x: number, y: number): [number, number] {
  return [
    (x - cam.centerX) * cam.pixelsPerMeter + cam.width / 2,
    cam.height / 2 - (y - cam.centerY) * cam.pixelsPerMeter,
  ];
}

function vehiclePath(ctx: CanvasRenderingContext2D, cam: Camera, v: VehicleShape): void {
  const cos = Math.cos(v.psi);
  const sin = Math.sin(v.psi);
  const hl = v.length / 2;
  const hw = v.width / 2;
  const corners: [number, number][] = [
    [hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw],
  ].map(([lx, ly]) => [v.x + lx * cos - ly * sin, v.y + lx * sin + ly * cos]);
  ctx.beginPath();
  corners.forEach(([wx, wy], i) => {
    const [sx, sy] = worldToScreen(cam, wx, wy);
    if (i === 0) ctx.moveTo(sx, sy);
    else ctx.lineTo(sx, sy);
  });
  ctx.closePath();
}

export function paint(ctx: CanvasRenderingContext2D, scene: SceneNode[], cam: Camera): void {
  ctx.fillStyle = "#20242b";
  ctx.fillRect(0, 0, cam.width, cam.height);
  for (const node of scene) {
    switch (node.kind) {
      case "road_fill": {
        const [, yTop] = worldToScreen(cam, 0, node.yMax);
        const [, yBot] = worldToScreen(cam, 0, node.yMin);
        ctx.fillStyle = "#3a3f47";
        ctx.fillRect(0, yTop, cam.width, yBot - yTop);
        break;
      }
      case "lane_line": {
        const [, sy] = worldToScreen(cam, 0, node.y);
        ctx.strokeStyle = "#e8e8e8";
        ctx.lineWidth = 2;
        ctx.setLineDash(node.dashed ? [12, 10] : []);
        ctx.beginPath();
        ctx.moveTo(0, sy);
        ctx.lineTo(cam.width, sy);
        ctx.stroke();
        ctx.setLineDash([]);
        break;
      }
      case "ssr_points": {
        ctx.fillStyle = "rgba(72, 200, 120, 0.35)";
        const r = Math.max(1.5, cam.pixelsPerMeter * 0.22);
        for (const [x, y] of node.points) {
          const [sx, sy] = worldToScreen(cam, x, y);
          ctx.fillRect(sx - r, sy - r, 2 * r, 2 * r);
        }
        break;
      }
      case "reach_outline": {
        ctx.strokeStyle = "rgba(120, 200, 255, 0.8)";
        ctx.lineWidth = 1.5;
        ctx.beginPath();
        node.points.forEach(([x, y], i) => {
          const [sx, sy] = worldToScreen(cam, x, y);
          if (i === 0) ctx.moveTo(sx, sy);
          else ctx.lineTo(sx, sy);
        });
        ctx.closePath();
        ctx.stroke();
        break;
      }
      case "vehicle": {
        vehiclePath(ctx, cam, node.shape);
        ctx.fillStyle = node.ego ? "#58b2f0" : "#c78f4a";
        ctx.fill();
        ctx.strokeStyle = "#11151a";
        ctx.lineWidth = 1;
        ctx.stroke();
        break;
      }
      case "horizon_line": {
        ctx.strokeStyle = "#f0e65a";
        ctx.lineWidth = 2;
        ctx.beginPath();
        node.points.forEach(([x, y], i) => {
          const [sx, sy] = worldToScreen(cam, x, y);
          if (i === 0) ctx.moveTo(sx, sy);
          else ctx.lineTo(sx, sy);
        });
        ctx.stroke();
        break;
      }
      case "marker": {
        const [sx, sy] = worldToScreen(cam, node.x, node.y);
        ctx.strokeStyle = node.label === "p_ref" ? "#ff7d52" : "#7dff52";
        ctx.lineWidth = 2;
        ctx.beginPath();
        ctx.moveTo(sx - 6, sy);
        ctx.lineTo(sx + 6, sy);
        ctx.moveTo(sx, sy - 6);
        ctx.lineTo(sx, sy + 6);
        ctx.stroke();
        break;
      }
      case "badge": {
        ctx.fillStyle = node.color;
        ctx.fillRect(12, 12, 54, 30);
        ctx.fillStyle = "#ffffff";
        ctx.font = "bold 20px sans-serif";
        ctx.fillText(node.fsm, 32, 34);
        ctx.font = "13px monospace";
        ctx.fillText(`t=${node.t.toFixed(1)}s  v_ref=${node.vRef.toFixed(1)}`, 76, 32);
        break;
      }
    }
  }
}
