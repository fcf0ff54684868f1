/** Bird's-eye scatter rendering: world<->screen transform, pan/zoom and
 * point picking are pure math so they are testable headless; drawing goes
 * through a minimal context interface implemented by CanvasRenderingContext2D.
 */

import { ClusterView, ScatterPoint } from "./model.js";

export interface Viewport {
  scale: number; // pixels per metre
  centerX: number; // world coords at the canvas center
  centerY: number;
  width: number; // canvas size in pixels
  height: number;
}

export function fitViewport(
  bbox: [number, number, number, number],
  width: number,
  height: number,
  margin = 0.15,
): Viewport {
  const [x0, y0, x1, y1] = bbox;
  const spanX = Math.max(x1 - x0, 1e-6);
  const spanY = Math.max(y1 - y0, 1e-6);
  const scale = Math.min(width / (spanX * (1 + 2 * margin)), height / (spanY * (1 + 2 * margin)));
  return { scale, centerX: (x0 + x1) / 2, centerY: (y0 + y1) / 2, width, height };
}

/** World y points up on screen. */
export function worldToScreen(view: Viewport, x: number, y: number): [number, number] {
  return [
    view.width / 2 + (x - view.centerX) * view.scale,
    view.height / 2 - (y - view.centerY) * view.scale,
  ];
}

export function screenToWorld(view: Viewport, sx: number, sy: number): [number, number] {
  return [
    view.centerX + (sx - view.width / 2) / view.scale,
    view.centerY - (sy - view.height / 2) / view.scale,
  ];
}

export function pan(view: Viewport, dxPixels: number, dyPixels: number): Viewport {
  return {
    ...view,
    centerX: view.centerX - dxPixels / view.scale,
    centerY: view.centerY + dyPixels / view.scale,
  };
}

/** Zoom about a screen anchor so the world point under the cursor stays put. */
export function zoom(view: Viewport, factor: number, anchorX: number, anchorY: number): Viewport {
  const clamped = Math.min(Math.max(view.scale * factor, 1e-3), 1e5);
  const [wx, wy] = screenToWorld(view, anchorX, anchorY);
  const next = { ...view, scale: clamped };
  const [sx, sy] = worldToScreen(next, wx, wy);
  return pan(next, anchorX - sx, anchorY - sy);
}

/** Nearest point within `radiusPixels` of the cursor, or null. */
export function pickPoint(
  view: Viewport,
  points: ScatterPoint[],
  sx: number,
  sy: number,
  radiusPixels = 8,
): ScatterPoint | null {
  let best: ScatterPoint | null = null;
  let bestDist = radiusPixels * radiusPixels;
  for (const p of points) {
    const [px, py] = worldToScreen(view, p.x, p.y);
    const d = (px - sx) * (px - sx) + (py - sy) * (py - sy);
    if (d <= bestDist) {
      best = p;
      bestDist = d;
    }
  }
  return best;
}

/** Height-coded fill colors: low points dark, high points warm. */
export function heightColor(z: number, zMin: number, zMax: number): string {
  const t = zMax > zMin ? Math.min(Math.max((z - zMin) / (zMax - zMin), 0), 1) : 0.5;
  const r = Math.round(40 + 200 * t);
  const g = Math.round(70 + 110 * t);
  const b = Math.round(160 - 110 * t);
  return `rgb(${r},${g},${b})`;
}

/** The subset of CanvasRenderingContext2D the renderer needs. */
export interface DrawContext {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
  stroke(): void;
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
}

export interface RenderOptions {
  picked: Map<number, number>; // class id -> point index
  pickColors: Map<number, string>; // class id -> palette color
}

export function renderCluster(
  ctx: DrawContext,
  view: Viewport,
  cluster: ClusterView,
  options: RenderOptions,
): void {
  ctx.clearRect(0, 0, view.width, view.height);
  if (cluster.points.length === 0) return;
  let zMin = Infinity;
  let zMax = -Infinity;
  for (const p of cluster.points) {
    if (p.z < zMin) zMin = p.z;
    if (p.z > zMax) zMax = p.z;
  }
  const pickedIndices = new Map<number, number>();
  for (const [classId, pointIndex] of options.picked) {
    pickedIndices.set(pointIndex, classId);
  }
  for (const p of cluster.points) {
    const [sx, sy] = worldToScreen(view, p.x, p.y);
    ctx.beginPath();
    ctx.arc(sx, sy, 2.2, 0, 2 * Math.PI);
    ctx.fillStyle = heightColor(p.z, zMin, zMax);
    ctx.fill();
  }
  // picked points drawn last, enlarged and in their class color
  for (const [pointIndex, classId] of pickedIndices) {
    const p = cluster.points.find((q) => q.index === pointIndex);
    if (!p) continue;
    const [sx, sy] = worldToScreen(view, p.x, p.y);
    ctx.beginPath();
    ctx.arc(sx, sy, 6, 0, 2 * Math.PI);
    ctx.fillStyle = options.pickColors.get(classId) ?? "#ffffff";
    ctx.fill();
    ctx.beginPath();
    ctx.arc(sx, sy, 6, 0, 2 * Math.PI);
    ctx.strokeStyle = "#111111";
    ctx.lineWidth = 1.5;
    ctx.stroke();
  }
}
