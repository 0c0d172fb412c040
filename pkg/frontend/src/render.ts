// Canvas rendering of the live state: top-down arena, robot footprints,
// camera wedge, analog position arrow, class bars, and telemetry text.
// Drawing goes through the Ctx subset below so tests can record calls
// without a real canvas.

import { ServerMessage } from "./protocol";

export interface Ctx {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  textAlign: CanvasTextAlign;
  globalAlpha: number;
  save(): void;
  restore(): void;
  beginPath(): void;
  closePath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number,
      ccw?: boolean): void;
  stroke(): void;
  fill(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

export interface ViewState {
  msg: ServerMessage | null;
  connected: boolean;
  trailPred: { x: number; y: number }[];
  trailPrey: { x: number; y: number }[];
}

export const ARENA_W = 9.5;
export const ARENA_H = 6.7;
export const BODY_RADIUS = 0.4617;
export const FOV_DEG = 81.0;
export const HARD_ZONE_M = 0.7;

const BAR_STRIP = 110;
const MARGIN = 16;
const CLASS_NAMES = ["L:S", "L:M", "L:XL", "C:S", "C:M", "C:XL",
                     "R:S", "R:M", "R:XL", "N"];

interface Map2D {
  s: number;
  ox: number;
  oy: number;
}

function fitArena(width: number, height: number): Map2D {
  const availW = width - 2 * MARGIN;
  const availH = height - BAR_STRIP - 2 * MARGIN;
  const s = Math.min(availW / ARENA_W, availH / ARENA_H);
  const ox = (width - ARENA_W * s) / 2;
  const oy = MARGIN + (availH - ARENA_H * s) / 2;
  return { s, ox, oy };
}

function toCanvas(m: Map2D, x: number, y: number): [number, number] {
  return [m.ox + x * m.s, m.oy + (ARENA_H - y) * m.s];
}

function drawRobot(ctx: Ctx, m: Map2D, pose: { x: number; y: number;
                   theta: number }, color: string): void {
  const [cx, cy] = toCanvas(m, pose.x, pose.y);
  const r = BODY_RADIUS * m.s;
  ctx.beginPath();
  ctx.arc(cx, cy, r, 0, 2 * Math.PI);
  ctx.fillStyle = color;
  ctx.globalAlpha = 0.75;
  ctx.fill();
  ctx.globalAlpha = 1.0;
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.stroke();
  // heading tick (canvas y points down, world y up)
  ctx.beginPath();
  ctx.moveTo(cx, cy);
  ctx.lineTo(cx + r * 1.5 * Math.cos(pose.theta),
             cy - r * 1.5 * Math.sin(pose.theta));
  ctx.stroke();
}

function drawWedge(ctx: Ctx, m: Map2D, pose: { x: number; y: number;
                   theta: number }): void {
  const [cx, cy] = toCanvas(m, pose.x, pose.y);
  const reach = 3.0 * m.s;
  const half = (FOV_DEG / 2) * Math.PI / 180;
  const sector = half / 1.5; // three 27 degree sectors
  ctx.save();
  ctx.globalAlpha = 0.14;
  ctx.fillStyle = "#7fd4ff";
  ctx.beginPath();
  ctx.moveTo(cx, cy);
  ctx.arc(cx, cy, reach, -pose.theta - half, -pose.theta + half);
  ctx.closePath();
  ctx.fill();
  ctx.globalAlpha = 0.5;
  ctx.strokeStyle = "#7fd4ff";
  ctx.lineWidth = 1;
  for (const b of [-half, -sector / 2, sector / 2, half]) {
    ctx.beginPath();
    ctx.moveTo(cx, cy);
    ctx.lineTo(cx + reach * Math.cos(pose.theta + b),
               cy - reach * Math.sin(pose.theta + b));
    ctx.stroke();
  }
  ctx.restore();
}

function drawArrow(ctx: Ctx, m: Map2D, msg: ServerMessage): void {
  if (msg.alpha === null || msg.p_mag === null) return;
  // alpha 90 is dead ahead; one degree of bearing is 1/0.45 of alpha
  const bearing = ((msg.alpha - 90.0) * 0.45 * Math.PI) / 180;
  const ang = msg.predator.theta + bearing;
  const [cx, cy] = toCanvas(m, msg.predator.x, msg.predator.y);
  const len = Math.min(msg.p_mag, 6.0) * m.s;
  const hx = cx + len * Math.cos(ang);
  const hy = cy - len * Math.sin(ang);
  ctx.save();
  ctx.strokeStyle = "#ffffff";
  ctx.fillStyle = "#ffffff";
  ctx.lineWidth = 2.5;
  ctx.beginPath();
  ctx.moveTo(cx, cy);
  ctx.lineTo(hx, hy);
  ctx.stroke();
  const headLen = 9;
  for (const side of [-1, 1]) {
    ctx.beginPath();
    ctx.moveTo(hx, hy);
    ctx.lineTo(hx - headLen * Math.cos(ang - (side * Math.PI) / 7),
               hy + headLen * Math.sin(ang - (side * Math.PI) / 7));
    ctx.stroke();
  }
  ctx.restore();
}

function drawTrail(ctx: Ctx, m: Map2D, trail: { x: number; y: number }[],
                   color: string): void {
  ctx.save();
  ctx.fillStyle = color;
  ctx.globalAlpha = 0.3;
  for (const p of trail) {
    const [cx, cy] = toCanvas(m, p.x, p.y);
    ctx.fillRect(cx - 1, cy - 1, 2, 2);
  }
  ctx.restore();
}

function drawBars(ctx: Ctx, width: number, height: number,
                  outputs: number[]): void {
  const top = height - BAR_STRIP + 14;
  const maxH = BAR_STRIP - 38;
  const slot = (width - 2 * MARGIN) / 10;
  const barW = slot * 0.62;
  ctx.save();
  ctx.textAlign = "center";
  ctx.font = "11px system-ui, sans-serif";
  for (let i = 0; i < 10; i++) {
    const x = MARGIN + i * slot + (slot - barW) / 2;
    const h = Math.max(1, outputs[i] * maxH);
    ctx.fillStyle = "#22262e";
    ctx.fillRect(x, top, barW, maxH);
    ctx.fillStyle = i === 9 ? "#8f98a8" : "#f5c842";
    ctx.fillRect(x, top + maxH - h, barW, h);
    ctx.fillStyle = "#aab2c0";
    ctx.fillText(CLASS_NAMES[i], x + barW / 2, top + maxH + 16);
  }
  ctx.restore();
}

function drawHud(ctx: Ctx, width: number, msg: ServerMessage): void {
  ctx.save();
  ctx.font = "13px system-ui, sans-serif";
  ctx.textAlign = "left";
  ctx.fillStyle = "#e8ecf2";
  const badge = msg.paused ? `${msg.mode} (paused)` : msg.mode;
  ctx.fillText(`mode ${badge}`, MARGIN, 14);
  ctx.fillText(`captures ${msg.captures}`, MARGIN + 170, 14);
  ctx.textAlign = "right";
  const dvs = msg.dvs_rate_hz >= 1000
    ? `${(msg.dvs_rate_hz / 1000).toFixed(1)}k`
    : msg.dvs_rate_hz.toFixed(0);
  ctx.fillText(
    `t ${msg.t.toFixed(1)}s | DVS ${dvs} fps | APS ` +
    `${msg.aps_rate_hz.toFixed(0)} fps | dropped ${msg.dropped_frames}`,
    width - MARGIN, 14);
  ctx.restore();
}

export function renderScene(ctx: Ctx, width: number, height: number,
                            view: ViewState): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#11141a";
  ctx.fillRect(0, 0, width, height);
  const m = fitArena(width, height);

  ctx.strokeStyle = "#3a4150";
  ctx.lineWidth = 2;
  const [bx, by] = toCanvas(m, 0, ARENA_H);
  ctx.strokeRect(bx, by, ARENA_W * m.s, ARENA_H * m.s);

  const msg = view.msg;
  if (msg !== null) {
    drawTrail(ctx, m, view.trailPred, "#e0604c");
    drawTrail(ctx, m, view.trailPrey, "#5aa2e0");
    drawWedge(ctx, m, msg.predator);
    if (msg.mode === "avoid") {
      const [cx, cy] = toCanvas(m, msg.predator.x, msg.predator.y);
      ctx.save();
      ctx.strokeStyle = "#e0604c";
      ctx.globalAlpha = 0.8;
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      ctx.arc(cx, cy, HARD_ZONE_M * m.s, 0, 2 * Math.PI);
      ctx.stroke();
      ctx.restore();
    }
    drawRobot(ctx, m, msg.predator, "#e0604c");
    drawRobot(ctx, m, msg.prey, "#5aa2e0");
    drawArrow(ctx, m, msg);
    drawBars(ctx, width, height, msg.outputs);
    drawHud(ctx, width, msg);
  }

  if (!view.connected) {
    ctx.save();
    ctx.globalAlpha = 0.55;
    ctx.fillStyle = "#11141a";
    ctx.fillRect(0, 0, width, height);
    ctx.globalAlpha = 1.0;
    ctx.fillStyle = "#f0f3f8";
    ctx.font = "20px system-ui, sans-serif";
    ctx.textAlign = "center";
    ctx.fillText("disconnected - retrying", width / 2, height / 2);
    ctx.restore();
  }
}
