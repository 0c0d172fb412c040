// Message schema shared with the simulation service. The client validates
// every broadcast before use and clamps its own commands, mirroring the
// server-side limits.

export interface Pose {
  x: number;
  y: number;
  theta: number;
  v: number;
  w: number;
}

export interface ServerMessage {
  type: "state";
  t: number;
  predator: Pose;
  prey: Pose;
  mode: string;
  outputs: number[];
  alpha: number | null;
  p_mag: number | null;
  dvs_rate_hz: number;
  aps_rate_hz: number;
  dropped_frames: number;
  captures: number;
  paused: boolean;
}

export const V_LIMIT = 2.0;
export const W_LIMIT = Math.PI;

function isNum(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function isPose(v: unknown): v is Pose {
  if (typeof v !== "object" || v === null) return false;
  const p = v as Record<string, unknown>;
  return isNum(p.x) && isNum(p.y) && isNum(p.theta) && isNum(p.v) && isNum(p.w);
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let d: Record<string, unknown>;
  try {
    d = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof d !== "object" || d === null || d.type !== "state") return null;
  if (!isNum(d.t) || !isPose(d.predator) || !isPose(d.prey)) return null;
  if (typeof d.mode !== "string") return null;
  const out = d.outputs;
  if (!Array.isArray(out) || out.length !== 10 || !out.every(isNum)) return null;
  const sum = (out as number[]).reduce((a, b) => a + b, 0);
  if (Math.abs(sum - 1) > 1e-6) return null;
  if (d.alpha !== null && !isNum(d.alpha)) return null;
  if (d.p_mag !== null && !isNum(d.p_mag)) return null;
  if (!isNum(d.dvs_rate_hz) || !isNum(d.aps_rate_hz)) return null;
  if (!Number.isInteger(d.dropped_frames) || !Number.isInteger(d.captures)) {
    return null;
  }
  if (typeof d.paused !== "boolean") return null;
  return d as unknown as ServerMessage;
}

function clampTo(v: number, limit: number): number {
  if (!Number.isFinite(v)) return 0;
  return Math.max(-limit, Math.min(limit, v));
}

export function preyCmd(v: number, w: number): string {
  return JSON.stringify({
    type: "prey_cmd",
    v: clampTo(v, V_LIMIT),
    w: clampTo(w, W_LIMIT),
  });
}

export function pauseCmd(): string {
  return JSON.stringify({ type: "pause" });
}

export function resetCmd(seed?: number): string {
  if (seed === undefined) return JSON.stringify({ type: "reset" });
  return JSON.stringify({ type: "reset", seed });
}
