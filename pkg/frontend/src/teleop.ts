// Keyboard teleoperation of the prey. Key state is coalesced into one
// (v, w) pair and sent at most every SEND_PERIOD_MS; releasing everything
// produces exactly one zero command so the prey never coasts on a stale
// velocity.

import { pauseCmd, preyCmd, resetCmd, V_LIMIT, W_LIMIT } from "./protocol";

export const SEND_PERIOD_MS = 50;

const FORWARD = new Set(["KeyW", "ArrowUp"]);
const BACKWARD = new Set(["KeyS", "ArrowDown"]);
const LEFT = new Set(["KeyA", "ArrowLeft"]);
const RIGHT = new Set(["KeyD", "ArrowRight"]);
const MOVE_KEYS = new Set([...FORWARD, ...BACKWARD, ...LEFT, ...RIGHT]);

export interface Axes {
  v: number;
  w: number;
}

export class Teleop {
  private down = new Set<string>();
  private lastSent: Axes | null = null;
  private lastSendAt = -Infinity;

  constructor(
    private send: (msg: string) => void,
    private now: () => number = () => Date.now(),
  ) {}

  axes(): Axes {
    let v = 0;
    let w = 0;
    for (const k of this.down) {
      if (FORWARD.has(k)) v += V_LIMIT;
      if (BACKWARD.has(k)) v -= V_LIMIT;
      if (LEFT.has(k)) w += W_LIMIT;
      if (RIGHT.has(k)) w -= W_LIMIT;
    }
    return { v: Math.max(-V_LIMIT, Math.min(V_LIMIT, v)),
             w: Math.max(-W_LIMIT, Math.min(W_LIMIT, w)) };
  }

  // Returns true when the key belongs to the teleop map (callers should
  // then swallow the browser default).
  keyEvent(code: string, isDown: boolean): boolean {
    if (code === "KeyP") {
      if (isDown) this.send(pauseCmd());
      return true;
    }
    if (code === "KeyR") {
      if (isDown) this.send(resetCmd());
      return true;
    }
    if (!MOVE_KEYS.has(code)) return false;
    if (isDown === this.down.has(code)) return true; // auto-repeat
    if (isDown) this.down.add(code);
    else this.down.delete(code);
    this.maybeSend();
    return true;
  }

  // Called on a fixed interval; streams the held command and flushes any
  // change the rate limiter deferred.
  tick(): void {
    this.maybeSend();
  }

  private maybeSend(): void {
    const a = this.axes();
    const changed =
      this.lastSent === null ||
      a.v !== this.lastSent.v ||
      a.w !== this.lastSent.w;
    const moving = a.v !== 0 || a.w !== 0;
    if (!changed && !moving) return;
    const t = this.now();
    if (t - this.lastSendAt < SEND_PERIOD_MS) return;
    this.send(preyCmd(a.v, a.w));
    this.lastSent = a;
    this.lastSendAt = t;
  }
}
