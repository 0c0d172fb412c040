// Key handling: coalescing, the 20 Hz ceiling, single zero on release.

import { describe, expect, it } from "vitest";
import { SEND_PERIOD_MS, Teleop } from "../src/teleop";
import { V_LIMIT, W_LIMIT } from "../src/protocol";

function harness() {
  const sent: { type: string; v?: number; w?: number }[] = [];
  let clock = 0;
  const teleop = new Teleop(
    (msg) => sent.push(JSON.parse(msg)),
    () => clock,
  );
  const advance = (ms: number, step = SEND_PERIOD_MS) => {
    const end = clock + ms;
    while (clock < end) {
      clock = Math.min(end, clock + step);
      teleop.tick();
    }
  };
  return { sent, teleop, advance, clock: () => clock };
}

describe("Teleop", () => {
  it("streams the held command at most at 20 Hz", () => {
    const h = harness();
    h.teleop.keyEvent("KeyW", true);
    h.advance(1000);
    expect(h.sent.length).toBeGreaterThanOrEqual(15);
    expect(h.sent.length).toBeLessThanOrEqual(21);
    for (const m of h.sent) {
      expect(m).toEqual({ type: "prey_cmd", v: V_LIMIT, w: 0 });
    }
  });

  it("sends exactly one zero after releasing everything", () => {
    const h = harness();
    h.teleop.keyEvent("KeyW", true);
    h.advance(200);
    h.teleop.keyEvent("KeyW", false);
    h.advance(500);
    const zeros = h.sent.filter((m) => m.v === 0 && m.w === 0);
    expect(zeros).toHaveLength(1);
    expect(h.sent[h.sent.length - 1]).toEqual({
      type: "prey_cmd",
      v: 0,
      w: 0,
    });
  });

  it("coalesces multiple keys into one command", () => {
    const h = harness();
    h.teleop.keyEvent("KeyW", true);
    h.advance(SEND_PERIOD_MS);
    h.teleop.keyEvent("ArrowLeft", true);
    h.advance(SEND_PERIOD_MS);
    const last = h.sent[h.sent.length - 1];
    expect(last.v).toBe(V_LIMIT);
    expect(last.w).toBe(W_LIMIT);
  });

  it("cancels opposing keys instead of stacking them", () => {
    const h = harness();
    h.teleop.keyEvent("KeyW", true);
    h.advance(SEND_PERIOD_MS);
    h.teleop.keyEvent("KeyS", true);
    h.advance(SEND_PERIOD_MS);
    expect(h.sent[h.sent.length - 1].v).toBe(0);
  });

  it("ignores keyboard auto-repeat", () => {
    const h = harness();
    h.teleop.keyEvent("KeyW", true);
    const after = h.sent.length;
    h.teleop.keyEvent("KeyW", true); // auto-repeat, no state change
    h.teleop.keyEvent("KeyW", true);
    expect(h.sent.length).toBe(after);
  });

  it("a release arriving inside the rate window still lands", () => {
    const h = harness();
    h.teleop.keyEvent("KeyW", true);
    h.advance(10, 10); // release 10 ms after the first send
    h.teleop.keyEvent("KeyW", false);
    expect(h.sent[h.sent.length - 1].v).toBe(V_LIMIT); // deferred
    h.advance(SEND_PERIOD_MS);
    expect(h.sent[h.sent.length - 1]).toEqual({
      type: "prey_cmd",
      v: 0,
      w: 0,
    });
  });

  it("emits pause and reset on key-down only", () => {
    const h = harness();
    h.teleop.keyEvent("KeyP", true);
    h.teleop.keyEvent("KeyP", false);
    h.teleop.keyEvent("KeyR", true);
    h.teleop.keyEvent("KeyR", false);
    expect(h.sent).toEqual([{ type: "pause" }, { type: "reset" }]);
  });

  it("reports which keys it consumed", () => {
    const h = harness();
    expect(h.teleop.keyEvent("KeyW", true)).toBe(true);
    expect(h.teleop.keyEvent("ArrowDown", true)).toBe(true);
    expect(h.teleop.keyEvent("KeyQ", true)).toBe(false);
    expect(h.teleop.keyEvent("F5", true)).toBe(false);
  });
});
