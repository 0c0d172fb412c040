// Reconnect loop with a scripted socket and a captured scheduler.

import { describe, expect, it } from "vitest";
import { OPEN, Reconnector, WsLike } from "../src/net";

class FakeSocket implements WsLike {
  readyState = 0;
  sent: string[] = [];
  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  send(data: string) {
    this.sent.push(data);
  }
  close() {
    this.readyState = 3;
    this.onclose?.();
  }
  open() {
    this.readyState = OPEN;
    this.onopen?.();
  }
}

function harness() {
  const sockets: FakeSocket[] = [];
  const scheduled: { fn: () => void; ms: number }[] = [];
  const statuses: boolean[] = [];
  const messages: string[] = [];
  const net = new Reconnector(
    "ws://test/",
    {
      onMessage: (data) => messages.push(String(data)),
      onStatus: (up) => statuses.push(up),
    },
    () => {
      const s = new FakeSocket();
      sockets.push(s);
      return s;
    },
    (fn, ms) => {
      scheduled.push({ fn, ms });
    },
  );
  return { net, sockets, scheduled, statuses, messages };
}

describe("Reconnector", () => {
  it("delivers incoming messages", () => {
    const h = harness();
    h.net.start();
    h.sockets[0].open();
    h.sockets[0].onmessage?.({ data: "hello" });
    expect(h.messages).toEqual(["hello"]);
    expect(h.statuses).toEqual([true]);
  });

  it("refuses to send until the socket is open", () => {
    const h = harness();
    h.net.start();
    expect(h.net.send("early")).toBe(false);
    h.sockets[0].open();
    expect(h.net.send("now")).toBe(true);
    expect(h.sockets[0].sent).toEqual(["now"]);
  });

  it("schedules a reconnect when the socket drops", () => {
    const h = harness();
    h.net.start();
    h.sockets[0].open();
    h.sockets[0].close();
    expect(h.statuses).toEqual([true, false]);
    expect(h.scheduled).toHaveLength(1);
    h.scheduled[0].fn();
    expect(h.sockets).toHaveLength(2);
  });

  it("backs off exponentially and caps at five seconds", () => {
    const h = harness();
    h.net.start();
    for (let i = 0; i < 8; i++) {
      h.sockets[h.sockets.length - 1].close();
      h.scheduled[h.scheduled.length - 1].fn();
    }
    const delays = h.scheduled.map((s) => s.ms);
    expect(delays.slice(0, 5)).toEqual([250, 500, 1000, 2000, 4000]);
    expect(delays[5]).toBe(5000);
    expect(delays[7]).toBe(5000);
  });

  it("resets the backoff after a successful open", () => {
    const h = harness();
    h.net.start();
    h.sockets[0].close();
    h.scheduled[0].fn();
    h.sockets[1].open();
    h.sockets[1].close();
    expect(h.scheduled[1].ms).toBe(250);
  });

  it("stop() closes the socket and halts retries", () => {
    const h = harness();
    h.net.start();
    h.sockets[0].open();
    h.net.stop();
    const before = h.scheduled.length;
    expect(h.sockets[0].readyState).toBe(3);
    expect(h.scheduled.length).toBe(before);
    expect(h.net.send("late")).toBe(false);
  });
});
