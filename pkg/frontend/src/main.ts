// Page wiring: connect to the simulation service, forward keys, redraw
// on every broadcast. The service address defaults to the page host and
// can be overridden with ?ws=ws://host:port/.

import { parseServerMessage } from "./protocol";
import { renderScene, ViewState, Ctx } from "./render";
import { Teleop, SEND_PERIOD_MS } from "./teleop";
import { Reconnector, WsLike } from "./net";

const TRAIL_CAP = 400;

function wsUrl(): string {
  const q = new URLSearchParams(window.location.search).get("ws");
  if (q !== null && q !== "") return q;
  return `ws://${window.location.host}/`;
}

function start(): void {
  const canvas = document.getElementById("arena") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d") as unknown as Ctx;
  const view: ViewState = {
    msg: null,
    connected: false,
    trailPred: [],
    trailPrey: [],
  };

  const redraw = () => {
    renderScene(ctx, canvas.width, canvas.height, view);
  };
  const resize = () => {
    canvas.width = window.innerWidth;
    canvas.height = window.innerHeight;
    redraw();
  };
  window.addEventListener("resize", resize);
  resize();

  const net = new Reconnector(
    wsUrl(),
    {
      onMessage: (raw) => {
        const msg = parseServerMessage(raw);
        if (msg === null) return;
        view.msg = msg;
        view.trailPred.push({ x: msg.predator.x, y: msg.predator.y });
        view.trailPrey.push({ x: msg.prey.x, y: msg.prey.y });
        if (view.trailPred.length > TRAIL_CAP) view.trailPred.shift();
        if (view.trailPrey.length > TRAIL_CAP) view.trailPrey.shift();
        redraw();
      },
      onStatus: (connected) => {
        view.connected = connected;
        redraw();
      },
    },
    (url) => new WebSocket(url) as unknown as WsLike,
  );
  net.start();

  const teleop = new Teleop((msg) => {
    net.send(msg);
  });
  window.setInterval(() => teleop.tick(), SEND_PERIOD_MS);
  window.addEventListener("keydown", (e) => {
    if (teleop.keyEvent(e.code, true)) e.preventDefault();
  });
  window.addEventListener("keyup", (e) => {
    if (teleop.keyEvent(e.code, false)) e.preventDefault();
  });
}

window.addEventListener("DOMContentLoaded", start);
