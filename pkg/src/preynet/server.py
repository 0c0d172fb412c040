"""JSON-over-WebSocket bridge exposing a live episode to remote clients.

The service runs one episode in real time (one simulated second per wall
second) and broadcasts a state message at the control cadence, 20 Hz.
Clients steer the prey with prey_cmd messages and can pause or reset the
episode. All world mutations funnel through a single command queue drained
by the simulation thread, so identical seeds plus identical command
timelines reproduce identical traces regardless of transport timing.

Wire format is RFC 6455 text frames carrying JSON, implemented directly on
stdlib sockets. A plain HTTP GET on the same port answers with the viewer
page when one is configured, else with a short info page.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import os
import queue
import socket
import struct
import threading
import time

from .loop import Episode, EpisodeConfig, with_seed

_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"
MAX_PAYLOAD = 1 << 20

_OP_CONT = 0x0
_OP_TEXT = 0x1
_OP_BINARY = 0x2
_OP_CLOSE = 0x8
_OP_PING = 0x9
_OP_PONG = 0xA

V_LIMIT = 2.0
W_LIMIT = math.pi

_INFO_PAGE = (b"<!doctype html><meta charset=\"utf-8\"><title>preynet</title>"
              b"<p>Simulation service is running. Connect a WebSocket client "
              b"to this address to receive state broadcasts.</p>")


def _accept_value(key: str) -> str:
    digest = hashlib.sha1((key + _GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


class WsConnection:
    """One framed text-message socket, usable from either end."""

    def __init__(self, sock: socket.socket, masked_writes: bool,
                 initial: bytes = b""):
        self._sock = sock
        self._buf = bytearray(initial)
        self._masked_writes = masked_writes
        self._wlock = threading.Lock()
        self.closed = False

    # ------------------------------------------------------------ receive

    def _read(self, n: int) -> bytes:
        while len(self._buf) < n:
            chunk = self._sock.recv(65536)
            if not chunk:
                raise ConnectionError("connection closed")
            self._buf.extend(chunk)
        out = bytes(self._buf[:n])
        del self._buf[:n]
        return out

    def _read_frame(self) -> tuple[int, bool, bytes]:
        b0, b1 = self._read(2)
        fin = bool(b0 & 0x80)
        opcode = b0 & 0x0F
        masked = bool(b1 & 0x80)
        length = b1 & 0x7F
        if length == 126:
            (length,) = struct.unpack(">H", self._read(2))
        elif length == 127:
            (length,) = struct.unpack(">Q", self._read(8))
        if length > MAX_PAYLOAD:
            raise ConnectionError("frame too large")
        mask = self._read(4) if masked else None
        payload = self._read(length)
        if mask:
            decoded = bytearray(payload)
            for i in range(len(decoded)):
                decoded[i] ^= mask[i & 3]
            payload = bytes(decoded)
        return opcode, fin, payload

    def recv_message(self) -> str | None:
        """Next text message, or None once the peer closes."""
        parts: list[bytes] = []
        while True:
            try:
                opcode, fin, payload = self._read_frame()
            except (ConnectionError, OSError):
                self.closed = True
                return None
            if opcode == _OP_CLOSE:
                try:
                    self._send_frame(_OP_CLOSE, payload[:2])
                except OSError:
                    pass
                self.closed = True
                return None
            if opcode == _OP_PING:
                self._send_frame(_OP_PONG, payload)
                continue
            if opcode == _OP_PONG:
                continue
            if opcode == _OP_BINARY:
                self.close(1003)
                return None
            if opcode == _OP_TEXT:
                parts = [payload]
            elif opcode == _OP_CONT and parts:
                parts.append(payload)
            else:
                self.close(1002)
                return None
            if fin:
                return b"".join(parts).decode("utf-8", errors="replace")

    # --------------------------------------------------------------- send

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        head = bytearray([0x80 | opcode])
        mask_bit = 0x80 if self._masked_writes else 0
        n = len(payload)
        if n < 126:
            head.append(mask_bit | n)
        elif n < 1 << 16:
            head.append(mask_bit | 126)
            head += struct.pack(">H", n)
        else:
            head.append(mask_bit | 127)
            head += struct.pack(">Q", n)
        if self._masked_writes:
            mask = os.urandom(4)
            head += mask
            body = bytearray(payload)
            for i in range(len(body)):
                body[i] ^= mask[i & 3]
            payload = bytes(body)
        with self._wlock:
            self._sock.sendall(bytes(head) + payload)

    def send_text(self, text: str) -> None:
        self._send_frame(_OP_TEXT, text.encode("utf-8"))

    def close(self, status: int = 1000) -> None:
        if not self.closed:
            self.closed = True
            try:
                self._send_frame(_OP_CLOSE, struct.pack(">H", status))
            except OSError:
                pass
        try:
            self._sock.close()
        except OSError:
            pass


def ws_connect(host: str, port: int, resource: str = "/",
               timeout: float = 5.0) -> WsConnection:
    """Open a client connection and complete the upgrade handshake."""
    sock = socket.create_connection((host, port), timeout=timeout)
    key = base64.b64encode(os.urandom(16)).decode("ascii")
    request = (f"GET {resource} HTTP/1.1\r\nHost: {host}:{port}\r\n"
               "Upgrade: websocket\r\nConnection: Upgrade\r\n"
               f"Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n")
    sock.sendall(request.encode("ascii"))
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = sock.recv(4096)
        if not chunk:
            raise ConnectionError("handshake failed")
        data += chunk
        if len(data) > 16384:
            raise ConnectionError("oversized handshake response")
    head, rest = data.split(b"\r\n\r\n", 1)
    lines = head.decode("latin-1").split("\r\n")
    if "101" not in lines[0]:
        raise ConnectionError(f"upgrade refused: {lines[0]}")
    accept = ""
    for line in lines[1:]:
        name, _, value = line.partition(":")
        if name.strip().lower() == "sec-websocket-accept":
            accept = value.strip()
    if accept != _accept_value(key):
        raise ConnectionError("bad accept token")
    return WsConnection(sock, masked_writes=True, initial=rest)


class SimServer:
    """Real-time episode with teleoperation over WebSocket."""

    def __init__(self, config: EpisodeConfig | None = None,
                 host: str = "127.0.0.1", port: int = 0,
                 page_path: str | None = None):
        if config is None:
            config = EpisodeConfig(seed=1, duration_s=3600.0,
                                   prey_policy="external")
        self.config = config
        self.episode = Episode(config)
        self.page_path = page_path
        self.error_count = 0
        self.command_log: list[tuple[int, float, float]] = []
        self.paused = False
        self._commands: queue.Queue = queue.Queue()
        self._clients: list[WsConnection] = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        # (t_us, dvs frame count, aps frame count) ring for trailing rates
        self._rate_ring: list[tuple[int, int, int]] = []
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]

    # ------------------------------------------------------------ control

    def start(self) -> None:
        for target in (self._accept_loop, self._sim_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)

    def run_forever(self) -> None:
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            clients = list(self._clients)
        for conn in clients:
            conn.close()
        for t in self._threads:
            t.join(timeout=2.0)

    # ------------------------------------------------------- connections

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_socket, args=(sock,),
                                 daemon=True)
            t.start()

    def _serve_socket(self, sock: socket.socket) -> None:
        try:
            conn = self._handshake(sock)
        except (OSError, ValueError):
            sock.close()
            return
        if conn is None:
            return
        with self._lock:
            self._clients.append(conn)
        try:
            while not self._stop.is_set():
                text = conn.recv_message()
                if text is None:
                    break
                try:
                    msg = json.loads(text)
                    if not isinstance(msg, dict):
                        raise ValueError("not an object")
                except ValueError:
                    with self._lock:
                        self.error_count += 1
                    continue
                self._commands.put(msg)
        finally:
            with self._lock:
                if conn in self._clients:
                    self._clients.remove(conn)
            conn.close()
            # dead-man rule: a vanished operator must not leave the prey
            # driving at its last commanded speed
            self._commands.put({"type": "prey_cmd", "v": 0.0, "w": 0.0})

    def _handshake(self, sock: socket.socket) -> WsConnection | None:
        sock.settimeout(5.0)
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(4096)
            if not chunk:
                sock.close()
                return None
            data += chunk
            if len(data) > 16384:
                sock.close()
                return None
        head, rest = data.split(b"\r\n\r\n", 1)
        headers = {}
        for line in head.decode("latin-1").split("\r\n")[1:]:
            name, _, value = line.partition(":")
            headers[name.strip().lower()] = value.strip()
        if ("websocket" in headers.get("upgrade", "").lower()
                and "sec-websocket-key" in headers):
            accept = _accept_value(headers["sec-websocket-key"])
            sock.sendall(("HTTP/1.1 101 Switching Protocols\r\n"
                          "Upgrade: websocket\r\nConnection: Upgrade\r\n"
                          f"Sec-WebSocket-Accept: {accept}\r\n\r\n")
                         .encode("ascii"))
            sock.settimeout(None)
            return WsConnection(sock, masked_writes=False, initial=rest)
        body = self._page_bytes()
        sock.sendall(b"HTTP/1.1 200 OK\r\n"
                     b"Content-Type: text/html; charset=utf-8\r\n"
                     b"Content-Length: " + str(len(body)).encode("ascii") +
                     b"\r\nConnection: close\r\n\r\n" + body)
        sock.close()
        return None

    def _page_bytes(self) -> bytes:
        if self.page_path and os.path.isfile(self.page_path):
            with open(self.page_path, "rb") as f:
                return f.read()
        return _INFO_PAGE

    # -------------------------------------------------------- simulation

    def _apply_command(self, msg: dict) -> None:
        mtype = msg.get("type")
        if mtype == "prey_cmd":
            try:
                v = float(msg.get("v", 0.0))
                w = float(msg.get("w", 0.0))
            except (TypeError, ValueError):
                self.error_count += 1
                return
            if not (math.isfinite(v) and math.isfinite(w)):
                self.error_count += 1
                return
            v = max(-V_LIMIT, min(V_LIMIT, v))
            w = max(-W_LIMIT, min(W_LIMIT, w))
            prey = self.episode.world.prey
            prey.v, prey.w = v, w
            self.command_log.append((self.episode.world.t_us, v, w))
        elif mtype == "pause":
            self.paused = not self.paused
        elif mtype == "reset":
            try:
                seed = int(msg.get("seed", self.config.seed))
            except (TypeError, ValueError):
                self.error_count += 1
                return
            self.episode = Episode(with_seed(self.config, seed))
            self._rate_ring.clear()
            self.command_log.clear()
            self.paused = False
        else:
            self.error_count += 1

    def step_window(self) -> str:
        """Drain commands, advance one broadcast window, return the message.

        Split out of the wall-clock loop so tests and replay tooling can
        drive simulated time directly.
        """
        while True:
            try:
                msg = self._commands.get_nowait()
            except queue.Empty:
                break
            self._apply_command(msg)
        ep = self.episode
        period_us = ep.cfg.control_period_us
        if not self.paused and not ep.done:
            end = ep.world.t_us + period_us
            stop_at = int(round(ep.cfg.duration_s * 1e6))
            while ep.world.t_us < end and ep.world.t_us < stop_at and not ep.done:
                ep.tick()
        self._rate_ring.append((ep.world.t_us, ep.dvs_frames, ep.aps_frames))
        horizon = ep.world.t_us - 1_000_000
        while len(self._rate_ring) > 1 and self._rate_ring[0][0] < horizon:
            self._rate_ring.pop(0)
        return json.dumps(self._server_message())

    def _server_message(self) -> dict:
        snap = self.episode.snapshot()
        t0, dvs0, aps0 = self._rate_ring[0]
        t1, dvs1, aps1 = self._rate_ring[-1]
        span = max(t1 - t0, 1) / 1e6
        if len(self._rate_ring) < 2:
            dvs_hz = aps_hz = 0.0
        else:
            dvs_hz = (dvs1 - dvs0) / span
            aps_hz = (aps1 - aps0) / span
        return {"type": "state", "t": snap["t_us"] / 1e6,
                "predator": snap["predator"], "prey": snap["prey"],
                "mode": snap["mode"], "outputs": snap["outputs"],
                "alpha": snap["alpha"], "p_mag": snap["p_mag"],
                "dvs_rate_hz": dvs_hz, "aps_rate_hz": aps_hz,
                "dropped_frames": snap["dropped_frames"],
                "captures": snap["captures"], "paused": self.paused}

    def _sim_loop(self) -> None:
        period_s = self.episode.cfg.control_period_us / 1e6
        next_wall = time.monotonic()
        while not self._stop.is_set():
            text = self.step_window()
            with self._lock:
                clients = list(self._clients)
            for conn in clients:
                try:
                    conn.send_text(text)
                except OSError:
                    conn.close()
            # pace against wall clock; when behind, slow down instead of
            # skipping simulated time
            next_wall += period_s
            delay = next_wall - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            else:
                next_wall = time.monotonic()


def serve(config: EpisodeConfig | None = None, host: str = "127.0.0.1",
          port: int = 8765, page_path: str | None = None) -> SimServer:
    """Start a server and return it; caller decides whether to block."""
    server = SimServer(config, host, port, page_path)
    server.start()
    return server
