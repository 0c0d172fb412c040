"""Tests for the command line tools and the WebSocket control server."""

import json
import os
import socket
import time

import numpy as np
import pytest

from preynet import cli
from preynet.events import EVENT_DTYPE, load_events, read_pgm, save_events
from preynet.loop import Episode, EpisodeConfig
from preynet.server import (
    MAX_PAYLOAD,
    V_LIMIT,
    W_LIMIT,
    SimServer,
    ws_connect,
)


def _external_config(seed=18, duration_s=30.0):
    return EpisodeConfig(seed=seed, duration_s=duration_s, prey_policy="external")


def _drain(conn, n):
    out = []
    for _ in range(n):
        msg = conn.recv_message()
        assert msg is not None
        out.append(json.loads(msg))
    return out


# ------------------------------------------------------------------ cli


def test_cli_filter_roundtrip(tmp_path):
    # dense edge at one corner plus isolated strays elsewhere
    sig = np.zeros(200, dtype=EVENT_DTYPE)
    sig["t"] = np.arange(200, dtype=np.uint64) * 500
    sig["x"] = 50 + np.arange(200) // 20
    sig["y"] = 60
    sig["p"] = 1
    noise = np.zeros(40, dtype=EVENT_DTYPE)
    noise["t"] = 200_000 + np.arange(40, dtype=np.uint64) * 30_000
    noise["x"] = (np.arange(40) * 5) % 230
    noise["y"] = 100 + (np.arange(40) * 7) % 70
    noise["p"] = -1
    ev = np.concatenate([sig, noise])
    src = tmp_path / "in.csv"
    dst = tmp_path / "out.csv"
    save_events(str(src), ev)

    rc = cli.main(["filter", "--in", str(src), "--out", str(dst)])
    assert rc == 0
    kept = load_events(str(dst))
    assert len(kept) < len(ev)
    # the repeated-pixel edge survives, one-shot strays do not
    assert np.sum(kept["y"] == 60) >= 190
    assert np.sum(kept["y"] >= 100) == 0


def test_cli_hist_writes_frames(tmp_path):
    rng = np.random.default_rng(3)
    n = 10_000
    ev = np.zeros(n, dtype=EVENT_DTYPE)
    ev["t"] = np.sort(rng.integers(0, 500_000, size=n).astype(np.uint64))
    ev["x"] = rng.integers(0, 240, size=n)
    ev["y"] = rng.integers(0, 180, size=n)
    ev["p"] = rng.choice([-1, 1], size=n)
    src = tmp_path / "stream.csv"
    save_events(str(src), ev)
    out = tmp_path / "frames"

    rc = cli.main(["hist", "--in", str(src), "--out-dir", str(out),
                   "--n-target", "5000"])
    assert rc == 0
    files = sorted(os.listdir(out))
    assert len(files) == 2
    img = read_pgm(str(out / files[0]))
    assert img.shape == (36, 36)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_cli_synth_data_writes_manifest(tmp_path, capsys):
    out = tmp_path / "ds"
    rc = cli.main(["synth-data", "--out-dir", str(out), "--n", "4",
                   "--seed", "2"])
    assert rc == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["n_base"] == 4
    assert (out / "frames").is_dir()
    text = capsys.readouterr().out
    assert "N" in text and "frames" in text


def test_cli_train_then_infer(tmp_path, capsys):
    out = tmp_path / "ds"
    cli.main(["synth-data", "--out-dir", str(out), "--n", "6", "--seed", "5"])
    weights = tmp_path / "w.npz"
    rc = cli.main(["train", "--data", str(out / "manifest.json"),
                   "--out", str(weights), "--epochs", "1",
                   "--batch-size", "16", "--seed", "1"])
    assert rc == 0
    assert weights.exists()
    capsys.readouterr()

    frame = out / "frames" / "000000.pgm"
    rc = cli.main(["infer", "--weights", str(weights), "--frame", str(frame)])
    assert rc == 0
    text = capsys.readouterr().out
    line = [l for l in text.splitlines() if l.startswith("outputs:")][0]
    vals = [float(v) for v in line.split()[1:]]
    assert len(vals) == 10
    assert abs(sum(vals) - 1.0) < 1e-4
    assert "class:" in text and "alpha_deg:" in text


def test_cli_infer_rejects_wrong_frame_size(tmp_path, capsys):
    from preynet.events import write_pgm
    from preynet.net import Network, save_weights_file
    net = Network(input_width=36, seed=0)
    weights = tmp_path / "w.npz"
    save_weights_file(net, str(weights))
    frame = tmp_path / "big.pgm"
    write_pgm(str(frame), np.zeros((54, 54)))
    rc = cli.main(["infer", "--weights", str(weights), "--frame", str(frame)])
    assert rc == 1
    assert "expects" in capsys.readouterr().err


def test_cli_sim_repeats_exactly(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    rc = cli.main(["sim", "--seed", "3", "--duration", "2", "--out", str(a)])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["seed"] == 3
    assert summary["dvs_frames"] > 0
    cli.main(["sim", "--seed", "3", "--duration", "2", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0]
    assert header.startswith("t_us,pred_x")


def test_cli_sim_rejects_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"warp_speed": 9}))
    with pytest.raises(SystemExit):
        cli.main(["sim", "--config", str(cfg), "--duration", "1"])


def test_cli_exit_codes(tmp_path):
    rc = cli.main(["filter", "--in", str(tmp_path / "missing.csv"),
                   "--out", str(tmp_path / "out.csv")])
    assert rc == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["sim", "--no-such-flag"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit):
        cli.main(["not-a-command"])


def test_cli_bench_reports_json(capsys):
    rc = cli.main(["bench", "--runs", "20", "--json"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["filter_meps"] > 0
    assert report["forward_median_ms"] > 0
    assert report["forward_p90_ms"] >= report["forward_median_ms"]
    assert sum(report["dvs_rate_hist"].values()) > 0


# --------------------------------------------------------------- server


def test_handshake_and_state_schema():
    srv = SimServer(_external_config())
    srv.start()
    try:
        conn = ws_connect(srv.host, srv.port)
        msg = json.loads(conn.recv_message())
        conn.close()
    finally:
        srv.stop()
    assert msg["type"] == "state"
    for key in ("t", "predator", "prey", "mode", "outputs", "alpha",
                "p_mag", "dvs_rate_hz", "aps_rate_hz", "dropped_frames",
                "captures", "paused"):
        assert key in msg
    assert len(msg["outputs"]) == 10
    assert abs(sum(msg["outputs"]) - 1.0) < 1e-6
    for pose in (msg["predator"], msg["prey"]):
        assert set(pose) == {"x", "y", "theta", "v", "w"}


def test_teleop_command_moves_prey_forward():
    # seed 18 spawns the prey heading along +x with room ahead
    srv = SimServer(_external_config(seed=18))
    srv.start()
    try:
        conn = ws_connect(srv.host, srv.port)
        _drain(conn, 1)
        conn.send_text(json.dumps({"type": "prey_cmd", "v": 1.0, "w": 0.0}))
        states = _drain(conn, 6)
        conn.close()
    finally:
        srv.stop()
    xs = [s["prey"]["x"] for s in states]
    assert all(b > a for a, b in zip(xs, xs[1:]))


def test_disconnect_zeroes_prey_velocity():
    srv = SimServer(_external_config(seed=18))
    srv.start()
    try:
        conn = ws_connect(srv.host, srv.port)
        _drain(conn, 1)
        conn.send_text(json.dumps({"type": "prey_cmd", "v": 1.5, "w": 0.2}))
        _drain(conn, 2)
        assert srv.episode.world.prey.v == 1.5
        conn.close()
        deadline = time.monotonic() + 2.0
        while time.monotonic() < deadline and srv.episode.world.prey.v != 0.0:
            time.sleep(0.02)
        assert srv.episode.world.prey.v == 0.0
        assert srv.episode.world.prey.w == 0.0
    finally:
        srv.stop()


def test_last_command_in_window_wins():
    srv = SimServer(_external_config())
    srv._commands.put({"type": "prey_cmd", "v": 0.5, "w": 0.0})
    srv._commands.put({"type": "prey_cmd", "v": 1.25, "w": -0.5})
    srv.step_window()
    assert srv.episode.world.prey.v == 1.25
    assert srv.episode.world.prey.w == -0.5
    srv.stop()


def test_prey_command_clamped_to_limits():
    srv = SimServer(_external_config())
    srv._commands.put({"type": "prey_cmd", "v": 99.0, "w": -99.0})
    srv.step_window()
    assert srv.episode.world.prey.v == V_LIMIT
    assert srv.episode.world.prey.w == -W_LIMIT
    srv._commands.put({"type": "prey_cmd", "v": float("nan"), "w": 0.0})
    srv.step_window()
    assert srv.error_count == 1
    assert srv.episode.world.prey.v == V_LIMIT  # bad command ignored
    srv.stop()


def test_malformed_json_counts_error_and_keeps_serving():
    srv = SimServer(_external_config())
    srv.start()
    try:
        conn = ws_connect(srv.host, srv.port)
        _drain(conn, 1)
        conn.send_text("{not json")
        conn.send_text(json.dumps(["a", "list"]))
        conn.send_text(json.dumps({"type": "warp"}))
        states = _drain(conn, 2)
        conn.close()
    finally:
        srv.stop()
    assert srv.error_count == 3
    assert states[-1]["type"] == "state"


def test_binary_frame_closes_connection():
    srv = SimServer(_external_config())
    srv.start()
    try:
        conn = ws_connect(srv.host, srv.port)
        _drain(conn, 1)
        conn._send_frame(0x2, b"\x00\x01")
        deadline = time.monotonic() + 2.0
        msg = conn.recv_message()
        while msg is not None and time.monotonic() < deadline:
            msg = conn.recv_message()
        assert msg is None
    finally:
        srv.stop()


def test_oversize_message_closes_connection():
    srv = SimServer(_external_config())
    srv.start()
    try:
        conn = ws_connect(srv.host, srv.port)
        _drain(conn, 1)
        conn.send_text("x" * (MAX_PAYLOAD + 1))
        deadline = time.monotonic() + 2.0
        msg = conn.recv_message()
        while msg is not None and time.monotonic() < deadline:
            msg = conn.recv_message()
        assert msg is None
    finally:
        srv.stop()


def test_ping_gets_pong():
    srv = SimServer(_external_config())
    srv.start()
    try:
        conn = ws_connect(srv.host, srv.port)
        conn._send_frame(0x9, b"hello")
        # pong arrives between state frames; recv_message skips it but the
        # reader below sees the raw frame first
        deadline = time.monotonic() + 2.0
        got_pong = False
        while time.monotonic() < deadline and not got_pong:
            opcode, _, payload = conn._read_frame()
            if opcode == 0xA and payload == b"hello":
                got_pong = True
        conn.close()
    finally:
        srv.stop()
    assert got_pong


def test_pause_and_reset():
    srv = SimServer(_external_config(seed=18))
    srv._commands.put({"type": "pause"})
    srv.step_window()
    t0 = srv.episode.world.t_us
    srv.step_window()
    assert srv.episode.world.t_us == t0  # frozen while paused
    srv._commands.put({"type": "pause"})
    srv.step_window()
    assert srv.episode.world.t_us > t0

    pose_before = srv.episode.world.predator.x
    srv._commands.put({"type": "reset", "seed": 4})
    srv.step_window()
    assert srv.episode.cfg.seed == 4
    assert srv.episode.world.t_us == srv.episode.cfg.control_period_us
    assert srv.episode.world.predator.x != pose_before
    assert srv.command_log == []
    srv.stop()


def test_http_request_gets_info_page():
    srv = SimServer(_external_config())
    srv.start()
    try:
        with socket.create_connection((srv.host, srv.port), timeout=5.0) as s:
            s.sendall(b"GET / HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
            data = b""
            while True:
                chunk = s.recv(4096)
                if not chunk:
                    break
                data += chunk
    finally:
        srv.stop()
    assert data.startswith(b"HTTP/1.1 200")
    assert b"preynet" in data


def test_step_window_matches_headless_episode():
    cfg = _external_config(seed=6, duration_s=2.0)
    script = {10: (1.0, 0.3), 25: (0.4, -0.5)}
    srv = SimServer(cfg)
    for k in range(40):
        if k in script:
            v, w = script[k]
            srv._commands.put({"type": "prey_cmd", "v": v, "w": w})
        srv.step_window()
    srv.stop()

    ep = Episode(cfg)
    period = ep.cfg.control_period_us
    for k in range(40):
        if k in script:
            ep.world.prey.v, ep.world.prey.w = script[k]
        end = ep.world.t_us + period
        while ep.world.t_us < end and not ep.done:
            ep.tick()
    assert ep.trace_text() == srv.episode.trace_text()


def test_socket_session_replays_headlessly():
    # drive over a real socket, then replay the logged command timeline
    cfg = _external_config(seed=8)
    srv = SimServer(cfg)
    srv.start()
    try:
        conn = ws_connect(srv.host, srv.port)
        _drain(conn, 1)
        conn.send_text(json.dumps({"type": "prey_cmd", "v": 1.2, "w": 0.4}))
        _drain(conn, 4)
        conn.send_text(json.dumps({"type": "prey_cmd", "v": -0.5, "w": -0.2}))
        _drain(conn, 4)
        conn.close()
        time.sleep(0.15)  # let the dead-man zero command land
    finally:
        srv.stop()
    t_end = srv.episode.world.t_us
    log = list(srv.command_log)
    assert len(log) >= 3  # two teleop commands plus the disconnect zero

    ep = Episode(cfg)
    idx = 0
    while ep.world.t_us < t_end:
        while idx < len(log) and log[idx][0] == ep.world.t_us:
            ep.world.prey.v, ep.world.prey.w = log[idx][1], log[idx][2]
            idx += 1
        ep.tick()
    assert idx == len(log)
    assert ep.trace_text() == srv.episode.trace_text()
