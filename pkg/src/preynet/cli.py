"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import statistics
import sys
import time

import numpy as np


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; the documented usage code is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="preynet",
                description="Event-driven pursuit pipeline tools.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("filter", help="denoise an event stream")
    f.add_argument("--in", dest="src", required=True)
    f.add_argument("--out", dest="dst", required=True)
    f.add_argument("--dt-max-us", type=int, default=10_000)
    f.add_argument("--radius", type=int, default=1)

    h = sub.add_parser("hist", help="events to histogram frame images")
    h.add_argument("--in", dest="src", required=True)
    h.add_argument("--out-dir", required=True)
    h.add_argument("--width", type=int, default=36)
    h.add_argument("--n-target", type=int, default=5000)
    h.add_argument("--clip", type=int, default=16)

    d = sub.add_parser("synth-data", help="generate a labeled frame set")
    d.add_argument("--out-dir", required=True)
    d.add_argument("--n", type=int, required=True, help="base scene count")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--width", type=int, default=36)
    d.add_argument("--absent-fraction", type=float, default=0.5)
    d.add_argument("--dvs-fraction", type=float, default=0.3)
    d.add_argument("--no-mirror", action="store_true")
    d.add_argument("--no-exposure", action="store_true")

    t = sub.add_parser("train", help="train the detector on a manifest")
    t.add_argument("--data", required=True, help="manifest.json path")
    t.add_argument("--out", required=True, help="weights file to write")
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--calibrate-data",
                   help="manifest used to fit the softmax temperature")

    i = sub.add_parser("infer", help="run one frame through the detector")
    i.add_argument("--weights", required=True)
    i.add_argument("--frame", required=True, help="PGM frame path")

    s = sub.add_parser("sim", help="run a headless episode")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--duration", type=float, default=60.0)
    s.add_argument("--detector", choices=("oracle", "net"), default="oracle")
    s.add_argument("--weights", help="weights file for --detector net")
    s.add_argument("--prey", default="evade",
                   choices=("evade", "circle", "static", "external"))
    s.add_argument("--config", help="JSON file of episode config overrides")
    s.add_argument("--out", help="trace CSV path (default: stdout)")
    s.add_argument("--summary", help="summary JSON path")
    s.add_argument("--stop-on-capture", action="store_true")

    v = sub.add_parser("serve", help="live episode with remote prey control")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8765)
    v.add_argument("--seed", type=int, default=1)
    v.add_argument("--config", help="JSON file of episode config overrides")
    v.add_argument("--page", help="HTML file served to plain HTTP GETs")

    b = sub.add_parser("bench", help="throughput and latency measurements")
    b.add_argument("--runs", type=int, default=1000)
    b.add_argument("--width", type=int, default=36)
    b.add_argument("--weights", help="weights file (default: fresh net)")
    b.add_argument("--json", action="store_true", dest="as_json")
    return p


# ---------------------------------------------------------------- commands


def _cmd_filter(args) -> int:
    from .events import FilterState, filter_mask, load_events, save_events
    ev = load_events(args.src)
    state = FilterState(args.dt_max_us, args.radius)
    kept = ev[filter_mask(state, ev)]
    save_events(args.dst, kept)
    print(f"kept {len(kept)} of {len(ev)} events")
    return 0


def _cmd_hist(args) -> int:
    from .events import (HistAccumulator, accumulate_events, load_events,
                         normalize_histogram, write_pgm)
    ev = load_events(args.src)
    acc = HistAccumulator(args.width, args.n_target, args.clip)
    os.makedirs(args.out_dir, exist_ok=True)
    count = 0
    for counts, t in accumulate_events(acc, ev):
        frame = normalize_histogram(counts, t)
        write_pgm(os.path.join(args.out_dir, f"frame_{count:05d}.pgm"),
                  frame.pixels)
        count += 1
    print(f"wrote {count} frames from {len(ev)} events")
    return 0


def _cmd_synth_data(args) -> int:
    from .dataset import DatasetConfig, make_dataset
    cfg = DatasetConfig(seed=args.seed, width=args.width,
                        absent_fraction=args.absent_fraction,
                        dvs_fraction=args.dvs_fraction,
                        mirror=not args.no_mirror,
                        exposure_deltas=()
                        if args.no_exposure else (-0.3, -0.15, 0.15, 0.3))
    manifest = make_dataset(cfg, args.n, out_dir=args.out_dir)
    print(f"wrote {len(manifest['frames'])} frames to {args.out_dir}")
    print(f"thresholds: {manifest['thr_lo']:.3f} {manifest['thr_hi']:.3f}")
    for name in manifest["classes"]:
        print(f"  {name:5s} {manifest['balance'][name]}")
    return 0


def _cmd_train(args) -> int:
    from .dataset import frames_from_manifest, load_manifest
    from .net import Network, TrainConfig, save_weights_file, train_network
    manifest = load_manifest(args.data)
    frames, labels = frames_from_manifest(manifest,
                                          root=os.path.dirname(args.data))
    net = Network(input_width=manifest["width"], seed=args.seed)
    cfg = TrainConfig(lr=args.lr, momentum=args.momentum,
                      batch_size=args.batch_size, epochs=args.epochs,
                      seed=args.seed)
    history = train_network(net, frames, labels, cfg, log=print)
    if not all(math.isfinite(h) for h in history):
        print("training diverged: non-finite loss", file=sys.stderr)
        return 3
    if args.calibrate_data:
        from .net import predict_batch
        from .steering import fit_temperature
        cal = load_manifest(args.calibrate_data)
        cal_frames, _ = frames_from_manifest(
            cal, root=os.path.dirname(args.calibrate_data))
        bearings = np.array([f["bearing_deg"] for f in cal["frames"]
                             if f["bearing_deg"] is not None])
        visible = np.array([f["bearing_deg"] is not None
                            for f in cal["frames"]])
        probs = predict_batch(net, cal_frames[visible])
        net.temperature = fit_temperature(probs, bearings)
        print(f"calibrated temperature {net.temperature:.4g}")
    save_weights_file(net, args.out)
    print(f"saved weights to {args.out}")
    return 0


def _cmd_infer(args) -> int:
    from .events import read_pgm
    from .net import forward, load_weights_file
    from .steering import analog_position, digitize
    net = load_weights_file(args.weights)
    pixels = read_pgm(args.frame)
    if pixels.shape != (net.input_width, net.input_width):
        print(f"frame is {pixels.shape[1]}x{pixels.shape[0]}, net expects "
              f"{net.input_width}x{net.input_width}", file=sys.stderr)
        return 1
    outputs = forward(net, pixels)
    region, size = digitize(outputs)
    pos = analog_position(outputs)
    print("outputs: " + " ".join("%.6f" % v for v in outputs))
    print(f"class: {region if size is None else region + ':' + size}")
    print(f"alpha_deg: {pos.alpha_deg:.3f}")
    print(f"p_mag: {pos.p_mag:.3f}")
    return 0


def _episode_config(args):
    from .loop import EpisodeConfig
    from .net import load_weights_file
    overrides = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            overrides = json.load(fh)
        valid = {f.name for f in dataclasses.fields(EpisodeConfig)}
        unknown = set(overrides) - valid
        if unknown:
            raise SystemExit(
                f"unknown config keys: {', '.join(sorted(unknown))}")
    detector = "oracle"
    if getattr(args, "detector", "oracle") == "net":
        if not args.weights:
            print("--detector net requires --weights", file=sys.stderr)
            raise SystemExit(1)
        detector = load_weights_file(args.weights)
    cfg = EpisodeConfig(seed=args.seed, detector=detector)
    if hasattr(args, "duration"):
        cfg = dataclasses.replace(cfg, duration_s=args.duration,
                                  prey_policy=args.prey,
                                  stop_on_capture=args.stop_on_capture)
    return dataclasses.replace(cfg, **overrides)


def _cmd_sim(args) -> int:
    from .loop import Episode
    ep = Episode(_episode_config(args))
    summary = ep.run()
    text = ep.trace_text()
    lines = text.rstrip("\n").split("\n")
    lines[0] = lines[0][2:]  # strip the "# " comment marker
    csv = "\n".join(line.replace(" ", ",") for line in lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)
        print(json.dumps(summary, sort_keys=True))
    else:
        sys.stdout.write(csv)
    if args.summary:
        with open(args.summary, "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
    return 0


def _cmd_serve(args) -> int:
    from .loop import EpisodeConfig
    from .server import SimServer
    base = EpisodeConfig(seed=args.seed, duration_s=3600.0,
                         prey_policy="external")
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
        valid = {f.name for f in dataclasses.fields(EpisodeConfig)}
        unknown = set(overrides) - valid
        if unknown:
            print(f"unknown config keys: {', '.join(sorted(unknown))}",
                  file=sys.stderr)
            return 1
        base = dataclasses.replace(base, **overrides)
    page = args.page
    if page is None:
        # working directory first, then the checkout root for editable installs
        root = os.path.dirname(os.path.dirname(os.path.dirname(
            os.path.abspath(__file__))))
        for cand in ("frontend/dist/index.html",
                     os.path.join(root, "frontend", "dist", "index.html")):
            if os.path.isfile(cand):
                page = cand
                break
    server = SimServer(base, host=args.host, port=args.port, page_path=page)
    print(f"listening on ws://{server.host}:{server.port}/", flush=True)
    server.run_forever()
    return 0


def _cmd_bench(args) -> int:
    from .events import FilterState, filter_mask, make_events
    from .net import Network, forward, load_weights_file
    from .loop import Episode, EpisodeConfig

    rng = np.random.default_rng(0)
    n = 2_000_000
    ev = make_events(np.sort(rng.integers(0, 2_000_000, n)),
                     rng.integers(0, 240, n), rng.integers(0, 180, n),
                     rng.choice([-1, 1], n))
    state = FilterState()
    t0 = time.perf_counter()
    filter_mask(state, ev)
    filter_meps = n / (time.perf_counter() - t0) / 1e6

    if args.weights:
        net = load_weights_file(args.weights)
    else:
        net = Network(input_width=args.width, seed=0)
    frame = rng.random((net.input_width, net.input_width))
    forward(net, frame)  # warm caches before timing
    lat_ms = []
    for _ in range(args.runs):
        t0 = time.perf_counter()
        forward(net, frame)
        lat_ms.append((time.perf_counter() - t0) * 1e3)
    lat_ms.sort()

    ep = Episode(EpisodeConfig(seed=1, duration_s=10.0))
    end = int(10e6)
    rates, last, next_mark = [], 0, 1_000_000
    while ep.world.t_us < end and not ep.done:
        ep.tick()
        if ep.world.t_us >= next_mark:
            rates.append(ep.dvs_frames - last)
            last = ep.dvs_frames
            next_mark += 1_000_000
    buckets = {}
    for r in rates:
        key = f"{10 * (r // 10)}-{10 * (r // 10) + 9}"
        buckets[key] = buckets.get(key, 0) + 1

    report = {
        "filter_meps": round(filter_meps, 2),
        "forward_median_ms": round(statistics.median(lat_ms), 4),
        "forward_p90_ms": round(lat_ms[int(0.9 * len(lat_ms))], 4),
        "forward_max_ms": round(lat_ms[-1], 4),
        "runs": args.runs,
        "dvs_rate_hist": buckets,
    }
    if args.as_json:
        print(json.dumps(report, sort_keys=True))
    else:
        print(f"filter throughput: {report['filter_meps']} Meps")
        print(f"forward latency: median {report['forward_median_ms']} ms, "
              f"p90 {report['forward_p90_ms']} ms, "
              f"max {report['forward_max_ms']} ms over {args.runs} runs")
        print("dvs frames per second over a 10 s episode:")
        for key in sorted(buckets, key=lambda k: int(k.split("-")[0])):
            print(f"  {key} Hz: {buckets[key]} s")
    return 0


_COMMANDS = {
    "filter": _cmd_filter,
    "hist": _cmd_hist,
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "sim": _cmd_sim,
    "serve": _cmd_serve,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except OSError as exc:
        print(f"preynet: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"preynet: numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
