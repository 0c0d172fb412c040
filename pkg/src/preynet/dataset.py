"""Synthetic labeled frame sets for training and evaluating the detector.

A dataset is built from randomly sampled arena scenes. Each scene yields
either an APS frame (one rendered view, subsampled) or a DVS frame (the
first histogram emitted while both robots drive through the scene), labeled
from geometric ground truth. Augmentation follows the runtime conventions:
horizontal mirroring with the matching label swap for every frame, exposure
shifts for APS frames only.

The manifest is a plain dict (serialized as JSON when written to disk)
holding the size thresholds measured from the generated width distribution,
a class balance report, and one entry per frame. Frame pixels live either
in PGM files next to the manifest or inline as base64 of the same 8-bit
gray bytes, so both storage forms decode to identical arrays.
"""

from __future__ import annotations

import base64
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .events import (FRAME_APS, FRAME_DVS, FilterState, Frame,
                     HistAccumulator, accumulate_events, augment_exposure,
                     filter_mask, mirror_class, mirror_frame,
                     normalize_histogram, read_pgm, subsample_aps, write_pgm)
from .sim import (ARENA_H, ARENA_W, BODY_RADIUS, CAM_FOV_DEG, DEFAULT_THR_HI,
                  DEFAULT_THR_LO, DvsModel, GroundTruth, RobotState, World,
                  ground_truth, render_native, step_world, synthesize_dvs)
from .steering import CLASS_NAMES

_SIZE_BASE = {"L": 0, "C": 3, "R": 6}


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    width: int = 36
    absent_fraction: float = 0.5
    dvs_fraction: float = 0.3
    mirror: bool = True
    exposure_deltas: tuple[float, ...] = (-0.3, -0.15, 0.15, 0.3)
    n_target: int = 5000
    clip: int = 16
    min_distance: float = 1.0
    max_distance: float = 8.0


def _quantize(pixels: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def _sample_world(rng: np.random.Generator, cfg: DatasetConfig,
                  visible: bool) -> World:
    """Draw robot poses until the prey's visibility matches the request."""
    for _ in range(1000):
        px = rng.uniform(1.2, ARENA_W - 1.2)
        py = rng.uniform(1.2, ARENA_H - 1.2)
        pth = rng.uniform(-math.pi, math.pi)
        if visible:
            bearing = rng.uniform(-CAM_FOV_DEG / 2.0, CAM_FOV_DEG / 2.0)
            dist = math.exp(rng.uniform(math.log(cfg.min_distance),
                                        math.log(cfg.max_distance)))
            ang = pth + math.radians(bearing)
            qx = px + dist * math.cos(ang)
            qy = py + dist * math.sin(ang)
            if not (BODY_RADIUS < qx < ARENA_W - BODY_RADIUS
                    and BODY_RADIUS < qy < ARENA_H - BODY_RADIUS):
                continue
        else:
            qx = rng.uniform(BODY_RADIUS, ARENA_W - BODY_RADIUS)
            qy = rng.uniform(BODY_RADIUS, ARENA_H - BODY_RADIUS)
            if math.hypot(qx - px, qy - py) < cfg.min_distance:
                continue
        world = World(predator=RobotState(px, py, pth),
                      prey=RobotState(qx, qy, rng.uniform(-math.pi, math.pi)),
                      texture_seed=int(rng.integers(2 ** 31)))
        if ground_truth(world, cfg.width).visible == visible:
            return world
    raise RuntimeError("scene sampling did not converge")


def _dvs_scene(world: World, cfg: DatasetConfig,
               rng: np.random.Generator) -> tuple[Frame, GroundTruth] | None:
    """Drive both robots until the accumulator emits one histogram frame."""
    dvs = DvsModel(rng=np.random.default_rng(int(rng.integers(2 ** 63))))
    filt = FilterState(10_000, 1)
    acc = HistAccumulator(cfg.width, cfg.n_target, cfg.clip)
    img, _ = render_native(world)
    synthesize_dvs(dvs, img, world.t_us, world.t_us)
    # forward motion keeps texture edges sweeping so events always flow
    world.predator.v = rng.uniform(0.3, 1.2)
    world.predator.w = rng.uniform(-1.2, 1.2)
    world.prey.v = rng.uniform(0.2, 0.8)
    world.prey.w = rng.uniform(-1.5, 1.5)
    for _ in range(80):
        t0 = world.t_us
        step_world(world, 10_000)
        img, gt = render_native(world)
        ev = synthesize_dvs(dvs, img, t0, world.t_us)
        ev = ev[filter_mask(filt, ev)]
        emitted = accumulate_events(acc, ev)
        if emitted:
            counts, t = emitted[0]
            return normalize_histogram(counts, t), gt
    return None


def _size_index(width_px: float, thr_lo: float, thr_hi: float) -> int:
    if width_px < thr_lo:
        return 0
    if width_px > thr_hi:
        return 2
    return 1


def _meta(gt: GroundTruth) -> dict:
    if not gt.visible:
        return {"bearing_deg": None, "alpha_deg": None,
                "distance": None, "width_px": None}
    return {"bearing_deg": gt.bearing_deg, "alpha_deg": gt.alpha_deg,
            "distance": gt.distance, "width_px": gt.width_px}


def _mirror_meta(meta: dict) -> dict:
    out = dict(meta)
    if meta["bearing_deg"] is not None:
        out["bearing_deg"] = -meta["bearing_deg"]
        out["alpha_deg"] = 180.0 - meta["alpha_deg"]
    return out


def make_dataset(config: DatasetConfig, n_frames: int,
                 out_dir: str | None = None) -> dict:
    """Sample n_frames base scenes and return the augmented manifest.

    Mirroring doubles the frame count and exposure shifts add one APS
    variant per delta, so the manifest holds up to
    n_frames * (1 + len(deltas)) * 2 entries. With out_dir set, frames are
    written as PGM files under out_dir/frames and the manifest (with
    relative paths) as out_dir/manifest.json; otherwise pixel data is
    inlined into the returned dict as base64.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be at least 1")
    rng = np.random.default_rng(config.seed)
    scenes: list[tuple[Frame, GroundTruth]] = []
    while len(scenes) < n_frames:
        visible = rng.random() >= config.absent_fraction
        use_dvs = rng.random() < config.dvs_fraction
        world = _sample_world(rng, config, visible)
        if use_dvs:
            scene = _dvs_scene(world, config, rng)
            if scene is None:
                continue
            scenes.append(scene)
        else:
            img, gt = render_native(world)
            scenes.append((subsample_aps(img, config.width), gt))

    widths = [gt.width_px for _, gt in scenes if gt.visible]
    if widths:
        thr_lo = float(np.mean(widths) - np.std(widths))
        thr_hi = float(np.mean(widths) + np.std(widths))
    else:
        thr_lo, thr_hi = DEFAULT_THR_LO, DEFAULT_THR_HI

    def label(gt: GroundTruth) -> int:
        if not gt.visible:
            return 9
        return _SIZE_BASE[gt.region] + _size_index(gt.width_px, thr_lo, thr_hi)

    entries: list[tuple[Frame, int, dict, str]] = []
    for frame, gt in scenes:
        cls = label(gt)
        variants = [(frame, cls, _meta(gt), "base")]
        if frame.kind == FRAME_APS:
            for delta in config.exposure_deltas:
                variants.append((augment_exposure(frame, delta), cls,
                                 _meta(gt), f"exposure{delta:+g}"))
        if config.mirror:
            for f, c, m, src in list(variants):
                tag = "mirror" if src == "base" else "mirror+" + src
                variants.append((mirror_frame(f), mirror_class(c),
                                 _mirror_meta(m), tag))
        entries.extend(variants)

    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)

    frames_meta = []
    balance = {name: 0 for name in CLASS_NAMES}
    for i, (frame, cls, meta, src) in enumerate(entries):
        rec = {"class": cls, "kind": frame.kind, "source": src, **meta}
        gray = _quantize(frame.pixels)
        if out_dir is None:
            rec["data"] = base64.b64encode(gray.tobytes()).decode("ascii")
        else:
            rel = os.path.join("frames", f"{i:06d}.pgm")
            write_pgm(os.path.join(out_dir, rel), frame.pixels)
            rec["path"] = rel
        balance[CLASS_NAMES[cls]] += 1
        frames_meta.append(rec)

    manifest = {"width": config.width, "seed": config.seed,
                "n_base": n_frames, "thr_lo": thr_lo, "thr_hi": thr_hi,
                "classes": list(CLASS_NAMES), "balance": balance,
                "frames": frames_meta}
    if out_dir is not None:
        with open(os.path.join(out_dir, "manifest.json"), "w") as f:
            json.dump(manifest, f, separators=(",", ":"))
    return manifest


def load_manifest(path: str) -> dict:
    with open(path) as f:
        return json.load(f)


def frames_from_manifest(manifest: dict,
                         root: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Decode manifest frames to (float32 pixels in [0, 1], int labels)."""
    w = manifest["width"]
    records = manifest["frames"]
    gray = np.empty((len(records), w, w), dtype=np.uint8)
    labels = np.empty(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        if "data" in rec:
            raw = base64.b64decode(rec["data"])
            gray[i] = np.frombuffer(raw, dtype=np.uint8).reshape(w, w)
        else:
            path = rec["path"] if root is None else os.path.join(root, rec["path"])
            gray[i] = _quantize(read_pgm(path))
        labels[i] = rec["class"]
    return gray.astype(np.float32) / 255.0, labels
