"""Event-camera preprocessing: streams, noise filtering, histogram frames.

Events are (t_us, x, y, polarity) tuples from a 240x180 sensor. Polarity is
+1 (ON, brightness increase) or -1 (OFF). Streams are kept in a compact
structured array and must be non-decreasing in time.

The pipeline is: background-activity filter -> fixed-count signed histogram
accumulation with spatial subsampling -> normalization to a [0, 1] frame.
Conventional grayscale frames from the same sensor ("APS") are mean-pooled
to the histogram resolution so one network consumes both.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SENSOR_WIDTH = 240
SENSOR_HEIGHT = 180

ON = 1
OFF = -1

FRAME_APS = "APS"
FRAME_DVS = "DVS"

EVT1_MAGIC = b"EVT1\n"
EVT1_RECORD = struct.Struct("<QHHBB")  # t, x, y, polarity, reserved
CSV_HEADER = "t_us,x,y,polarity"

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])

# Grid timestamps start far in the past so warm-up events find no support.
_T_SENTINEL = -(2**62)


@dataclass
class Event:
    t: int
    x: int
    y: int
    polarity: int  # ON or OFF


def make_events(ts, xs, ys, ps) -> np.ndarray:
    """Build a structured event array from columns (polarity +1/-1)."""
    ev = np.zeros(len(ts), dtype=EVENT_DTYPE)
    ev["t"] = ts
    ev["x"] = xs
    ev["y"] = ys
    ev["p"] = ps
    return ev


def _check_stream(ev: np.ndarray) -> np.ndarray:
    if ev.size:
        dt = np.diff(ev["t"].astype(np.int64))
        bad = np.nonzero(dt < 0)[0]
        if bad.size:
            i = int(bad[0]) + 1
            raise ValueError(
                f"timestamps must be non-decreasing: record {i} has "
                f"t={int(ev['t'][i])} after t={int(ev['t'][i - 1])}"
            )
        if int(ev["x"].max()) >= SENSOR_WIDTH or int(ev["y"].max()) >= SENSOR_HEIGHT:
            raise ValueError("event coordinates outside the 240x180 sensor")
    return ev


def parse_events(data: bytes, fmt: str = "evt1") -> np.ndarray:
    """Decode an event stream from bytes. fmt is "evt1" or "csv"."""
    if fmt == "evt1":
        return _parse_evt1(data)
    if fmt == "csv":
        return _parse_csv(data)
    raise ValueError(f"unknown event format: {fmt!r}")


def _parse_evt1(data: bytes) -> np.ndarray:
    if not data.startswith(EVT1_MAGIC):
        raise ValueError("bad magic: not an EVT1 stream")
    body = data[len(EVT1_MAGIC):]
    rec = EVT1_RECORD.size
    if len(body) % rec:
        offset = len(EVT1_MAGIC) + (len(body) // rec) * rec
        raise ValueError(f"truncated record at byte offset {offset}")
    n = len(body) // rec
    raw = np.frombuffer(body, dtype=np.dtype(
        [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("pol", "u1"), ("res", "u1")]))
    if n and int(raw["pol"].max()) > 1:
        raise ValueError("polarity byte must be 0 or 1")
    ev = np.zeros(n, dtype=EVENT_DTYPE)
    ev["t"] = raw["t"]
    ev["x"] = raw["x"]
    ev["y"] = raw["y"]
    ev["p"] = np.where(raw["pol"] == 1, ON, OFF).astype(np.int8)
    return _check_stream(ev)


def _parse_csv(data: bytes) -> np.ndarray:
    text = data.decode("ascii")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != CSV_HEADER:
        raise ValueError(f"csv header must be exactly {CSV_HEADER!r}")
    rows = []
    for i, ln in enumerate(lines[1:], start=1):
        parts = ln.split(",")
        if len(parts) != 4:
            raise ValueError(f"csv row {i}: expected 4 fields")
        t, x, y, pol = (int(p) for p in parts)
        if pol not in (0, 1):
            raise ValueError(f"csv row {i}: polarity must be 0 or 1")
        rows.append((t, x, y, ON if pol == 1 else OFF))
    ev = np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE)
    return _check_stream(ev)


def pack_events(ev: np.ndarray, fmt: str = "evt1") -> bytes:
    """Encode an event stream to bytes. Inverse of parse_events."""
    if fmt == "evt1":
        raw = np.zeros(len(ev), dtype=np.dtype(
            [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("pol", "u1"), ("res", "u1")]))
        raw["t"] = ev["t"]
        raw["x"] = ev["x"]
        raw["y"] = ev["y"]
        raw["pol"] = (ev["p"] == ON).astype(np.uint8)
        return EVT1_MAGIC + raw.tobytes()
    if fmt == "csv":
        out = [CSV_HEADER]
        for e in ev:
            pol = 1 if int(e["p"]) == ON else 0
            out.append(f"{int(e['t'])},{int(e['x'])},{int(e['y'])},{pol}")
        return ("\n".join(out) + "\n").encode("ascii")
    raise ValueError(f"unknown event format: {fmt!r}")


def load_events(path: str) -> np.ndarray:
    fmt = "csv" if str(path).endswith(".csv") else "evt1"
    with open(path, "rb") as f:
        return parse_events(f.read(), fmt)


def save_events(path: str, ev: np.ndarray) -> None:
    fmt = "csv" if str(path).endswith(".csv") else "evt1"
    with open(path, "wb") as f:
        f.write(pack_events(ev, fmt))


class FilterState:
    """Background-activity filter over a per-pixel last-timestamp grid.

    An event passes when any pixel in its (2r+1)^2 neighborhood, itself
    included, saw an event within dt_max_us. Every event updates the grid
    whether or not it passes, so two coincident noise events can support
    each other but an isolated one cannot.
    """

    def __init__(self, dt_max_us: int = 10_000, radius: int = 1,
                 width: int = SENSOR_WIDTH, height: int = SENSOR_HEIGHT):
        if dt_max_us < 0 or radius < 0:
            raise ValueError("dt_max_us and radius must be non-negative")
        self.dt_max_us = int(dt_max_us)
        self.radius = int(radius)
        self.width = width
        self.height = height
        self.last_ts = np.full((height, width), _T_SENTINEL, dtype=np.int64)
        # max of last_ts over each pixel's neighborhood, maintained on write
        self._neighbor_max = np.full((height, width), _T_SENTINEL, dtype=np.int64)

    def reset(self) -> None:
        self.last_ts.fill(_T_SENTINEL)
        self._neighbor_max.fill(_T_SENTINEL)


def background_filter_step(state: FilterState, e: Event) -> bool:
    """Filter one event. Returns True if it passes."""
    t, x, y = int(e.t), int(e.x), int(e.y)
    passed = t - int(state._neighbor_max[y, x]) <= state.dt_max_us
    state.last_ts[y, x] = t
    r = state.radius
    y0, y1 = max(0, y - r), min(state.height, y + r + 1)
    x0, x1 = max(0, x - r), min(state.width, x + r + 1)
    # stream time is non-decreasing, so the window max is just t
    state._neighbor_max[y0:y1, x0:x1] = t
    return passed


def _window_reduce(grid: np.ndarray, radius: int, op) -> np.ndarray:
    """Separable (2r+1)^2 sliding min or max; edges see a shrunken window."""
    out = grid
    for axis in (0, 1):
        src = out
        out = src.copy()
        for d in range(1, radius + 1):
            if axis == 0:
                op(out[d:], src[:-d], out=out[d:])
                op(out[:-d], src[d:], out=out[:-d])
            else:
                op(out[:, d:], src[:, :-d], out=out[:, d:])
                op(out[:, :-d], src[:, d:], out=out[:, :-d])
    return out


def filter_mask(state: FilterState, ev: np.ndarray) -> np.ndarray:
    """Vectorized-state version of background_filter_step over a stream.

    Returns a boolean keep-mask aligned with ev. The stream is sliced into
    time bins of width dt_max: any earlier same-bin event inside the spatial
    window is automatically recent enough to support, and support from all
    older events is exactly the running neighborhood-max grid, so the result
    matches the per-event filter bit for bit.
    """
    n = len(ev)
    if not n:
        return np.zeros(0, dtype=bool)
    ts = ev["t"].astype(np.int64)
    if state.dt_max_us > 0:
        bins = ts // state.dt_max_us
        starts = np.flatnonzero(np.r_[True, bins[1:] != bins[:-1]])
    if state.dt_max_us == 0 or n < 64 * len(starts):
        # sparse stream: per-bin grid passes would dominate, step instead
        mask = np.zeros(n, dtype=bool)
        for i, (t, x, y, p) in enumerate(zip(ev["t"].tolist(), ev["x"].tolist(),
                                             ev["y"].tolist(), ev["p"].tolist())):
            mask[i] = background_filter_step(state, Event(t, x, y, p))
        return mask
    xs = ev["x"].astype(np.intp)
    ys = ev["y"].astype(np.intp)
    dt_max = state.dt_max_us
    r = state.radius
    h, w = state.height, state.width
    big = np.int64(2 ** 62)
    mask = np.empty(n, dtype=bool)
    bounds = np.r_[starts, n]
    for k in range(len(starts)):
        i0, i1 = int(bounds[k]), int(bounds[k + 1])
        tb, xb, yb = ts[i0:i1], xs[i0:i1], ys[i0:i1]
        sup_grid = state._neighbor_max[yb, xb] >= tb - dt_max
        # earliest in-bin arrival per pixel; a stable sort keeps ties in
        # stream order so duplicate pixels resolve to their first event
        lin = yb * w + xb
        order = np.argsort(lin, kind="stable")
        lo = lin[order]
        first = np.r_[True, lo[1:] != lo[:-1]]
        first_seq = np.full(h * w, big, dtype=np.int64)
        first_seq[lo[first]] = order[first]
        emin = _window_reduce(first_seq.reshape(h, w), r, np.minimum)
        sup_bin = emin[yb, xb] < np.arange(i1 - i0)
        mask[i0:i1] = sup_grid | sup_bin
        # fold the bin into the running grids; duplicate-index assignment
        # keeps the last write, which is the pixel max since time ascends
        tmax = np.full(h * w, _T_SENTINEL, dtype=np.int64)
        tmax[lo] = tb[order]
        tmax = tmax.reshape(h, w)
        np.maximum(state.last_ts, tmax, out=state.last_ts)
        np.maximum(state._neighbor_max, _window_reduce(tmax, r, np.maximum),
                   out=state._neighbor_max)
    return mask


class HistAccumulator:
    """Signed, saturating event-count histogram emitted every n_target events.

    Source coordinates are subsampled to a width x width grid by truncated
    division, floor(x * W / src_w). Per-pixel counts saturate at +/-clip but
    saturated events still advance the event counter, so frames keep a fixed
    event budget rather than a fixed duration.
    """

    def __init__(self, width: int = 36, n_target: int = 5000, clip: int = 16,
                 src_width: int = SENSOR_WIDTH, src_height: int = SENSOR_HEIGHT):
        if width % 3:
            raise ValueError("width must be divisible by 3")
        if n_target <= 0 or clip <= 0:
            raise ValueError("n_target and clip must be positive")
        self.width = width
        self.n_target = n_target
        self.clip = clip
        self.src_width = src_width
        self.src_height = src_height
        self.counts = np.zeros((width, width), dtype=np.int32)
        self.n_collected = 0

    def reset(self) -> None:
        self.counts.fill(0)
        self.n_collected = 0


def accumulate(acc: HistAccumulator, e: Event) -> np.ndarray | None:
    """Add one event. Returns the finished count grid on emission, else None."""
    gx = (int(e.x) * acc.width) // acc.src_width
    gy = (int(e.y) * acc.width) // acc.src_height
    c = int(acc.counts[gy, gx]) + int(e.polarity)
    acc.counts[gy, gx] = min(acc.clip, max(-acc.clip, c))
    acc.n_collected += 1
    if acc.n_collected >= acc.n_target:
        out = acc.counts.copy()
        acc.reset()
        return out
    return None


def accumulate_events(acc: HistAccumulator, ev: np.ndarray) -> list[tuple[np.ndarray, int]]:
    """Feed a stream through the accumulator. Returns [(grid, t_emit), ...].

    Equivalent to calling accumulate per event (the fast path only batches
    pixels whose running count provably never touches the saturation rails).
    """
    emissions: list[tuple[np.ndarray, int]] = []
    if not len(ev):
        return emissions
    w = acc.width
    gx = (ev["x"].astype(np.int64) * w) // acc.src_width
    gy = (ev["y"].astype(np.int64) * w) // acc.src_height
    pix = (gy * w + gx).astype(np.int64)
    deltas = ev["p"].astype(np.int64)
    pos = 0
    n = len(ev)
    while pos < n:
        take = min(acc.n_target - acc.n_collected, n - pos)
        sl = slice(pos, pos + take)
        _apply_chunk(acc, pix[sl], deltas[sl])
        acc.n_collected += take
        pos += take
        if acc.n_collected >= acc.n_target:
            t_emit = int(ev["t"][pos - 1])
            grid = acc.counts.copy()
            acc.reset()
            emissions.append((grid, t_emit))
    return emissions


def _apply_chunk(acc: HistAccumulator, pix: np.ndarray, deltas: np.ndarray) -> None:
    flat = acc.counts.reshape(-1)
    occ = np.bincount(pix, minlength=flat.size)
    hit = np.nonzero(occ)[0]
    # a pixel whose |start| + event count stays within clip can never
    # saturate mid-chunk, so its net sum is exact
    risky = hit[np.abs(flat[hit]) + occ[hit] > acc.clip]
    if risky.size:
        risky_set = np.zeros(flat.size, dtype=bool)
        risky_set[risky] = True
        ev_risky = risky_set[pix]
        net = np.bincount(pix[~ev_risky], weights=deltas[~ev_risky],
                          minlength=flat.size).astype(np.int64)
        flat += net.astype(flat.dtype)
        clip = acc.clip
        for p, d in zip(pix[ev_risky].tolist(), deltas[ev_risky].tolist()):
            c = int(flat[p]) + d
            flat[p] = min(clip, max(-clip, c))
    else:
        net = np.bincount(pix, weights=deltas, minlength=flat.size).astype(np.int64)
        flat += net.astype(flat.dtype)


@dataclass
class Frame:
    """Square [0, 1] grayscale frame, either an APS subsample or a DVS histogram."""

    pixels: np.ndarray
    kind: str
    t: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.pixels.shape[1]:
            raise ValueError("frame must be square")
        if self.pixels.shape[0] % 3:
            raise ValueError("frame width must be divisible by 3")
        if self.kind not in (FRAME_APS, FRAME_DVS):
            raise ValueError(f"unknown frame kind: {self.kind!r}")

    @property
    def width(self) -> int:
        return self.pixels.shape[0]


def normalize_histogram(counts: np.ndarray, t: int = 0) -> Frame:
    """Map signed counts to [0, 1] with zero pinned at exactly 0.5.

    The scale is three standard deviations, where sigma is the RMS of the
    nonzero counts about the zero level. Empty pixels dominate the grid, so
    including them would crush contrast; a count at +3 sigma maps to 1.0.
    An all-zero grid (sigma 0) yields a flat 0.5 frame.
    """
    counts = np.asarray(counts)
    nz = counts != 0
    if not nz.any():
        return Frame(np.full(counts.shape, 0.5), FRAME_DVS, t)
    sigma = float(np.sqrt(np.mean(counts[nz].astype(np.float64) ** 2)))
    pixels = np.clip(0.5 + counts / (6.0 * sigma), 0.0, 1.0)
    return Frame(pixels, FRAME_DVS, t)


def subsample_aps(image: np.ndarray, width: int = 36, t: int = 0) -> Frame:
    """Mean-pool a full-resolution grayscale image to the histogram grid.

    Blocks are the preimages of the floor subsampling map, so APS frames and
    event histograms share pixel geometry exactly.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    gx = (np.arange(w) * width) // w
    gy = (np.arange(h) * width) // h
    # sum into target cells, then divide by block areas
    sums = np.zeros((width, width))
    np.add.at(sums, (gy[:, None], gx[None, :]), image)
    area = np.outer(np.bincount(gy, minlength=width), np.bincount(gx, minlength=width))
    return Frame(sums / area, FRAME_APS, t)


def augment_exposure(frame: Frame, delta: float) -> Frame:
    """Shift APS brightness by delta, clipped to [0, 1]. DVS frames are refused."""
    if frame.kind != FRAME_APS:
        raise ValueError("exposure augmentation applies to APS frames only")
    return Frame(np.clip(frame.pixels + delta, 0.0, 1.0), FRAME_APS, frame.t)


def mirror_frame(frame: Frame) -> Frame:
    """Flip a frame left-right."""
    return Frame(frame.pixels[:, ::-1].copy(), frame.kind, frame.t)


def mirror_class(idx: int) -> int:
    """Class index under a left-right flip: L and R regions swap, sizes keep."""
    return (6, 7, 8, 3, 4, 5, 0, 1, 2, 9)[idx]


def mirror_events(ev: np.ndarray) -> np.ndarray:
    """Flip an event stream left-right on the sensor."""
    out = ev.copy()
    out["x"] = SENSOR_WIDTH - 1 - ev["x"]
    return out


def write_pgm(path: str, pixels: np.ndarray) -> None:
    """Write a [0, 1] grayscale array as binary PGM (P5, maxval 255)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    gray = np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read a binary PGM back to a [0, 1] float array."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError("not a binary PGM (P5) file")
    # header is three whitespace-separated tokens after the magic; comment
    # lines are not produced by write_pgm but are tolerated
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(tk) for tk in tokens)
    if maxval != 255:
        raise ValueError("expected maxval 255")
    gray = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    return gray.reshape(h, w).astype(np.float64) / 255.0
