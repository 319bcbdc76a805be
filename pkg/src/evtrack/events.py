"""Event-stream ingestion, windowing and dense representations.

Events are held column-wise in a numpy structured array with fields
``t`` (uint64 ns), ``x``/``y`` (uint16) and ``p`` (int8, -1 or +1).  The same
layout, packed to 13 bytes per record, is the on-disk binary format::

    header:  b"EVT1"  width:u16  height:u16          (little-endian)
    record:  t:u64  x:u16  y:u16  p:i8                (repeated)

The CSV format is ``t_ns,x,y,p`` per row with an optional header line.  A
polarity token of ``0`` is read as -1.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .boxes import BBoxN

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
MAGIC = b"EVT1"
HEADER = np.dtype([("magic", "S4"), ("width", "<u2"), ("height", "<u2")])
DEFAULT_WINDOW_NS = 25_000_000  # 40 Hz
DEFAULT_CLIP = 10


class EventFormatError(ValueError):
    """Raised for malformed event or box files; the message names the location."""


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True)
class EventStream:
    """Events from a ``width x height`` sensor, sorted by timestamp."""

    width: int
    height: int
    events: np.ndarray

    def __post_init__(self):
        ev = self.events
        if ev.dtype != EVENT_DTYPE:
            raise TypeError(f"events must have dtype {EVENT_DTYPE}")
        if len(ev) and (int(ev["x"].max()) >= self.width or int(ev["y"].max()) >= self.height):
            raise EventFormatError("event coordinates outside sensor geometry")

    @property
    def geometry(self) -> tuple[int, int]:
        return self.width, self.height

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        for r in self.events:
            yield Event(int(r["t"]), int(r["x"]), int(r["y"]), int(r["p"]))

    @classmethod
    def from_arrays(cls, width, height, t, x, y, p, sort: bool = True) -> "EventStream":
        ev = np.empty(len(t), dtype=EVENT_DTYPE)
        ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
        if sort and len(ev) and np.any(np.diff(ev["t"].astype(np.int64)) < 0):
            ev = ev[np.argsort(ev["t"], kind="stable")]
        return cls(int(width), int(height), ev)


@dataclass(frozen=True)
class EventSlice:
    """Contiguous run of a stream's events inside ``[t0, t0 + dt)``."""

    width: int
    height: int
    t0: int
    dt: int
    events: np.ndarray

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class EventFrame:
    width: int
    height: int
    t0: int
    dt: int
    grid: np.ndarray  # height x width, int64


# ---------------------------------------------------------------------------
# parsing and writing


def _check_records(ev: np.ndarray, width: int, height: int, where) -> None:
    bad_p = np.flatnonzero((ev["p"] != 1) & (ev["p"] != -1))
    if bad_p.size:
        raise EventFormatError(f"{where(bad_p[0])}: unknown polarity {int(ev['p'][bad_p[0]])}")
    bad_xy = np.flatnonzero((ev["x"] >= width) | (ev["y"] >= height))
    if bad_xy.size:
        i = bad_xy[0]
        raise EventFormatError(
            f"{where(i)}: coordinate out of range ({int(ev['x'][i])}, {int(ev['y'][i])}) "
            f"for geometry {width}x{height}"
        )


def _parse_polarity(tok: str) -> int | None:
    tok = tok.strip()
    if tok in ("1", "+1"):
        return 1
    if tok in ("-1", "0"):
        return -1
    return None


def _parse_csv(text: str, geometry: tuple[int, int]) -> EventStream:
    width, height = geometry
    rows = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise EventFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            t, x, y = int(row[0]), int(row[1]), int(row[2])
        except ValueError:
            if lineno == 1 and not rows:
                continue  # header
            raise EventFormatError(f"line {lineno}: malformed record {row!r}") from None
        p = _parse_polarity(row[3])
        if p is None:
            raise EventFormatError(f"line {lineno}: unknown polarity token {row[3]!r}")
        if t < 0 or x < 0 or y < 0:
            raise EventFormatError(f"line {lineno}: negative field in {row!r}")
        if x >= width or y >= height:
            raise EventFormatError(
                f"line {lineno}: coordinate out of range ({x}, {y}) for geometry {width}x{height}"
            )
        rows.append((t, x, y, p))
    ev = np.array(rows, dtype=EVENT_DTYPE) if rows else np.empty(0, dtype=EVENT_DTYPE)
    return EventStream.from_arrays(width, height, ev["t"], ev["x"], ev["y"], ev["p"])


def _parse_binary(buf: bytes) -> EventStream:
    if len(buf) < HEADER.itemsize:
        raise EventFormatError("offset 0: truncated header")
    head = np.frombuffer(buf[: HEADER.itemsize], dtype=HEADER)[0]
    if head["magic"] != MAGIC:
        raise EventFormatError(f"offset 0: bad magic {bytes(head['magic'])!r}")
    width, height = int(head["width"]), int(head["height"])
    body = len(buf) - HEADER.itemsize
    if body % EVENT_DTYPE.itemsize:
        off = HEADER.itemsize + (body // EVENT_DTYPE.itemsize) * EVENT_DTYPE.itemsize
        raise EventFormatError(f"offset {off}: truncated record")
    ev = np.frombuffer(buf, dtype=EVENT_DTYPE, offset=HEADER.itemsize).copy()
    _check_records(
        ev, width, height, lambda i: f"offset {HEADER.itemsize + int(i) * EVENT_DTYPE.itemsize}"
    )
    return EventStream.from_arrays(width, height, ev["t"], ev["x"], ev["y"], ev["p"])


def parse_event_stream(source, format: str | None = None, geometry: tuple[int, int] | None = None) -> EventStream:
    """Read events from a path or from raw bytes.

    Args:
        source: file path, or the file's contents as ``bytes``.
        format: ``"csv"`` or ``"binary"``; inferred from the suffix of a path
            (``.csv`` vs anything else) when omitted.
        geometry: ``(width, height)``, required for CSV which has no header
            carrying it.

    Out-of-order records are stably sorted by timestamp.
    """
    if isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
        if format is None:
            format = "binary" if data[:4] == MAGIC else "csv"
    else:
        path = Path(source)
        if format is None:
            format = "csv" if path.suffix.lower() == ".csv" else "binary"
        data = path.read_bytes()
    if format == "binary":
        return _parse_binary(data)
    if format == "csv":
        if geometry is None:
            raise ValueError("CSV event files need an explicit geometry")
        return _parse_csv(data.decode("utf-8"), geometry)
    raise ValueError(f"unknown event format {format!r}")


def encode_binary(stream: EventStream) -> bytes:
    head = np.array([(MAGIC, stream.width, stream.height)], dtype=HEADER)
    return head.tobytes() + np.ascontiguousarray(stream.events).tobytes()


def write_events(stream: EventStream, path, format: str | None = None) -> None:
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"
    if format == "binary":
        path.write_bytes(encode_binary(stream))
    elif format == "csv":
        ev = stream.events
        lines = [f"{t},{x},{y},{p}\n" for t, x, y, p in zip(ev["t"], ev["x"], ev["y"], ev["p"])]
        path.write_text("t_ns,x,y,p\n" + "".join(lines))
    else:
        raise ValueError(f"unknown event format {format!r}")


def read_binary_header(path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        buf = fh.read(HEADER.itemsize)
    if len(buf) < HEADER.itemsize or buf[:4] != MAGIC:
        raise EventFormatError(f"{path}: offset 0: not an EVT1 file")
    head = np.frombuffer(buf, dtype=HEADER)[0]
    return int(head["width"]), int(head["height"])


def iter_event_chunks(path, chunk_events: int = 1 << 20) -> Iterator[np.ndarray]:
    """Yield successive record arrays of at most ``chunk_events`` from a binary file.

    Memory use is bounded by the chunk size, independent of the file length.
    """
    width, height = read_binary_header(path)
    rec = EVENT_DTYPE.itemsize
    with open(path, "rb") as fh:
        fh.seek(HEADER.itemsize)
        index = 0
        while True:
            buf = fh.read(chunk_events * rec)
            if not buf:
                return
            if len(buf) % rec:
                raise EventFormatError(f"{path}: offset {HEADER.itemsize + index * rec + len(buf) // rec * rec}: truncated record")
            ev = np.frombuffer(buf, dtype=EVENT_DTYPE)
            base = index
            _check_records(ev, width, height, lambda i: f"{path}: offset {HEADER.itemsize + (base + int(i)) * rec}")
            index += len(ev)
            yield ev


def read_gt_boxes(path) -> list[BBoxN]:
    """Read ``frame_index,cx,cy,w,h`` rows; the list is indexed by frame."""
    boxes: dict[int, BBoxN] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                idx = int(row[0])
                vals = [float(v) for v in row[1:5]]
            except (ValueError, IndexError):
                if lineno == 1:
                    continue
                raise EventFormatError(f"{path}: line {lineno}: malformed box row {row!r}") from None
            boxes[idx] = BBoxN(*vals)
    if sorted(boxes) != list(range(len(boxes))):
        raise EventFormatError(f"{path}: frame indices are not contiguous from 0")
    return [boxes[i] for i in range(len(boxes))]


def write_gt_boxes(boxes, path) -> None:
    lines = ["frame_index,cx,cy,w,h\n"]
    for i, b in enumerate(boxes):
        lines.append(f"{i},{b.cx!r},{b.cy!r},{b.w!r},{b.h!r}\n")
    Path(path).write_text("".join(lines))


# ---------------------------------------------------------------------------
# windows and representations


def window_events(stream: EventStream, t0: int, dt: int) -> EventSlice:
    """Events with ``t0 <= t < t0 + dt``."""
    if dt <= 0:
        raise ValueError("window length must be positive")
    t = stream.events["t"]
    t0 = int(t0)
    lo = int(np.searchsorted(t, np.uint64(max(t0, 0)), side="left")) if t0 > 0 else 0
    hi_t = t0 + int(dt)
    hi = int(np.searchsorted(t, np.uint64(hi_t), side="left")) if hi_t > 0 else 0
    return EventSlice(stream.width, stream.height, t0, int(dt), stream.events[lo:hi])


def iter_windows(stream: EventStream, dt: int, t0: int = 0, n_windows: int | None = None) -> Iterator[EventSlice]:
    """Consecutive half-open windows starting at ``t0``."""
    if n_windows is None:
        last = int(stream.events["t"][-1]) if len(stream) else t0
        n_windows = max(0, (last - t0) // dt + 1)
    for k in range(n_windows):
        yield window_events(stream, t0 + k * dt, dt)


def aggregate_frame(slice_: EventSlice) -> EventFrame:
    """Signed per-pixel polarity sum over the slice."""
    ev = slice_.events
    n = slice_.width * slice_.height
    idx = ev["y"].astype(np.int64) * slice_.width + ev["x"]
    grid = np.bincount(idx, weights=ev["p"], minlength=n)
    return EventFrame(
        slice_.width, slice_.height, slice_.t0, slice_.dt,
        grid.astype(np.int64).reshape(slice_.height, slice_.width),
    )


def normalize_frame(frame, clip: int = DEFAULT_CLIP) -> np.ndarray:
    """Clamp to ``[-clip, clip]`` and scale into ``[-1, 1]``."""
    if clip < 1:
        raise ValueError("clip must be >= 1")
    grid = frame.grid if isinstance(frame, EventFrame) else np.asarray(frame)
    return np.clip(grid, -clip, clip).astype(np.float64) / clip


def voxel_grid(slice_: EventSlice, bins: int) -> np.ndarray:
    """Temporal voxel grid ``bins x H x W`` with linear interpolation between bin centers.

    Bin ``b`` is centered at ``t0 + (b + 0.5) * dt / bins``; events before the
    first center or after the last go wholly to the edge bin, so every event's
    weights sum to one.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    h, w = slice_.height, slice_.width
    vol = np.zeros(bins * h * w)
    ev = slice_.events
    if len(ev) == 0:
        return vol.reshape(bins, h, w)
    tau = (ev["t"].astype(np.float64) - slice_.t0) / slice_.dt * bins - 0.5
    tau = np.clip(tau, 0.0, bins - 1)
    lo = np.floor(tau).astype(np.int64)
    frac = tau - lo
    hi = np.minimum(lo + 1, bins - 1)
    pix = ev["y"].astype(np.int64) * w + ev["x"]
    p = ev["p"].astype(np.float64)
    vol += np.bincount(lo * h * w + pix, weights=p * (1.0 - frac), minlength=vol.size)
    vol += np.bincount(hi * h * w + pix, weights=p * frac, minlength=vol.size)
    return vol.reshape(bins, h, w)


class StreamingAggregator:
    """Turn a chunked event source into consecutive window frames.

    Only the current window's accumulator and one chunk are held, so memory
    does not grow with stream length.  Input chunks must be time-sorted.
    """

    def __init__(self, width: int, height: int, dt: int, t0: int = 0):
        self.width, self.height = width, height
        self.dt, self.t0 = int(dt), int(t0)
        self._k = 0
        self._acc = np.zeros(width * height, dtype=np.int64)
        self._last_t = -1

    def push(self, ev: np.ndarray) -> Iterator[tuple[int, np.ndarray]]:
        """Feed a chunk; yields ``(window_index, grid)`` for every window it closes."""
        if len(ev) == 0:
            return
        t = ev["t"].astype(np.int64)
        if t[0] < self._last_t or np.any(t[1:] < t[:-1]):
            raise EventFormatError("streaming aggregation needs time-sorted events")
        self._last_t = int(t[-1])
        keep = t >= self.t0
        if not keep.all():
            ev, t = ev[keep], t[keep]
            if len(t) == 0:
                return
        win = (t - self.t0) // self.dt
        hw = self.width * self.height
        pix = ev["y"].astype(np.int64) * self.width + ev["x"]
        last = int(win[-1])
        span = last - self._k + 1
        counts = np.bincount((win - self._k) * hw + pix, weights=ev["p"], minlength=span * hw)
        counts = counts.astype(np.int64).reshape(span, hw)
        counts[0] += self._acc
        for j in range(span - 1):
            yield self._k + j, counts[j].reshape(self.height, self.width)
        self._acc = counts[-1]
        self._k = last

    def flush(self) -> tuple[int, np.ndarray]:
        """Return the still-open window."""
        out = self._k, self._acc.reshape(self.height, self.width).copy()
        self._acc = np.zeros_like(self._acc)
        self._k += 1
        return out


def stream_frames(path, dt: int = DEFAULT_WINDOW_NS, t0: int = 0, chunk_events: int = 1 << 20) -> Iterator[tuple[int, np.ndarray]]:
    """Window frames of a binary event file, read in bounded memory."""
    width, height = read_binary_header(path)
    agg = StreamingAggregator(width, height, dt, t0)
    any_events = False
    for chunk in iter_event_chunks(path, chunk_events):
        any_events = any_events or len(chunk) > 0
        yield from agg.push(chunk)
    if any_events:
        yield agg.flush()


# ---------------------------------------------------------------------------
# crops


@dataclass(frozen=True)
class CropTransform:
    """Axis-aligned affine map between crop and image pixel coordinates.

    Continuous coordinates put pixel ``k`` on ``[k, k + 1)``; a crop point
    ``u`` maps to image ``x0 + u * sx`` (and likewise for ``v``/``y``).
    """

    x0: float
    y0: float
    sx: float
    sy: float
    out_h: int
    out_w: int
    img_w: int
    img_h: int

    def to_image(self, u, v):
        return self.x0 + np.asarray(u) * self.sx, self.y0 + np.asarray(v) * self.sy

    def to_crop(self, x, y):
        return (np.asarray(x) - self.x0) / self.sx, (np.asarray(y) - self.y0) / self.sy

    def box_to_crop(self, box: BBoxN) -> BBoxN:
        """Image-normalized box -> crop-normalized box."""
        u, v = self.to_crop(box.cx * self.img_w, box.cy * self.img_h)
        return BBoxN(
            float(u) / self.out_w,
            float(v) / self.out_h,
            box.w * self.img_w / (self.sx * self.out_w),
            box.h * self.img_h / (self.sy * self.out_h),
        )

    def box_to_image(self, box: BBoxN) -> BBoxN:
        """Crop-normalized box -> image-normalized box."""
        x, y = self.to_image(box.cx * self.out_w, box.cy * self.out_h)
        return BBoxN(
            float(x) / self.img_w,
            float(y) / self.img_h,
            box.w * self.sx * self.out_w / self.img_w,
            box.h * self.sy * self.out_h / self.img_h,
        )


def _interp_matrix(n_out: int, n_in: int, start: float, step: float) -> np.ndarray:
    """Rows of bilinear weights sampling ``n_in`` pixels at crop pixel centers."""
    src = start + (np.arange(n_out) + 0.5) * step - 0.5
    i0 = np.floor(src).astype(np.int64)
    f = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for idx, wgt in ((i0, 1.0 - f), (i0 + 1, f)):
        ok = (idx >= 0) & (idx < n_in) & (wgt != 0)
        np.add.at(m, (rows[ok], idx[ok]), wgt[ok])
    return m


def crop_transform(box: BBoxN, context: float, out: tuple[int, int], img_w: int, img_h: int) -> CropTransform:
    if not (box.w > 0 and box.h > 0):
        raise ValueError(f"degenerate box {box}")
    if context <= 0:
        raise ValueError("context must be positive")
    side = context * max(box.w * img_w, box.h * img_h)
    oh, ow = out
    return CropTransform(
        box.cx * img_w - side / 2, box.cy * img_h - side / 2, side / ow, side / oh, oh, ow, img_w, img_h
    )


def crop_resize(grid: np.ndarray, box: BBoxN, context: float, out: tuple[int, int]) -> tuple[np.ndarray, CropTransform]:
    """Square crop around ``box`` resampled bilinearly to ``out = (h, w)``.

    The crop side is ``context * max(box width, box height)`` in pixels and
    regions outside the image read as zero.  ``grid`` may carry leading
    channel axes.
    """
    grid = np.asarray(grid, dtype=np.float64)
    img_h, img_w = grid.shape[-2:]
    tf = crop_transform(box, context, out, img_w, img_h)
    ry = _interp_matrix(out[0], img_h, tf.y0, tf.sy)
    rx = _interp_matrix(out[1], img_w, tf.x0, tf.sx)
    return ry @ grid @ rx.T, tf
