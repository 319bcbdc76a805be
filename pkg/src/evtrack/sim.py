"""Synthetic event scenes with analytic ground truth.

A scene is a log-intensity image: a soft checkerboard background (optionally
shaken by camera jitter and modulated by a global flicker) plus moving disks
or rectangles that add a fixed log-intensity offset where they cover a pixel.
Events are produced by a per-pixel latched reference: whenever the current
log intensity has moved ``k`` whole thresholds ``C`` away from the reference,
``k`` events fire and the reference advances by ``k * C``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .boxes import BBoxN
from .events import (
    DEFAULT_WINDOW_NS,
    EventStream,
    aggregate_frame,
    iter_windows,
    normalize_frame,
    parse_event_stream,
    read_gt_boxes,
    write_events,
    write_gt_boxes,
)

SCENARIOS = ("plain", "distractor", "camera_motion", "combined")
SPLITS = {"train": 0, "val": 1, "test": 2}
NS = 1_000_000_000


@dataclass(frozen=True)
class Trajectory:
    """Object center path in pixels.

    ``kind`` is ``linear`` (constant velocity, reflected at the bounds),
    ``sinusoidal`` (independent sines per axis) or ``random_walk``
    (piecewise-linear through seeded waypoints).
    """

    kind: str
    start: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)
    amplitude: tuple[float, float] = (0.0, 0.0)
    frequency: float = 0.0
    phase: tuple[float, float] = (0.0, 0.0)
    step_px: float = 0.0
    knot_s: float = 0.25
    seed: int = 0

    def max_frequency(self) -> float:
        if self.kind == "sinusoidal":
            return self.frequency
        if self.kind == "random_walk":
            return 1.0 / self.knot_s
        return 0.0


@dataclass(frozen=True)
class SceneObject:
    shape: str  # "disk" or "square"
    size: float  # diameter or side, px
    offset: float  # log-intensity added where covered
    trajectory: Trajectory
    height: float | None = None  # squares only; defaults to size

    @property
    def extent(self) -> tuple[float, float]:
        return self.size, (self.height if self.height is not None else self.size)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 128
    height: int = 128
    duration_ns: int = 1 * NS
    render_hz: float = 1000.0
    contrast_threshold: float = 0.15
    base_log_intensity: float = 0.0
    checker_period: float = 16.0
    checker_contrast: float = 0.2
    target: SceneObject | None = None
    distractors: tuple[SceneObject, ...] = ()
    jitter_amplitude: float = 0.0
    jitter_hz: float = 0.0
    flicker_amplitude: float = 0.0
    flicker_hz: float = 0.0
    noise_rate: float = 0.1  # events / px / s
    window_ns: int = DEFAULT_WINDOW_NS
    seed: int = 0

    def __post_init__(self):
        if self.contrast_threshold <= 0:
            raise ValueError("contrast threshold must be positive")
        fmax = max([o.trajectory.max_frequency() for o in self.objects] + [self.jitter_hz, self.flicker_hz])
        if self.render_hz < 2 * fmax:
            raise ValueError(f"render rate {self.render_hz} Hz below twice the fastest motion ({fmax} Hz)")
        for o in self.objects:
            if min(o.extent) <= 0:
                raise ValueError("objects need a positive size")

    @property
    def objects(self) -> tuple[SceneObject, ...]:
        return ((self.target,) if self.target is not None else ()) + tuple(self.distractors)

    @property
    def n_windows(self) -> int:
        return self.duration_ns // self.window_ns

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        def obj(o):
            if o is None:
                return None
            tr = dict(o["trajectory"])
            for k in ("start", "velocity", "amplitude", "phase"):
                tr[k] = tuple(tr[k])
            return SceneObject(**{**o, "trajectory": Trajectory(**tr)})

        d = dict(d)
        d["target"] = obj(d.get("target"))
        d["distractors"] = tuple(obj(o) for o in d.get("distractors", ()))
        return cls(**d)


# ---------------------------------------------------------------------------
# trajectories


def _reflect(s, lo, hi):
    span = hi - lo
    if span <= 0:
        return s
    u = np.mod(s - lo, 2 * span)
    return lo + span - np.abs(u - span)


def _bounds(obj: SceneObject, width: int, height: int):
    w, h = obj.extent
    return (w / 2 + 2, width - w / 2 - 2), (h / 2 + 2, height - h / 2 - 2)


_WAYPOINT_CACHE: dict = {}


def _waypoints(tr: Trajectory, bounds, duration_s: float) -> np.ndarray:
    key = (tr, bounds, duration_s)
    if key not in _WAYPOINT_CACHE:
        rng = np.random.default_rng(tr.seed)
        n = int(np.ceil(duration_s / tr.knot_s)) + 2
        ang = rng.uniform(0.0, 2 * np.pi, size=n - 1)
        steps = tr.step_px * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        raw = np.vstack([np.asarray(tr.start, dtype=np.float64), steps]).cumsum(axis=0)
        (xl, xh), (yl, yh) = bounds
        raw[:, 0] = _reflect(raw[:, 0], xl, xh)
        raw[:, 1] = _reflect(raw[:, 1], yl, yh)
        _WAYPOINT_CACHE[key] = raw
    return _WAYPOINT_CACHE[key]


def object_center(obj: SceneObject, t_s: float, width: int, height: int, duration_s: float = 1.0) -> tuple[float, float]:
    """Analytic center (px) at time ``t_s`` seconds, before camera jitter."""
    tr = obj.trajectory
    (xl, xh), (yl, yh) = _bounds(obj, width, height)
    x0, y0 = tr.start
    if tr.kind == "linear":
        x = _reflect(x0 + tr.velocity[0] * t_s, xl, xh)
        y = _reflect(y0 + tr.velocity[1] * t_s, yl, yh)
    elif tr.kind == "sinusoidal":
        w = 2 * np.pi * tr.frequency * t_s
        x = x0 + tr.amplitude[0] * np.sin(w + tr.phase[0])
        y = y0 + tr.amplitude[1] * np.sin(w + tr.phase[1])
    elif tr.kind == "random_walk":
        pts = _waypoints(tr, ((xl, xh), (yl, yh)), max(duration_s, t_s))
        knots = np.arange(len(pts)) * tr.knot_s
        x = np.interp(t_s, knots, pts[:, 0])
        y = np.interp(t_s, knots, pts[:, 1])
    else:
        raise ValueError(f"unknown trajectory kind {tr.kind!r}")
    return float(x), float(y)


def camera_shift(spec: SceneSpec, t_s: float) -> tuple[float, float]:
    if spec.jitter_amplitude == 0.0:
        return 0.0, 0.0
    w = 2 * np.pi * spec.jitter_hz * t_s
    return spec.jitter_amplitude * np.sin(w), spec.jitter_amplitude * np.sin(0.7 * w + 1.3)


def target_box(spec: SceneSpec, t_ns: int) -> BBoxN:
    """Image-normalized target box at ``t_ns``, including camera motion."""
    t_s = t_ns / NS
    cx, cy = object_center(spec.target, t_s, spec.width, spec.height, spec.duration_ns / NS)
    jx, jy = camera_shift(spec, t_s)
    w, h = spec.target.extent
    return BBoxN((cx + jx) / spec.width, (cy + jy) / spec.height, w / spec.width, h / spec.height).clipped()


# ---------------------------------------------------------------------------
# rendering


class _Renderer:
    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.px = np.arange(spec.width) + 0.5
        self.py = np.arange(spec.height) + 0.5

    def coverage(self, obj: SceneObject, cx: float, cy: float) -> np.ndarray:
        w, h = obj.extent
        if obj.shape == "disk":
            d = np.hypot(self.px[None, :] - cx, self.py[:, None] - cy)
            return np.clip(w / 2 + 0.5 - d, 0.0, 1.0)
        if obj.shape == "square":
            xs = np.arange(self.spec.width, dtype=np.float64)
            ys = np.arange(self.spec.height, dtype=np.float64)
            ox = np.clip(np.minimum(xs + 1, cx + w / 2) - np.maximum(xs, cx - w / 2), 0.0, 1.0)
            oy = np.clip(np.minimum(ys + 1, cy + h / 2) - np.maximum(ys, cy - h / 2), 0.0, 1.0)
            return oy[:, None] * ox[None, :]
        raise ValueError(f"unknown shape {obj.shape!r}")

    def __call__(self, t_ns: int) -> np.ndarray:
        s = self.spec
        t_s = t_ns / NS
        jx, jy = camera_shift(s, t_s)
        L = np.full((s.height, s.width), float(s.base_log_intensity))
        contrast = s.checker_contrast
        if s.flicker_amplitude:
            contrast = contrast * (1.0 + s.flicker_amplitude * np.sin(2 * np.pi * s.flicker_hz * t_s))
        if contrast:
            k = np.pi / s.checker_period
            cx = np.clip(3.0 * np.sin(k * (self.px - jx)), -1, 1)
            cy = np.clip(3.0 * np.sin(k * (self.py - jy)), -1, 1)
            L += contrast * cy[:, None] * cx[None, :]
        dur = s.duration_ns / NS
        for obj in s.objects:
            ox, oy = object_center(obj, t_s, s.width, s.height, dur)
            L += obj.offset * self.coverage(obj, ox + jx, oy + jy)
        return L


def render_scene(spec: SceneSpec, t_ns: int) -> np.ndarray:
    """Log-intensity image (``height x width``) at time ``t_ns``."""
    if not 0 <= t_ns <= spec.duration_ns:
        raise ValueError(f"t={t_ns} outside [0, {spec.duration_ns}]")
    return _Renderer(spec)(int(t_ns))


# ---------------------------------------------------------------------------
# event generation


@dataclass
class SyntheticSequence:
    stream: EventStream
    gt_boxes: list[BBoxN]
    scenario: str
    spec: SceneSpec | None = None
    name: str = ""
    window_ns: int = DEFAULT_WINDOW_NS

    def __len__(self) -> int:
        return len(self.gt_boxes)

    def frame_counts(self) -> np.ndarray:
        """Signed event-count frames, ``n_windows x H x W`` (int16)."""
        return np.stack(
            [aggregate_frame(s).grid for s in iter_windows(self.stream, self.window_ns, 0, len(self.gt_boxes))]
        ).astype(np.int16)

    @cached_property
    def frames(self) -> np.ndarray:
        """Normalized frames in ``[-1, 1]`` (float32 cache; cast on use)."""
        return normalize_frame(self.frame_counts()).astype(np.float32)


def emit_events(spec: SceneSpec) -> SyntheticSequence:
    """Simulate the sensor over the whole scene duration."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xE7E7]))
    render = _Renderer(spec)
    C = spec.contrast_threshold
    n_steps = int(round(spec.duration_ns / NS * spec.render_hz))
    step_ns = spec.duration_ns / n_steps
    H, W = spec.height, spec.width
    L_prev = render(0)
    L_ref = L_prev.copy()
    chunks = []
    noise_mean = spec.noise_rate * W * H * step_ns / NS
    for k in range(1, n_steps + 1):
        t_prev = (k - 1) * step_ns
        L = render(int(round(k * step_ns)))
        diff = L - L_ref
        counts = np.floor(np.abs(diff) / C + 1e-9).astype(np.int64)
        pix = np.flatnonzero(counts)
        if pix.size:
            c = counts.reshape(-1)[pix]
            sgn = np.sign(diff.reshape(-1)[pix])
            rep = np.repeat(np.arange(pix.size), c)
            j = np.arange(rep.size) - np.repeat(np.cumsum(c) - c, c) + 1
            level = L_ref.reshape(-1)[pix][rep] + j * C * sgn[rep]
            lp = L_prev.reshape(-1)[pix][rep]
            delta = L.reshape(-1)[pix][rep] - lp
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(delta != 0, (level - lp) / delta, 0.0)
            frac = np.clip(frac, 0.0, 1.0)
            t = np.floor(t_prev + frac * step_ns).astype(np.uint64)
            pp = pix[rep]
            chunks.append((t, pp % W, pp // W, sgn[rep].astype(np.int8)))
            L_ref.reshape(-1)[pix] += c * C * sgn
        if noise_mean > 0:
            m = rng.poisson(noise_mean)
            if m:
                pp = rng.integers(0, W * H, size=m)
                t = np.floor(t_prev + rng.random(m) * step_ns).astype(np.uint64)
                pol = np.where(rng.random(m) < 0.5, -1, 1).astype(np.int8)
                chunks.append((t, pp % W, pp // W, pol))
        L_prev = L
    if chunks:
        t, x, y, p = (np.concatenate(a) for a in zip(*chunks))
    else:
        t = x = y = p = np.empty(0)
    stream = EventStream.from_arrays(W, H, t, x, y, p, sort=True)
    boxes = []
    if spec.target is not None:
        boxes = [target_box(spec, (i * spec.window_ns) + spec.window_ns // 2) for i in range(spec.n_windows)]
    return SyntheticSequence(stream, boxes, scenario="", spec=spec, window_ns=spec.window_ns)


# ---------------------------------------------------------------------------
# datasets


def _random_trajectory(rng: np.random.Generator, bounds) -> Trajectory:
    (xl, xh), (yl, yh) = bounds
    start = (float(rng.uniform(xl + 4, xh - 4)), float(rng.uniform(yl + 4, yh - 4)))
    kind = ["linear", "sinusoidal", "random_walk"][int(rng.integers(3))]
    speed = rng.uniform(60.0, 120.0)  # px/s
    if kind == "linear":
        ang = rng.uniform(0, 2 * np.pi)
        return Trajectory("linear", start, velocity=(float(speed * np.cos(ang)), float(speed * np.sin(ang))))
    if kind == "sinusoidal":
        f = float(rng.uniform(0.3, 1.0))
        amp = speed / (2 * np.pi * f)
        cx, cy = (xl + xh) / 2, (yl + yh) / 2
        ax = float(min(amp * rng.uniform(0.7, 1.0), (xh - xl) / 2 - 1))
        ay = float(min(amp * rng.uniform(0.7, 1.0), (yh - yl) / 2 - 1))
        # near-quadrature phases give an elliptical path that never stalls
        px = float(rng.uniform(0, 2 * np.pi))
        py = px + float(rng.choice([-1.0, 1.0]) * rng.uniform(np.pi / 3, 2 * np.pi / 3))
        return Trajectory("sinusoidal", (float(cx), float(cy)), amplitude=(ax, ay), frequency=f, phase=(px, py))
    knot = 0.25
    return Trajectory("random_walk", start, step_px=float(speed * knot), knot_s=knot, seed=int(rng.integers(2**31)))


def random_scene(scenario: str, seed: int, width: int = 128, height: int = 128, duration_ns: int = NS) -> SceneSpec:
    """Draw a scene of the given scenario deterministically from ``seed``."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    rng = np.random.default_rng(seed)
    shape = "disk" if rng.random() < 0.5 else "square"

    def make_object(size_scale=1.0):
        size = float(rng.uniform(10.0, 18.0) * size_scale)
        offset = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0))
        probe = SceneObject(shape, size, offset, Trajectory("linear", (0.0, 0.0)))
        return SceneObject(shape, size, offset, _random_trajectory(rng, _bounds(probe, width, height)))

    target = make_object()
    distractors = ()
    if scenario in ("distractor", "combined"):
        n = int(rng.integers(2, 4))
        distractors = tuple(make_object(rng.uniform(0.7, 1.3)) for _ in range(n))
    jitter_amp = jitter_hz = 0.0
    if scenario in ("camera_motion", "combined"):
        jitter_amp = float(rng.uniform(1.0, 3.0))
        jitter_hz = float(rng.uniform(1.0, 3.0))
    return SceneSpec(
        width=width,
        height=height,
        duration_ns=duration_ns,
        checker_period=float(rng.uniform(12.0, 24.0)),
        checker_contrast=float(rng.uniform(0.1, 0.3)),
        target=target,
        distractors=distractors,
        jitter_amplitude=jitter_amp,
        jitter_hz=jitter_hz,
        seed=int(rng.integers(2**31)),
    )


def sequence_seed(seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([int(seed), SPLITS[split], int(index)])
    return int(ss.generate_state(1)[0])


def make_dataset(scenario: str, n_sequences: int, seed: int, split: str = "train", **scene_kw) -> list[SyntheticSequence]:
    """``n_sequences`` scenes of one scenario; splits never share a scene seed."""
    if n_sequences < 1:
        raise ValueError("n_sequences must be >= 1")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    out = []
    for i in range(n_sequences):
        spec = random_scene(scenario, sequence_seed(seed, split, i), **scene_kw)
        seq = emit_events(spec)
        seq.scenario = scenario
        seq.name = f"{split}_{i:03d}"
        out.append(seq)
    return out


def save_dataset(sequences: list[SyntheticSequence], out_dir, meta: dict | None = None) -> Path:
    """Write event files, gt CSVs and ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in sequences:
        ev_name, gt_name = f"{seq.name}.evt", f"{seq.name}_gt.csv"
        write_events(seq.stream, out / ev_name, "binary")
        write_gt_boxes(seq.gt_boxes, out / gt_name)
        entries.append(
            {
                "name": seq.name,
                "events": ev_name,
                "gt": gt_name,
                "scenario": seq.scenario,
                "window_ns": seq.window_ns,
                "n_windows": len(seq.gt_boxes),
                "spec": seq.spec.to_dict() if seq.spec is not None else None,
            }
        )
    manifest = {"format": "evtrack-dataset-1", **(meta or {}), "sequences": entries}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> list[SyntheticSequence]:
    """Load a dataset directory (or its ``manifest.json``)."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    seqs = []
    for e in manifest["sequences"]:
        stream = parse_event_stream(root / e["events"], "binary")
        boxes = read_gt_boxes(root / e["gt"])
        spec = SceneSpec.from_dict(e["spec"]) if e.get("spec") else None
        seqs.append(SyntheticSequence(stream, boxes, e["scenario"], spec, e["name"], e["window_ns"]))
    return seqs
