"""Online tracking loop: template from the first frame, search crops around the last box."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .boxes import BBoxN
from .events import crop_resize
from .learning import SEARCH_CONTEXT, TEMPLATE_CONTEXT
from .model import DANet
from .tensor import Tensor, no_grad

MIN_BOX_PX = 4.0


@dataclass(frozen=True)
class TrackerState:
    template_features: np.ndarray | None
    box: BBoxN  # image-normalized
    frame_index: int
    width: int
    height: int
    template_context: float = TEMPLATE_CONTEXT
    search_context: float = SEARCH_CONTEXT


def _as_chw(frame) -> np.ndarray:
    a = np.asarray(frame, dtype=np.float64)
    return a[None] if a.ndim == 2 else a


def _sanitize(box: BBoxN, width: int, height: int) -> BBoxN:
    box = box.clipped()
    w = min(max(box.w, MIN_BOX_PX / width), 1.0)
    h = min(max(box.h, MIN_BOX_PX / height), 1.0)
    return BBoxN(box.cx, box.cy, w, h).clipped()


def track_init(frame, gt_box: BBoxN, model: DANet) -> TrackerState:
    """Cache template features around the ground-truth box of the first frame."""
    if not (gt_box.w > 0 and gt_box.h > 0):
        raise ValueError(f"degenerate initial box {gt_box}")
    img = _as_chw(frame)
    height, width = img.shape[-2:]
    feats = None
    if model.config.use_tan:
        size = model.config.template_size
        crop, _ = crop_resize(img, gt_box, TEMPLATE_CONTEXT, (size, size))
        feats = model.template_features(crop[None]).data.copy()
    return TrackerState(feats, _sanitize(gt_box, width, height), 0, width, height)


def track_step(state: TrackerState, frame, model: DANet, trace: dict | None = None) -> tuple[BBoxN, TrackerState]:
    """Predict the box in ``frame`` and advance the state (the template is never updated)."""
    if state is None:
        raise RuntimeError("tracker used before track_init")
    img = _as_chw(frame)
    size = model.config.search_size
    crop, tf = crop_resize(img, state.box, state.search_context, (size, size))
    f_z = Tensor(state.template_features) if state.template_features is not None else None
    with no_grad():
        out = model.forward_features(f_z, crop[None], training=False, trace=trace)
    crop_box = BBoxN.from_array(out.data[0])
    box = _sanitize(tf.box_to_image(crop_box), state.width, state.height)
    if trace is not None:
        trace["crop_box"] = crop_box
        trace["transform"] = tf
    return box, replace(state, box=box, frame_index=state.frame_index + 1)


def write_pgm(array: np.ndarray, path) -> None:
    """8-bit binary PGM (P5) of ``array`` min-max scaled to 0..255."""
    a = np.asarray(array, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    scaled = np.zeros(a.shape) if hi <= lo else (a - lo) / (hi - lo)
    pix = np.round(scaled * 255).astype(np.uint8)
    h, w = pix.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())


class DANetTracker:
    """Stateful wrapper with the ``init`` / ``update`` interface used by the evaluator."""

    def __init__(self, model: DANet, dump_dir=None):
        self.model = model
        self.state: TrackerState | None = None
        self.dump_dir = Path(dump_dir) if dump_dir is not None else None

    def init(self, frame, box: BBoxN) -> None:
        self.state = track_init(frame, box, self.model)

    def update(self, frame) -> BBoxN:
        if self.state is None:
            raise RuntimeError("tracker used before init")
        trace = {} if self.dump_dir is not None else None
        box, self.state = track_step(self.state, frame, self.model, trace)
        if trace is not None:
            self.dump_dir.mkdir(parents=True, exist_ok=True)
            k = self.state.frame_index
            write_pgm(trace["fused"].data[0].sum(axis=0), self.dump_dir / f"fused_{k:05d}.pgm")
            c = trace["center"].data[0, 0]
            p = np.exp(c - c.max())
            write_pgm(p / p.sum(), self.dump_dir / f"center_{k:05d}.pgm")
        return box
