"""Normalized center-size boxes and their overlap measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBoxN:
    """Box ``(cx, cy, w, h)`` normalized to a reference frame.

    The frame is either a search crop or the full image; callers track which.
    """

    cx: float
    cy: float
    w: float
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "BBoxN":
        a = np.asarray(a, dtype=np.float64).reshape(4)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def xyxy(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    @property
    def area(self) -> float:
        return max(self.w, 0.0) * max(self.h, 0.0)

    def clipped(self, min_size: float = 1e-4) -> "BBoxN":
        """Clip to the unit square, keeping the box non-degenerate."""
        x0, y0, x1, y1 = self.xyxy()
        x0, x1 = np.clip([x0, x1], 0.0, 1.0)
        y0, y1 = np.clip([y0, y1], 0.0, 1.0)
        w = max(x1 - x0, min_size)
        h = max(y1 - y0, min_size)
        cx = min(max((x0 + x1) / 2, w / 2), 1 - w / 2)
        cy = min(max((y0 + y1) / 2, h / 2), 1 - h / 2)
        return BBoxN(float(cx), float(cy), float(w), float(h))

    def is_valid(self) -> bool:
        return bool(np.all(np.isfinite(self.as_array()))) and self.w > 0 and self.h > 0


def _xyxy(b) -> np.ndarray:
    a = b.as_array() if isinstance(b, BBoxN) else np.asarray(b, dtype=np.float64)
    return np.stack(
        [a[..., 0] - a[..., 2] / 2, a[..., 1] - a[..., 3] / 2, a[..., 0] + a[..., 2] / 2, a[..., 1] + a[..., 3] / 2],
        axis=-1,
    )


def _inter_union(a, b):
    pa, pb = _xyxy(a), _xyxy(b)
    iw = np.clip(np.minimum(pa[..., 2], pb[..., 2]) - np.maximum(pa[..., 0], pb[..., 0]), 0, None)
    ih = np.clip(np.minimum(pa[..., 3], pb[..., 3]) - np.maximum(pa[..., 1], pb[..., 1]), 0, None)
    inter = iw * ih
    area_a = np.clip(pa[..., 2] - pa[..., 0], 0, None) * np.clip(pa[..., 3] - pa[..., 1], 0, None)
    area_b = np.clip(pb[..., 2] - pb[..., 0], 0, None) * np.clip(pb[..., 3] - pb[..., 1], 0, None)
    return inter, area_a + area_b - inter, pa, pb


def iou(a, b):
    """Intersection over union; 0 whenever the union has zero area.

    Accepts :class:`BBoxN` or ``(..., 4)`` arrays of ``cx, cy, w, h``.
    """
    inter, union, _, _ = _inter_union(a, b)
    out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def giou(a, b):
    """Generalized IoU: IoU minus the uncovered fraction of the enclosing box."""
    aa = a.as_array() if isinstance(a, BBoxN) else np.asarray(a, dtype=np.float64)
    bb = b.as_array() if isinstance(b, BBoxN) else np.asarray(b, dtype=np.float64)
    if np.any(aa[..., 2:] <= 0) or np.any(bb[..., 2:] <= 0):
        raise ValueError("giou needs boxes with positive width and height")
    inter, union, pa, pb = _inter_union(aa, bb)
    ew = np.maximum(pa[..., 2], pb[..., 2]) - np.minimum(pa[..., 0], pb[..., 0])
    eh = np.maximum(pa[..., 3], pb[..., 3]) - np.minimum(pa[..., 1], pb[..., 1])
    enclose = ew * eh
    out = inter / union - (enclose - union) / enclose
    return float(out) if np.ndim(out) == 0 else out
