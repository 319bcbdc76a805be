"""One-pass evaluation, success/precision curves and report files.

Report files written by :func:`emit_report`:

``report.json``
    ``{"scalars": {...}, "curves": {"success": {"thresholds": [...], "values": [...]}, ...},
    "excluded_frames": int, "scenarios": {tag: {scalars}}, "sequences": [...]}``
    where each sequence carries ``name``, ``scenario``, ``width``, ``height``
    and ``frames`` (one record per scored frame).
``success.csv``, ``precision.csv``, ``norm_precision.csv``
    ``threshold,value`` rows.
``success.svg``, ``precision.svg``, ``norm_precision.svg``
    line plots on an 800x600 view box.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .boxes import BBoxN, iou

SUCCESS_THRESHOLDS = np.arange(101) / 100.0
PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
NORM_PRECISION_THRESHOLDS = np.arange(51) / 100.0


@dataclass
class FrameResult:
    frame: int
    pred: BBoxN
    gt: BBoxN
    iou: float
    center_error: float  # px
    norm_center_error: float
    valid: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pred"] = list(self.pred.as_array())
        d["gt"] = list(self.gt.as_array())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrameResult":
        return cls(**{**d, "pred": BBoxN(*d["pred"]), "gt": BBoxN(*d["gt"])})


@dataclass
class SequenceResult:
    name: str
    scenario: str
    width: int
    height: int
    frames: list[FrameResult]


def score_frame(k: int, pred: BBoxN, gt: BBoxN, width: int, height: int) -> FrameResult:
    valid = gt.w > 0 and gt.h > 0 and bool(np.all(np.isfinite(gt.as_array())))
    dx, dy = pred.cx - gt.cx, pred.cy - gt.cy
    ce = float(np.hypot(dx * width, dy * height))
    nce = float(np.hypot(dx / gt.w, dy / gt.h)) if valid else float("inf")
    return FrameResult(k, pred, gt, float(iou(pred, gt)) if valid else 0.0, ce, nce, valid)


class OracleTracker:
    """Returns the ground truth; used to validate the harness."""

    def __init__(self, boxes: Sequence[BBoxN]):
        self.boxes = list(boxes)
        self.k = 0

    def init(self, frame, box):
        self.k = 0

    def update(self, frame) -> BBoxN:
        self.k += 1
        return self.boxes[self.k]


class StaticTracker:
    """Keeps reporting the initial box."""

    def init(self, frame, box):
        self.box = box

    def update(self, frame) -> BBoxN:
        return self.box


def run_ope(tracker, sequences, representation: str = "frame", bins: int = 5) -> list[SequenceResult]:
    """One-pass evaluation: initialise on frame 0's ground truth, then score every later frame.

    ``tracker`` is a :class:`~evtrack.model.DANet`, or a callable taking a
    sequence and returning an object with ``init(frame, box)`` and
    ``update(frame) -> BBoxN``.
    """
    from .learning import sequence_inputs
    from .model import DANet
    from .tracker import DANetTracker

    if isinstance(tracker, DANet):
        model = tracker
        factory: Callable = lambda seq: DANetTracker(model)
    else:
        factory = tracker
    results = []
    for seq in sequences:
        if not seq.gt_boxes:
            raise ValueError(f"sequence {seq.name!r} has no ground truth for frame 0")
        inputs = sequence_inputs(seq, representation, bins)
        trk = factory(seq)
        trk.init(inputs[0], seq.gt_boxes[0])
        frames = []
        for k in range(1, len(seq.gt_boxes)):
            pred = trk.update(inputs[k])
            frames.append(score_frame(k, pred, seq.gt_boxes[k], seq.stream.width, seq.stream.height))
        results.append(SequenceResult(seq.name, seq.scenario, seq.stream.width, seq.stream.height, frames))
    return results


# ---------------------------------------------------------------------------
# curves


def success_curve(ious) -> np.ndarray:
    """Fraction of frames with overlap ``>= t`` for ``t = 0, 0.01, ..., 1``."""
    s = np.asarray(ious, dtype=np.float64)
    if s.size == 0:
        raise ValueError("success curve of an empty result set")
    return (s[None, :] >= SUCCESS_THRESHOLDS[:, None]).mean(axis=1)


def auc(curve) -> float:
    return float(np.mean(curve))


def op_threshold(ious, T: float) -> float:
    """Fraction of frames whose overlap is strictly larger than ``T``."""
    s = np.asarray(ious, dtype=np.float64)
    return float((s > T).mean()) if s.size else 0.0


def precision_curves(center_errors, norm_errors) -> tuple[np.ndarray, np.ndarray]:
    ce = np.asarray(center_errors, dtype=np.float64)
    ne = np.asarray(norm_errors, dtype=np.float64)
    if ce.size == 0:
        raise ValueError("precision of an empty result set")
    prec = (ce[None, :] <= PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    nprec = (ne[None, :] <= NORM_PRECISION_THRESHOLDS[:, None]).mean(axis=1)
    return prec, nprec


def precision_metrics(frames: Sequence[FrameResult]) -> dict:
    valid = [f for f in frames if f.valid]
    prec, nprec = precision_curves([f.center_error for f in valid], [f.norm_center_error for f in valid])
    return {
        "precision_curve": prec,
        "norm_precision_curve": nprec,
        "precision_20": float(prec[20]),
        "norm_precision_0.2": float(nprec[20]),
        "excluded": len(frames) - len(valid),
    }


# ---------------------------------------------------------------------------
# report


def _scalars(frames: Sequence[FrameResult]) -> tuple[dict, dict]:
    valid = [f for f in frames if f.valid]
    ious = [f.iou for f in valid]
    sc = success_curve(ious)
    pm = precision_metrics(valid)
    scalars = {
        "auc": auc(sc),
        "op50": op_threshold(ious, 0.5),
        "op75": op_threshold(ious, 0.75),
        "precision_20": pm["precision_20"],
        "norm_precision_0.2": pm["norm_precision_0.2"],
        "mean_iou": float(np.mean(ious)),
        "frames": len(valid),
    }
    curves = {
        "success": {"thresholds": SUCCESS_THRESHOLDS.tolist(), "values": sc.tolist()},
        "precision": {"thresholds": PRECISION_THRESHOLDS.tolist(), "values": pm["precision_curve"].tolist()},
        "norm_precision": {
            "thresholds": NORM_PRECISION_THRESHOLDS.tolist(),
            "values": pm["norm_precision_curve"].tolist(),
        },
    }
    return scalars, curves


@dataclass
class EvalReport:
    sequences: list[SequenceResult]
    scalars: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    scenarios: dict = field(default_factory=dict)
    excluded_frames: int = 0

    @classmethod
    def build(cls, sequences: list[SequenceResult]) -> "EvalReport":
        frames = [f for s in sequences for f in s.frames]
        excluded = sum(not f.valid for f in frames)
        scalars, curves = _scalars(frames)
        by_tag: dict[str, list[FrameResult]] = {}
        for s in sequences:
            by_tag.setdefault(s.scenario, []).extend(s.frames)
        scenarios = {tag: _scalars(fr)[0] for tag, fr in sorted(by_tag.items())}
        return cls(sequences, scalars, curves, scenarios, excluded)

    @property
    def auc(self) -> float:
        return self.scalars["auc"]

    def to_dict(self) -> dict:
        return {
            "scalars": self.scalars,
            "curves": self.curves,
            "scenarios": self.scenarios,
            "excluded_frames": self.excluded_frames,
            "sequences": [
                {
                    "name": s.name,
                    "scenario": s.scenario,
                    "width": s.width,
                    "height": s.height,
                    "frames": [f.to_dict() for f in s.frames],
                }
                for s in self.sequences
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        seqs = [
            SequenceResult(s["name"], s["scenario"], s["width"], s["height"], [FrameResult.from_dict(f) for f in s["frames"]])
            for s in d["sequences"]
        ]
        return cls(seqs, d["scalars"], d["curves"], d["scenarios"], d["excluded_frames"])

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def evaluate(tracker, sequences, representation: str = "frame") -> EvalReport:
    return EvalReport.build(run_ope(tracker, sequences, representation))


def _svg(title: str, xlabel: str, thresholds, values, xmax: float) -> str:
    W, H, L, R, T, B = 800, 600, 80, 40, 50, 70
    pw, ph = W - L - R, H - T - B

    def px(x):
        return L + pw * x / xmax

    def py(y):
        return T + ph * (1.0 - y)

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(thresholds, values))
    ticks = []
    for i in range(6):
        y = i / 5
        ticks.append(f'<line x1="{L}" y1="{py(y):.2f}" x2="{L + pw}" y2="{py(y):.2f}" stroke="#ddd"/>')
        ticks.append(f'<text x="{L - 10}" y="{py(y) + 5:.2f}" text-anchor="end" font-size="14">{y:.1f}</text>')
        x = xmax * i / 5
        ticks.append(f'<text x="{px(x):.2f}" y="{T + ph + 22}" text-anchor="middle" font-size="14">{x:g}</text>')
    return "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
            *ticks,
            f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
            f'<polyline fill="none" stroke="#c0392b" stroke-width="2.5" points="{pts}"/>',
            f'<text x="{W / 2}" y="30" text-anchor="middle" font-size="18">{title}</text>',
            f'<text x="{L + pw / 2}" y="{H - 20}" text-anchor="middle" font-size="16">{xlabel}</text>',
            "</svg>",
            "",
        ]
    )


def emit_report(report: EvalReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "report.json"
    p.write_text(report.to_json() + "\n")
    written.append(p)
    specs = {
        "success": ("Success plot", "Overlap threshold", 1.0, f"AUC={report.scalars['auc']:.4f}"),
        "precision": ("Precision plot", "Location error threshold (px)", 50.0, f"P@20={report.scalars['precision_20']:.4f}"),
        "norm_precision": (
            "Normalized precision plot",
            "Normalized location error threshold",
            0.5,
            f"P_norm@0.2={report.scalars['norm_precision_0.2']:.4f}",
        ),
    }
    for key, (title, xlabel, xmax, legend) in specs.items():
        c = report.curves[key]
        csv_path = out / f"{key}.csv"
        rows = ["threshold,value"] + [f"{t:.4f},{v:.6f}" for t, v in zip(c["thresholds"], c["values"])]
        csv_path.write_text("\n".join(rows) + "\n")
        svg_path = out / f"{key}.svg"
        svg_path.write_text(_svg(f"{title} ({legend})", xlabel, c["thresholds"], c["values"], xmax))
        written += [csv_path, svg_path]
    return written
