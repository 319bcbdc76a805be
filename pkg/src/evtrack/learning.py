"""Box regression loss, learning-rate schedule, pair sampling and the training loop."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .boxes import BBoxN, giou
from .checkpoint import save_checkpoint
from .events import crop_resize
from .model import DANet, ModelConfig
from .tensor import Tensor, concat

log = logging.getLogger(__name__)

TEMPLATE_CONTEXT = 2.0
SEARCH_CONTEXT = 4.0
MIN_BOX_SIZE = 1e-4


class NumericalError(FloatingPointError):
    """Training hit a non-finite loss or gradient."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class LossConfig:
    lambda_iou: float = 1.0
    lambda_l1: float = 5.0

    def __post_init__(self):
        if self.lambda_iou < 0 or self.lambda_l1 < 0:
            raise ValueError("loss weights must be non-negative")


# Loss-weight study presets, (lambda_iou, lambda_l1).
LOSS_PRESETS = {
    "iou1_l1_0": LossConfig(1.0, 0.0),
    "iou0_l1_5": LossConfig(0.0, 5.0),
    "iou1_l1_1": LossConfig(1.0, 1.0),
    "iou2_l1_5": LossConfig(2.0, 5.0),
    "iou1_l1_5": LossConfig(1.0, 5.0),
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    warmup_epochs: int = 1
    pairs_per_epoch: int = 256
    batch_size: int = 16
    lr_start: float = 1e-5
    lr_peak: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_norm: float = 10.0
    max_gap: int = 40
    shift_px: float = 6.0
    scale_range: tuple[float, float] = (0.85, 1.2)
    representation: str = "frame"
    voxel_bins: int = 5
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(self.scale_range))
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig(**self.loss))
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 1 <= self.warmup_epochs <= self.epochs:
            raise ValueError("warmup_epochs must lie in [1, epochs]")

    @property
    def steps_per_epoch(self) -> int:
        return max(1, math.ceil(self.pairs_per_epoch / self.batch_size))

    @property
    def total_steps(self) -> int:
        return self.steps_per_epoch * self.epochs

    def to_dict(self) -> dict:
        return asdict(self)


DESK_TRAIN = TrainConfig()
PAPER_TRAIN = TrainConfig(pairs_per_epoch=300_000, batch_size=128, lr_peak=8e-2)
TRAIN_PRESETS = {"desk": DESK_TRAIN, "paper": PAPER_TRAIN}


# ---------------------------------------------------------------------------
# loss


def box_loss(pred: Tensor, gt, cfg: LossConfig = LossConfig()) -> tuple[Tensor, Tensor, Tensor]:
    """Weighted ``(1 - GIoU)`` plus L1 over the four box components, batch-averaged.

    ``pred`` is an ``N x 4`` tensor, ``gt`` an ``N x 4`` array, both
    ``(cx, cy, w, h)``.  Predicted sizes are clamped to ``MIN_BOX_SIZE``
    before the GIoU term.  Returns ``(total, giou_term, l1_term)`` where the
    terms are unweighted batch means.
    """
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    n = gt.shape[0]
    if pred.shape != (n, 4):
        raise ValueError(f"pred shape {pred.shape} does not match gt {gt.shape}")
    cx, cy = pred[:, 0], pred[:, 1]
    w, h = pred[:, 2].clamp_min(MIN_BOX_SIZE), pred[:, 3].clamp_min(MIN_BOX_SIZE)
    px0, px1 = cx - w * 0.5, cx + w * 0.5
    py0, py1 = cy - h * 0.5, cy + h * 0.5
    g = Tensor
    gx0, gx1 = g(gt[:, 0] - gt[:, 2] / 2), g(gt[:, 0] + gt[:, 2] / 2)
    gy0, gy1 = g(gt[:, 1] - gt[:, 3] / 2), g(gt[:, 1] + gt[:, 3] / 2)
    iw = (px1.minimum(gx1) - px0.maximum(gx0)).clamp_min(0.0)
    ih = (py1.minimum(gy1) - py0.maximum(gy0)).clamp_min(0.0)
    inter = iw * ih
    union = w * h + g(gt[:, 2] * gt[:, 3]) - inter
    enclose = (px1.maximum(gx1) - px0.minimum(gx0)) * (py1.maximum(gy1) - py0.minimum(gy0))
    giou_t = inter / union - (enclose - union) / enclose
    # rounding can push GIoU a hair above 1 for identical boxes
    giou_term = (1.0 - giou_t).clamp_min(0.0).mean()
    l1_term = (pred - g(gt)).abs().sum(axis=1).mean()
    total = giou_term * cfg.lambda_iou + l1_term * cfg.lambda_l1
    return total, giou_term, l1_term


def loss(pred: BBoxN, gt: BBoxN, cfg: LossConfig = LossConfig()) -> float:
    """Scalar loss for a single pair of boxes (numeric convenience)."""
    total, _, _ = box_loss(Tensor(pred.as_array()[None]), gt.as_array()[None], cfg)
    return total.item()


# ---------------------------------------------------------------------------
# schedule and optimizer


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up from ``lr_start`` to ``lr_peak``, then cosine decay to 0.

    The warm-up covers the first ``warmup_epochs`` epochs and reaches
    ``lr_peak`` on its last step; the cosine starts from that step so the two
    pieces meet there.
    """
    total = cfg.total_steps
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside [0, {total})")
    w_end = cfg.steps_per_epoch * cfg.warmup_epochs - 1
    if step <= w_end:
        if w_end == 0:
            return cfg.lr_peak
        return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * step / w_end
    span = total - 1 - w_end
    progress = (step - w_end) / span
    return cfg.lr_peak * (1.0 + math.cos(math.pi * progress)) / 2.0


def sgd_step(
    named_params: Sequence[tuple[str, Tensor]],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 1e-4,
    clip_norm: float | None = 10.0,
) -> float:
    """One in-place SGD update; returns the pre-clip global gradient norm.

    Gradients are clipped by global norm, momentum is classical
    (``v = mu v + g``), and weight decay is decoupled and only applied to
    weight matrices and kernels (``ndim >= 2``).
    """
    grads = []
    for name, p in named_params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter {name!r}")
        grads.append(g)
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    scale = 1.0
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
    for (name, p), g in zip(named_params, grads):
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p.data)
        v *= momentum
        v += g * scale if scale != 1.0 else g
        if weight_decay and p.data.ndim >= 2:
            p.data -= lr * (v + weight_decay * p.data)
        else:
            p.data -= lr * v
    return norm


# ---------------------------------------------------------------------------
# pair sampling


@dataclass
class PairBatch:
    template: np.ndarray  # N x C x Ht x Wt
    search: np.ndarray  # N x C x Hs x Ws
    gt: np.ndarray  # N x 4, search-crop normalized
    meta: list = field(default_factory=list)


def sequence_inputs(seq, representation: str = "frame", bins: int = 5) -> np.ndarray:
    """Network inputs for every window, ``n_windows x C x H x W`` (float32)."""
    if representation == "frame":
        return seq.frames[:, None]
    if representation == "voxel":
        from .events import iter_windows, voxel_grid

        vols = [
            voxel_grid(s, bins)
            for s in iter_windows(seq.stream, seq.window_ns, 0, len(seq.gt_boxes))
        ]
        return (np.clip(np.stack(vols), -5.0, 5.0) / 5.0).astype(np.float32)
    raise ValueError(f"unknown representation {representation!r}")


class PairSampler:
    """Draws template/search training pairs from a list of sequences."""

    def __init__(self, sequences, model_cfg: ModelConfig, train_cfg: TrainConfig):
        self.sequences = [s for s in sequences if len(s.gt_boxes) >= 2]
        if not self.sequences:
            raise ValueError("pair sampling needs at least one sequence with >= 2 frames")
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self._inputs = [sequence_inputs(s, train_cfg.representation, train_cfg.voxel_bins) for s in self.sequences]

    def sample(self, rng: np.random.Generator):
        """One pair: ``(template, template_box, search, search_gt_crop, info)``."""
        c, mc = self.cfg, self.model_cfg
        si = int(rng.integers(len(self.sequences)))
        seq, inputs = self.sequences[si], self._inputs[si]
        n = len(seq.gt_boxes)
        i = int(rng.integers(n))
        lo, hi = max(0, i - c.max_gap), min(n - 1, i + c.max_gap)
        j = int(rng.integers(lo, hi + 1))
        tbox = seq.gt_boxes[i]
        template, _ = crop_resize(inputs[i], tbox, TEMPLATE_CONTEXT, (mc.template_size, mc.template_size))
        gbox = seq.gt_boxes[j]
        W, H = seq.stream.width, seq.stream.height
        dx, dy = rng.uniform(-c.shift_px, c.shift_px, size=2)
        scale = float(np.exp(rng.uniform(np.log(c.scale_range[0]), np.log(c.scale_range[1]))))
        center = BBoxN(gbox.cx + dx / W, gbox.cy + dy / H, gbox.w * scale, gbox.h * scale)
        search, tf = crop_resize(inputs[j], center, SEARCH_CONTEXT, (mc.search_size, mc.search_size))
        return template, tbox, search, tf.box_to_crop(gbox), (si, i, j)

    def batch(self, rng: np.random.Generator, n: int) -> PairBatch:
        items = [self.sample(rng) for _ in range(n)]
        return PairBatch(
            np.stack([it[0] for it in items]),
            np.stack([it[2] for it in items]),
            np.stack([it[3].as_array() for it in items]),
            [it[4] for it in items],
        )


def sample_pair(sequences, rng: np.random.Generator, model_cfg: ModelConfig = ModelConfig(), train_cfg: TrainConfig = TrainConfig()):
    return PairSampler(sequences, model_cfg, train_cfg).sample(rng)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    model: DANet
    log: list[dict]
    checkpoints: list[Path] = field(default_factory=list)

    def epoch_losses(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for rec in self.log:
            by_epoch.setdefault(rec["epoch"], []).append(rec["loss"])
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    sequences,
    out_dir=None,
    callback: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Train a fresh model; fully determined by ``train_cfg.seed``.

    With ``out_dir`` set, writes ``train_log.jsonl`` (one record per step),
    ``epoch_XXX.ckpt`` after every epoch and ``final.ckpt``.
    """
    if not sequences:
        raise ValueError("training needs a non-empty dataset")
    sampler = PairSampler(sequences, model_cfg, train_cfg)
    model = DANet(model_cfg, seed=train_cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 0x7A1]))
    named = model.named_parameters()
    velocity: dict[str, np.ndarray] = {}
    records: list[dict] = []
    ckpts: list[Path] = []
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "w")
    meta = {"train_config": train_cfg.to_dict()}
    step = 0
    try:
        for epoch in range(train_cfg.epochs):
            for _ in range(train_cfg.steps_per_epoch):
                lr = lr_schedule(step, train_cfg)
                batch = sampler.batch(rng, train_cfg.batch_size)
                pred = model.forward(batch.template, batch.search, training=True, rng=rng)
                total, giou_term, l1_term = box_loss(pred, batch.gt, train_cfg.loss)
                if not np.isfinite(total.item()):
                    raise NumericalError(f"non-finite loss at step {step}", step)
                model.zero_grad()
                total.backward()
                try:
                    gnorm = sgd_step(named, velocity, lr, train_cfg.momentum, train_cfg.weight_decay, train_cfg.clip_norm)
                except NumericalError as exc:
                    raise NumericalError(f"{exc} at step {step}", step) from None
                rec = {
                    "step": step,
                    "epoch": epoch,
                    "lr": lr,
                    "loss": total.item(),
                    "giou_term": giou_term.item(),
                    "l1_term": l1_term.item(),
                    "grad_norm": gnorm,
                }
                records.append(rec)
                if log_fh is not None:
                    log_fh.write(json.dumps(rec) + "\n")
                if callback is not None:
                    callback(rec)
                step += 1
            log.info("epoch %d mean loss %.4f", epoch, np.mean([r["loss"] for r in records if r["epoch"] == epoch]))
            if out is not None:
                ckpts.append(save_checkpoint(model, out / f"epoch_{epoch:03d}.ckpt", step, meta))
    finally:
        if log_fh is not None:
            log_fh.close()
    if out is not None:
        ckpts.append(save_checkpoint(model, out / "final.ckpt", step, meta))
    model.zero_grad()
    return TrainResult(model, records, ckpts)
