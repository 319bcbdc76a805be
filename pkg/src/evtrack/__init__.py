"""Event-camera single-object tracking: event I/O, a numpy autograd core,
a distractor-aware Siamese tracker, a synthetic scene simulator, training
and one-pass evaluation."""

from .boxes import BBoxN, giou, iou
from .evaluation import EvalReport, auc, emit_report, op_threshold, run_ope, success_curve
from .events import EventStream, aggregate_frame, normalize_frame, parse_event_stream, voxel_grid
from .learning import LossConfig, TrainConfig, lr_schedule, train
from .model import DESK, PAPER, DANet, ModelConfig
from .sim import make_dataset
from .tensor import Tensor, no_grad
from .tracker import DANetTracker, track_init, track_step

__version__ = "0.1.0"
