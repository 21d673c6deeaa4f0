"""Online domain adaptation of linear detectors for causal multi-object tracking."""

from .core import BBox, Detection, clip_to_frame, iou, iou_matrix
from .linmodel import LinearModel, batch_train, load_model, save_model
from .metricsio import AnnotatedSequence, MetricsReport, clear_mot, parse_kitti, write_kitti
from .mtl import MtlConfig, RunningMean
from .sim import ScenarioConfig, generate, make_pretrain_set
from .tracker import Tracker, TrackerConfig

__version__ = "0.1.0"
