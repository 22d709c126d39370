"""Two-stage Siamese tracker: coarse anchor proposals refined by a relation head."""

from .boxes import BBox, BoxDelta, generate_anchors, iou, nms
from .tracker import FusionWeights, SPMModel, Tracker, TrackerConfig, fuse_box, fuse_score
from .weights import ModelWeights, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "BoxDelta",
    "FusionWeights",
    "ModelWeights",
    "SPMModel",
    "Tracker",
    "TrackerConfig",
    "fuse_box",
    "fuse_score",
    "generate_anchors",
    "iou",
    "load_weights",
    "nms",
    "save_weights",
]
