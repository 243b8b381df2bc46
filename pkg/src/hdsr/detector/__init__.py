"""Grid object detection of digits: anchors, encoding, decoding, NMS."""

from .anchors import AnchorSet, box_shapes, cluster_anchors
from .estimator import DigitStringDetector, darknet_tiny_spec, tune_confidence
from .geometry import Detection, StringPrediction, detections_to_string, iou, iou_matrix, nms
from .grid import GridConfig, decode_grid, detector_loss, encode_targets, targets_to_raw
from .resize import PUBLISHED_WIDTHS, ResizePolicy, input_width_rule

__all__ = [
    "PUBLISHED_WIDTHS", "AnchorSet", "Detection", "DigitStringDetector", "GridConfig", "ResizePolicy",
    "StringPrediction", "box_shapes", "cluster_anchors", "darknet_tiny_spec", "decode_grid",
    "detections_to_string", "detector_loss", "encode_targets", "input_width_rule", "iou",
    "iou_matrix", "nms", "targets_to_raw", "tune_confidence",
]
