"""Two-stage detector: backbone, RPN, ROI pooling and classification head."""
from .boxes import (IGNORE, NEGATIVE, POSITIVE, assign_rpn_targets, decode_deltas,
                    decode_deltas_torch, encode_deltas, generate_anchors)
from .model import (ArchConfig, DetectorModel, backbone_forward, detect, detect_batch,
                    feature_size, head_forward, postprocess, proposals_for_batch, rpn_forward)
from .ops import nms, propose, roi_pool

__all__ = [
    "ArchConfig", "DetectorModel", "IGNORE", "NEGATIVE", "POSITIVE", "assign_rpn_targets",
    "backbone_forward", "decode_deltas", "decode_deltas_torch", "detect", "detect_batch",
    "encode_deltas", "feature_size", "generate_anchors", "head_forward", "nms", "postprocess",
    "propose", "proposals_for_batch", "roi_pool", "rpn_forward",
]
