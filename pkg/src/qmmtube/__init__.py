"""Action tubes from per-frame detector queries by query-embedding matching."""

__version__ = "0.1.0"

from .core import BBox, DetectionRecord, GroundTruthTube, Tube, interpolate_box, iou, tube_iou_3d
from .encoder import (
    EncoderParams,
    TrainConfig,
    assign_person_ids,
    cosine_sim,
    encode,
    npair_gradient,
    npair_loss,
    train_encoder,
)
from .linking import LinkConfig, TrackList, filter_person_queries, iou_link, qmm_link
from .scoring import ActionScoreSeq, ScoringConfig, build_tubes, oracle_scorer
from .sim import PersonSpec, ScenarioConfig, generate_scenario, motion_category
from .evaluation import average_precision, compare_linkers, frame_map, tube_recall, video_map

__all__ = [
    "ActionScoreSeq", "BBox", "DetectionRecord", "EncoderParams", "GroundTruthTube", "LinkConfig",
    "PersonSpec", "ScenarioConfig", "ScoringConfig", "TrackList", "TrainConfig", "Tube",
    "assign_person_ids", "average_precision", "build_tubes", "compare_linkers", "cosine_sim", "encode",
    "filter_person_queries", "frame_map", "generate_scenario", "interpolate_box", "iou", "iou_link",
    "motion_category", "npair_gradient", "npair_loss", "oracle_scorer", "qmm_link", "train_encoder",
    "tube_iou_3d", "tube_recall", "video_map",
]
