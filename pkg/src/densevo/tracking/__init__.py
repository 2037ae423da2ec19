from .features import FrameFeatures, describe, match_brief, match_features
from .flow import DominantFlow, estimate_dominant_flow, predict_position
from .robust import RobustKernel, geman_mcclure, irls_weight, prediction_weight
from .tracker import (
    LIVE,
    LOST,
    AdvanceReport,
    FeatureTrack,
    TrackerConfig,
    TrackSet,
    advance_tracks,
    hill_climb,
    seed_tracks,
    track_extremum,
)

__all__ = [
    "AdvanceReport", "DominantFlow", "FeatureTrack", "FrameFeatures", "LIVE", "LOST",
    "RobustKernel", "TrackSet", "TrackerConfig", "advance_tracks", "describe",
    "estimate_dominant_flow", "geman_mcclure", "hill_climb", "irls_weight", "match_brief",
    "match_features", "predict_position", "prediction_weight", "seed_tracks", "track_extremum",
]
