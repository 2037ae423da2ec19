"""Datasets, configuration, orchestration, trajectories and the command line."""

from .config import (BASettings, CameraSettings, InitSettings, LocalizationSettings, PipelineConfig,
                     ReconSettings, RunSettings, TrackerSettings, dump_config, load_config, parse_config)
from .dataset import FrameRecord, find_camera_folder, load_ground_truth, load_sequence, read_camera_yaml
from .runner import STAGES, Pipeline, PipelineResult, RunStats, run_pipeline
from .trajectory import (Alignment, Trajectory, align_similarity, associate, evaluate_ate,
                         export_trajectory, format_pose_line, load_trajectory, quaternion_xyzw)

__all__ = [
    "Alignment", "BASettings", "CameraSettings", "FrameRecord", "InitSettings", "LocalizationSettings",
    "Pipeline", "PipelineConfig", "PipelineResult", "ReconSettings", "RunSettings", "RunStats", "STAGES",
    "TrackerSettings", "Trajectory", "align_similarity", "associate", "dump_config", "evaluate_ate",
    "export_trajectory", "find_camera_folder", "format_pose_line", "load_config", "load_ground_truth",
    "load_sequence", "load_trajectory", "parse_config", "quaternion_xyzw", "read_camera_yaml", "run_pipeline",
]
