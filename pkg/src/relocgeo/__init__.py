"""Relocalization geometry from dense point maps, instance masks and depth."""
from .geometry import CameraIntrinsics, Pose, compose, invert, relative_pose
from .pipeline import FrameInput, FrameResult, PipelineConfig, Status, estimate_frame, frame_input_from_synthetic
from .synth import NoiseModel, SceneConfig, SyntheticPair, generate, verify_pair

__all__ = [
    "CameraIntrinsics",
    "FrameInput",
    "FrameResult",
    "NoiseModel",
    "PipelineConfig",
    "Pose",
    "SceneConfig",
    "Status",
    "SyntheticPair",
    "compose",
    "estimate_frame",
    "frame_input_from_synthetic",
    "generate",
    "invert",
    "relative_pose",
    "verify_pair",
]
__version__ = "0.1.0"
