"""Codec-guided token pruning and selective KV-cache refresh for streaming video."""

from .codec import Bitstream, BitstreamError, FrameType, MotionField, RawVideo, decode, encode
from .pipeline import PipelineConfig, PipelineError, run_pipeline
from .scenarios import ScenarioSpec, generate_scenario

__all__ = [
    "Bitstream",
    "BitstreamError",
    "FrameType",
    "MotionField",
    "PipelineConfig",
    "PipelineError",
    "RawVideo",
    "ScenarioSpec",
    "decode",
    "encode",
    "generate_scenario",
    "run_pipeline",
]
