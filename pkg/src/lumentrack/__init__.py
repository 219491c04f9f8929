"""Branch-level airway lumen tracking and bronchoscope localization.

The engine tracks lumen detections across frames, labels them with airway
branch names from a pre-operative airway graph, votes for the branch the
scope is in, and uses keyframe matching to restore identities on revisits.
A synthetic bronchoscopy simulator and MOT metrics close the loop.
"""
from .airway import AirwayGraph, Branch, ancestor, generation_distance, load_and_normalize
from .assignment import Assignment, solve
from .config import EngineConfig, load_config
from .engine import FrameResult, LocalizationEngine
from .geometry import BoundingBox
from .io import FramePacket
from .metrics import MetricsReport, evaluate_localization, evaluate_mot
from .sim import SimNoise, SimScenario, generate_tree, render_frames
from .tracker import Detection, LumenTracker

__version__ = "0.1.0"

__all__ = [
    "AirwayGraph",
    "Assignment",
    "BoundingBox",
    "Branch",
    "Detection",
    "EngineConfig",
    "FramePacket",
    "FrameResult",
    "LocalizationEngine",
    "LumenTracker",
    "MetricsReport",
    "SimNoise",
    "SimScenario",
    "ancestor",
    "evaluate_localization",
    "evaluate_mot",
    "generate_tree",
    "generation_distance",
    "load_and_normalize",
    "render_frames",
    "solve",
]
