"""Race-walking fault detection (bent knee, loss of contact) from 2D keypoints."""

from .pose_data import FaultLabel, KeypointName, PoseSequence

__version__ = "0.1.0"

__all__ = ["FaultLabel", "KeypointName", "PoseSequence", "__version__"]
