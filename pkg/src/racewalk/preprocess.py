"""Body-frame normalization, shank points, knee angles and the outlier screen.

Normalized frame: nose at the origin, nose-to-mid-hip distance is 1, y points
up and x points in the walking direction. Knee angles are measured
counterclockwise in that frame from the thigh (knee->hip) to the calf
(knee->ankle), so 180 is a straight leg and flexion gives values below 180
on both sides regardless of which way the walker crosses the image.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Union

import numpy as np

from .pose_data import KeypointName as K
from .pose_data import Pose, PoseSequence

L_SHANK = 17
R_SHANK = 18
N_POINTS = 19

DEFAULT_OUTLIER_SD_MULT = 3.0


class DegenerateGeometryError(ValueError):
    pass


class Side(str, Enum):
    LEFT = "left"
    RIGHT = "right"


LEG_INDICES = {
    # hip, knee, ankle, shank (normalized point indices)
    Side.LEFT: (K.L_HIP, K.L_KNEE, K.L_ANKLE, L_SHANK),
    Side.RIGHT: (K.R_HIP, K.R_KNEE, K.R_ANKLE, R_SHANK),
}


def walking_direction(seq: Union[PoseSequence, np.ndarray]) -> int:
    """+1 if the nose moves toward image-right on average, -1 if toward the left."""
    xy = seq.xy if isinstance(seq, PoseSequence) else np.asarray(seq)[..., :2]
    if len(xy) < 2:
        raise ValueError("walking direction needs at least 2 frames")
    nose_x = xy[:, K.NOSE, 0]
    mean_step = float(np.mean(np.diff(nose_x)))
    if not np.isfinite(mean_step) or mean_step == 0.0:
        raise DegenerateGeometryError("ambiguous direction: zero net nose displacement")
    return 1 if mean_step > 0 else -1


def shank_point(knee, ankle) -> np.ndarray:
    return (np.asarray(knee, dtype=float) + np.asarray(ankle, dtype=float)) / 2.0


@dataclass(frozen=True, eq=False)
class NormalizedFrame:
    """19 points: the 17 keypoints followed by left and right shank points."""

    points: np.ndarray

    def __getitem__(self, idx: int) -> np.ndarray:
        return self.points[idx]


def normalize_xy(xy: np.ndarray, direction: int) -> np.ndarray:
    """Normalize pixel coordinates of shape (..., 17, 2) frame by frame.

    Returns shape (..., 19, 2) with the shank points appended.
    """
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    xy = np.asarray(xy, dtype=float)
    nose = xy[..., K.NOSE : K.NOSE + 1, :]
    mid_hip = (xy[..., K.L_HIP, :] + xy[..., K.R_HIP, :]) / 2.0
    length = np.linalg.norm(mid_hip - nose[..., 0, :], axis=-1)
    if not np.all(np.isfinite(length)) or np.any(length <= 0.0):
        raise DegenerateGeometryError("degenerate frame: nose-to-hip distance is zero or non-finite")
    out = (xy - nose) / length[..., None, None]
    out = out * np.array([direction, -1.0])
    shanks = np.stack(
        [
            shank_point(out[..., K.L_KNEE, :], out[..., K.L_ANKLE, :]),
            shank_point(out[..., K.R_KNEE, :], out[..., K.R_ANKLE, :]),
        ],
        axis=-2,
    )
    return np.concatenate([out, shanks], axis=-2)


def normalize_pose(pose: Union[Pose, np.ndarray], direction: int) -> NormalizedFrame:
    kp = pose.keypoints if isinstance(pose, Pose) else np.asarray(pose)
    return NormalizedFrame(normalize_xy(kp[..., :2], direction))


def normalize_sequence(seq: PoseSequence, direction: int | None = None) -> np.ndarray:
    """(T, 19, 2) normalized points; direction is inferred when not given."""
    if direction is None:
        direction = walking_direction(seq)
    return normalize_xy(seq.xy, direction)


def knee_angle(hip, knee, ankle) -> np.ndarray | float:
    """Counterclockwise angle in degrees from thigh to calf, in [0, 360).

    Broadcasts over leading dimensions of ``(..., 2)`` inputs.
    """
    hip, knee, ankle = (np.asarray(p, dtype=float) for p in (hip, knee, ankle))
    u = hip - knee
    w = ankle - knee
    if np.any(np.all(u == 0, axis=-1)) or np.any(np.all(w == 0, axis=-1)):
        raise DegenerateGeometryError("degenerate limb: zero-length thigh or calf")
    cross = u[..., 0] * w[..., 1] - u[..., 1] * w[..., 0]
    dot = u[..., 0] * w[..., 0] + u[..., 1] * w[..., 1]
    theta = np.mod(np.degrees(np.arctan2(cross, dot)), 360.0)
    return float(theta) if np.ndim(theta) == 0 else theta


@dataclass(frozen=True, eq=False)
class KneeAngleSeries:
    side: Side
    theta: np.ndarray

    def __len__(self) -> int:
        return len(self.theta)


def knee_angle_series(points: np.ndarray, side: Side) -> KneeAngleSeries:
    """Knee angle per frame from normalized points of shape (T, 19, 2)."""
    hip, kn, an, _ = LEG_INDICES[Side(side)]
    theta = knee_angle(points[:, hip], points[:, kn], points[:, an])
    return KneeAngleSeries(Side(side), np.atleast_1d(theta))


@dataclass(frozen=True)
class OutlierScreenReport:
    pooled_sigma: float
    k: float
    removed: tuple[str, ...]
    kept: tuple[str, ...]
    max_abs_step: Mapping[str, float]


def reject_outliers(
    knee_angles: Mapping[str, Union[KneeAngleSeries, np.ndarray]],
    k: float = DEFAULT_OUTLIER_SD_MULT,
) -> OutlierScreenReport:
    """Screen whole videos on frame-to-frame jumps of the right knee angle.

    The SD is pooled over every frame-to-frame difference of every video.
    A video is removed if any of its jumps exceeds ``k`` times that SD.
    A pooled SD of zero removes nothing.
    """
    if not knee_angles:
        raise ValueError("empty input")
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    steps = {}
    for vid, series in knee_angles.items():
        theta = series.theta if isinstance(series, KneeAngleSeries) else np.asarray(series, float)
        if len(theta) < 2:
            raise ValueError(f"series {vid!r} has fewer than 2 frames")
        steps[vid] = np.diff(theta)
    # sorted keys fix the reduction order
    pooled = np.concatenate([steps[v] for v in sorted(steps)])
    sigma = float(np.std(pooled))
    max_step = {v: float(np.max(np.abs(s))) for v, s in steps.items()}
    removed, kept = [], []
    for vid in knee_angles:
        if sigma > 0 and max_step[vid] > k * sigma:
            removed.append(vid)
        else:
            kept.append(vid)
    return OutlierScreenReport(sigma, float(k), tuple(removed), tuple(kept), max_step)
