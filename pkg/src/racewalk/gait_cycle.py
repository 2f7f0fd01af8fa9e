"""Two-step window extraction, 85-frame resampling and the feature layout.

Layout "v1": 18 channels x 85 frames, flattened channel-major
(index = 85 * channel + frame). Channel order::

    for side in (left, right):
        for joint in (hip, knee, shank, ankle):
            x, y
    left knee angle, right knee angle
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence, Union

import numpy as np
from scipy.signal import find_peaks

from .pose_data import FaultLabel
from .preprocess import LEG_INDICES, KneeAngleSeries, Side

LAYOUT_VERSION = "v1"
N_FRAMES = 85
JOINTS = ("hip", "knee", "shank", "ankle")
SIDES = (Side.LEFT, Side.RIGHT)

CHANNELS: tuple[str, ...] = tuple(
    f"{side.value[0]}_{joint}_{axis}" for side in SIDES for joint in JOINTS for axis in "xy"
) + ("l_knee_angle", "r_knee_angle")
N_CHANNELS = len(CHANNELS)
N_FEATURES = N_CHANNELS * N_FRAMES

CATEGORIES: tuple[str, ...] = tuple(f"{j}-{a}" for j in JOINTS for a in "xy") + ("knee-angle",)
CHANNEL_CATEGORY: tuple[str, ...] = tuple(
    "knee-angle" if name.endswith("knee_angle") else "{}-{}".format(*name.split("_")[1:])
    for name in CHANNELS
)

DEFAULT_MIN_PROMINENCE = 20.0
DEFAULT_MIN_SEPARATION = 30


class NoCycleError(ValueError):
    pass


class LayoutMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class CycleWindow:
    start_frame: int
    end_frame: int  # inclusive

    def __post_init__(self):
        if not 0 <= self.start_frame < self.end_frame:
            raise ValueError(f"invalid window ({self.start_frame}, {self.end_frame})")

    def __len__(self) -> int:
        return self.end_frame - self.start_frame + 1


def knee_minima(theta, min_prominence: float, min_separation: int) -> np.ndarray:
    """Indices of local minima passing the prominence and separation filters."""
    theta = np.asarray(theta, dtype=float)
    peaks, _ = find_peaks(-theta, prominence=min_prominence, distance=max(1, int(min_separation)))
    return peaks


def detect_cycle(
    right_knee: Union[KneeAngleSeries, np.ndarray],
    min_prominence: float = DEFAULT_MIN_PROMINENCE,
    min_separation: int = DEFAULT_MIN_SEPARATION,
) -> CycleWindow:
    """Window from the most bent right knee to the next right-knee minimum."""
    theta = right_knee.theta if isinstance(right_knee, KneeAngleSeries) else np.asarray(right_knee, float)
    if len(theta) < min_separation + 2:
        raise NoCycleError(f"no full cycle: series of {len(theta)} frames is too short")
    minima = knee_minima(theta, min_prominence, min_separation)
    if len(minima) < 2:
        raise NoCycleError(f"no full cycle: found {len(minima)} qualifying knee minima")
    # the last minimum has no successor, so it can never start a window
    candidates = minima[:-1]
    i = int(np.argmin(theta[candidates]))
    return CycleWindow(int(minima[i]), int(minima[i + 1]))


def resample(series, n: int = N_FRAMES) -> np.ndarray:
    """Linearly interpolate ``series`` (time on axis 0) to ``n`` evenly spaced samples."""
    series = np.asarray(series, dtype=float)
    m = len(series)
    if m < 2:
        raise ValueError("window shorter than 2 frames")
    if n < 2:
        raise ValueError("target length must be at least 2")
    if m == n:
        return series.copy()
    pos = np.linspace(0.0, m - 1, n)
    lo = np.minimum(np.floor(pos).astype(int), m - 2)
    frac = pos - lo
    frac = frac.reshape((-1,) + (1,) * (series.ndim - 1))
    out = series[lo] * (1.0 - frac) + series[lo + 1] * frac
    out[0], out[-1] = series[0], series[-1]
    return out


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    values: np.ndarray  # (18, 85)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (N_CHANNELS, N_FRAMES):
            raise LayoutMismatchError(f"channel matrix must be {N_CHANNELS}x{N_FRAMES}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("channel matrix contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return isinstance(other, ChannelMatrix) and np.array_equal(self.values, other.values)

    def channel(self, name: str) -> np.ndarray:
        return self.values[CHANNELS.index(name)]


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray  # (1530,)
    layout_version: str = LAYOUT_VERSION

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.shape != (N_FEATURES,):
            raise LayoutMismatchError(f"feature vector must have {N_FEATURES} values, got {v.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def channel_matrix(
    points: np.ndarray,
    left: KneeAngleSeries | np.ndarray,
    right: KneeAngleSeries | np.ndarray,
    window: CycleWindow,
    n: int = N_FRAMES,
) -> ChannelMatrix:
    """Cut ``window`` out of normalized points (T, 19, 2) and knee angles, resample to ``n``."""
    if window.end_frame >= len(points):
        raise ValueError(f"window ends at frame {window.end_frame} but the series has {len(points)} frames")
    sl = slice(window.start_frame, window.end_frame + 1)
    rows = []
    for side in SIDES:
        hip, knee, ankle, shank = LEG_INDICES[side]
        for idx in (hip, knee, shank, ankle):
            rows.extend([points[sl, idx, 0], points[sl, idx, 1]])
    for series in (left, right):
        theta = series.theta if isinstance(series, KneeAngleSeries) else np.asarray(series)
        rows.append(theta[sl])
    return ChannelMatrix(resample(np.stack(rows, axis=1), n).T)


def assemble_features(matrix: ChannelMatrix) -> FeatureVector:
    return FeatureVector(matrix.values.reshape(-1), LAYOUT_VERSION)


def unflatten(features: FeatureVector) -> ChannelMatrix:
    if features.layout_version != LAYOUT_VERSION:
        raise LayoutMismatchError(f"unknown layout {features.layout_version!r}")
    return ChannelMatrix(features.values.reshape(N_CHANNELS, N_FRAMES))


def feature_index(channel: int, frame: int) -> int:
    return N_FRAMES * channel + frame


def feature_category(index: int) -> str:
    return CHANNEL_CATEGORY[index // N_FRAMES]


def category_mask(category: str) -> np.ndarray:
    """Boolean mask over the 1530 features selecting one of the 9 categories."""
    if category not in CATEGORIES:
        raise KeyError(category)
    per_channel = np.array([c == category for c in CHANNEL_CATEGORY])
    return np.repeat(per_channel, N_FRAMES)


@dataclass(frozen=True, eq=False)
class ProcessedCycle:
    video_id: str
    walker_id: str
    label: FaultLabel
    matrix: ChannelMatrix

    @property
    def features(self) -> FeatureVector:
        return assemble_features(self.matrix)

    def __eq__(self, other):
        if not isinstance(other, ProcessedCycle):
            return NotImplemented
        return (self.video_id, self.walker_id, self.label, self.matrix) == (
            other.video_id,
            other.walker_id,
            other.label,
            other.matrix,
        )


def feature_columns() -> list[str]:
    return [f"c{c}_f{f}" for c in range(N_CHANNELS) for f in range(N_FRAMES)]


def write_cycles_csv(cycles: Iterable[ProcessedCycle], dest: Union[str, os.PathLike, IO]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["video_id", "walker_id", "label", *feature_columns()])
    for cyc in cycles:
        writer.writerow(
            [cyc.video_id, cyc.walker_id, cyc.label.value, *(format(v, ".17g") for v in cyc.features.values)]
        )
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_text(buf.getvalue(), encoding="utf-8")
    else:
        dest.write(buf.getvalue())


def read_cycles_csv(source: Union[str, os.PathLike, IO]) -> list[ProcessedCycle]:
    if isinstance(source, (str, os.PathLike)):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = source.read()
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or header[:3] != ["video_id", "walker_id", "label"] or header[3:] != feature_columns():
        raise LayoutMismatchError("processed-cycles CSV header does not match layout v1")
    cycles = []
    for row in reader:
        if not row:
            continue
        values = np.array([float(v) for v in row[3:]])
        matrix = ChannelMatrix(values.reshape(N_CHANNELS, N_FRAMES))
        cycles.append(ProcessedCycle(row[0], row[1], FaultLabel.parse(row[2]), matrix))
    return cycles


def cycles_to_arrays(cycles: Sequence[ProcessedCycle]) -> tuple[np.ndarray, list[FaultLabel], list[str]]:
    """Stack features into an (n, 1530) matrix with labels and walker ids alongside."""
    X = np.stack([c.features.values for c in cycles]) if cycles else np.empty((0, N_FEATURES))
    return X, [c.label for c in cycles], [c.walker_id for c in cycles]
