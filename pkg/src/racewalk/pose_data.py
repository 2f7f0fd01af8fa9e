"""Keypoint sequences, referee labels and dataset assembly.

Keypoint files are JSON, one per video::

    {"video_id": "A_0001", "walker_id": "A", "fps": 60,
     "frames": [[[x, y, conf], ... 17 triples ...], ...]}

Triples follow the fixed :class:`KeypointName` order. Pixel coordinates,
y grows downward. Labels are a CSV with header
``video_id,referee1,referee2,referee3`` and values ``normal``/``bk``/``lc``
(any case).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import IO, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

N_KEYPOINTS = 17

PathOrStream = Union[str, os.PathLike, IO]


class KeypointName(IntEnum):
    NOSE = 0
    L_EYE = 1
    R_EYE = 2
    L_EAR = 3
    R_EAR = 4
    L_SHOULDER = 5
    R_SHOULDER = 6
    L_ELBOW = 7
    R_ELBOW = 8
    L_WRIST = 9
    R_WRIST = 10
    L_HIP = 11
    R_HIP = 12
    L_KNEE = 13
    R_KNEE = 14
    L_ANKLE = 15
    R_ANKLE = 16


class KeypointFileError(ValueError):
    """Raised for keypoint or label documents that violate the schema."""


class DatasetError(ValueError):
    pass


class FaultLabel(str, Enum):
    NORMAL = "normal"
    BK = "bk"
    LC = "lc"

    @classmethod
    def parse(cls, text: str) -> "FaultLabel":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise KeypointFileError(f"unknown fault label {text!r}") from None

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    confidence: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise KeypointFileError("non-finite keypoint coordinate")
        if not 0.0 <= self.confidence <= 1.0:
            raise KeypointFileError(f"confidence {self.confidence} outside [0, 1]")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_keypoint_array(data: np.ndarray) -> None:
    if data.ndim != 3 or data.shape[1] != N_KEYPOINTS or data.shape[2] != 3:
        raise KeypointFileError(
            f"keypoint count: expected frames of {N_KEYPOINTS} [x, y, confidence] triples, "
            f"got array of shape {data.shape}"
        )
    if not np.all(np.isfinite(data)):
        raise KeypointFileError("non-finite keypoint values")
    conf = data[..., 2]
    if np.any(conf < 0.0) or np.any(conf > 1.0):
        raise KeypointFileError("confidence outside [0, 1]")


@dataclass(frozen=True, eq=False)
class Pose:
    """One frame: a (17, 3) array of ``x, y, confidence`` rows."""

    keypoints: np.ndarray

    def __post_init__(self):
        kp = _frozen(self.keypoints)
        _check_keypoint_array(kp[None])
        object.__setattr__(self, "keypoints", kp)

    def __getitem__(self, name: KeypointName) -> Keypoint:
        x, y, c = self.keypoints[int(name)]
        return Keypoint(float(x), float(y), float(c))

    def xy(self, name: KeypointName) -> np.ndarray:
        return self.keypoints[int(name), :2]

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.keypoints, other.keypoints)


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """Keypoints of one walking video, stored as a (T, 17, 3) array."""

    video_id: str
    walker_id: str
    fps: float
    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data)
        _check_keypoint_array(data)
        if len(data) < 2:
            raise KeypointFileError("a sequence needs at least 2 frames")
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise KeypointFileError(f"fps must be positive, got {self.fps}")
        if not self.video_id or not self.walker_id:
            raise KeypointFileError("video_id and walker_id must be non-empty")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return len(self.data)

    @property
    def frames(self) -> list[Pose]:
        return [Pose(f) for f in self.data]

    @property
    def xy(self) -> np.ndarray:
        return self.data[..., :2]

    def __eq__(self, other):
        if not isinstance(other, PoseSequence):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.walker_id == other.walker_id
            and self.fps == other.fps
            and np.array_equal(self.data, other.data)
        )


def load_keypoint_file(source: PathOrStream) -> PoseSequence:
    """Parse one keypoint JSON document (path, text stream or byte stream)."""
    if isinstance(source, (str, os.PathLike)):
        raw = Path(source).read_bytes()
    else:
        raw = source.read()
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise KeypointFileError(f"malformed document: {exc}") from None
    if not isinstance(doc, dict):
        raise KeypointFileError("malformed document: top level must be an object")
    for key in ("video_id", "walker_id", "fps", "frames"):
        if key not in doc:
            raise KeypointFileError(f"missing metadata field {key!r}")
    frames = doc["frames"]
    if not isinstance(frames, list) or not frames:
        raise KeypointFileError("malformed document: 'frames' must be a non-empty array")
    for i, frame in enumerate(frames):
        if not isinstance(frame, list) or len(frame) != N_KEYPOINTS:
            n = len(frame) if isinstance(frame, list) else "?"
            raise KeypointFileError(f"keypoint count: frame {i} has {n}, expected {N_KEYPOINTS}")
        for kp in frame:
            if not isinstance(kp, list) or len(kp) != 3:
                raise KeypointFileError(f"malformed document: frame {i} has a non-triple keypoint")
    try:
        data = np.array(frames, dtype=float)
    except (TypeError, ValueError) as exc:
        raise KeypointFileError(f"malformed document: {exc}") from None
    try:
        fps = float(doc["fps"])
    except (TypeError, ValueError):
        raise KeypointFileError("malformed document: fps must be a number") from None
    return PoseSequence(str(doc["video_id"]), str(doc["walker_id"]), fps, data)


def keypoint_document(seq: PoseSequence) -> dict:
    return {
        "video_id": seq.video_id,
        "walker_id": seq.walker_id,
        "fps": seq.fps,
        "frames": seq.data.tolist(),
    }


def write_keypoint_file(seq: PoseSequence, dest: PathOrStream) -> None:
    # json emits the shortest repr of each float, which reloads bit-exactly
    text = json.dumps(keypoint_document(seq), separators=(",", ":"))
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text.encode("utf-8") if _is_binary(dest) else text)


def _is_binary(stream) -> bool:
    return isinstance(stream, (io.BufferedIOBase, io.RawIOBase)) or "b" in getattr(stream, "mode", "")


# -- labels -------------------------------------------------------------------


def resolve_labels(judgments: Sequence[FaultLabel]) -> Optional[FaultLabel]:
    """Majority vote of three referees; ``None`` when all three differ."""
    if len(judgments) != 3:
        raise ValueError(f"expected 3 referee judgments, got {len(judgments)}")
    label, count = Counter(judgments).most_common(1)[0]
    return label if count >= 2 else None


@dataclass(frozen=True)
class LabelRecord:
    video_id: str
    referee_judgments: tuple[FaultLabel, FaultLabel, FaultLabel]
    resolved: Optional[FaultLabel] = field(init=False)

    def __post_init__(self):
        judgments = tuple(FaultLabel(j) for j in self.referee_judgments)
        object.__setattr__(self, "referee_judgments", judgments)
        object.__setattr__(self, "resolved", resolve_labels(judgments))


def read_labels_csv(source: PathOrStream) -> list[LabelRecord]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8") as fh:
            return _parse_labels(fh)
    if _is_binary(source):
        return _parse_labels(io.TextIOWrapper(source, encoding="utf-8", newline=""))
    return _parse_labels(source)


def _parse_labels(fh) -> list[LabelRecord]:
    reader = csv.DictReader(fh)
    expected = ["video_id", "referee1", "referee2", "referee3"]
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != expected:
        raise KeypointFileError(f"labels header must be {','.join(expected)}")
    records = []
    for row in reader:
        row = {k.strip(): (v or "").strip() for k, v in row.items()}
        judgments = tuple(FaultLabel.parse(row[f"referee{i}"]) for i in (1, 2, 3))
        records.append(LabelRecord(row["video_id"], judgments))
    return records


def write_labels_csv(records: Iterable[LabelRecord], dest: PathOrStream) -> None:
    lines = ["video_id,referee1,referee2,referee3"]
    for r in records:
        lines.append(",".join([r.video_id, *(j.value for j in r.referee_judgments)]))
    text = "\n".join(lines) + "\n"
    if isinstance(dest, (str, os.PathLike)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text.encode("utf-8") if _is_binary(dest) else text)


# -- dataset ------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[PoseSequence, ...]
    labels: Mapping[str, LabelRecord]
    excluded: Mapping[str, str] = field(default_factory=dict)
    """video_id -> reason for videos dropped during assembly."""

    def label_of(self, video_id: str) -> FaultLabel:
        return self.labels[video_id].resolved

    @property
    def walkers(self) -> list[str]:
        return sorted({s.walker_id for s in self.sequences})

    def __len__(self) -> int:
        return len(self.sequences)


def assemble_dataset(
    sequences: Iterable[PoseSequence], label_records: Iterable[LabelRecord]
) -> Dataset:
    """Join sequences with labels, dropping unresolved and unlabeled videos."""
    by_id: dict[str, PoseSequence] = {}
    for seq in sequences:
        if seq.video_id in by_id:
            raise DatasetError(f"duplicate video_id {seq.video_id!r}")
        by_id[seq.video_id] = seq
    labels: dict[str, LabelRecord] = {}
    for rec in label_records:
        if rec.video_id in labels:
            raise DatasetError(f"duplicate label for video_id {rec.video_id!r}")
        if rec.video_id not in by_id:
            raise DatasetError(f"label for unknown video_id {rec.video_id!r}")
        labels[rec.video_id] = rec

    kept, excluded = [], {}
    for vid, seq in by_id.items():
        rec = labels.get(vid)
        if rec is None:
            excluded[vid] = "unlabeled"
        elif rec.resolved is None:
            excluded[vid] = "unresolved referee vote"
        else:
            kept.append(seq)
    return Dataset(
        sequences=tuple(kept),
        labels={s.video_id: labels[s.video_id] for s in kept},
        excluded=excluded,
    )
