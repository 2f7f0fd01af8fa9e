"""Keypoint files -> processed cycles, with per-video bookkeeping.

Order of operations: load and label, normalize and compute knee angles,
pooled outlier screen on the right knee angle, two-step window, resample.
Each video ends up ``kept``, ``removed`` (outlier screen) or ``failed``
(unreadable, degenerate geometry, no full cycle).
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .gait_cycle import (
    DEFAULT_MIN_PROMINENCE,
    DEFAULT_MIN_SEPARATION,
    NoCycleError,
    ProcessedCycle,
    channel_matrix,
    detect_cycle,
)
from .pose_data import (
    Dataset,
    FaultLabel,
    KeypointFileError,
    PoseSequence,
    assemble_dataset,
    load_keypoint_file,
    read_labels_csv,
)
from .preprocess import (
    DEFAULT_OUTLIER_SD_MULT,
    DegenerateGeometryError,
    OutlierScreenReport,
    Side,
    knee_angle_series,
    normalize_sequence,
    reject_outliers,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VideoDisposition:
    video_id: str
    walker_id: str
    label: Optional[str]
    status: str  # kept | removed | failed | excluded
    reason: str = ""


@dataclass
class ProcessResult:
    cycles: list[ProcessedCycle]
    dispositions: list[VideoDisposition]
    screen: Optional[OutlierScreenReport]

    def count(self, status: str) -> int:
        return sum(d.status == status for d in self.dispositions)

    def valid_counts(self) -> dict[str, dict[str, list[int]]]:
        """walker -> label -> [valid, videos], the valid-data / videos bookkeeping."""
        table: dict[str, dict[str, list[int]]] = {}
        for d in self.dispositions:
            if d.label is None:
                continue
            cell = table.setdefault(d.walker_id, {}).setdefault(d.label, [0, 0])
            cell[1] += 1
            cell[0] += d.status == "kept"
        return table


@dataclass
class _Prepared:
    seq: PoseSequence
    points: np.ndarray
    left: object
    right: object


def prepare(seq: PoseSequence) -> _Prepared:
    points = normalize_sequence(seq)
    return _Prepared(seq, points, knee_angle_series(points, Side.LEFT), knee_angle_series(points, Side.RIGHT))


def load_inputs(
    keypoint_paths: Iterable[Union[str, os.PathLike]],
    labels_path: Union[str, os.PathLike],
    jobs: int = 1,
) -> tuple[Dataset, list[VideoDisposition]]:
    """Load keypoint files and labels; unreadable files become failed dispositions."""
    paths = sorted(Path(p) for p in keypoint_paths)

    def _load(path):
        try:
            return load_keypoint_file(path), None
        except (KeypointFileError, OSError) as exc:
            return None, VideoDisposition(path.stem, "", None, "failed", str(exc))

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            loaded = list(pool.map(_load, paths))
    else:
        loaded = [_load(p) for p in paths]
    sequences = [s for s, _ in loaded if s is not None]
    failures = [f for _, f in loaded if f is not None]
    failed_ids = {f.video_id for f in failures}
    records = [r for r in read_labels_csv(labels_path) if r.video_id not in failed_ids]
    return assemble_dataset(sequences, records), failures


def process_dataset(
    dataset: Dataset,
    outlier_sd_mult: float = DEFAULT_OUTLIER_SD_MULT,
    min_prominence: float = DEFAULT_MIN_PROMINENCE,
    min_separation: int = DEFAULT_MIN_SEPARATION,
    jobs: int = 1,
    prior_failures: Sequence[VideoDisposition] = (),
) -> ProcessResult:
    dispositions = list(prior_failures)
    for vid, reason in dataset.excluded.items():
        dispositions.append(VideoDisposition(vid, "", None, "excluded", reason))

    def _prep(seq):
        try:
            return prepare(seq), None
        except DegenerateGeometryError as exc:
            return None, str(exc)

    seqs = sorted(dataset.sequences, key=lambda s: s.video_id)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            prepared = list(pool.map(_prep, seqs))
    else:
        prepared = [_prep(s) for s in seqs]

    ok: dict[str, _Prepared] = {}
    for seq, (prep, err) in zip(seqs, prepared):
        label = dataset.label_of(seq.video_id).value
        if err is not None:
            dispositions.append(VideoDisposition(seq.video_id, seq.walker_id, label, "failed", err))
        else:
            ok[seq.video_id] = prep

    screen = None
    if ok:
        screen = reject_outliers({vid: p.right for vid, p in ok.items()}, outlier_sd_mult)
        for vid in screen.removed:
            p = ok.pop(vid)
            dispositions.append(
                VideoDisposition(
                    vid, p.seq.walker_id, dataset.label_of(vid).value, "removed",
                    f"right knee jump {screen.max_abs_step[vid]:.1f} deg > "
                    f"{screen.k:g} x pooled SD {screen.pooled_sigma:.2f} deg",
                )
            )

    cycles = []
    for vid in sorted(ok):
        p = ok[vid]
        label = dataset.label_of(vid)
        try:
            window = detect_cycle(p.right, min_prominence, min_separation)
        except NoCycleError as exc:
            dispositions.append(VideoDisposition(vid, p.seq.walker_id, label.value, "failed", str(exc)))
            continue
        matrix = channel_matrix(p.points, p.left, p.right, window)
        cycles.append(ProcessedCycle(vid, p.seq.walker_id, FaultLabel(label), matrix))
        dispositions.append(
            VideoDisposition(vid, p.seq.walker_id, label.value, "kept",
                             f"window {window.start_frame}-{window.end_frame}")
        )
    dispositions.sort(key=lambda d: d.video_id)
    return ProcessResult(cycles, dispositions, screen)

