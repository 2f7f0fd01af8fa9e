"""Object keypoint similarity and the per-keypoint AP used to grade pose estimates.

For ground truth with visibility flags ``v``, object scale ``s`` and falloff
constants ``k``, each visible keypoint contributes the similarity term
``exp(-d^2 / (2 s^2 k^2))``. OKS averages those terms over visible keypoints.
AP at a threshold is the fraction of visible keypoints (over every pose pair)
whose term exceeds the threshold, and mAP averages AP over 0.50:0.05:0.95.

This AP counts keypoints, not detected instances, so it is not the COCO
instance-level AP.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .pose_data import N_KEYPOINTS, KeypointFileError, KeypointName, Pose

AP_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True, eq=False)
class KeypointConstants:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (N_KEYPOINTS,) or np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValueError("need 17 positive falloff constants")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_mapping(cls, named: dict) -> "KeypointConstants":
        missing = [k.name.lower() for k in KeypointName if k.name.lower() not in named]
        if missing:
            raise ValueError(f"constants file lacks {missing}")
        return cls(np.array([float(named[k.name.lower()]) for k in KeypointName]))


def load_constants(path: Union[str, os.PathLike, None] = None) -> KeypointConstants:
    """Read a constants file; the bundled COCO-derived file when ``path`` is None."""
    if path is None:
        text = resources.files("racewalk").joinpath("data/keypoint_constants.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    doc = json.loads(text)
    return KeypointConstants.from_mapping(doc.get("constants", doc))


def bbox_scale(keypoints: np.ndarray, visibility: np.ndarray) -> float:
    """sqrt of the bounding-box area spanned by the visible keypoints."""
    pts = np.asarray(keypoints, dtype=float)[np.asarray(visibility) > 0]
    if len(pts) == 0:
        raise ValueError("no visible keypoints")
    w, h = pts.max(axis=0) - pts.min(axis=0)
    return float(np.sqrt(w * h))


@dataclass(frozen=True, eq=False)
class GroundTruthPose:
    keypoints: np.ndarray  # (17, 2) pixels
    visibility: np.ndarray  # (17,), 0 = not visible
    scale: Optional[float] = None

    def __post_init__(self):
        kp = np.array(self.keypoints, dtype=float)[:, :2]
        vis = np.array(self.visibility, dtype=float).reshape(-1)
        if kp.shape != (N_KEYPOINTS, 2) or vis.shape != (N_KEYPOINTS,):
            raise ValueError("ground truth needs 17 keypoints and 17 visibility flags")
        if not np.any(vis > 0):
            raise ValueError("no visible keypoints")
        scale = bbox_scale(kp, vis) if self.scale is None else float(self.scale)
        if not scale > 0:
            raise ValueError(f"object scale must be positive, got {scale}")
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "visibility", vis)
        object.__setattr__(self, "scale", scale)

    @property
    def visible(self) -> np.ndarray:
        return self.visibility > 0


def _pred_xy(pred) -> np.ndarray:
    if isinstance(pred, Pose):
        return pred.keypoints[:, :2]
    xy = np.asarray(pred, dtype=float)[:, :2]
    if xy.shape != (N_KEYPOINTS, 2):
        raise ValueError(f"prediction must have 17 keypoints, got shape {xy.shape}")
    return xy


def similarity_terms(pred, gt: GroundTruthPose, k: Optional[KeypointConstants] = None) -> np.ndarray:
    """Per-keypoint similarity of the visible keypoints (invisible ones dropped)."""
    k = k or load_constants()
    d2 = np.sum((_pred_xy(pred) - gt.keypoints) ** 2, axis=1)
    terms = np.exp(-d2 / (2.0 * gt.scale**2 * k.values**2))
    return terms[gt.visible]


def oks(pred, gt: GroundTruthPose, k: Optional[KeypointConstants] = None) -> float:
    terms = similarity_terms(pred, gt, k)
    if terms.size == 0:
        raise ValueError("no visible keypoints")
    return float(terms.sum() / terms.size)


def _all_terms(preds: Sequence, gts: Sequence[GroundTruthPose], k) -> np.ndarray:
    if len(preds) != len(gts):
        raise ValueError("predictions and ground truths must be paired")
    k = k or load_constants()
    terms = [similarity_terms(p, g, k) for p, g in zip(preds, gts)]
    terms = np.concatenate(terms) if terms else np.empty(0)
    if terms.size == 0:
        raise ValueError("no visible keypoints in the whole set")
    return terms


def ap_from_terms(terms: np.ndarray, threshold: float) -> float:
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return float(np.count_nonzero(terms > threshold) / terms.size)


def keypoint_ap(preds, gts, k: Optional[KeypointConstants] = None, threshold: float = 0.5) -> float:
    return ap_from_terms(_all_terms(preds, gts, k), threshold)


def mean_ap(preds, gts, k: Optional[KeypointConstants] = None) -> float:
    terms = _all_terms(preds, gts, k)
    return float(np.mean([ap_from_terms(terms, t) for t in AP_THRESHOLDS]))


def load_ground_truth_file(path: Union[str, os.PathLike]) -> list[GroundTruthPose]:
    """Ground-truth JSON: the keypoint-file schema plus per-frame ``v`` and optional ``scale``.

    ``v`` is a list (one per frame) of 17 visibility flags; ``scale`` is a
    list of per-frame positive numbers or nulls (null -> bounding-box scale).
    """
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        frames, vis = doc["frames"], doc["v"]
    except KeyError as exc:
        raise KeypointFileError(f"missing ground-truth field {exc}") from None
    scales = doc.get("scale") or [None] * len(frames)
    if not (len(frames) == len(vis) == len(scales)):
        raise KeypointFileError("frames, v and scale must have equal lengths")
    return [GroundTruthPose(np.array(f, dtype=float), np.array(v), s) for f, v, s in zip(frames, vis, scales)]
