"""Synthetic race-walk keypoint generator with controllable BK and LC signatures.

Kinematic template, not a physics model. Each leg follows a phase in [0, 1):
stance on [0, 0.5) (heel strike at 0, toe-off at 0.5), swing on [0.5, 1).
The knee starts to flex at 0.4 and is most bent at 0.7. The left leg runs
half a cycle behind the right. The thigh swings as ``thigh_swing * cos(2 pi phase)`` about the
vertical and the hip height is set so the lower ankle rests on the ground
line, so Normal walking always keeps a foot down.

Signatures:
  * Normal - stance knee angle is exactly 180 degrees.
  * BK     - stance knee angle is ``180 - severity``; the bend is split
             between thigh and calf so the foot stays under the body and
             the knee moves forward.
  * LC     - around each step transition the knees and ankles of both legs
             rise ``severity`` body lengths (the knee slides up the thigh line,
             the shank moves with it), so both feet leave the ground while the
             trunk keeps its height and the knee angle is untouched.

Right-knee minima are laid out symmetrically inside the clip, so a clip of
``n_frames`` holds exactly ``n_frames // cycle_frames`` complete swing lobes.
Lengths are in body lengths (nose to mid-hip) until converted to pixels.
"""

from __future__ import annotations

import dataclasses
import os
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .pose_data import (
    FaultLabel,
    KeypointName as K,
    LabelRecord,
    PoseSequence,
    write_keypoint_file,
    write_labels_csv,
)

DEFAULT_SEVERITY = {FaultLabel.NORMAL: 0.0, FaultLabel.BK: 15.0, FaultLabel.LC: 0.1}

# per-walker limb-to-trunk proportion spread (overall size varies +/-10 % separately)
PROPORTION_JITTER = 0.03

# knee most bent at this phase; the flexion lobe spans [0.4, 1.0)
SWING_MIN_PHASE = 0.7

# LC lift profile: full lift within this phase distance of a step transition,
# cosine taper to zero over the next FLIGHT_TAPER.
FLIGHT_PLATEAU = 0.04
FLIGHT_TAPER = 0.08


@dataclass(frozen=True)
class GaitParams:
    n_frames: int = 90
    fps: float = 60.0
    cycle_frames: int = 36
    forward_speed: float = 0.06
    fault: FaultLabel = FaultLabel.NORMAL
    severity: Optional[float] = None  # None -> DEFAULT_SEVERITY[fault]
    noise_sigma: float = 1.5
    seed: int = 0
    # body template
    thigh_length: float = 0.7
    shank_length: float = 0.7
    upper_arm_length: float = 0.45
    forearm_length: float = 0.4
    swing_min_angle: float = 105.0
    thigh_swing: float = 25.0
    arm_swing: float = 30.0
    trunk_lean: float = 5.0
    # camera
    scale_px: float = 260.0
    direction: int = 1
    ground_y_px: float = 900.0
    start_x_px: Optional[float] = None
    image_width_px: float = 1920.0

    def __post_init__(self):
        object.__setattr__(self, "fault", FaultLabel(self.fault))
        if self.cycle_frames < 20:
            raise ValueError("cycle_frames must be at least 20")
        if self.n_frames < 2 * self.cycle_frames:
            raise ValueError("n_frames must cover at least two cycles")
        if self.fps <= 0 or self.scale_px <= 0:
            raise ValueError("fps and scale_px must be positive")
        if self.noise_sigma < 0 or self.effective_severity < 0:
            raise ValueError("severity and noise_sigma must be non-negative")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if min(self.thigh_length, self.shank_length, self.upper_arm_length, self.forearm_length) <= 0:
            raise ValueError("limb lengths must be positive")
        if not 0 < self.swing_min_angle < 180 - (self.effective_severity if self.fault is FaultLabel.BK else 0):
            raise ValueError("swing_min_angle must lie below the stance knee angle")

    @property
    def effective_severity(self) -> float:
        return DEFAULT_SEVERITY[self.fault] if self.severity is None else float(self.severity)


@dataclass(frozen=True, eq=False)
class GaitEvents:
    """Per-frame ground truth of the template."""

    right_support: np.ndarray
    left_support: np.ndarray
    flight: np.ndarray  # both ankles off the ground
    right_knee_minima: np.ndarray  # frame positions (may be fractional)
    ankle_heights: np.ndarray  # (T, 2) left, right; body lengths above ground
    knee_angles: np.ndarray  # (T, 2) left, right; degrees, before noise


@dataclass(frozen=True, eq=False)
class SynthSample:
    sequence: PoseSequence
    label: FaultLabel
    ground_truth_events: GaitEvents


def _phases(p: GaitParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.arange(p.n_frames, dtype=float)
    c = p.cycle_frames
    rem = p.n_frames - (p.n_frames // c) * c
    first_min = rem / 2.0 + c / 2.0
    right = np.mod((t - first_min) / c + SWING_MIN_PHASE, 1.0)
    left = np.mod(right + 0.5, 1.0)
    minima = first_min + c * np.arange(p.n_frames // c)
    return right, left, minima


def _knee_angle_profile(phase: np.ndarray, stance_angle: float, swing_min: float) -> np.ndarray:
    """Straight (or BK-bent) knee, then one symmetric flexion lobe centred on SWING_MIN_PHASE."""
    half = 1.0 - SWING_MIN_PHASE
    s = np.clip((phase - (SWING_MIN_PHASE - half)) / (2 * half), 0.0, 1.0)
    return stance_angle - (stance_angle - swing_min) * np.sin(np.pi * s) ** 2


def _flight_profile(phase_right: np.ndarray) -> np.ndarray:
    # distance to the nearest step transition (phase 0 or 0.5)
    d = np.abs(np.mod(phase_right + 0.25, 0.5) - 0.25)
    taper = 0.5 * (1 + np.cos(np.pi * np.clip((d - FLIGHT_PLATEAU) / FLIGHT_TAPER, 0, 1)))
    return np.where(d <= FLIGHT_PLATEAU, 1.0, taper)


def _leg(thigh_deg, knee_deg, a, b):
    """Knee and ankle offsets from the hip (x forward, y up)."""
    phi = np.radians(thigh_deg)
    calf = np.radians(thigh_deg - (180.0 - knee_deg))
    knee = np.stack([a * np.sin(phi), -a * np.cos(phi)], axis=-1)
    ankle = knee + np.stack([b * np.sin(calf), -b * np.cos(calf)], axis=-1)
    return knee, ankle


def template_points(p: GaitParams) -> tuple[np.ndarray, GaitEvents]:
    """Noise-free keypoints (T, 17, 2) in body lengths, y up, ground at y = 0."""
    right_phase, left_phase, minima = _phases(p)
    stance = 180.0 - (p.effective_severity if p.fault is FaultLabel.BK else 0.0)
    T = p.n_frames

    legs = {}
    for side, phase in (("l", left_phase), ("r", right_phase)):
        theta = _knee_angle_profile(phase, stance, p.swing_min_angle)
        thigh = p.thigh_swing * np.cos(2 * np.pi * phase)
        if stance < 180.0:
            # rotate the thigh forward by half the stance bend, fading out toward the swing minimum
            weight = (theta - p.swing_min_angle) / (stance - p.swing_min_angle)
            thigh = thigh + (180.0 - stance) / 2 * weight
        knee, ankle = _leg(thigh, theta, p.thigh_length, p.shank_length)
        legs[side] = (phase, theta, knee, ankle)

    # lower ankle touches the ground
    hip_height = np.maximum(-legs["l"][3][:, 1], -legs["r"][3][:, 1])
    hip_x = p.forward_speed * np.arange(T)
    mid_hip = np.stack([hip_x, hip_height], axis=-1)

    lift = np.zeros(T)
    if p.fault is FaultLabel.LC:
        lift = p.effective_severity * _flight_profile(right_phase)

    pts = np.zeros((T, 17, 2))
    hip_half_width = np.array([0.02, 0.0])
    for side, sgn in (("l", -1.0), ("r", 1.0)):
        _, _, knee, ankle = legs[side]
        hip = mid_hip + sgn * hip_half_width
        idx_hip, idx_knee, idx_ankle = (K.L_HIP, K.L_KNEE, K.L_ANKLE) if side == "l" else (K.R_HIP, K.R_KNEE, K.R_ANKLE)
        pts[:, idx_hip] = hip
        # slide the knee up along the thigh and carry the shank with it, so the
        # knee rises by ``lift`` while the knee angle is unchanged
        shift = knee * (lift / knee[:, 1])[:, None]
        pts[:, idx_knee] = hip + knee + shift
        pts[:, idx_ankle] = hip + ankle + shift

    lean = np.radians(p.trunk_lean)
    up = np.array([np.sin(lean), np.cos(lean)])
    nose = mid_hip + up
    pts[:, K.NOSE] = nose
    pts[:, K.L_EYE] = nose + [-0.03, 0.04]
    pts[:, K.R_EYE] = nose + [-0.01, 0.04]
    pts[:, K.L_EAR] = nose + [-0.12, 0.02]
    pts[:, K.R_EAR] = nose + [-0.10, 0.02]
    shoulder = mid_hip + 0.72 * up
    for side, phase in (("l", left_phase), ("r", right_phase)):
        sh_i, el_i, wr_i = (K.L_SHOULDER, K.L_ELBOW, K.L_WRIST) if side == "l" else (K.R_SHOULDER, K.R_ELBOW, K.R_WRIST)
        # arm swings against the same-side leg, elbow held near 90 degrees
        alpha = np.radians(-p.arm_swing * np.cos(2 * np.pi * phase))
        fore = alpha + np.radians(80.0)
        sh = shoulder + (0.01 if side == "l" else -0.01) * np.array([1.0, 0.0])
        el = sh + p.upper_arm_length * np.stack([np.sin(alpha), -np.cos(alpha)], axis=-1)
        pts[:, sh_i] = sh
        pts[:, el_i] = el
        pts[:, wr_i] = el + p.forearm_length * np.stack([np.sin(fore), -np.cos(fore)], axis=-1)

    ankle_heights = np.stack([pts[:, K.L_ANKLE, 1], pts[:, K.R_ANKLE, 1]], axis=-1)
    events = GaitEvents(
        right_support=right_phase < 0.5,
        left_support=left_phase < 0.5,
        flight=np.min(ankle_heights, axis=1) > 1e-12,
        right_knee_minima=minima,
        ankle_heights=ankle_heights,
        knee_angles=np.stack([legs["l"][1], legs["r"][1]], axis=-1),
    )
    return pts, events


def _to_pixels(pts: np.ndarray, p: GaitParams) -> np.ndarray:
    travel = p.forward_speed * p.n_frames * p.scale_px
    if p.start_x_px is None:
        margin = max(0.0, (p.image_width_px - travel) / 2)
        start = margin if p.direction == 1 else p.image_width_px - margin
    else:
        start = p.start_x_px
    x = start + p.direction * p.scale_px * pts[..., 0]
    y = p.ground_y_px - p.scale_px * pts[..., 1]
    return np.stack([x, y], axis=-1)


def generate_sequence(params: GaitParams, video_id: str = "synth", walker_id: str = "S") -> SynthSample:
    """Deterministic in ``params`` (including its seed)."""
    pts, events = template_points(params)
    xy = _to_pixels(pts, params)
    rng = np.random.default_rng(params.seed)
    conf = rng.uniform(0.7, 1.0, size=xy.shape[:2])
    if params.noise_sigma > 0:
        xy = xy + rng.normal(0.0, params.noise_sigma, size=xy.shape)
    data = np.concatenate([xy, conf[..., None]], axis=-1)
    seq = PoseSequence(video_id, walker_id, params.fps, data)
    return SynthSample(seq, params.fault, events)


def walker_params(base: GaitParams, rng: np.random.Generator, proportion_jitter: float = PROPORTION_JITTER) -> GaitParams:
    """Per-walker anthropometry, cadence and style.

    Limb lengths in pixels vary by an overall size factor within +/-10 %;
    limb-to-trunk proportions vary independently by ``proportion_jitter``.
    """
    prop = lambda v: float(v * rng.uniform(1 - proportion_jitter, 1 + proportion_jitter))
    return dataclasses.replace(
        base,
        scale_px=float(base.scale_px * rng.uniform(0.9, 1.1)),
        thigh_length=prop(base.thigh_length),
        shank_length=prop(base.shank_length),
        upper_arm_length=prop(base.upper_arm_length),
        forearm_length=prop(base.forearm_length),
        swing_min_angle=float(base.swing_min_angle + rng.uniform(-4, 4)),
        thigh_swing=float(base.thigh_swing + rng.uniform(-2, 2)),
        trunk_lean=float(base.trunk_lean + rng.uniform(-2, 2)),
        cycle_frames=int(max(30, base.cycle_frames + rng.integers(-2, 3))),
    )


def sample_params(
    walker: GaitParams, fault: FaultLabel, rng: np.random.Generator, severity: Optional[float] = None
) -> GaitParams:
    """Trial-to-trial variation for one video of a walker."""
    cycle = int(max(30, walker.cycle_frames + rng.integers(-1, 2)))
    n_frames = max(2 * cycle + 5, int(walker.n_frames + rng.integers(-5, 6)))
    return dataclasses.replace(
        walker,
        fault=fault,
        severity=walker.severity if severity is None else severity,
        cycle_frames=cycle,
        n_frames=n_frames,
        swing_min_angle=float(walker.swing_min_angle + rng.uniform(-1.5, 1.5)),
        thigh_swing=float(walker.thigh_swing + rng.uniform(-1, 1)),
        scale_px=float(walker.scale_px * rng.uniform(0.95, 1.05)),
        direction=int(rng.choice([-1, 1])),
        seed=int(rng.integers(2**31)),
    )


def walker_names(n: int) -> list[str]:
    letters = string.ascii_uppercase
    return [letters[i] if n <= 26 else f"W{i:03d}" for i in range(n)]


def generate_dataset(
    out_dir: Union[str, os.PathLike],
    n_walkers: int = 4,
    samples_per_class: int = 15,
    params_base: GaitParams = GaitParams(),
    seed: int = 0,
    classes: tuple[FaultLabel, ...] = (FaultLabel.NORMAL, FaultLabel.BK, FaultLabel.LC),
    severities: Optional[Mapping[FaultLabel, float]] = None,
) -> tuple[list[Path], Path]:
    """Write keypoint JSON files plus ``labels.csv`` (all referees agree).

    ``severities`` overrides the per-class defaults, e.g. ``{FaultLabel.BK: 10.0}``.
    """
    severities = {FaultLabel(k): float(v) for k, v in (severities or {}).items()}
    if n_walkers < 2:
        raise ValueError("need at least 2 walkers")
    out = Path(out_dir)
    kp_dir = out / "keypoints"
    kp_dir.mkdir(parents=True, exist_ok=True)
    files, records = [], []
    for w_idx, walker in enumerate(walker_names(n_walkers)):
        w_params = walker_params(params_base, np.random.default_rng([seed, w_idx, 0]))
        for c_idx, fault in enumerate(classes):
            fault = FaultLabel(fault)
            for i in range(samples_per_class):
                rng = np.random.default_rng([seed, w_idx, c_idx + 1, i])
                vid = f"{walker}_{fault.value}_{i:03d}"
                sample = generate_sequence(sample_params(w_params, fault, rng, severities.get(fault)), vid, walker)
                path = kp_dir / f"{vid}.json"
                write_keypoint_file(sample.sequence, path)
                files.append(path)
                records.append(LabelRecord(vid, (fault, fault, fault)))
    labels = out / "labels.csv"
    write_labels_csv(records, labels)
    return files, labels
