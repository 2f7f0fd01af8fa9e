import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from racewalk.pose_data import KeypointName
from racewalk.pose_metrics import (
    AP_THRESHOLDS,
    GroundTruthPose,
    KeypointConstants,
    ap_from_terms,
    bbox_scale,
    keypoint_ap,
    load_constants,
    load_ground_truth_file,
    mean_ap,
    oks,
    similarity_terms,
)

from conftest import standing_frame

K = load_constants()


def _gt(visible=None, scale=50.0):
    kp = standing_frame()[:, :2]
    v = np.ones(17) if visible is None else np.asarray(visible, dtype=float)
    return GroundTruthPose(kp, v, scale)


def _pred_with_terms(gt, terms_by_index):
    """Move each listed keypoint along x so its similarity term equals the target."""
    pred = gt.keypoints.copy()
    for i, t in terms_by_index.items():
        pred[i, 0] += gt.scale * K.values[i] * math.sqrt(-2.0 * math.log(t))
    return pred


def test_bundled_constants():
    assert K.values.shape == (17,)
    assert K.values[KeypointName.NOSE] == pytest.approx(0.052)
    assert K.values[KeypointName.L_HIP] == pytest.approx(0.214)
    assert np.all(K.values > 0)
    with pytest.raises(ValueError):
        KeypointConstants(np.ones(16))
    with pytest.raises(ValueError):
        KeypointConstants.from_mapping({"nose": 1.0})


def test_constants_file_override(tmp_path):
    path = tmp_path / "k.json"
    path.write_text(json.dumps({k.name.lower(): 0.1 for k in KeypointName}))
    assert np.all(load_constants(path).values == 0.1)


def test_perfect_prediction():
    gt = _gt()
    assert oks(gt.keypoints, gt, K) == 1.0
    assert keypoint_ap([gt.keypoints], [gt], K, 0.95) == 1.0
    assert mean_ap([gt.keypoints], [gt], K) == 1.0


def test_single_visible_exp_minus_one():
    v = np.zeros(17)
    v[KeypointName.R_KNEE] = 1
    gt = _gt(v, scale=40.0)
    pred = gt.keypoints.copy()
    # d^2 = 2 s^2 k^2
    pred[KeypointName.R_KNEE, 1] += math.sqrt(2) * 40.0 * K.values[KeypointName.R_KNEE]
    assert oks(pred, gt, K) == pytest.approx(math.exp(-1), abs=1e-12)


def test_invisible_keypoints_ignored(rng):
    v = np.ones(17)
    v[[0, 3, 9]] = 0
    gt = _gt(v)
    pred = gt.keypoints + rng.normal(0, 2, size=(17, 2))
    base = oks(pred, gt, K)
    pred2 = pred.copy()
    pred2[[0, 3, 9]] += 500.0
    assert oks(pred2, gt, K) == base
    assert similarity_terms(pred, gt, K).shape == (14,)


def test_ap_counting_fixture():
    v = np.zeros(17)
    v[[5, 6, 11, 12]] = 1
    gt = _gt(v)
    pred = _pred_with_terms(gt, {5: 0.9, 6: 0.9, 11: 0.6, 12: 0.4})
    np.testing.assert_allclose(similarity_terms(pred, gt, K), [0.9, 0.9, 0.6, 0.4], atol=1e-12)
    assert keypoint_ap([pred], [gt], K, 0.5) == 0.75


def test_map_all_terms_052():
    gt = _gt()
    pred = _pred_with_terms(gt, {i: 0.52 for i in range(17)})
    aps = [keypoint_ap([pred], [gt], K, t) for t in AP_THRESHOLDS]
    assert aps == [1.0] + [0.0] * 9
    assert mean_ap([pred], [gt], K) == pytest.approx(0.1, abs=1e-15)


def test_thresholds():
    assert AP_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
    with pytest.raises(ValueError):
        ap_from_terms(np.array([0.5]), 1.0)


def test_errors():
    with pytest.raises(ValueError):
        GroundTruthPose(np.zeros((17, 2)), np.zeros(17), 1.0)
    gt = _gt()
    with pytest.raises(ValueError):
        keypoint_ap([gt.keypoints], [gt, gt], K)
    with pytest.raises(ValueError):
        GroundTruthPose(np.zeros((17, 2)), np.ones(17), -1.0)


def test_bbox_scale_default():
    kp = np.zeros((17, 2))
    kp[0] = (0, 0)
    kp[1] = (30, 0)
    kp[2] = (0, 120)
    v = np.zeros(17)
    v[:3] = 1
    assert bbox_scale(kp, v) == 60.0
    assert GroundTruthPose(kp, v).scale == 60.0


pose_seed = st.integers(0, 2**32 - 1)


def _random_pair(seed):
    r = np.random.default_rng(seed)
    gt_kp = standing_frame()[:, :2] + r.normal(0, 10, size=(17, 2))
    pred = gt_kp + r.normal(0, 8, size=(17, 2))
    v = (r.random(17) > 0.2).astype(float)
    v[0] = 1
    return pred, gt_kp, v, r.uniform(20, 200)


@given(pose_seed, st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_oks_translation_invariant(seed, tx, ty):
    pred, gt_kp, v, s = _random_pair(seed)
    t = np.array([tx, ty])
    a = oks(pred, GroundTruthPose(gt_kp, v, s), K)
    b = oks(pred + t, GroundTruthPose(gt_kp + t, v, s), K)
    assert a == pytest.approx(b, abs=1e-9)


@given(pose_seed, st.floats(0.01, 100))
def test_oks_joint_scaling_invariant(seed, c):
    pred, gt_kp, v, s = _random_pair(seed)
    a = oks(pred, GroundTruthPose(gt_kp, v, s), K)
    b = oks(c * pred, GroundTruthPose(c * gt_kp, v, c * s), K)
    assert a == pytest.approx(b, abs=1e-12)


@given(pose_seed, st.integers(0, 16), st.floats(0, 50))
def test_oks_monotone_in_distance(seed, i, extra):
    pred, gt_kp, v, s = _random_pair(seed)
    gt = GroundTruthPose(gt_kp, v, s)
    direction = pred[i] - gt_kp[i]
    direction = direction / (np.linalg.norm(direction) or 1.0)
    farther = pred.copy()
    farther[i] += extra * direction
    assert oks(farther, gt, K) <= oks(pred, gt, K) + 1e-15


@given(st.lists(pose_seed, min_size=1, max_size=5))
def test_ap_non_increasing_and_map_bounded(seeds):
    pairs = [_random_pair(s) for s in seeds]
    preds = [p for p, *_ in pairs]
    gts = [GroundTruthPose(g, v, s) for _, g, v, s in pairs]
    aps = [keypoint_ap(preds, gts, K, t) for t in AP_THRESHOLDS]
    assert all(a >= b for a, b in zip(aps, aps[1:]))
    assert mean_ap(preds, gts, K) <= aps[0] + 1e-15


def test_ground_truth_file(tmp_path):
    frame = standing_frame().tolist()
    doc = {"video_id": "g", "walker_id": "A", "fps": 60, "frames": [frame, frame],
           "v": [[1] * 17, [2] * 16 + [0]], "scale": [None, 80.0]}
    path = tmp_path / "gt.json"
    path.write_text(json.dumps(doc))
    gts = load_ground_truth_file(path)
    assert len(gts) == 2 and gts[1].scale == 80.0 and gts[1].visibility[16] == 0
    assert gts[0].scale == pytest.approx(bbox_scale(np.array(frame)[:, :2], np.ones(17)))
