import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from racewalk.gait_cycle import (
    CATEGORIES,
    CHANNELS,
    N_FEATURES,
    ChannelMatrix,
    CycleWindow,
    FeatureVector,
    LayoutMismatchError,
    NoCycleError,
    ProcessedCycle,
    assemble_features,
    category_mask,
    channel_matrix,
    detect_cycle,
    feature_category,
    feature_index,
    read_cycles_csv,
    resample,
    unflatten,
    write_cycles_csv,
)
from racewalk.pose_data import FaultLabel


def test_cosine_window():
    t = np.arange(120)
    theta = 140 + 40 * np.cos(2 * np.pi * t / 60)
    assert detect_cycle(theta) == CycleWindow(30, 90)


def test_monotone_has_no_cycle():
    with pytest.raises(NoCycleError, match="no full cycle"):
        detect_cycle(np.linspace(180, 100, 120))


def test_too_short_has_no_cycle():
    with pytest.raises(NoCycleError, match="no full cycle"):
        detect_cycle(np.full(20, 170.0))


def test_deeper_first_trough_starts_window():
    t = np.arange(150)
    theta = 170 - 50 * np.exp(-((t - 30) ** 2) / 40) - 40 * np.exp(-((t - 90) ** 2) / 40)
    assert detect_cycle(theta) == CycleWindow(30, 90)


def test_deepest_last_minimum_falls_back():
    t = np.arange(150)
    theta = 170 - 30 * np.exp(-((t - 30) ** 2) / 40) - 40 * np.exp(-((t - 70) ** 2) / 40) \
        - 60 * np.exp(-((t - 120) ** 2) / 40)
    assert detect_cycle(theta) == CycleWindow(70, 120)


@given(st.floats(-500, 500))
def test_detect_cycle_offset_invariant(c):
    t = np.arange(130)
    theta = 150 + 35 * np.cos(2 * np.pi * (t - 7) / 55) + 3 * np.sin(2 * np.pi * t / 13)
    assert detect_cycle(theta + c) == detect_cycle(theta)


def test_resample_examples():
    x = np.random.default_rng(0).normal(size=85)
    np.testing.assert_array_equal(resample(x), x)
    np.testing.assert_allclose(resample([0.0, 1.0], 3), [0, 0.5, 1])
    with pytest.raises(ValueError):
        resample([1.0])


@given(st.integers(2, 400), st.floats(-100, 100), st.floats(-100, 100))
def test_resample_affine_exact(m, a, b):
    t = np.arange(m, dtype=float)
    out = resample(a * t + b)
    pos = np.linspace(0, m - 1, 85)
    np.testing.assert_allclose(out, a * pos + b, rtol=0, atol=1e-9 * max(1.0, abs(a) * m, abs(b)))
    assert out[0] == b and out[-1] == a * (m - 1) + b


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200), st.floats(-10, 10), st.floats(-10, 10))
def test_resample_commutes_with_affine_maps(values, a, b):
    s = np.array(values)
    np.testing.assert_allclose(resample(a * s + b), a * resample(s) + b, atol=1e-8)


def test_resample_columns_independent():
    s = np.random.default_rng(1).normal(size=(40, 3))
    out = resample(s)
    for j in range(3):
        np.testing.assert_allclose(out[:, j], resample(s[:, j]))


def test_layout_arithmetic():
    assert len(CHANNELS) == 18 and N_FEATURES == 1530
    assert feature_index(17, 84) == 1529
    assert CHANNELS[17] == "r_knee_angle"
    m = np.zeros((18, 85))
    m[17, 84] = 7.0
    fv = assemble_features(ChannelMatrix(m))
    assert fv.values[1529] == 7.0 and np.count_nonzero(fv.values) == 1
    assert np.all(assemble_features(ChannelMatrix(np.zeros((18, 85)))).values == 0)


@given(st.integers(0, 17), st.integers(0, 84))
def test_index_category_consistent(c, f):
    i = feature_index(c, f)
    assert i == 85 * c + f
    cat = feature_category(i)
    assert category_mask(cat)[i]
    assert cat in CHANNELS[c].replace("_", "-") or cat == "knee-angle"


def test_categories_partition_features():
    masks = np.stack([category_mask(c) for c in CATEGORIES])
    assert masks.shape == (9, 1530)
    assert np.all(masks.sum(axis=0) == 1)
    assert masks[CATEGORIES.index("knee-angle")].sum() == 2 * 85
    assert masks[CATEGORIES.index("shank-y")].sum() == 2 * 85


def test_unflatten_bijection():
    m = ChannelMatrix(np.random.default_rng(2).normal(size=(18, 85)))
    assert unflatten(assemble_features(m)) == m
    with pytest.raises(LayoutMismatchError):
        unflatten(FeatureVector(np.zeros(1530), "v0"))
    with pytest.raises(LayoutMismatchError):
        FeatureVector(np.zeros(1529))


def test_channel_matrix_cuts_window():
    T = 50
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(T, 19, 2))
    left, right = rng.normal(size=T), rng.normal(size=T)
    w = CycleWindow(5, 5 + 84)
    with pytest.raises(ValueError, match="window ends"):
        channel_matrix(pts, left, right, w)
    pts = rng.normal(size=(100, 19, 2))
    left, right = rng.normal(size=100), rng.normal(size=100)
    m = channel_matrix(pts, left, right, w)
    np.testing.assert_array_equal(m.channel("r_knee_angle"), right[5:90])
    np.testing.assert_array_equal(m.channel("l_knee_y"), pts[5:90, 13, 1])
    np.testing.assert_array_equal(m.channel("r_shank_x"), pts[5:90, 18, 0])


def test_cycles_csv_round_trip_bit_exact():
    rng = np.random.default_rng(4)
    cycles = [
        ProcessedCycle(f"v{i}", "A", FaultLabel.BK, ChannelMatrix(rng.normal(size=(18, 85)) * 10 ** rng.integers(-5, 5)))
        for i in range(3)
    ]
    buf = io.StringIO()
    write_cycles_csv(cycles, buf)
    buf.seek(0)
    assert read_cycles_csv(buf) == cycles
    header = buf.getvalue().splitlines()[0].split(",")
    assert header[:4] == ["video_id", "walker_id", "label", "c0_f0"] and header[-1] == "c17_f84"
