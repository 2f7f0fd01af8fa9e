import numpy as np
import pytest

from racewalk.pose_data import N_KEYPOINTS, KeypointName as K, PoseSequence

# acceptance results collected by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def standing_frame(nose=(100.0, 50.0), scale=100.0) -> np.ndarray:
    """One (17, 3) frame of an upright figure, pixels with y down."""
    nx, ny = nose
    f = np.zeros((N_KEYPOINTS, 3))
    f[:, 2] = 1.0
    offsets = {
        K.NOSE: (0, 0), K.L_EYE: (-3, -4), K.R_EYE: (3, -4), K.L_EAR: (-8, -2), K.R_EAR: (8, -2),
        K.L_SHOULDER: (-15, 30), K.R_SHOULDER: (15, 30), K.L_ELBOW: (-18, 60), K.R_ELBOW: (18, 60),
        K.L_WRIST: (-20, 90), K.R_WRIST: (20, 90), K.L_HIP: (-5, 100), K.R_HIP: (5, 100),
        K.L_KNEE: (-5, 170), K.R_KNEE: (5, 170), K.L_ANKLE: (-5, 240), K.R_ANKLE: (5, 240),
    }
    for name, (dx, dy) in offsets.items():
        f[name, :2] = (nx + dx * scale / 100.0, ny + dy * scale / 100.0)
    return f


def walking_sequence(n=5, step=4.0, video_id="v", walker_id="W") -> PoseSequence:
    frames = [standing_frame(nose=(100.0 + step * i, 50.0)) for i in range(n)]
    return PoseSequence(video_id, walker_id, 60.0, np.stack(frames))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
