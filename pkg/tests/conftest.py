import numpy as np
import pytest

from poseflow.geometry import CameraIntrinsics, Pose, axis_angle_to_matrix
from poseflow.raster import make_cube


@pytest.fixture
def K():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0)


@pytest.fixture
def K256():
    return CameraIntrinsics(300.0, 300.0, 128.0, 128.0)


@pytest.fixture
def cube():
    return make_cube()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tilted_pose():
    return Pose(axis_angle_to_matrix([0.4, 0.5, 0.2]), [0.0, 0.0, 3.0])


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def textured_image(rng, h=64, w=64, channels=3, lo=0.05, hi=0.45):
    from scipy import ndimage

    shape = (h, w, channels) if channels > 1 else (h, w)
    sigma = (1.5, 1.5, 0) if channels > 1 else 1.5
    a = ndimage.gaussian_filter(rng.uniform(size=shape), sigma)
    a = (a - a.min()) / (a.max() - a.min())
    return lo + (hi - lo) * a


def toy_scene(seed=3, **overrides):
    """Small fixed self-training scene: 64x64 cube, start 8 degrees and ~0.15 m off."""
    from poseflow.selfsup import SelfSupConfig, make_sample

    K = CameraIntrinsics(80.0, 80.0, 32.0, 32.0)
    R = axis_angle_to_matrix([0.4, 0.5, 0.2])
    P_gt = Pose(R, [0.0, 0.0, 3.0])
    P0 = Pose(axis_angle_to_matrix([0, 0, np.radians(8)]) @ R, [0.12, -0.08, 3.2])
    cfg = SelfSupConfig(seed=seed, **overrides)
    return make_sample(make_cube(), K, 64, 64, P_gt, P0, cfg), cfg


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, title, ok, detail)`` then assert ``ok``."""

    def report(number, title, ok, detail=""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _CRITERIA[number] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
