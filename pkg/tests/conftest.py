import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from pose9d.geometry import CameraIntrinsics, Pose9D, random_rotation

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# intrinsics used in several hand-computed examples
CAM_640 = CameraIntrinsics(500.0, 500.0, 320.0, 320.0, 640.0, 640.0)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def rotation_from_seed(seed: int) -> np.ndarray:
    return random_rotation(np.random.default_rng(seed))


def random_pose(rng, center_scale=1.0, size=(0.2, 2.0)) -> Pose9D:
    return Pose9D(
        random_rotation(rng),
        center_scale * rng.standard_normal(3),
        rng.uniform(*size, size=3),
    )


def rot_axis(axis, angle):
    from pose9d.geometry import axis_angle_to_matrix

    return axis_angle_to_matrix(np.asarray(axis, dtype=float), angle)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile the IoU kernels once so timing-sensitive tests measure steady state
    from pose9d.geometry import SymmetrySpec
    from pose9d.iou3d import iou_3d, iou_3d_symmetric, pairwise_iou

    a = Pose9D(np.eye(3), np.zeros(3), np.ones(3))
    iou_3d(a, a)
    iou_3d_symmetric(a, a, SymmetrySpec.continuous())
    pairwise_iou([a], [a], [SymmetrySpec.continuous()])
