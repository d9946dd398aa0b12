import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pose9d.errors import BehindCamera, DegenerateInput, NonPositiveDepth, OutOfFrame
from pose9d.geometry import (
    BBox2D,
    CameraIntrinsics,
    Pose9D,
    SymmetrySpec,
    backproject,
    cuboid_corners,
    geodesic_distance,
    is_rotation,
    matrix_to_rot6d,
    project_cuboid_to_bbox,
    project_point,
    random_rotation,
    recover_center,
    rot6d_to_matrix,
    symmetry_aware_rot_distance,
)

from conftest import CAM_640, rot_axis, rotation_from_seed, seeds

finite = st.floats(-10, 10, allow_nan=False)


class TestRot6D:
    def test_identity(self):
        assert np.allclose(rot6d_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3), atol=0)

    def test_scaled_and_sheared(self):
        assert np.allclose(rot6d_to_matrix([2, 0, 0, 1, 1, 0]), np.eye(3), atol=1e-15)

    def test_to_6d_identity(self):
        assert np.array_equal(matrix_to_rot6d(np.eye(3)), [1, 0, 0, 0, 1, 0])

    def test_to_6d_z90(self):
        r = matrix_to_rot6d(rot_axis([0, 0, 1], math.pi / 2))
        assert np.allclose(r, [0, 1, 0, -1, 0, 0], atol=1e-15)

    def test_round_trip_1000(self, rng):
        for _ in range(1000):
            R = random_rotation(rng)
            assert np.abs(rot6d_to_matrix(matrix_to_rot6d(R)) - R).max() < 1e-9

    @pytest.mark.parametrize(
        "r", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 2, 0, 0], [1, 1, 1, -3, -3, -3], [0, 0, 0, 0, 0, 0]]
    )
    def test_degenerate(self, r):
        with pytest.raises(DegenerateInput):
            rot6d_to_matrix(r)

    @given(hnp.arrays(np.float64, 6, elements=finite))
    def test_output_is_rotation(self, r):
        a1, a2 = r[:3], r[3:]
        n1 = np.linalg.norm(a1)
        if n1 < 1e-3 or np.linalg.norm(a2 - (a1 @ a2) / n1**2 * a1) < 1e-3:
            return
        R = rot6d_to_matrix(r)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(R) - 1) < 1e-9

    def test_output_is_rotation_fuzz(self, rng):
        r = rng.standard_normal((100_000, 6))
        for v in r[:: 97]:
            assert is_rotation(rot6d_to_matrix(v))

    @given(seeds, st.floats(0.01, 100), st.floats(-50, 50))
    def test_gram_schmidt_invariance(self, seed, k, c):
        v = np.random.default_rng(seed).standard_normal(6)
        a1, a2 = v[:3], v[3:]
        base = rot6d_to_matrix(v)
        moved = rot6d_to_matrix(np.concatenate([k * a1, a2 + c * a1]))
        assert np.abs(base - moved).max() < 1e-9


class TestGeodesic:
    @given(seeds)
    def test_self_zero(self, seed):
        R = rotation_from_seed(seed)
        assert geodesic_distance(R, R) < 1e-7

    @pytest.mark.parametrize("axis", [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 2, -3]])
    def test_antipodal(self, axis):
        assert geodesic_distance(np.eye(3), rot_axis(axis, math.pi)) == pytest.approx(math.pi, abs=1e-7)

    def test_known_angle(self):
        assert geodesic_distance(np.eye(3), rot_axis([0, 0, 1], 0.3)) == pytest.approx(0.3, abs=1e-12)

    def test_metric_axioms(self, rng):
        for _ in range(10_000):
            a, b, c = (random_rotation(rng) for _ in range(3))
            ab, bc, ac = geodesic_distance(a, b), geodesic_distance(b, c), geodesic_distance(a, c)
            assert ab == geodesic_distance(b, a)
            assert ac <= ab + bc + 1e-9

    @given(seeds)
    def test_right_invariance(self, seed):
        rng = np.random.default_rng(seed)
        R, R2, Q = (random_rotation(rng) for _ in range(3))
        assert abs(geodesic_distance(R @ Q, R2 @ Q) - geodesic_distance(R, R2)) < 1e-9

    def test_clamped_argument(self):
        # trace slightly above 3 must not produce NaN
        R = np.eye(3) * (1 + 1e-15)
        assert geodesic_distance(R, np.eye(3)) == 0.0


class TestSymmetryDistance:
    @given(seeds, st.floats(-math.pi, math.pi))
    def test_continuous_invariance(self, seed, theta):
        R = rotation_from_seed(seed)
        d = symmetry_aware_rot_distance(R, R @ rot_axis([0, 1, 0], theta), SymmetrySpec.continuous())
        assert d < 1e-6

    @given(seeds, seeds)
    def test_none_equals_geodesic(self, s1, s2):
        Ra, Rb = rotation_from_seed(s1), rotation_from_seed(s2)
        assert symmetry_aware_rot_distance(Ra, Rb, SymmetrySpec.none()) == geodesic_distance(Ra, Rb)
        assert symmetry_aware_rot_distance(Ra, Rb, None) == geodesic_distance(Ra, Rb)

    def test_discrete_two_fold(self, rng):
        sym = SymmetrySpec.discrete([np.diag([-1.0, -1.0, 1.0])])
        R = random_rotation(rng)
        assert symmetry_aware_rot_distance(R, R @ np.diag([-1.0, -1.0, 1.0]), sym) < 1e-7

    @given(seeds, seeds)
    def test_bounded_by_geodesic(self, s1, s2):
        Ra, Rb = rotation_from_seed(s1), rotation_from_seed(s2)
        g = geodesic_distance(Ra, Rb)
        four = SymmetrySpec.discrete([rot_axis([0, 0, 1], k * math.pi / 2) for k in range(1, 4)])
        for sym in (SymmetrySpec.continuous(), SymmetrySpec.continuous([1, 1, 0]), four):
            assert symmetry_aware_rot_distance(Ra, Rb, sym) <= g + 1e-7


class TestCamera:
    def test_recover_center_zero(self):
        assert np.array_equal(recover_center(BBox2D(0.5, 0.5, 0.2, 0.2), [0, 0]), [0.5, 0.5])

    def test_recover_center_offset(self):
        u = recover_center(BBox2D(0.3, 0.4, 0.2, 0.2), [0.05, -0.1])
        assert np.allclose(u, [0.35, 0.30], atol=1e-15)

    def test_recover_center_clamped(self):
        assert np.array_equal(recover_center(BBox2D(0.98, 0.5, 0.02, 0.2), [0.1, 0]), [1.0, 0.5])

    def test_backproject_principal_point(self):
        cam = CAM_640
        t = backproject([cam.cx / cam.width, cam.cy / cam.height], 2.0, cam)
        assert np.allclose(t, [0, 0, 2.0], atol=0)

    def test_backproject_hand_computed(self):
        assert np.allclose(backproject([0.75, 0.5], 1.0, CAM_640), [0.32, 0, 1.0], atol=1e-15)

    def test_project_hand_computed(self):
        u, z = project_point([0.32, 0, 1.0], CAM_640)
        assert np.allclose(u, [0.75, 0.5], atol=1e-15) and z == 1.0
        u, z = project_point([0, 0, 2], CAM_640)
        assert np.allclose(u, [0.5, 0.5]) and z == 2.0

    @pytest.mark.parametrize("z", [0.0, -1.0])
    def test_nonpositive_depth(self, z):
        with pytest.raises(NonPositiveDepth):
            backproject([0.5, 0.5], z, CAM_640)
        with pytest.raises(NonPositiveDepth):
            project_point([0.1, 0.1, z], CAM_640)

    @given(
        st.floats(0, 1), st.floats(0, 1), st.floats(0.1, 100),
        st.floats(100, 2000), st.floats(100, 2000),
    )
    def test_mutual_inverse(self, ux, uy, z, fx, fy):
        cam = CameraIntrinsics(fx, fy, 321.3, 239.7, 640, 480)
        u, z2 = project_point(backproject([ux, uy], z, cam), cam)
        assert np.abs(u - [ux, uy]).max() < 1e-9 and abs(z2 - z) < 1e-9

    def test_bad_intrinsics(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0, 1, 0, 0, 10, 10)


class TestCuboid:
    def test_unit_corners(self):
        c = cuboid_corners(Pose9D(np.eye(3), np.zeros(3), np.ones(3)))
        assert set(map(tuple, c)) == {(x, y, z) for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)}

    def test_translated_corners(self):
        c = cuboid_corners(Pose9D(np.eye(3), [1, 2, 3], [2, 2, 2]))
        assert set(map(tuple, c)) == {(x, y, z) for x in (0, 2) for y in (1, 3) for z in (2, 4)}

    def test_projected_box_brute_force(self):
        cam = CameraIntrinsics(400, 400, 320, 320, 640, 640)
        box = project_cuboid_to_bbox(Pose9D(np.eye(3), [0, 0, 4], np.ones(3)), cam)
        # nearest face at z = 3.5 gives the extremal projections
        half = 400 * 0.5 / 3.5
        assert box.w * 640 == pytest.approx(2 * half, abs=1e-9)
        assert box.h * 640 == pytest.approx(2 * half, abs=1e-9)
        assert (box.cx, box.cy) == pytest.approx((0.5, 0.5), abs=1e-12)

    def test_projected_box_matches_corner_oracle(self, rng):
        cam = CameraIntrinsics(591.0, 590.0, 322.5, 244.1, 640, 480)
        for _ in range(200):
            pose = Pose9D(random_rotation(rng), [rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(2, 5)], rng.uniform(0.1, 0.5, 3))
            box = project_cuboid_to_bbox(pose, cam)
            c = cuboid_corners(pose)
            px = (cam.fx * c[:, 0] / c[:, 2] + cam.cx) / cam.width
            py = (cam.fy * c[:, 1] / c[:, 2] + cam.cy) / cam.height
            x0, x1 = np.clip([px.min(), px.max()], 0, 1)
            y0, y1 = np.clip([py.min(), py.max()], 0, 1)
            assert np.allclose(box.as_array(), [(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0], atol=1e-12)

    def test_partially_outside_is_clipped(self):
        cam = CameraIntrinsics(400, 400, 320, 320, 640, 640)
        box = project_cuboid_to_bbox(Pose9D(np.eye(3), [2.5, 0, 4], np.ones(3)), cam)
        assert box.cx + box.w / 2 == pytest.approx(1.0)
        assert 0 <= box.cx - box.w / 2 < 1

    def test_behind_camera(self):
        with pytest.raises(BehindCamera):
            project_cuboid_to_bbox(Pose9D(np.eye(3), [0, 0, 0.2], np.ones(3)), CAM_640)

    def test_out_of_frame(self):
        with pytest.raises(OutOfFrame):
            project_cuboid_to_bbox(Pose9D(np.eye(3), [50, 0, 4], np.ones(3)), CAM_640)


class TestTypes:
    def test_pose_is_read_only(self):
        p = Pose9D(np.eye(3), np.zeros(3), np.ones(3))
        with pytest.raises(ValueError):
            p.translation[0] = 1.0

    def test_pose_validation(self):
        with pytest.raises(ValueError):
            Pose9D(np.eye(3), np.zeros(3), [1, 1, -1])
        with pytest.raises(ValueError):
            Pose9D(np.diag([1.0, 1.0, -1.0]), np.zeros(3), np.ones(3))

    @pytest.mark.parametrize("args", [(1.2, 0.5, 0.1, 0.1), (0.5, 0.5, 0.0, 0.1), (0.5, 0.5, 0.1, 1.5)])
    def test_box_validation(self, args):
        with pytest.raises(ValueError):
            BBox2D(*args)

    def test_symmetry_dict_round_trip(self):
        for s in (SymmetrySpec.none(), SymmetrySpec.continuous([0, 2, 0]),
                  SymmetrySpec.discrete([np.diag([-1.0, -1.0, 1.0])])):
            assert SymmetrySpec.from_dict(s.to_dict()) == s

    def test_uniform_rotation_sampling(self, rng):
        mean = sum(random_rotation(rng) for _ in range(100_000)) / 100_000
        assert np.abs(mean).max() < 0.05
