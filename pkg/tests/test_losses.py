import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pose9d.errors import DimensionMismatch, EmptyAssignment, GradientSingularity
from pose9d.geometry import (
    BBox2D,
    CameraIntrinsics,
    Pose9D,
    SymmetrySpec,
    matrix_to_rot6d,
    project_cuboid_to_bbox,
    project_point,
    random_rotation,
)
from pose9d.heads import RawHeadOutput
from pose9d.losses import (
    TERMS,
    LossWeights,
    focal_loss,
    geodesic_loss,
    giou_loss,
    l1_loss,
    l2_loss,
    prediction_from_pose,
    total_loss,
)
from pose9d.scene_io import DEFAULT_INTRINSICS, GtInstance, PredInstance

from conftest import rot_axis, seeds

H = 1e-5


def central_diff(f, x, h=H):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)


def sigmoid(x):
    return 1 / (1 + np.exp(-x))


class TestFocal:
    def test_confident_correct(self):
        assert focal_loss([1 - 1e-9, 0.0], 0)[0] < 1e-12

    def test_reduces_to_cross_entropy(self):
        p = np.array([0.3, 0.8, 0.1])
        ce = -math.log(0.8) - math.log(0.7) - math.log(0.9)
        assert focal_loss(p, 1, alpha=0.5, gamma=0.0)[0] == pytest.approx(0.5 * ce, rel=1e-12)

    def test_no_object(self):
        p = np.array([0.2, 0.4])
        expected = sum(-0.75 * q**2 * math.log(1 - q) for q in p)
        assert focal_loss(p, None)[0] == pytest.approx(expected, rel=1e-12)

    @given(seeds, st.floats(0.0, 1.0), st.floats(0.0, 4.0))
    def test_gradient(self, seed, alpha, gamma):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-4, 4, 4)
        target = int(rng.integers(-1, 4))
        target = None if target < 0 else target
        _, g = focal_loss(sigmoid(x), target, alpha, gamma)
        fd = central_diff(lambda v: focal_loss(sigmoid(v), target, alpha, gamma)[0], x)
        assert rel_err(g, fd) < 1e-5


class TestRegression:
    def test_l1(self):
        assert l1_loss([1, 2], [1, 2])[0] == 0
        assert l1_loss([1, 2], [0, 0])[0] == 1.5

    def test_l2(self):
        assert l2_loss([2.0], [2.0])[0] == 0
        assert l2_loss([2.5], [2.0])[0] == 0.25

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            l1_loss([1, 2], [1, 2, 3])
        with pytest.raises(DimensionMismatch):
            l2_loss([1], [1, 2])

    @given(seeds)
    def test_l2_gradient(self, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=3), rng.normal(size=3)
        assert rel_err(l2_loss(x, y)[1], central_diff(lambda v: l2_loss(v, y)[0], x)) < 1e-6

    @given(seeds)
    def test_l1_subgradient_away_from_kinks(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=3)
        y = x + rng.choice([-1, 1], 3) * rng.uniform(0.01, 1, 3)
        assert rel_err(l1_loss(x, y)[1], central_diff(lambda v: l1_loss(v, y)[0], x)) < 1e-6


class TestGIoU:
    def test_identical(self):
        assert giou_loss(BBox2D(0.5, 0.5, 0.2, 0.3), BBox2D(0.5, 0.5, 0.2, 0.3))[0] == pytest.approx(0.0, abs=1e-15)

    def test_far_apart(self):
        v = giou_loss(BBox2D(0.01, 0.01, 0.001, 0.001), BBox2D(0.99, 0.99, 0.001, 0.001))[0]
        assert 1.99 < v < 2.0

    def test_half_width_offset(self):
        # unit boxes offset by half a width: IoU = 1/3, hull 1.5 = union, penalty 0
        a = np.array([0.5, 0.5, 1.0, 1.0])
        b = np.array([1.0, 0.5, 1.0, 1.0])
        assert giou_loss(a, b)[0] == pytest.approx(1 - 1 / 3, abs=1e-15)
        # diagonal offset adds a hull penalty
        c = np.array([1.0, 1.0, 1.0, 1.0])
        iou, union, hull = 0.25 / 1.75, 1.75, 2.25
        assert giou_loss(a, c)[0] == pytest.approx(1 - (iou - (hull - union) / hull), abs=1e-15)

    @given(seeds)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        a = np.r_[rng.uniform(0.2, 0.8, 2), rng.uniform(0.05, 0.5, 2)]
        b = np.r_[rng.uniform(0.2, 0.8, 2), rng.uniform(0.05, 0.5, 2)]
        ea = np.r_[a[:2] - a[2:] / 2, a[:2] + a[2:] / 2]
        eb = np.r_[b[:2] - b[2:] / 2, b[:2] + b[2:] / 2]
        # skip corner-touching configurations where the loss is not smooth
        gaps = np.abs(np.subtract.outer(ea[[0, 2]], eb[[0, 2]])).min(), np.abs(np.subtract.outer(ea[[1, 3]], eb[[1, 3]])).min()
        if min(gaps) < 1e-3:
            return
        _, g = giou_loss(a, b)
        assert rel_err(g, central_diff(lambda v: giou_loss(v, b)[0], a)) < 1e-4

    def test_non_negative(self, rng):
        for _ in range(200):
            a = np.r_[rng.uniform(0, 1, 2), rng.uniform(0.01, 1, 2)]
            b = np.r_[rng.uniform(0, 1, 2), rng.uniform(0.01, 1, 2)]
            assert 0 <= giou_loss(a, b)[0] < 2


class TestGeodesic:
    def test_zero(self, rng):
        R = random_rotation(rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GradientSingularity)
            assert geodesic_loss(matrix_to_rot6d(R), R)[0] < 1e-7

    def test_half_radian(self):
        assert geodesic_loss(matrix_to_rot6d(rot_axis([0, 0, 1], 0.5)), np.eye(3))[0] == pytest.approx(0.5, abs=1e-12)

    def test_singular_warns(self):
        with pytest.warns(GradientSingularity):
            v, g = geodesic_loss([1, 0, 0, 0, 1, 0], np.eye(3))
        assert v == 0 and not g.any()

    @given(seeds)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        r = rng.normal(size=6)
        G = random_rotation(rng)
        v, g = geodesic_loss(r, G)
        if v < 1e-2 or v > math.pi - 1e-2:
            return
        assert rel_err(g, central_diff(lambda x: geodesic_loss(x, G)[0], r)) < 1e-4

    @given(seeds)
    def test_symmetric_gradient(self, seed):
        rng = np.random.default_rng(seed)
        r = rng.normal(size=6)
        G = random_rotation(rng)
        for sym in (SymmetrySpec.continuous(), SymmetrySpec.discrete([np.diag([-1.0, -1.0, 1.0])])):
            v, g = geodesic_loss(r, G, sym)
            if v < 1e-2 or v > math.pi - 1e-2:
                continue
            fd = central_diff(lambda x: geodesic_loss(x, G, sym)[0], r)
            # discrete minimum switches branch on a measure-zero set
            if sym.kind == "discrete" and rel_err(g, fd) > 1e-4:
                other = geodesic_loss(r, G @ np.diag([-1.0, -1.0, 1.0]))[0]
                assert abs(other - v) < 1e-4
                continue
            assert rel_err(g, fd) < 1e-4

    @given(seeds, st.floats(-3, 3))
    def test_symmetry_never_increases(self, seed, theta):
        rng = np.random.default_rng(seed)
        r = rng.normal(size=6)
        G = random_rotation(rng) @ rot_axis([0, 1, 0], theta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GradientSingularity)
            assert geodesic_loss(r, G, SymmetrySpec.continuous())[0] <= geodesic_loss(r, G)[0] + 1e-12


CAM = DEFAULT_INTRINSICS


def make_gt(rng, cat="mug"):
    pose = Pose9D(random_rotation(rng), [rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(1.5, 3)], rng.uniform(0.1, 0.3, 3))
    return GtInstance(cat, pose, project_cuboid_to_bbox(pose, CAM))


def perfect_raw(gt, cls_idx, n_classes=2):
    return prediction_from_pose(PredInstance(gt.category, 1.0, gt.pose), cls_idx, n_classes, CAM, gt.box)


class TestTotalLoss:
    cats = ("bottle", "mug")

    def test_perfect_predictions(self, rng):
        gts = [make_gt(rng) for _ in range(3)]
        preds = [perfect_raw(g, 1) for g in gts]
        lb = total_loss([(0, 0), (1, 1), (2, 2)], preds, gts, CAM, categories=self.cats)
        for k in ("bbox", "iou", "center2d", "depth", "scale"):
            assert lb.terms[k] < 1e-12
        assert lb.terms["rot"] < 1e-6 and lb.terms["cls"] < 1e-6

    def test_unmatched_residual(self, rng):
        gts = [make_gt(rng)]
        preds = [perfect_raw(gts[0], 1), perfect_raw(make_gt(rng), 1)]
        w = LossWeights(1, 0, 0, 0, 0, 0, 0)
        lb = total_loss([(0, 0)], preds, gts, CAM, w, categories=self.cats)
        residual = focal_loss(preds[1].class_probs, None)[0]
        matched = focal_loss(preds[0].class_probs, 1)[0]
        assert lb.total == pytest.approx(matched + residual, rel=1e-12)
        assert lb.n_unmatched == 1

    def test_depth_isolation(self, rng):
        gt = make_gt(rng)
        raw = perfect_raw(gt, 1)
        shifted = RawHeadOutput(raw.class_logits, raw.box, raw.center_offset, raw.depth + 0.5,
                                raw.rot6d_per_class, raw.scale_per_class)
        w = LossWeights(0, 0, 0, 0, 1, 0, 0)
        assert total_loss([(0, 0)], [shifted], [gt], CAM, w, categories=self.cats).total == pytest.approx(0.25)

    def test_manual_recomputation_and_linearity(self, rng):
        gts = [make_gt(rng, "bottle"), make_gt(rng, "mug")]
        preds = [perfect_raw(make_gt(rng), k) for k in (0, 1, 1)]
        w = LossWeights(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0)
        pairs = [(0, 0), (2, 1)]
        lb = total_loss(pairs, preds, gts, CAM, w, categories=self.cats)
        assert lb.total == pytest.approx(sum(lb.weighted().values()), rel=1e-12)
        for term in TERMS:
            doubled = LossWeights(**{**w.to_dict(), f"w_{term}": 2 * w.weight(term)})
            lb2 = total_loss(pairs, preds, gts, CAM, doubled, categories=self.cats)
            assert lb2.weighted()[term] == 2 * lb.weighted()[term]
            assert lb2.total - lb.total == pytest.approx(lb.weighted()[term], rel=1e-9, abs=1e-12)
        # manual terms for the first pair
        p, g = preds[0], gts[0]
        u, z = project_point(g.pose.translation, CAM)
        assert lb.terms["depth"] == pytest.approx(((p.depth - z) ** 2 + (preds[2].depth - project_point(gts[1].pose.translation, CAM)[1]) ** 2) / 2)

    def test_gt_class_slice_supervised(self, rng):
        gt = make_gt(rng, "bottle")
        raw = perfect_raw(gt, 0)
        rows = raw.rot6d_per_class.copy()
        rows[1] = matrix_to_rot6d(rot_axis([1, 0, 0], 1.0) @ gt.pose.rotation)
        # argmax class is 1 but the GT class row (0) is correct
        logits = np.array([-1.0, 3.0])
        r2 = RawHeadOutput(logits, raw.box, raw.center_offset, raw.depth, rows, raw.scale_per_class)
        assert total_loss([(0, 0)], [r2], [gt], CAM, categories=self.cats).terms["rot"] < 1e-6

    def test_empty(self):
        with pytest.raises(EmptyAssignment):
            total_loss([], [], [], CAM)

    def test_all_terms_non_negative(self, rng):
        for _ in range(20):
            gts = [make_gt(rng)]
            preds = [perfect_raw(make_gt(rng), 1)]
            lb = total_loss([(0, 0)], preds, gts, CAM, categories=self.cats)
            assert all(v >= 0 for v in lb.terms.values())
