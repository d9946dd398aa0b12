"""Training-loss terms with analytic gradients.

Every term returns ``(value, gradient)``; gradients are with respect to the
prediction-side parameters (logits for focal loss, ``(cx, cy, w, h)`` of the
predicted box for GIoU, the six raw 6D numbers for the geodesic loss).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyAssignment, GradientSingularity
from .geometry import (
    CameraIntrinsics,
    SymmetrySpec,
    matrix_to_rot6d,
    project_point,
    recover_center,
    rot6d_to_matrix,
)

_PROB_CLAMP = 1e-7
_SINGULAR_EPS = 1e-4

TERMS = ("cls", "bbox", "iou", "center2d", "depth", "rot", "scale")


@dataclass(frozen=True)
class LossWeights:
    w_cls: float = 2.0
    w_bbox: float = 5.0
    w_iou: float = 2.0
    w_center2d: float = 5.0
    w_depth: float = 50.0
    w_rot: float = 5.0
    w_scale: float = 5.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be finite and >= 0, got {v!r}")

    def weight(self, term: str) -> float:
        return getattr(self, f"w_{term}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LossBreakdown:
    terms: dict
    weights: LossWeights
    total: float
    n_pairs: int
    n_unmatched: int
    grads: dict = field(default_factory=dict)

    def weighted(self) -> dict:
        return {k: self.weights.weight(k) * v for k, v in self.terms.items()}


# --------------------------------------------------------------------------
# Individual terms


def focal_loss(probs, target: int | None, alpha: float = 0.25, gamma: float = 2.0):
    """Sigmoid focal loss summed over classes.

    ``target=None`` means "no object": every class is a negative. The
    gradient is taken with respect to the logits ``x`` with ``p = sigmoid(x)``.
    """
    p = np.clip(np.asarray(probs, dtype=np.float64).reshape(-1), _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    y = np.zeros_like(p)
    if target is not None:
        y[int(target)] = 1.0
    log_p, log_q = np.log(p), np.log1p(-p)
    q = 1.0 - p
    pos = -alpha * q**gamma * log_p
    neg = -(1.0 - alpha) * p**gamma * log_q
    loss = float(np.sum(y * pos + (1.0 - y) * neg))
    # dp/dx = p q folded into each branch to avoid 0 * inf at gamma < 1
    d_pos = alpha * (gamma * q**gamma * p * log_p - q ** (gamma + 1))
    d_neg = (1.0 - alpha) * (p ** (gamma + 1) - gamma * p**gamma * q * log_q)
    grad = y * d_pos + (1.0 - y) * d_neg
    return loss, grad


def _check_dims(pred, gt):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction has {pred.size} values, target has {gt.size}")
    return pred, gt


def l1_loss(pred, gt):
    """Mean absolute error and its subgradient ``sign(pred - gt) / n``."""
    pred, gt = _check_dims(pred, gt)
    diff = pred - gt
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def l2_loss(pred, gt):
    pred, gt = _check_dims(pred, gt)
    diff = pred - gt
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def giou_loss(a, b):
    """``1 - GIoU(a, b)`` for center-size boxes; gradient w.r.t. ``a``."""
    a = np.asarray(getattr(a, "as_array", lambda: a)(), dtype=np.float64)
    b = np.asarray(getattr(b, "as_array", lambda: b)(), dtype=np.float64)
    ax0, ax1 = a[0] - 0.5 * a[2], a[0] + 0.5 * a[2]
    ay0, ay1 = a[1] - 0.5 * a[3], a[1] + 0.5 * a[3]
    bx0, bx1 = b[0] - 0.5 * b[2], b[0] + 0.5 * b[2]
    by0, by1 = b[1] - 0.5 * b[3], b[1] + 0.5 * b[3]

    iw_raw = min(ax1, bx1) - max(ax0, bx0)
    ih_raw = min(ay1, by1) - max(ay0, by0)
    iw, ih = max(iw_raw, 0.0), max(ih_raw, 0.0)
    inter = iw * ih
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    union = area_a + area_b - inter
    cw = max(ax1, bx1) - min(ax0, bx0)
    ch = max(ay1, by1) - min(ay0, by0)
    hull = cw * ch
    loss = 2.0 - inter / union - union / hull

    # derivatives w.r.t. the corner coordinates (x0, x1, y0, y1) of a
    d_iw = np.array([-float(ax0 > bx0), float(ax1 < bx1), 0.0, 0.0]) if iw_raw > 0 else np.zeros(4)
    d_ih = np.array([0.0, 0.0, -float(ay0 > by0), float(ay1 < by1)]) if ih_raw > 0 else np.zeros(4)
    d_inter = d_iw * ih + d_ih * iw
    h_a, w_a = ay1 - ay0, ax1 - ax0
    d_area = np.array([-h_a, h_a, -w_a, w_a])
    d_union = d_area - d_inter
    d_cw = np.array([-float(ax0 < bx0), float(ax1 > bx1), 0.0, 0.0])
    d_ch = np.array([0.0, 0.0, -float(ay0 < by0), float(ay1 > by1)])
    d_hull = d_cw * ch + d_ch * cw
    d_iou = (d_inter * union - inter * d_union) / union**2
    d_ratio = (d_union * hull - union * d_hull) / hull**2
    g = -(d_iou + d_ratio)
    gx0, gx1, gy0, gy1 = g
    grad = np.array([gx0 + gx1, gy0 + gy1, 0.5 * (gx1 - gx0), 0.5 * (gy1 - gy0)])
    return float(loss), grad


def _normalize_backward(x, g):
    n = np.linalg.norm(x)
    y = x / n
    return (g - y * (y @ g)) / n


def _rot6d_backward(r, dR):
    """Chain ``dL/dR`` back through Gram-Schmidt to the raw 6D input."""
    a1, a2 = r[:3], r[3:]
    b1 = a1 / np.linalg.norm(a1)
    u = a2 - (b1 @ a2) * b1
    b2 = u / np.linalg.norm(u)
    g1, g2, g3 = dR[:, 0].copy(), dR[:, 1].copy(), dR[:, 2]
    # b3 = b1 x b2
    g1 += np.cross(b2, g3)
    g2 += np.cross(g3, b1)
    g_u = _normalize_backward(u, g2)
    g_a2 = g_u - b1 * (b1 @ g_u)
    g1 += -((b1 @ a2) * g_u + a2 * (b1 @ g_u))
    g_a1 = _normalize_backward(a1, g1)
    return np.concatenate([g_a1, g_a2])


def geodesic_loss(pred6d, gt_rotation, sym: SymmetrySpec | None = None):
    """Geodesic angle between ``rot6d_to_matrix(pred6d)`` and ``gt_rotation``.

    With a SymmetrySpec the angle is taken modulo the symmetry (axis angle
    for continuous symmetry, best group element for discrete). Near 0 or pi
    the gradient is returned as zeros with a :class:`GradientSingularity`
    warning.
    """
    r = np.asarray(pred6d, dtype=np.float64).reshape(6)
    G = np.asarray(gt_rotation, dtype=np.float64)
    R = rot6d_to_matrix(r)
    if sym is not None and sym.kind == "continuous":
        e = sym.axis_array()
        c = float((R @ e) @ (G @ e))
        dc = np.outer(G @ e, e)
    else:
        mats = sym.rotation_set() if sym is not None and sym.kind == "discrete" else [np.eye(3)]
        best = None
        for S in mats:
            # trace((R S)^T G) = <R, G S^T>
            W = G @ S.T
            c_k = (float(np.sum(R * W)) - 1.0) * 0.5
            if best is None or c_k > best[0]:
                best = (c_k, W)
        c, W = best
        dc = 0.5 * W
    c_clamped = min(1.0, max(-1.0, c))
    theta = math.acos(c_clamped)
    if theta < _SINGULAR_EPS or theta > math.pi - _SINGULAR_EPS:
        warnings.warn(
            f"geodesic gradient undefined at theta={theta:.3g}", GradientSingularity, stacklevel=2
        )
        return theta, np.zeros(6)
    dR = -dc / math.sqrt(1.0 - c_clamped * c_clamped)
    return theta, _rot6d_backward(r, dR)


# --------------------------------------------------------------------------
# Total loss


def total_loss(
    pairs: Sequence[tuple[int, int]],
    predictions: Sequence,
    ground_truths: Sequence,
    cam: CameraIntrinsics,
    w: LossWeights = LossWeights(),
    categories: Sequence[str] | None = None,
    rot_symmetry: dict | None = None,
    alpha: float = 0.25,
    gamma: float = 2.0,
) -> LossBreakdown:
    """Weighted sum of all terms averaged over matched pairs.

    ``predictions`` are :class:`~pose9d.heads.RawHeadOutput`; ground truths
    are :class:`~pose9d.scene_io.GtInstance` with a box. Unmatched
    predictions contribute only focal loss toward "no object". Class-wise
    rotation and scale are supervised on the ground-truth class row.
    ``rot_symmetry`` maps category names to a symmetry used by the rotation
    term (off unless given).
    """
    if not pairs:
        raise EmptyAssignment("total_loss needs at least one matched pair")
    cats = list(categories) if categories is not None else None
    sums = dict.fromkeys(TERMS, 0.0)
    matched = set()
    for i, j in pairs:
        pred, gt = predictions[i], ground_truths[j]
        matched.add(i)
        cls_idx = cats.index(gt.category) if cats is not None else int(gt.category)
        if gt.box is None:
            raise ValueError(f"ground truth {j} has no 2D box; run derive_boxes first")
        u_gt, z_gt = project_point(gt.pose.translation, cam)
        u_pred = recover_center(pred.box, pred.center_offset)
        sym = (rot_symmetry or {}).get(gt.category)

        sums["cls"] += focal_loss(pred.class_probs, cls_idx, alpha, gamma)[0]
        sums["bbox"] += l1_loss(pred.box.as_array(), gt.box.as_array())[0]
        sums["iou"] += giou_loss(pred.box, gt.box)[0]
        sums["center2d"] += l1_loss(u_pred, u_gt)[0]
        sums["depth"] += l2_loss([pred.depth], [z_gt])[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GradientSingularity)
            sums["rot"] += geodesic_loss(pred.rot6d_per_class[cls_idx], gt.pose.rotation, sym)[0]
        sums["scale"] += l2_loss(pred.scale_per_class[cls_idx], gt.pose.scale)[0]

    unmatched = [i for i in range(len(predictions)) if i not in matched]
    for i in unmatched:
        sums["cls"] += focal_loss(predictions[i].class_probs, None, alpha, gamma)[0]

    n = len(pairs)
    terms = {k: v / n for k, v in sums.items()}
    total = 0.0
    for k in TERMS:
        total += w.weight(k) * terms[k]
    return LossBreakdown(terms, w, total, n, len(unmatched))


def prediction_from_pose(pred, category_index: int, n_classes: int, cam: CameraIntrinsics, box=None):
    """Wrap a finished 9D prediction as raw head output, for loss reporting.

    The class vector is ``confidence`` on the predicted class and zero
    elsewhere; every class row carries the same rotation and scale.
    """
    from .heads import RawHeadOutput

    probs = np.zeros(n_classes)
    probs[category_index] = pred.confidence
    box = box if box is not None else pred.box
    u, z = project_point(pred.pose.translation, cam)
    logits = np.log(np.clip(probs, _PROB_CLAMP, 1 - _PROB_CLAMP)) - np.log1p(
        -np.clip(probs, _PROB_CLAMP, 1 - _PROB_CLAMP)
    )
    return RawHeadOutput(
        class_logits=logits,
        box=box,
        center_offset=u - box.center,
        depth=z,
        rot6d_per_class=np.tile(matrix_to_rot6d(pred.pose.rotation), (n_classes, 1)),
        scale_per_class=np.tile(pred.pose.scale, (n_classes, 1)),
    )
