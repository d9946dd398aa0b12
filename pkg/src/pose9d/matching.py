"""Composite 2D + 3D matching cost and one-to-one assignment.

The pairwise cost is

    C = l_cls*C_cls + l_bbox*C_bbox + l_iou*C_iou + l_trans*C_trans + l_rot*C_rot

with a focal-style classification cost, L1 box distance, negative
generalized IoU, metric translation distance and (symmetry-aware)
geodesic rotation distance. Weights apply to raw units.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InfeasibleMatrix, TooLarge
from .geometry import BBox2D, Pose9D, SymmetrySpec, symmetry_aware_rot_distance

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
_COST_EPS = 1e-8

BRUTE_FORCE_MAX_COLS = 8
_BRUTE_FORCE_MAX_INJECTIONS = 5_000_000


@dataclass(frozen=True)
class CostWeights:
    lambda_cls: float = 2.0
    lambda_bbox: float = 5.0
    lambda_iou: float = 2.0
    lambda_trans: float = 5.0
    lambda_rot: float = 2.0

    def __post_init__(self):
        values = [getattr(self, f.name) for f in fields(self)]
        if any(not (math.isfinite(v) and v >= 0) for v in values):
            raise ValueError(f"cost weights must be finite and >= 0: {values}")
        if not any(v > 0 for v in values):
            raise ValueError("at least one cost weight must be positive")

    def scaled(self, k: float) -> "CostWeights":
        return CostWeights(*(k * getattr(self, f.name) for f in fields(self)))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class MatchCandidate:
    """A prediction as seen by the matcher."""

    class_probs: np.ndarray
    box: BBox2D
    pose: Pose9D

    def __post_init__(self):
        probs = np.asarray(self.class_probs, dtype=np.float64).reshape(-1)
        if np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("class probabilities must lie in [0, 1]")
        object.__setattr__(self, "class_probs", probs)


@dataclass(frozen=True)
class MatchTarget:
    """A labeled ground-truth instance: category index, box and pose."""

    category: int
    box: BBox2D
    pose: Pose9D


@dataclass(frozen=True)
class Assignment:
    pairs: tuple
    unmatched_predictions: tuple = field(default_factory=tuple)

    def total(self, cost) -> float:
        return assignment_cost(cost, self)


def assignment_cost(cost, assignment: Assignment) -> float:
    """Sum of the assigned entries, accumulated in ground-truth order."""
    cost = np.asarray(cost, dtype=np.float64)
    total = 0.0
    for i, j in sorted(assignment.pairs, key=lambda p: p[1]):
        total += float(cost[i, j])
    return total


# --------------------------------------------------------------------------
# Cost terms


def focal_class_cost(p: float, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> float:
    """Positive-minus-negative focal cost for the ground-truth class probability."""
    pos = alpha * (1.0 - p) ** gamma * (-math.log(p + _COST_EPS))
    neg = (1.0 - alpha) * p**gamma * (-math.log(1.0 - p + _COST_EPS))
    return pos - neg


def box_cxcywh_to_xyxy(b) -> np.ndarray:
    cx, cy, w, h = np.asarray(b, dtype=np.float64)
    return np.array([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h])


def generalized_iou(a, b) -> float:
    """GIoU of two center-size boxes, in [-1, 1]."""
    ax0, ay0, ax1, ay1 = box_cxcywh_to_xyxy(a)
    bx0, by0, bx1, by1 = box_cxcywh_to_xyxy(b)
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    hull = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    iou = inter / union
    return iou - (hull - union) / hull


def cost_terms(
    pred: MatchCandidate, gt: MatchTarget, sym: SymmetrySpec | None = None
) -> dict:
    """Unweighted cost components for one prediction/ground-truth pair."""
    p = float(pred.class_probs[gt.category])
    return {
        "cls": focal_class_cost(p),
        "bbox": float(np.abs(pred.box.as_array() - gt.box.as_array()).sum()),
        "iou": -generalized_iou(pred.box.as_array(), gt.box.as_array()),
        "trans": float(np.linalg.norm(pred.pose.translation - gt.pose.translation)),
        "rot": symmetry_aware_rot_distance(pred.pose.rotation, gt.pose.rotation, sym),
    }


def weighted_sum(terms: Mapping[str, float], w: CostWeights) -> float:
    return (
        w.lambda_cls * terms["cls"]
        + w.lambda_bbox * terms["bbox"]
        + w.lambda_iou * terms["iou"]
        + w.lambda_trans * terms["trans"]
        + w.lambda_rot * terms["rot"]
    )


def _sym_for(sym, category: int):
    if sym is None or isinstance(sym, SymmetrySpec):
        return sym
    return sym.get(category)


def pairwise_cost(
    pred: MatchCandidate,
    gt: MatchTarget,
    w: CostWeights = CostWeights(),
    sym: SymmetrySpec | Mapping[int, SymmetrySpec] | None = None,
) -> float:
    """Weighted matching cost; ``sym`` is one SymmetrySpec or a per-category table."""
    return weighted_sum(cost_terms(pred, gt, _sym_for(sym, gt.category)), w)


def build_cost_matrix(
    preds: Sequence[MatchCandidate],
    gts: Sequence[MatchTarget],
    w: CostWeights = CostWeights(),
    sym: SymmetrySpec | Mapping[int, SymmetrySpec] | None = None,
) -> np.ndarray:
    if not preds or not gts:
        raise ValueError("need at least one prediction and one ground truth")
    cost = np.empty((len(preds), len(gts)))
    for j, gt in enumerate(gts):
        s = _sym_for(sym, gt.category)
        for i, pred in enumerate(preds):
            cost[i, j] = weighted_sum(cost_terms(pred, gt, s), w)
    return cost


# --------------------------------------------------------------------------
# Solvers


def _check_matrix(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] == 0 or cost.shape[1] == 0:
        raise InfeasibleMatrix(f"expected a non-empty 2D matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise InfeasibleMatrix("cost matrix has non-finite entries")
    if cost.shape[0] < cost.shape[1]:
        raise InfeasibleMatrix(
            f"{cost.shape[0]} predictions cannot cover {cost.shape[1]} ground truths"
        )
    return cost


def _make_assignment(rows, cols, n_rows) -> Assignment:
    pairs = tuple(sorted((int(i), int(j)) for i, j in zip(rows, cols)))
    used = {i for i, _ in pairs}
    return Assignment(pairs, tuple(i for i in range(n_rows) if i not in used))


def solve_assignment(cost) -> Assignment:
    """Minimum-cost matching covering every column (Hungarian / LAPJV)."""
    cost = _check_matrix(cost)
    rows, cols = linear_sum_assignment(cost)
    return _make_assignment(rows, cols, cost.shape[0])


@functools.lru_cache(maxsize=64)
def _injections(n_rows: int, n_cols: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n_rows), n_cols)), dtype=np.intp)


def brute_force_assignment(cost) -> Assignment:
    """Exact minimum by enumerating every injection of columns into rows."""
    cost = _check_matrix(cost)
    n_rows, n_cols = cost.shape
    if n_cols > BRUTE_FORCE_MAX_COLS:
        raise TooLarge(f"{n_cols} columns exceeds the enumeration limit of {BRUTE_FORCE_MAX_COLS}")
    if math.perm(n_rows, n_cols) > _BRUTE_FORCE_MAX_INJECTIONS:
        raise TooLarge(f"{math.perm(n_rows, n_cols)} injections is too many to enumerate")
    rows = _injections(n_rows, n_cols)
    totals = cost[rows, np.arange(n_cols)].sum(axis=1)
    best = rows[int(np.argmin(totals))]
    return _make_assignment(best, range(n_cols), n_rows)


def match(
    preds: Sequence[MatchCandidate],
    gts: Sequence[MatchTarget],
    w: CostWeights = CostWeights(),
    sym: SymmetrySpec | Mapping[int, SymmetrySpec] | None = None,
) -> tuple[Assignment, np.ndarray]:
    cost = build_cost_matrix(preds, gts, w, sym)
    return solve_assignment(cost), cost
