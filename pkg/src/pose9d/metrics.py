"""Detection-style evaluation: mAP over 3D IoU and rotation/translation bounds.

Per category, predictions from all scenes are ranked by confidence (ties by
scene index, then prediction index). Each prediction greedily takes the
unmatched same-scene ground truth of its class with the highest 3D IoU among
those that are eligible. AP is the area under the monotone precision
envelope (all-point integration).

IoU criteria: eligible means ``IoU >= threshold`` and a pairing is a true
positive. Pose criteria: predictions are paired once with eligibility
``IoU >= iou_gate``; a pair is a true positive for ``(n deg, m cm)`` when
``rot <= n`` and ``trans <= m``. A ``None`` bound is unlimited.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import NO_SYMMETRY, Pose9D, SymmetrySpec, symmetry_aware_rot_distance
from .iou3d import DEFAULT_SYMMETRY_STEPS, pairwise_iou
from .scene_io import DEFAULT_CATEGORIES, SceneRecord

AP_METHOD = "all-point"


def nocs_symmetry() -> dict[str, SymmetrySpec]:
    y = SymmetrySpec.continuous((0.0, 1.0, 0.0))
    return {"bottle": y, "bowl": y, "can": y}


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple = (0.25, 0.5, 0.75)
    pose_thresholds: tuple = ((None, 10.0), (10.0, None), (10.0, 10.0), (5.0, 5.0), (10.0, 5.0))
    categories: tuple = DEFAULT_CATEGORIES
    symmetry: Mapping[str, SymmetrySpec] = field(default_factory=nocs_symmetry)
    iou_gate: float = 0.1
    symmetric_iou: bool = True
    symmetry_steps: int = DEFAULT_SYMMETRY_STEPS

    def __post_init__(self):
        object.__setattr__(self, "iou_thresholds", tuple(float(t) for t in self.iou_thresholds))
        object.__setattr__(
            self,
            "pose_thresholds",
            tuple(
                tuple(None if v is None else float(v) for v in pair)
                for pair in self.pose_thresholds
            ),
        )
        object.__setattr__(self, "categories", tuple(self.categories))
        for t in self.iou_thresholds:
            if not 0.0 < t <= 1.0:
                raise ValueError(f"IoU threshold {t} outside (0, 1]")
        for pair in self.pose_thresholds:
            if len(pair) != 2 or all(v is None for v in pair):
                raise ValueError(f"pose threshold {pair} needs a degree and/or cm bound")
            if any(v is not None and not v > 0 for v in pair):
                raise ValueError(f"pose threshold {pair} must be positive")
        if not 0.0 <= self.iou_gate <= 1.0:
            raise ValueError("iou_gate must lie in [0, 1]")
        if self.symmetry_steps < 1:
            raise ValueError("symmetry_steps must be >= 1")
        unknown = set(self.symmetry) - set(self.categories)
        if unknown:
            raise ValueError(f"symmetry given for unknown categories {sorted(unknown)}")

    def symmetry_for(self, category: str) -> SymmetrySpec:
        return self.symmetry.get(category, NO_SYMMETRY)


def metric_name_iou(t: float) -> str:
    return f"IoU{round(t * 100):d}"


def metric_name_pose(pair) -> str:
    deg, cm = pair
    if deg is None:
        return f"{cm:g}cm"
    if cm is None:
        return f"{deg:g}°"
    return f"{deg:g}°{cm:g}cm"


@dataclass(frozen=True)
class EvalResult:
    """AP per category and criterion (``None`` for categories without GT)."""

    categories: tuple
    iou_thresholds: tuple
    pose_thresholds: tuple
    iou_ap: dict
    pose_ap: dict
    mean_iou_ap: tuple
    mean_pose_ap: tuple
    gt_counts: dict
    pred_counts: dict
    ap_method: str = AP_METHOD

    @property
    def metric_names(self) -> list[str]:
        return [metric_name_iou(t) for t in self.iou_thresholds] + [
            metric_name_pose(p) for p in self.pose_thresholds
        ]

    def mean_row(self) -> list[float]:
        return list(self.mean_iou_ap) + list(self.mean_pose_ap)

    def metric(self, name: str) -> float:
        return self.mean_row()[self.metric_names.index(name)]

    def to_dict(self) -> dict:
        return {
            "ap_method": self.ap_method,
            "categories": list(self.categories),
            "iou_thresholds": list(self.iou_thresholds),
            "pose_thresholds": [list(p) for p in self.pose_thresholds],
            "metric_names": self.metric_names,
            "mean": {"iou": list(self.mean_iou_ap), "pose": list(self.mean_pose_ap)},
            "per_category": {
                c: {
                    "gt_count": self.gt_counts[c],
                    "pred_count": self.pred_counts[c],
                    "iou": list(self.iou_ap[c]),
                    "pose": list(self.pose_ap[c]),
                }
                for c in self.categories
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        cats = tuple(d["categories"])
        per = d["per_category"]
        return cls(
            categories=cats,
            iou_thresholds=tuple(d["iou_thresholds"]),
            pose_thresholds=tuple(tuple(p) for p in d["pose_thresholds"]),
            iou_ap={c: tuple(per[c]["iou"]) for c in cats},
            pose_ap={c: tuple(per[c]["pose"]) for c in cats},
            mean_iou_ap=tuple(d["mean"]["iou"]),
            mean_pose_ap=tuple(d["mean"]["pose"]),
            gt_counts={c: per[c]["gt_count"] for c in cats},
            pred_counts={c: per[c]["pred_count"] for c in cats},
            ap_method=d.get("ap_method", AP_METHOD),
        )


# --------------------------------------------------------------------------


def pose_errors(pred: Pose9D, gt: Pose9D, sym: SymmetrySpec | None = None) -> tuple[float, float]:
    """(rotation error in degrees, translation error in meters)."""
    rot = symmetry_aware_rot_distance(pred.rotation, gt.rotation, sym)
    return math.degrees(rot), float(np.linalg.norm(pred.translation - gt.translation))


def _relative_angles(Rp: np.ndarray, Rg: np.ndarray) -> np.ndarray:
    # M[n, m] = Rp[n]^T Rg[m]; angle = atan2(|vee(M - M^T)| / 2, (tr M - 1) / 2)
    M = np.einsum("nki,mkj->nmij", Rp, Rg)
    v = np.stack(
        [M[..., 2, 1] - M[..., 1, 2], M[..., 0, 2] - M[..., 2, 0], M[..., 1, 0] - M[..., 0, 1]],
        axis=-1,
    )
    c = (np.trace(M, axis1=2, axis2=3) - 1.0) * 0.5
    return np.arctan2(0.5 * np.linalg.norm(v, axis=-1), c)


def _rotation_error_matrix(Rp: np.ndarray, Rg: np.ndarray, sym: SymmetrySpec) -> np.ndarray:
    if sym.kind == "continuous":
        e = sym.axis_array()
        a, b = Rp @ e, Rg @ e
        cross = np.linalg.norm(np.cross(a[:, None, :], b[None, :, :]), axis=-1)
        ang = np.arctan2(cross, a @ b.T)
    elif sym.kind == "discrete":
        ang = np.min([_relative_angles(Rp @ S, Rg) for S in sym.rotation_set()], axis=0)
    else:
        ang = _relative_angles(Rp, Rg)
    return np.degrees(ang)


@dataclass
class _CategoryBlock:
    pred_idx: list
    gt_idx: list
    iou: np.ndarray
    rot_deg: np.ndarray
    trans_m: np.ndarray


def _scene_blocks(scene: SceneRecord, cfg: EvalConfig) -> dict[str, _CategoryBlock]:
    blocks = {}
    for cat in cfg.categories:
        pi = [i for i, p in enumerate(scene.preds) if p.category == cat]
        gi = [j for j, g in enumerate(scene.gts) if g.category == cat]
        if not pi or not gi:
            blocks[cat] = _CategoryBlock(pi, gi, np.zeros((len(pi), len(gi))), None, None)
            continue
        sym = cfg.symmetry_for(cat)
        preds = [scene.preds[i].pose for i in pi]
        gts = [scene.gts[j].pose for j in gi]
        syms = [sym] * len(gts) if cfg.symmetric_iou else None
        iou = pairwise_iou(preds, gts, syms, cfg.symmetry_steps)
        Rp = np.array([p.rotation for p in preds])
        Rg = np.array([g.rotation for g in gts])
        tp = np.array([p.translation for p in preds])
        tg = np.array([g.translation for g in gts])
        rot = _rotation_error_matrix(Rp, Rg, sym)
        trans = np.linalg.norm(tp[:, None, :] - tg[None, :, :], axis=2)
        blocks[cat] = _CategoryBlock(pi, gi, iou, rot, trans)
    return blocks


def average_precision(tp_flags: Sequence[bool], n_gt: int) -> float | None:
    """All-point AP for a ranked list of hit/miss flags.

    Each hit raises recall by exactly ``1/n_gt``, so the area under the
    monotone envelope is the envelope precision summed over hit ranks.
    """
    if n_gt == 0:
        return None
    tp = np.asarray(tp_flags, dtype=bool)
    if tp.size == 0 or not tp.any():
        return 0.0
    tp_cum = np.cumsum(tp)
    precision = tp_cum / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(envelope[tp].sum() / n_gt)


def _greedy_pairs(order, blocks, cat, eligible_fn) -> list[int]:
    """Greedy pairing in rank order; returns the local GT index per prediction or -1.

    ``eligible_fn(block)`` gives a boolean (n_pred, n_gt) mask of acceptable
    pairs; among those still unmatched the highest-IoU GT is taken.
    """
    masks = {}
    taken = {}
    paired = []
    for scene_idx, local in order:
        block = blocks[scene_idx][cat]
        if not block.gt_idx:
            paired.append(-1)
            continue
        if scene_idx not in masks:
            masks[scene_idx] = eligible_fn(block)
            taken[scene_idx] = np.zeros(len(block.gt_idx), dtype=bool)
        ok = masks[scene_idx][local] & ~taken[scene_idx]
        if not ok.any():
            paired.append(-1)
            continue
        scores = np.where(ok, block.iou[local], -np.inf)
        j = int(np.argmax(scores))
        taken[scene_idx][j] = True
        paired.append(j)
    return paired


def evaluate_scene_set(
    scenes: Sequence[SceneRecord], cfg: EvalConfig = EvalConfig(), threads: int = 1
) -> EvalResult:
    if threads > 1 and len(scenes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda s: _scene_blocks(s, cfg), scenes))
    else:
        blocks = [_scene_blocks(s, cfg) for s in scenes]

    iou_ap, pose_ap, gt_counts, pred_counts = {}, {}, {}, {}
    for cat in cfg.categories:
        ranked = []
        n_gt = 0
        for s_idx, scene in enumerate(scenes):
            block = blocks[s_idx][cat]
            n_gt += len(block.gt_idx)
            for local, p_idx in enumerate(block.pred_idx):
                ranked.append((-scene.preds[p_idx].confidence, s_idx, p_idx, local))
        ranked.sort()
        order = [(s_idx, local) for _, s_idx, _, local in ranked]
        gt_counts[cat] = n_gt
        pred_counts[cat] = len(order)

        iou_ap[cat] = tuple(
            average_precision(
                [j >= 0 for j in _greedy_pairs(order, blocks, cat, lambda b, t=t: b.iou >= t)],
                n_gt,
            )
            for t in cfg.iou_thresholds
        )

        # pose criteria share one pairing made under the IoU gate, so a
        # stricter criterion can only remove true positives
        gated = _greedy_pairs(order, blocks, cat, lambda b: b.iou >= cfg.iou_gate)
        rot = [
            blocks[s][cat].rot_deg[local, j] if j >= 0 else math.inf
            for (s, local), j in zip(order, gated)
        ]
        trans = [
            blocks[s][cat].trans_m[local, j] if j >= 0 else math.inf
            for (s, local), j in zip(order, gated)
        ]

        def pose_hits(deg, cm):
            return [
                j >= 0
                and (deg is None or r <= deg)
                and (cm is None or t <= cm / 100.0)
                for j, r, t in zip(gated, rot, trans)
            ]

        pose_ap[cat] = tuple(
            average_precision(pose_hits(d, c), n_gt) for d, c in cfg.pose_thresholds
        )

    scored = [c for c in cfg.categories if gt_counts[c] > 0]

    def mean(table, k):
        if not scored:
            return 0.0
        return float(sum(table[c][k] for c in scored) / len(scored))

    return EvalResult(
        categories=cfg.categories,
        iou_thresholds=cfg.iou_thresholds,
        pose_thresholds=cfg.pose_thresholds,
        iou_ap=iou_ap,
        pose_ap=pose_ap,
        mean_iou_ap=tuple(mean(iou_ap, k) for k in range(len(cfg.iou_thresholds))),
        mean_pose_ap=tuple(mean(pose_ap, k) for k in range(len(cfg.pose_thresholds))),
        gt_counts=gt_counts,
        pred_counts=pred_counts,
    )


# --------------------------------------------------------------------------
# Reporting


def _pct(v) -> str:
    return "   -" if v is None else f"{100.0 * v:6.1f}"


def format_table(r: EvalResult) -> str:
    names = r.metric_names
    width = max(8, max((len(c) for c in r.categories), default=4) + 1)
    head = f"{'category':<{width}}{'#gt':>6}{'#pred':>7}" + "".join(f"{n:>10}" for n in names)
    lines = [head, "-" * len(head)]
    for c in r.categories:
        vals = list(r.iou_ap[c]) + list(r.pose_ap[c])
        lines.append(
            f"{c:<{width}}{r.gt_counts[c]:>6}{r.pred_counts[c]:>7}"
            + "".join(f"{_pct(v):>10}" for v in vals)
        )
    total_gt = sum(r.gt_counts.values())
    lines.append("-" * len(head))
    label = "mean" if total_gt else "mean (no GT)"
    lines.append(
        f"{label:<{width}}{total_gt:>6}{sum(r.pred_counts.values()):>7}"
        + "".join(f"{_pct(v):>10}" for v in r.mean_row())
    )
    return "\n".join(lines) + "\n"


def format_report(r: EvalResult) -> tuple[str, dict]:
    """Human-readable table and a JSON-ready record with percentage summary."""
    record = r.to_dict()
    record["summary_percent"] = {
        name: 100.0 * v for name, v in zip(r.metric_names, r.mean_row())
    }
    record["no_ground_truth"] = sum(r.gt_counts.values()) == 0
    return format_table(r), record


def dumps_report(record: dict) -> str:
    return json.dumps(record, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def parse_report(text: str) -> EvalResult:
    return EvalResult.from_dict(json.loads(text))
