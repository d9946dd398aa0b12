"""Forward math of the pose head: MLPs, box conditioning, class-wise slicing.

Weight files are JSON::

    {"layers": [{"weight": [[...], ...], "bias": [...]}, ...]}

with ``weight`` shaped ``(out, in)``. ReLU sits between layers; the output
layer is linear.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ScaleClamped
from .geometry import (
    BBox2D,
    CameraIntrinsics,
    Pose9D,
    backproject,
    recover_center,
    rot6d_to_matrix,
)

MIN_SCALE = 1e-4


@dataclass(frozen=True, eq=False)
class MlpWeights:
    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases)
        if not ws or len(ws) != len(bs):
            raise DimensionMismatch("need one bias per layer and at least one layer")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or w.shape[0] != b.size:
                raise DimensionMismatch(f"layer {k}: weight {w.shape} vs bias {b.shape}")
            if k and w.shape[1] != ws[k - 1].shape[0]:
                raise DimensionMismatch(
                    f"layer {k} expects {w.shape[1]} inputs, previous layer gives {ws[k - 1].shape[0]}"
                )
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"weight": w.tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpWeights":
        layers = d["layers"]
        return cls(tuple(l["weight"] for l in layers), tuple(l["bias"] for l in layers))


def load_mlp(path) -> MlpWeights:
    with open(path, encoding="utf-8") as fh:
        return MlpWeights.from_dict(json.load(fh))


def save_mlp(w: MlpWeights, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(w.to_dict(), fh)


def mlp_forward(x, w: MlpWeights) -> np.ndarray:
    h = np.asarray(x, dtype=np.float64).reshape(-1)
    if h.size != w.in_dim:
        raise DimensionMismatch(f"input has {h.size} values, first layer expects {w.in_dim}")
    last = len(w.weights) - 1
    for k, (W, b) in enumerate(zip(w.weights, w.biases)):
        h = W @ h + b
        if k < last:
            h = np.maximum(h, 0.0)
    return h


def conditioned_forward(p, box: BBox2D, w: MlpWeights) -> np.ndarray:
    """MLP over the query embedding concatenated with ``(cx, cy, w, h)``."""
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.size + 4 != w.in_dim:
        raise DimensionMismatch(
            f"conditioned input has {p.size + 4} values, first layer expects {w.in_dim}"
        )
    return mlp_forward(np.concatenate([p, box.as_array()]), w)


@dataclass(frozen=True, eq=False)
class RawHeadOutput:
    """Per-query outputs before pose assembly; one rot6d/scale row per class."""

    class_logits: np.ndarray
    box: BBox2D
    center_offset: np.ndarray
    depth: float
    rot6d_per_class: np.ndarray
    scale_per_class: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.class_logits, dtype=np.float64).reshape(-1)
        rot = np.asarray(self.rot6d_per_class, dtype=np.float64).reshape(-1, 6)
        scale = np.asarray(self.scale_per_class, dtype=np.float64).reshape(-1, 3)
        if logits.size < 1 or rot.shape[0] != logits.size or scale.shape[0] != logits.size:
            raise DimensionMismatch(
                f"{logits.size} classes but {rot.shape[0]} rotation rows and {scale.shape[0]} scale rows"
            )
        object.__setattr__(self, "class_logits", logits)
        object.__setattr__(self, "rot6d_per_class", rot)
        object.__setattr__(self, "scale_per_class", scale)
        object.__setattr__(
            self, "center_offset", np.asarray(self.center_offset, dtype=np.float64).reshape(2)
        )
        object.__setattr__(self, "depth", float(self.depth))

    @property
    def num_classes(self) -> int:
        return self.class_logits.size

    @property
    def class_probs(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.class_logits))


def select_classwise(raw: RawHeadOutput) -> tuple[int, np.ndarray, np.ndarray]:
    c = int(np.argmax(raw.class_logits))
    return c, raw.rot6d_per_class[c].copy(), raw.scale_per_class[c].copy()


def assemble_pose(raw: RawHeadOutput, cam: CameraIntrinsics) -> tuple[int, Pose9D]:
    """Turn raw head outputs into ``(class index, Pose9D)``.

    Non-positive scales are clamped to ``MIN_SCALE`` and reported with a
    :class:`ScaleClamped` warning.
    """
    c, r6, s = select_classwise(raw)
    u = recover_center(raw.box, raw.center_offset)
    t = backproject(u, raw.depth, cam)
    R = rot6d_to_matrix(r6)
    if np.any(s < MIN_SCALE):
        warnings.warn(f"clamped predicted scale {s.tolist()} to {MIN_SCALE} m", ScaleClamped, stacklevel=2)
        s = np.maximum(s, MIN_SCALE)
    return c, Pose9D(R, t, s)
