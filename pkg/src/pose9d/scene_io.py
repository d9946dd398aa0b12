"""Scene records, the newline-delimited JSON scene format, and synthetic data.

One scene per line::

    {"schema_version": "1", "scene_id": "s0",
     "intrinsics": {"fx": 500, "fy": 500, "cx": 320, "cy": 240, "width": 640, "height": 480},
     "gts":   [{"category": "mug", "pose": POSE, "box": BOX}],
     "preds": [{"category": "mug", "confidence": 0.9, "pose": POSE}]}

where ``POSE = {"rotation": [9 floats, row-major], "translation": [3 floats, m],
"scale": [3 floats, m]}`` and ``BOX = {"cx", "cy", "w", "h"}`` is normalized.
``box`` is optional everywhere. Fields not listed here are kept verbatim and
written back on serialization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import BehindCamera, InvariantError, OutOfFrame, SchemaError
from .geometry import (
    BBox2D,
    CameraIntrinsics,
    Pose9D,
    axis_angle_to_matrix,
    backproject,
    geodesic_distance,
    is_rotation,
    project_cuboid_to_bbox,
    random_rotation,
)

SCHEMA_VERSION = "1"
# Rotation check applied to parsed files; looser than the in-memory 1e-9 so
# that files written with fewer digits still load.
PARSE_ROTATION_TOL = 1e-6

_SCENE_KEYS = ("schema_version", "scene_id", "intrinsics", "gts", "preds")
_GT_KEYS = ("category", "pose", "box")
_PRED_KEYS = ("category", "confidence", "pose", "box")
_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


@dataclass(frozen=True)
class GtInstance:
    category: str
    pose: Pose9D
    box: BBox2D | None = None
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PredInstance:
    category: str
    confidence: float
    pose: Pose9D
    box: BBox2D | None = None
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    intrinsics: CameraIntrinsics
    gts: tuple = ()
    preds: tuple = ()
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NoiseProfile:
    """Perturbation applied to ground truth to make synthetic predictions.

    ``confidence`` is ``"error"`` (``exp(-(rot_err/10deg + trans_err/0.1m))``)
    or ``"constant"`` (always 1.0).
    """

    rotation_std_deg: float = 0.0
    translation_std_m: float = 0.0
    scale_std_rel: float = 0.0
    confidence: str = "error"
    drop_rate: float = 0.0
    false_positive_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("rotation_std_deg", "translation_std_m", "scale_std_rel"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be >= 0, got {v!r}")
        for name in ("drop_rate", "false_positive_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if self.confidence not in ("error", "constant"):
            raise ValueError(f"unknown confidence model {self.confidence!r}")

    def to_dict(self) -> dict:
        return {
            "rotation_std_deg": self.rotation_std_deg,
            "translation_std_m": self.translation_std_m,
            "scale_std_rel": self.scale_std_rel,
            "confidence": self.confidence,
            "drop_rate": self.drop_rate,
            "false_positive_rate": self.false_positive_rate,
            "seed": self.seed,
        }


# --------------------------------------------------------------------------
# Parsing


class _Reader:
    """Typed field access that reports line numbers and dotted paths."""

    def __init__(self, line: int):
        self.line = line

    def schema(self, path, msg):
        return SchemaError(msg, line=self.line, path=path)

    def invariant(self, path, msg):
        return InvariantError(msg, line=self.line, path=path)

    def obj(self, value, path) -> dict:
        if not isinstance(value, dict):
            raise self.schema(path, f"expected an object, got {type(value).__name__}")
        return value

    def get(self, d: dict, key: str, path: str):
        if key not in d:
            raise self.schema(f"{path}.{key}" if path else key, "missing required field")
        return d[key]

    def number(self, value, path) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.schema(path, f"expected a number, got {type(value).__name__}")
        value = float(value)
        if not math.isfinite(value):
            raise self.invariant(path, "must be finite")
        return value

    def vector(self, value, n, path) -> list[float]:
        if not isinstance(value, list) or len(value) != n:
            raise self.schema(path, f"expected a list of {n} numbers")
        return [self.number(v, f"{path}[{i}]") for i, v in enumerate(value)]

    def string(self, value, path) -> str:
        if not isinstance(value, str):
            raise self.schema(path, f"expected a string, got {type(value).__name__}")
        return value


def _parse_pose(r: _Reader, value, path) -> Pose9D:
    d = r.obj(value, path)
    rot = np.array(r.vector(r.get(d, "rotation", path), 9, f"{path}.rotation")).reshape(3, 3)
    trans = r.vector(r.get(d, "translation", path), 3, f"{path}.translation")
    scale = r.vector(r.get(d, "scale", path), 3, f"{path}.scale")
    if not is_rotation(rot, PARSE_ROTATION_TOL):
        raise r.invariant(f"{path}.rotation", "not a proper rotation matrix")
    if min(scale) <= 0:
        raise r.invariant(f"{path}.scale", f"scale components must be positive, got {scale}")
    return Pose9D(rot, trans, scale)


def _parse_box(r: _Reader, value, path) -> BBox2D | None:
    if value is None:
        return None
    d = r.obj(value, path)
    vals = [r.number(r.get(d, k, path), f"{path}.{k}") for k in ("cx", "cy", "w", "h")]
    try:
        return BBox2D(*vals)
    except ValueError as exc:
        raise r.invariant(path, str(exc)) from None


def _parse_category(r: _Reader, value, path, categories) -> str:
    if isinstance(value, int) and not isinstance(value, bool):
        if categories is None or not 0 <= value < len(categories):
            raise r.invariant(path, f"category index {value} outside the category list")
        return categories[value]
    name = r.string(value, path)
    if categories is not None and name not in categories:
        raise r.invariant(path, f"unknown category {name!r}")
    return name


def _extras(d: dict, known) -> dict:
    return {k: v for k, v in d.items() if k not in known}


def parse_scene(obj, line: int = 1, categories: Sequence[str] | None = None) -> SceneRecord:
    r = _Reader(line)
    d = r.obj(obj, "")
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise r.schema("schema_version", f"unsupported schema version {version!r}")
    scene_id = r.string(r.get(d, "scene_id", ""), "scene_id")
    idict = r.obj(r.get(d, "intrinsics", ""), "intrinsics")
    ivals = {k: r.number(r.get(idict, k, "intrinsics"), f"intrinsics.{k}") for k in _INTRINSIC_KEYS}
    try:
        cam = CameraIntrinsics(**ivals)
    except ValueError as exc:
        raise r.invariant("intrinsics", str(exc)) from None

    gts = []
    raw_gts = r.get(d, "gts", "")
    if not isinstance(raw_gts, list):
        raise r.schema("gts", "expected a list")
    for i, g in enumerate(raw_gts):
        path = f"gts[{i}]"
        g = r.obj(g, path)
        gts.append(
            GtInstance(
                category=_parse_category(r, r.get(g, "category", path), f"{path}.category", categories),
                pose=_parse_pose(r, r.get(g, "pose", path), f"{path}.pose"),
                box=_parse_box(r, g.get("box"), f"{path}.box"),
                extra=_extras(g, _GT_KEYS),
            )
        )

    preds = []
    raw_preds = r.get(d, "preds", "")
    if not isinstance(raw_preds, list):
        raise r.schema("preds", "expected a list")
    for i, p in enumerate(raw_preds):
        path = f"preds[{i}]"
        p = r.obj(p, path)
        conf = r.number(r.get(p, "confidence", path), f"{path}.confidence")
        if not 0.0 <= conf <= 1.0:
            raise r.invariant(f"{path}.confidence", f"confidence must lie in [0, 1], got {conf}")
        preds.append(
            PredInstance(
                category=_parse_category(r, r.get(p, "category", path), f"{path}.category", categories),
                confidence=conf,
                pose=_parse_pose(r, r.get(p, "pose", path), f"{path}.pose"),
                box=_parse_box(r, p.get("box"), f"{path}.box"),
                extra=_extras(p, _PRED_KEYS),
            )
        )
    return SceneRecord(scene_id, cam, tuple(gts), tuple(preds), _extras(d, _SCENE_KEYS))


def parse_scenes(stream: IO[str] | Iterable[str], categories: Sequence[str] | None = None) -> list[SceneRecord]:
    """Parse newline-delimited scene records; blank lines are skipped."""
    scenes = []
    seen = {}
    for lineno, text in enumerate(stream, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", line=lineno) from None
        scene = parse_scene(obj, lineno, categories)
        if scene.scene_id in seen:
            raise InvariantError(
                f"duplicate scene id {scene.scene_id!r} (first seen on line {seen[scene.scene_id]})",
                line=lineno,
                path="scene_id",
            )
        seen[scene.scene_id] = lineno
        scenes.append(scene)
    return scenes


def load_scenes(path, categories: Sequence[str] | None = None) -> list[SceneRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_scenes(fh, categories)


# --------------------------------------------------------------------------
# Serialization


def _floats(a) -> list[float]:
    return [float(v) for v in np.asarray(a).reshape(-1)]


def pose_to_dict(pose: Pose9D) -> dict:
    return {
        "rotation": _floats(pose.rotation),
        "translation": _floats(pose.translation),
        "scale": _floats(pose.scale),
    }


def box_to_dict(box: BBox2D) -> dict:
    return {"cx": box.cx, "cy": box.cy, "w": box.w, "h": box.h}


def scene_to_dict(scene: SceneRecord) -> dict:
    cam = scene.intrinsics
    out = {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "intrinsics": {k: getattr(cam, k) for k in _INTRINSIC_KEYS},
        "gts": [],
        "preds": [],
    }
    for g in scene.gts:
        d = {"category": g.category, "pose": pose_to_dict(g.pose)}
        if g.box is not None:
            d["box"] = box_to_dict(g.box)
        d.update(g.extra)
        out["gts"].append(d)
    for p in scene.preds:
        d = {"category": p.category, "confidence": p.confidence, "pose": pose_to_dict(p.pose)}
        if p.box is not None:
            d["box"] = box_to_dict(p.box)
        d.update(p.extra)
        out["preds"].append(d)
    out.update(scene.extra)
    return out


def serialize_scene(scene: SceneRecord) -> str:
    return json.dumps(scene_to_dict(scene), separators=(",", ":"), allow_nan=False)


def write_scenes(scenes: Iterable[SceneRecord], fh: IO[str]) -> None:
    for s in scenes:
        fh.write(serialize_scene(s))
        fh.write("\n")


def save_scenes(scenes: Iterable[SceneRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_scenes(scenes, fh)


# --------------------------------------------------------------------------
# Derived 2D boxes


@dataclass
class BoxFailure:
    scene_id: str
    kind: str  # "gt" or "pred"
    index: int
    reason: str


def derive_boxes(
    scenes: Sequence[SceneRecord], overwrite: bool = False
) -> tuple[list[SceneRecord], list[BoxFailure]]:
    """Fill instance boxes by projecting their cuboids into the image.

    Instances whose cuboid is behind the camera or fully out of frame keep
    their previous box (possibly ``None``) and are reported in the second
    return value.
    """
    failures = []
    out = []
    for scene in scenes:
        cam = scene.intrinsics

        def fill(inst, kind, idx):
            if inst.box is not None and not overwrite:
                return inst
            try:
                return replace(inst, box=project_cuboid_to_bbox(inst.pose, cam))
            except (BehindCamera, OutOfFrame) as exc:
                failures.append(BoxFailure(scene.scene_id, kind, idx, str(exc)))
                return inst

        gts = tuple(fill(g, "gt", i) for i, g in enumerate(scene.gts))
        preds = tuple(fill(p, "pred", i) for i, p in enumerate(scene.preds))
        out.append(replace(scene, gts=gts, preds=preds))
    return out, failures


# --------------------------------------------------------------------------
# Synthetic scenes

DEFAULT_CATEGORIES = ("bottle", "bowl", "camera", "can", "laptop", "mug")
DEFAULT_INTRINSICS = CameraIntrinsics(591.0125, 590.16775, 322.525, 244.11084, 640.0, 480.0)

_DEPTH_RANGE = (0.5, 5.0)
_SCALE_RANGE = (0.05, 0.5)


def _rotation_noise(rng: np.random.Generator, std_deg: float) -> np.ndarray:
    axis = rng.standard_normal(3)
    angle = math.radians(std_deg) * rng.standard_normal()
    return axis_angle_to_matrix(axis, angle)


def _sample_gt(rng, cam, categories) -> GtInstance:
    u = rng.random(2)
    z = rng.uniform(*_DEPTH_RANGE)
    pose = Pose9D(random_rotation(rng), backproject(u, z, cam), rng.uniform(*_SCALE_RANGE, size=3))
    return GtInstance(categories[int(rng.integers(len(categories)))], pose)


def _confidence(noise: NoiseProfile, rot_err: float, trans_err: float) -> float:
    if noise.confidence == "constant":
        return 1.0
    return math.exp(-(math.degrees(rot_err) / 10.0 + trans_err / 0.1))


def _perturb(rng, gt: GtInstance, noise: NoiseProfile) -> PredInstance:
    pose = gt.pose
    R = _rotation_noise(rng, noise.rotation_std_deg) @ pose.rotation
    t = pose.translation + noise.translation_std_m * rng.standard_normal(3)
    s = pose.scale * (1.0 + noise.scale_std_rel * rng.standard_normal(3))
    s = np.maximum(s, 1e-4)
    if t[2] <= 1e-3:
        t = np.array([t[0], t[1], 1e-3])
    pred = Pose9D(R, t, s)
    conf = _confidence(
        noise,
        geodesic_distance(R, pose.rotation),
        float(np.linalg.norm(t - pose.translation)),
    )
    return PredInstance(gt.category, conf, pred)


def _try_box(pose, cam):
    try:
        return project_cuboid_to_bbox(pose, cam)
    except (BehindCamera, OutOfFrame):
        return None


def generate_scene(
    index: int,
    objects: tuple[int, int],
    cam: CameraIntrinsics,
    noise: NoiseProfile,
    categories: Sequence[str] = DEFAULT_CATEGORIES,
) -> SceneRecord:
    """One synthetic scene, seeded by ``noise.seed + index``."""
    rng = np.random.default_rng(noise.seed + index)
    lo, hi = objects
    n = int(rng.integers(lo, hi + 1))
    gts = [_sample_gt(rng, cam, categories) for _ in range(n)]
    preds = []
    for g in gts:
        # draw unconditionally so the stream does not depend on drop_rate
        dropped = rng.random() < noise.drop_rate
        p = _perturb(rng, g, noise)
        if not dropped:
            preds.append(p)
    n_fp = int(rng.binomial(n, noise.false_positive_rate)) if n else 0
    for _ in range(n_fp):
        fake = _sample_gt(rng, cam, categories)
        preds.append(PredInstance(fake.category, float(rng.uniform(0.0, 0.5)), fake.pose))
    gts = [replace(g, box=_try_box(g.pose, cam)) for g in gts]
    preds = [replace(p, box=_try_box(p.pose, cam)) for p in preds]
    return SceneRecord(f"synth-{index:06d}", cam, tuple(gts), tuple(preds))


def generate_synthetic(
    count: int,
    objects: tuple[int, int] = (1, 10),
    cam: CameraIntrinsics = DEFAULT_INTRINSICS,
    noise: NoiseProfile = NoiseProfile(),
    categories: Sequence[str] = DEFAULT_CATEGORIES,
) -> list[SceneRecord]:
    """Random scenes with ground truth in the view frustum and noisy predictions.

    Ground truth: image-uniform centers, depth U[0.5, 5] m, per-axis extent
    U[0.05, 0.5] m and Haar-uniform rotations. Predictions are the ground
    truth with left-composed random-axis Gaussian-angle rotation noise,
    Gaussian translation noise and relative scale noise.
    """
    lo, hi = objects
    if count < 0 or lo < 0 or hi < lo:
        raise ValueError(f"bad synthetic sizes: count={count}, objects={objects}")
    return [generate_scene(i, (lo, hi), cam, noise, categories) for i in range(count)]
