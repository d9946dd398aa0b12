"""Pose data model, rotation parameterizations and pinhole projection math.

Conventions used throughout the package:

* rotations are 3x3 numpy arrays acting on column vectors (camera <- object);
* a 6D rotation is a length-6 array ``[a1, a2]`` holding two raw 3-vectors;
* translations and scales are in meters, scale is the full edge length;
* 2D quantities are normalized image coordinates in ``[0, 1]``;
* angles are radians everywhere inside the library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DegenerateInput, NonPositiveDepth, OutOfFrame

_DEGENERATE_EPS = 1e-12

# Corner sign pattern shared with the IoU kernel; face lists index into it.
CUBOID_SIGNS = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, +1],
        [+1, -1, +1],
        [+1, +1, +1],
        [-1, +1, +1],
    ],
    dtype=np.float64,
)
# Outward, counter-clockwise when seen from outside.
CUBOID_FACES = (
    (0, 3, 2, 1),
    (4, 5, 6, 7),
    (0, 1, 5, 4),
    (3, 7, 6, 2),
    (0, 4, 7, 3),
    (1, 2, 6, 5),
)


POSE_ROTATION_TOL = 1e-6


def _frozen(a, shape):
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Pose9D:
    """Rotation, translation (m) and per-axis extent (m) of one object."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        object.__setattr__(self, "scale", _frozen(self.scale, (3,)))
        if not (np.all(np.isfinite(self.translation)) and np.all(np.isfinite(self.scale))):
            raise ValueError("pose has non-finite translation or scale")
        # zero extents are allowed so degenerate boxes can be represented
        if np.any(self.scale < 0):
            raise ValueError(f"scale must be non-negative, got {self.scale.tolist()}")
        if not is_rotation(self.rotation, POSE_ROTATION_TOL):
            raise ValueError("rotation is not a proper orthonormal matrix")

    def __eq__(self, other):
        if not isinstance(other, Pose9D):
            return NotImplemented
        return (
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
            and np.array_equal(self.scale, other.scale)
        )

    __hash__ = None

    @property
    def volume(self) -> float:
        return float(np.prod(self.scale))

    def replace(self, **changes) -> "Pose9D":
        kw = dict(rotation=self.rotation, translation=self.translation, scale=self.scale)
        kw.update(changes)
        return Pose9D(**kw)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: float
    height: float

    def __post_init__(self):
        for name in ("fx", "fy", "width", "height"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")
        for name in ("cx", "cy"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned 2D box in normalized center-size form."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center outside [0,1]^2: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box size outside (0,1]: ({self.w}, {self.h})")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])

    @classmethod
    def from_array(cls, a) -> "BBox2D":
        cx, cy, w, h = (float(v) for v in a)
        return cls(cx, cy, w, h)


@dataclass(frozen=True)
class SymmetrySpec:
    """Rotational symmetry of an object category.

    ``kind`` is ``"none"``, ``"continuous"`` (invariant under any rotation
    about ``axis``, given in the object frame) or ``"discrete"`` (invariant
    under each matrix in ``rotations``; identity is always implied).
    """

    kind: str = "none"
    axis: tuple = (0.0, 1.0, 0.0)
    rotations: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("none", "continuous", "discrete"):
            raise ValueError(f"unknown symmetry kind {self.kind!r}")
        axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(axis)
        if self.kind == "continuous" and not norm > 0:
            raise ValueError("continuous symmetry needs a non-zero axis")
        if norm > 0:
            axis = axis / norm
        object.__setattr__(self, "axis", tuple(float(v) for v in axis))
        rots = tuple(
            tuple(float(v) for v in np.asarray(r, dtype=np.float64).reshape(9))
            for r in self.rotations
        )
        object.__setattr__(self, "rotations", rots)

    @classmethod
    def none(cls) -> "SymmetrySpec":
        return cls("none")

    @classmethod
    def continuous(cls, axis=(0.0, 1.0, 0.0)) -> "SymmetrySpec":
        return cls("continuous", axis=tuple(axis))

    @classmethod
    def discrete(cls, rotations) -> "SymmetrySpec":
        return cls("discrete", rotations=tuple(rotations))

    @property
    def is_none(self) -> bool:
        return self.kind == "none"

    def axis_array(self) -> np.ndarray:
        return np.array(self.axis)

    def rotation_set(self) -> list[np.ndarray]:
        """Symmetry group elements for the discrete case, identity first."""
        mats = [np.eye(3)]
        for r in self.rotations:
            m = np.array(r).reshape(3, 3)
            if not np.allclose(m, np.eye(3), atol=1e-12):
                mats.append(m)
        return mats

    def to_dict(self) -> dict:
        if self.kind == "none":
            return {"type": "none"}
        if self.kind == "continuous":
            return {"type": "continuous", "axis": list(self.axis)}
        return {
            "type": "discrete",
            "rotations": [list(r) for r in self.rotations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SymmetrySpec":
        kind = d.get("type", "none")
        if kind == "continuous":
            return cls.continuous(d.get("axis", (0.0, 1.0, 0.0)))
        if kind == "discrete":
            return cls.discrete(d.get("rotations", ()))
        if kind == "none":
            return cls.none()
        raise ValueError(f"unknown symmetry type {kind!r}")


NO_SYMMETRY = SymmetrySpec.none()


# --------------------------------------------------------------------------
# Rotations


def rot6d_to_matrix(r) -> np.ndarray:
    """Gram-Schmidt map from two raw 3-vectors to a proper rotation.

    The result has columns ``b1, b2, b3`` with ``b1 = a1/|a1|``,
    ``b2`` the normalized part of ``a2`` orthogonal to ``b1`` and
    ``b3 = b1 x b2``.
    """
    r = np.asarray(r, dtype=np.float64).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = math.sqrt(a1 @ a1)
    if not n1 > _DEGENERATE_EPS:
        raise DegenerateInput("first 6D column has (near) zero norm")
    b1 = a1 / n1
    u = a2 - (b1 @ a2) * b1
    n2 = math.sqrt(u @ u)
    if not n2 > _DEGENERATE_EPS:
        raise DegenerateInput("6D columns are (near) parallel")
    b2 = u / n2
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def matrix_to_rot6d(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[:, 0], R[:, 1]])


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    if np.max(np.abs(R.T @ R - np.eye(3))) >= tol:
        return False
    return abs(np.linalg.det(R) - 1.0) < tol


def axis_angle_to_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues formula; ``axis`` need not be normalized."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def geodesic_distance(Ra, Rb) -> float:
    """Angle in radians of the relative rotation ``Ra^T Rb``, in [0, pi].

    Evaluated as ``atan2(sin, cos)`` of the relative rotation; this equals the
    clamped ``arccos((tr - 1) / 2)`` but keeps full precision near 0 and pi.
    """
    M = np.asarray(Ra, dtype=np.float64).T @ np.asarray(Rb, dtype=np.float64)
    c = (M[0, 0] + M[1, 1] + M[2, 2] - 1.0) * 0.5
    s = 0.5 * math.sqrt(
        (M[2, 1] - M[1, 2]) ** 2 + (M[0, 2] - M[2, 0]) ** 2 + (M[1, 0] - M[0, 1]) ** 2
    )
    return math.atan2(s, c)


def symmetry_aware_rot_distance(Ra, Rb, sym: SymmetrySpec | None = None) -> float:
    if sym is None or sym.kind == "none":
        return geodesic_distance(Ra, Rb)
    Ra = np.asarray(Ra, dtype=np.float64)
    Rb = np.asarray(Rb, dtype=np.float64)
    if sym.kind == "continuous":
        e = sym.axis_array()
        a, b = Ra @ e, Rb @ e
        # atan2 keeps full precision near 0 where arccos loses half the digits
        return math.atan2(float(np.linalg.norm(np.cross(a, b))), float(a @ b))
    return min(geodesic_distance(Ra @ S, Rb) for S in sym.rotation_set())


# --------------------------------------------------------------------------
# Camera geometry


def recover_center(box: BBox2D, delta) -> np.ndarray:
    """Box center plus predicted offset, clamped to the image."""
    delta = np.asarray(delta, dtype=np.float64).reshape(2)
    return np.clip(box.center + delta, 0.0, 1.0)


def backproject(u, z: float, cam: CameraIntrinsics) -> np.ndarray:
    """Lift a normalized image point at metric depth ``z`` to camera space."""
    z = float(z)
    if not z > 0:
        raise NonPositiveDepth(f"depth must be positive, got {z!r}")
    u = np.asarray(u, dtype=np.float64).reshape(2)
    px = u[0] * cam.width
    py = u[1] * cam.height
    return np.array([z * (px - cam.cx) / cam.fx, z * (py - cam.cy) / cam.fy, z])


def project_point(t, cam: CameraIntrinsics) -> tuple[np.ndarray, float]:
    """Inverse of :func:`backproject`: returns ``(u, depth)``."""
    t = np.asarray(t, dtype=np.float64).reshape(3)
    z = float(t[2])
    if not z > 0:
        raise NonPositiveDepth(f"point must be in front of the camera, z={z!r}")
    px = cam.fx * t[0] / z + cam.cx
    py = cam.fy * t[1] / z + cam.cy
    return np.array([px / cam.width, py / cam.height]), z


def cuboid_corners(pose: Pose9D) -> np.ndarray:
    """The 8 corners (8, 3) of the oriented box, in camera coordinates."""
    local = CUBOID_SIGNS * (0.5 * pose.scale)
    return local @ pose.rotation.T + pose.translation


def project_cuboid_to_bbox(pose: Pose9D, cam: CameraIntrinsics) -> BBox2D:
    corners = cuboid_corners(pose)
    if np.any(corners[:, 2] <= 0):
        raise BehindCamera("cuboid has corners on or behind the image plane")
    px = cam.fx * corners[:, 0] / corners[:, 2] + cam.cx
    py = cam.fy * corners[:, 1] / corners[:, 2] + cam.cy
    x0, x1 = np.clip([px.min() / cam.width, px.max() / cam.width], 0.0, 1.0)
    y0, y1 = np.clip([py.min() / cam.height, py.max() / cam.height], 0.0, 1.0)
    if not (x1 > x0 and y1 > y0):
        raise OutOfFrame("projected cuboid does not overlap the image")
    return BBox2D(0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0)
