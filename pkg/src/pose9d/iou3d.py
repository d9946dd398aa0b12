"""Exact IoU between oriented cuboids by convex half-space clipping.

A convex polytope is carried through the kernels as a stack of face
polygons ``faces[f, :counts[f]]``. Clipping against ``n.x <= d`` runs
Sutherland-Hodgman on every face and closes the cut with a cap polygon
built from the edge crossings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import CUBOID_FACES, CUBOID_SIGNS, Pose9D, SymmetrySpec

DEFAULT_SYMMETRY_STEPS = 20

_FACE_IDX = np.array(CUBOID_FACES, dtype=np.int64)


# --------------------------------------------------------------------------
# numba kernels


@njit(cache=True, nogil=True, inline="always")
def _same(buf, f, k, x0, x1, x2):
    return buf[f, k, 0] == x0 and buf[f, k, 1] == x1 and buf[f, k, 2] == x2


@njit(cache=True, nogil=True)
def _clip_into(src, scounts, snf, dst, dcounts, n0, n1, n2, offset, cap, ang):
    """Clip ``src`` by ``n.x <= offset`` into ``dst``.

    Returns the new face count, or -1 when nothing is cut away (``dst`` is
    then untouched and the caller keeps ``src``).
    """
    dmax = -np.inf
    dmin = np.inf
    for f in range(snf):
        for k in range(scounts[f]):
            s = src[f, k, 0] * n0 + src[f, k, 1] * n1 + src[f, k, 2] * n2 - offset
            if s > dmax:
                dmax = s
            if s < dmin:
                dmin = s
    if dmax <= 0.0:
        return -1
    if dmin >= 0.0:
        return 0

    ncap = 0
    nout = 0
    for f in range(snf):
        m = scounts[f]
        c = 0
        for k in range(m):
            kq = k + 1 if k + 1 < m else 0
            p0, p1, p2 = src[f, k, 0], src[f, k, 1], src[f, k, 2]
            q0, q1, q2 = src[f, kq, 0], src[f, kq, 1], src[f, kq, 2]
            dp = p0 * n0 + p1 * n1 + p2 * n2 - offset
            dq = q0 * n0 + q1 * n1 + q2 * n2 - offset
            if dp <= 0.0:
                if c == 0 or not _same(dst, nout, c - 1, p0, p1, p2):
                    dst[nout, c, 0] = p0
                    dst[nout, c, 1] = p1
                    dst[nout, c, 2] = p2
                    c += 1
                if dq > 0.0:
                    # inside endpoint first so both faces sharing the edge agree bitwise
                    t = dp / (dp - dq)
                    x0 = p0 + t * (q0 - p0)
                    x1 = p1 + t * (q1 - p1)
                    x2 = p2 + t * (q2 - p2)
                    if not _same(dst, nout, c - 1, x0, x1, x2):
                        dst[nout, c, 0] = x0
                        dst[nout, c, 1] = x1
                        dst[nout, c, 2] = x2
                        c += 1
                    cap[ncap, 0] = x0
                    cap[ncap, 1] = x1
                    cap[ncap, 2] = x2
                    ncap += 1
            elif dq <= 0.0:
                t = dq / (dq - dp)
                x0 = q0 + t * (p0 - q0)
                x1 = q1 + t * (p1 - q1)
                x2 = q2 + t * (p2 - q2)
                if c == 0 or not _same(dst, nout, c - 1, x0, x1, x2):
                    dst[nout, c, 0] = x0
                    dst[nout, c, 1] = x1
                    dst[nout, c, 2] = x2
                    c += 1
        if c > 1 and _same(dst, nout, 0, dst[nout, c - 1, 0], dst[nout, c - 1, 1], dst[nout, c - 1, 2]):
            c -= 1
        if c >= 3:
            dcounts[nout] = c
            nout += 1

    if ncap >= 3:
        # order the cap counter-clockwise about the outward normal
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        for i in range(ncap):
            c0 += cap[i, 0]
            c1 += cap[i, 1]
            c2 += cap[i, 2]
        c0 /= ncap
        c1 /= ncap
        c2 /= ncap
        a0, a1, a2 = abs(n0), abs(n1), abs(n2)
        if a0 <= a1 and a0 <= a2:
            e0, e1, e2 = 1.0, 0.0, 0.0
        elif a1 <= a2:
            e0, e1, e2 = 0.0, 1.0, 0.0
        else:
            e0, e1, e2 = 0.0, 0.0, 1.0
        en = e0 * n0 + e1 * n1 + e2 * n2
        u0, u1, u2 = e0 - en * n0, e1 - en * n1, e2 - en * n2
        un = math.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
        u0 /= un
        u1 /= un
        u2 /= un
        v0 = n1 * u2 - n2 * u1
        v1 = n2 * u0 - n0 * u2
        v2 = n0 * u1 - n1 * u0
        for i in range(ncap):
            d0, d1, d2 = cap[i, 0] - c0, cap[i, 1] - c1, cap[i, 2] - c2
            ang[i] = math.atan2(d0 * v0 + d1 * v1 + d2 * v2, d0 * u0 + d1 * u1 + d2 * u2)
        order = np.argsort(ang[:ncap])
        c = 0
        for i in range(ncap):
            j = order[i]
            x0, x1, x2 = cap[j, 0], cap[j, 1], cap[j, 2]
            if c > 0 and _same(dst, nout, c - 1, x0, x1, x2):
                continue
            dst[nout, c, 0] = x0
            dst[nout, c, 1] = x1
            dst[nout, c, 2] = x2
            c += 1
        if c > 1 and _same(dst, nout, 0, dst[nout, c - 1, 0], dst[nout, c - 1, 1], dst[nout, c - 1, 2]):
            c -= 1
        if c >= 3:
            dcounts[nout] = c
            nout += 1
    return nout


@njit(cache=True, nogil=True)
def _clip_faces(faces, counts, nf, normal, offset):
    """Allocating single clip used by the polytope API."""
    vcap = max(faces.shape[1] + 1, nf + 1)
    dst = np.zeros((nf + 1, vcap, 3))
    dcounts = np.zeros(nf + 1, dtype=np.int64)
    cap = np.empty((nf + 1, 3))
    ang = np.empty(nf + 1)
    nout = _clip_into(
        faces, counts, nf, dst, dcounts, normal[0], normal[1], normal[2], offset, cap, ang
    )
    if nout < 0:
        return faces, counts, nf
    return dst, dcounts, nout


@njit(cache=True, nogil=True)
def _faces_volume(faces, counts, nf):
    if nf <= 0:
        return 0.0
    r0 = 0.0
    r1 = 0.0
    r2 = 0.0
    total = 0
    for f in range(nf):
        for k in range(counts[f]):
            r0 += faces[f, k, 0]
            r1 += faces[f, k, 1]
            r2 += faces[f, k, 2]
            total += 1
    r0 /= total
    r1 /= total
    r2 /= total
    vol = 0.0
    for f in range(nf):
        a0, a1, a2 = faces[f, 0, 0] - r0, faces[f, 0, 1] - r1, faces[f, 0, 2] - r2
        for k in range(1, counts[f] - 1):
            b0, b1, b2 = faces[f, k, 0] - r0, faces[f, k, 1] - r1, faces[f, k, 2] - r2
            d0, d1, d2 = faces[f, k + 1, 0] - r0, faces[f, k + 1, 1] - r1, faces[f, k + 1, 2] - r2
            det = a0 * (b1 * d2 - b2 * d1) - a1 * (b0 * d2 - b2 * d0) + a2 * (b0 * d1 - b1 * d0)
            # every tetrahedron from an interior point has the same orientation
            vol += abs(det)
    return vol / 6.0


# cuboid clipping never exceeds 12 faces of 10 vertices
_MAXF = 16
_MAXV = 16


@njit(cache=True, nogil=True)
def _cuboid_intersection(Ra, ta, sa, Rb, tb, sb, face_idx, signs):
    # corners of A expressed in B's frame, where B is the box |x_k| <= sb_k / 2
    corners = np.empty((8, 3))
    for i in range(8):
        l0 = signs[i, 0] * 0.5 * sa[0]
        l1 = signs[i, 1] * 0.5 * sa[1]
        l2 = signs[i, 2] * 0.5 * sa[2]
        w0 = Ra[0, 0] * l0 + Ra[0, 1] * l1 + Ra[0, 2] * l2 + ta[0] - tb[0]
        w1 = Ra[1, 0] * l0 + Ra[1, 1] * l1 + Ra[1, 2] * l2 + ta[1] - tb[1]
        w2 = Ra[2, 0] * l0 + Ra[2, 1] * l1 + Ra[2, 2] * l2 + ta[2] - tb[2]
        for r in range(3):
            corners[i, r] = Rb[0, r] * w0 + Rb[1, r] * w1 + Rb[2, r] * w2
    buf_a = np.empty((_MAXF, _MAXV, 3))
    buf_b = np.empty((_MAXF, _MAXV, 3))
    cnt_a = np.zeros(_MAXF, dtype=np.int64)
    cnt_b = np.zeros(_MAXF, dtype=np.int64)
    cap = np.empty((_MAXF, 3))
    ang = np.empty(_MAXF)
    for f in range(6):
        cnt_a[f] = 4
        for k in range(4):
            for r in range(3):
                buf_a[f, k, r] = corners[face_idx[f, k], r]
    nf = 6
    swapped = False
    for axis in range(3):
        for sign in (1.0, -1.0):
            n0 = sign if axis == 0 else 0.0
            n1 = sign if axis == 1 else 0.0
            n2 = sign if axis == 2 else 0.0
            if swapped:
                res = _clip_into(buf_b, cnt_b, nf, buf_a, cnt_a, n0, n1, n2, 0.5 * sb[axis], cap, ang)
            else:
                res = _clip_into(buf_a, cnt_a, nf, buf_b, cnt_b, n0, n1, n2, 0.5 * sb[axis], cap, ang)
            if res == 0:
                return 0.0
            if res > 0:
                nf = res
                swapped = not swapped
    if swapped:
        return _faces_volume(buf_b, cnt_b, nf)
    return _faces_volume(buf_a, cnt_a, nf)


@njit(cache=True, nogil=True)
def _cuboid_iou(Ra, ta, sa, Rb, tb, sb, face_idx, signs):
    va = sa[0] * sa[1] * sa[2]
    vb = sb[0] * sb[1] * sb[2]
    if not (va > 0.0 and vb > 0.0):
        return 0.0
    d0, d1, d2 = ta[0] - tb[0], ta[1] - tb[1], ta[2] - tb[2]
    reach = 0.5 * (
        math.sqrt(sa[0] * sa[0] + sa[1] * sa[1] + sa[2] * sa[2])
        + math.sqrt(sb[0] * sb[0] + sb[1] * sb[1] + sb[2] * sb[2])
    )
    if d0 * d0 + d1 * d1 + d2 * d2 >= reach * reach:
        return 0.0
    inter = _cuboid_intersection(Ra, ta, sa, Rb, tb, sb, face_idx, signs)
    union = va + vb - inter
    if union <= 0.0:
        return 0.0
    iou = inter / union
    if iou > 1.0:
        iou = 1.0
    if iou < 0.0:
        iou = 0.0
    return iou


@njit(cache=True, nogil=True)
def _spun(Rb, e, angle, out):
    """out = Rb @ Rot(e, angle), written without temporaries."""
    c = math.cos(angle)
    s = math.sin(angle)
    C = 1.0 - c
    x, y, z = e[0], e[1], e[2]
    r00 = c + x * x * C
    r01 = x * y * C - z * s
    r02 = x * z * C + y * s
    r10 = y * x * C + z * s
    r11 = c + y * y * C
    r12 = y * z * C - x * s
    r20 = z * x * C - y * s
    r21 = z * y * C + x * s
    r22 = c + z * z * C
    for i in range(3):
        b0, b1, b2 = Rb[i, 0], Rb[i, 1], Rb[i, 2]
        out[i, 0] = b0 * r00 + b1 * r10 + b2 * r20
        out[i, 1] = b0 * r01 + b1 * r11 + b2 * r21
        out[i, 2] = b0 * r02 + b1 * r12 + b2 * r22


@njit(cache=True, nogil=True)
def _aligning_angle(Ra, Rb, e):
    # argmax over phi of trace(Ra^T Rb Rot(e, phi)) = A cos(phi) + B sin(phi) + const
    M = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            M[i, j] = Ra[0, i] * Rb[0, j] + Ra[1, i] * Rb[1, j] + Ra[2, i] * Rb[2, j]
    eMe = 0.0
    for i in range(3):
        for j in range(3):
            eMe += e[i] * M[i, j] * e[j]
    # B = trace(M [e]_x)
    B = (
        e[0] * (M[1, 2] - M[2, 1])
        + e[1] * (M[2, 0] - M[0, 2])
        + e[2] * (M[0, 1] - M[1, 0])
    )
    A = M[0, 0] + M[1, 1] + M[2, 2] - eMe
    return math.atan2(B, A)


@njit(cache=True, nogil=True)
def _cuboid_iou_spin(Ra, ta, sa, Rb, tb, sb, e, steps, face_idx, signs):
    best = _cuboid_iou(Ra, ta, sa, Rb, tb, sb, face_idx, signs)
    if best == 0.0 or best >= 1.0:
        return best
    Rs = np.empty((3, 3))
    _spun(Rb, e, _aligning_angle(Ra, Rb, e), Rs)
    v = _cuboid_iou(Ra, ta, sa, Rs, tb, sb, face_idx, signs)
    if v > best:
        best = v
    for k in range(1, steps):
        _spun(Rb, e, 2.0 * math.pi * k / steps, Rs)
        v = _cuboid_iou(Ra, ta, sa, Rs, tb, sb, face_idx, signs)
        if v > best:
            best = v
    return best


@njit(cache=True, nogil=True)
def _pairwise_iou(Ra, ta, sa, Rb, tb, sb, axes, spin, steps, face_idx, signs):
    n = Ra.shape[0]
    m = Rb.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            if spin[j]:
                out[i, j] = _cuboid_iou_spin(
                    Ra[i], ta[i], sa[i], Rb[j], tb[j], sb[j], axes[j], steps, face_idx, signs
                )
            else:
                out[i, j] = _cuboid_iou(
                    Ra[i], ta[i], sa[i], Rb[j], tb[j], sb[j], face_idx, signs
                )
    return out


# --------------------------------------------------------------------------
# Polytope API


@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    """Vertices (n, 3) plus outward-oriented faces as vertex-index tuples."""

    vertices: np.ndarray
    faces: tuple

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    @classmethod
    def empty(cls) -> "ConvexPolytope":
        return cls(np.zeros((0, 3)), ())

    @classmethod
    def from_pose(cls, pose: Pose9D) -> "ConvexPolytope":
        local = CUBOID_SIGNS * (0.5 * pose.scale)
        verts = local @ pose.rotation.T + pose.translation
        return cls(verts, CUBOID_FACES)

    @classmethod
    def box(cls, lo, hi) -> "ConvexPolytope":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        center = 0.5 * (lo + hi)
        return cls.from_pose(Pose9D(np.eye(3), center, hi - lo))

    def _face_stack(self):
        nf = len(self.faces)
        vmax = max((len(f) for f in self.faces), default=3)
        stack = np.zeros((max(nf, 1), vmax, 3))
        counts = np.zeros(max(nf, 1), dtype=np.int64)
        for i, face in enumerate(self.faces):
            stack[i, : len(face)] = self.vertices[list(face)]
            counts[i] = len(face)
        return stack, counts, nf

    @classmethod
    def _from_stack(cls, stack, counts, nf) -> "ConvexPolytope":
        index = {}
        verts = []
        faces = []
        for f in range(nf):
            idx = []
            for k in range(counts[f]):
                key = tuple(stack[f, k])
                if key not in index:
                    index[key] = len(verts)
                    verts.append(key)
                idx.append(index[key])
            faces.append(tuple(idx))
        return cls(np.array(verts, dtype=np.float64).reshape(-1, 3), tuple(faces))


def clip_polytope(p: ConvexPolytope, normal, offset: float) -> ConvexPolytope:
    """Intersect ``p`` with the half-space ``normal . x <= offset``.

    ``normal`` need not be unit length. An empty result has no faces.
    """
    if p.is_empty:
        return p
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(n)
    if not norm > 0:
        raise ValueError("half-space normal must be non-zero")
    n = n / norm
    offset = float(offset) / norm
    dist = p.vertices @ n - offset
    if dist.max() <= 0.0:
        return p
    stack, counts, nf = p._face_stack()
    out, ocounts, onf = _clip_faces(stack, counts, nf, n, offset)
    if onf == 0:
        return ConvexPolytope.empty()
    return ConvexPolytope._from_stack(out, ocounts, onf)


def polytope_volume(p: ConvexPolytope) -> float:
    if p.is_empty:
        return 0.0
    stack, counts, nf = p._face_stack()
    return float(_faces_volume(stack, counts, nf))


# --------------------------------------------------------------------------
# Cuboid IoU


def _pose_arrays(pose: Pose9D):
    return (
        np.ascontiguousarray(pose.rotation),
        np.ascontiguousarray(pose.translation),
        np.ascontiguousarray(pose.scale),
    )


def iou_3d(a: Pose9D, b: Pose9D) -> float:
    """Volume IoU of two oriented cuboids; 0 when either has zero volume."""
    return float(_cuboid_iou(*_pose_arrays(a), *_pose_arrays(b), _FACE_IDX, CUBOID_SIGNS))


def intersection_volume(a: Pose9D, b: Pose9D) -> float:
    return float(
        _cuboid_intersection(*_pose_arrays(a), *_pose_arrays(b), _FACE_IDX, CUBOID_SIGNS)
    )


def iou_3d_symmetric(
    a: Pose9D,
    b: Pose9D,
    sym: SymmetrySpec | None = None,
    steps: int = DEFAULT_SYMMETRY_STEPS,
) -> float:
    """IoU maximized over spins of ``b`` about its continuous symmetry axis.

    The candidate spins are ``steps`` evenly spaced angles plus the spin
    that best aligns ``b``'s frame with ``a``'s. For any other symmetry
    kind this is plain :func:`iou_3d`.
    """
    if sym is None or sym.kind != "continuous":
        return iou_3d(a, b)
    return float(
        _cuboid_iou_spin(
            *_pose_arrays(a),
            *_pose_arrays(b),
            sym.axis_array(),
            int(steps),
            _FACE_IDX,
            CUBOID_SIGNS,
        )
    )


def pairwise_iou(preds, gts, syms=None, steps: int = DEFAULT_SYMMETRY_STEPS) -> np.ndarray:
    """IoU matrix ``(len(preds), len(gts))``.

    ``syms`` optionally gives one :class:`SymmetrySpec` per ground truth;
    continuous ones use the spin-maximized IoU.
    """
    n, m = len(preds), len(gts)
    if n == 0 or m == 0:
        return np.zeros((n, m))
    Ra = np.array([p.rotation for p in preds])
    ta = np.array([p.translation for p in preds])
    sa = np.array([p.scale for p in preds])
    Rb = np.array([g.rotation for g in gts])
    tb = np.array([g.translation for g in gts])
    sb = np.array([g.scale for g in gts])
    axes = np.zeros((m, 3))
    spin = np.zeros(m, dtype=np.bool_)
    if syms is not None:
        for j, s in enumerate(syms):
            if s is not None and s.kind == "continuous":
                axes[j] = s.axis_array()
                spin[j] = True
    return _pairwise_iou(Ra, ta, sa, Rb, tb, sb, axes, spin, int(steps), _FACE_IDX, CUBOID_SIGNS)


def iou_3d_monte_carlo(a: Pose9D, b: Pose9D, samples: int = 1_000_000, seed: int = 0) -> float:
    """Sampling estimate of the cuboid IoU, for cross-checking :func:`iou_3d`.

    Points are drawn uniformly in the axis-aligned bound of both boxes and
    tested against each box in its own frame.
    """
    if samples < 10_000:
        raise ValueError("use at least 10^4 samples")
    corners = np.vstack(
        [ConvexPolytope.from_pose(a).vertices, ConvexPolytope.from_pose(b).vertices]
    )
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    rng = np.random.default_rng(seed)
    in_a = in_b = in_both = 0
    chunk = 250_000
    remaining = samples
    while remaining > 0:
        k = min(chunk, remaining)
        pts = lo + (hi - lo) * rng.random((k, 3))
        ia = np.all(np.abs((pts - a.translation) @ a.rotation) <= 0.5 * a.scale, axis=1)
        ib = np.all(np.abs((pts - b.translation) @ b.rotation) <= 0.5 * b.scale, axis=1)
        in_a += int(ia.sum())
        in_b += int(ib.sum())
        in_both += int((ia & ib).sum())
        remaining -= k
    union = in_a + in_b - in_both
    return in_both / union if union else 0.0
