"""Forward kinematics under joint states, state sampling, and AABB projection.

Everything operates on the depth-1 convention from :mod:`artikit.artcore`:
joint origins and axes are world-frame rest quantities, so posing a part
applies a single rigid transform derived from its own joint value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .artcore import ArticulatedObject, JointSpec, JointType, Part, PartGeometry

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion x -> R x + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation is not orthonormal within 1e-9")
        if np.linalg.det(r) < 0:
            raise ValueError("rotation has negative determinant")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Returns self ∘ other (apply ``other`` first)."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class JointState:
    """Per-part joint values, aligned with the object's part order.

    Fixed joints are pinned to 0 and all values are clamped into the joint
    range (with a logged warning) rather than rejected, so predicted ranges
    never crash the evaluation protocol.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @staticmethod
    def resting(num_parts: int) -> "JointState":
        return JointState(np.zeros(num_parts))

    @staticmethod
    def for_object(obj: ArticulatedObject, values) -> "JointState":
        """Builds a state clamped to each joint's range, zeroing fixed joints."""
        v = np.asarray(values, dtype=np.float64).reshape(-1).copy()
        if v.shape[0] != obj.num_parts:
            raise ValueError(f"state length {v.shape[0]} != part count {obj.num_parts}")
        clamped = 0
        for i, part in enumerate(obj.parts):
            j = part.joint
            if j.is_fixed:
                v[i] = 0.0
                continue
            lo, hi = j.range
            if v[i] < lo or v[i] > hi:
                clamped += 1
                v[i] = min(max(v[i], lo), hi)
        if clamped:
            log.warning("clamped %d joint value(s) into range", clamped)
        return JointState(v)


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    u = np.asarray(axis, dtype=np.float64)
    x, y, z = u
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def joint_transform(joint: JointSpec, q: float) -> RigidTransform:
    """Rigid transform produced by driving a joint to value ``q``.

    Revolute: rotation by q about the axis line through the origin.
    Prismatic: translation q * axis. Fixed: identity. The value is clamped
    into the joint range with a warning when it falls outside.
    """
    if joint.is_fixed:
        return RigidTransform.identity()
    axis = joint.axis_array()
    norm = float(np.linalg.norm(axis))
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"non-unit axis (norm {norm:.6g}) on {joint.joint_type.value} joint")
    lo, hi = joint.range
    if q < lo or q > hi:
        log.warning("joint value %g outside range (%g, %g); clamping", q, lo, hi)
        q = min(max(q, lo), hi)
    if joint.joint_type is JointType.PRISMATIC:
        return RigidTransform(np.eye(3), q * axis)
    rot = rotation_about_axis(axis, q)
    origin = joint.origin_array()
    return RigidTransform(rot, origin - rot @ origin)


def pose_object(obj: ArticulatedObject, state: JointState) -> ArticulatedObject:
    """Applies a joint state to a depth-1 object and returns the posed copy.

    Each non-base part's geometry is rigidly transformed (voxel parts become
    point sets, since a rotated voxel grid is no longer axis-aligned) and
    its AABB is recomputed from the transformed points. Joint specs are
    carried through untouched: they stay rest-frame parameters.
    """
    if state.values.shape[0] != obj.num_parts:
        raise ValueError(f"state length {state.values.shape[0]} != part count {obj.num_parts}")
    parts = []
    for i, part in enumerate(obj.parts):
        q = float(state.values[i])
        if part.joint.is_fixed or q == 0.0:
            parts.append(part)
            continue
        t = joint_transform(part.joint, q)
        moved = t.apply(part.geometry.points)
        if part.geometry.kind.value == "mesh":
            geom = PartGeometry.from_mesh(moved, part.geometry.faces)
        else:
            geom = PartGeometry.from_points(moved)
        parts.append(Part(geom, part.joint))
    return ArticulatedObject(tuple(parts))


def sample_states(
    obj: ArticulatedObject,
    fractions: list[float],
    mode: str = "joint",
) -> list[JointState]:
    """Builds articulation states at fractional joint openings.

    ``mode="joint"`` (default) opens every non-fixed joint simultaneously:
    one state per fraction with q_i = lo_i + f * (hi_i - lo_i).
    ``mode="sequential"`` opens one movable joint at a time, yielding
    len(fractions) * (#movable joints) states.
    """
    for f in fractions:
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"fraction {f} outside [0, 1]")
    if mode not in ("joint", "sequential"):
        raise ValueError(f"unknown mode {mode!r}")

    lo = np.array([p.joint.range[0] for p in obj.parts])
    hi = np.array([p.joint.range[1] for p in obj.parts])
    movable = np.array([not p.joint.is_fixed for p in obj.parts])

    states = []
    if mode == "joint":
        for f in fractions:
            q = np.where(movable, lo + f * (hi - lo), 0.0)
            states.append(JointState(q))
    else:
        for idx in np.flatnonzero(movable):
            for f in fractions:
                q = np.zeros(obj.num_parts)
                q[idx] = lo[idx] + f * (hi[idx] - lo[idx])
                states.append(JointState(q))
    return states


def project_origin_to_aabb(origin, aabb: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Nearest point on the boundary surface of an axis-aligned box.

    Exterior points clamp onto the box; interior points are pushed out
    through the closest face. A fully degenerate box (min == max on every
    axis) returns its corner with a warning.
    """
    p = np.asarray(origin, dtype=np.float64).reshape(3)
    lo = np.asarray(aabb[0], dtype=np.float64).reshape(3)
    hi = np.asarray(aabb[1], dtype=np.float64).reshape(3)
    if np.any(lo > hi):
        raise ValueError("invalid AABB: min exceeds max")
    if np.all(lo == hi):
        log.warning("degenerate AABB (single point); returning its corner")
        return lo.copy()

    clamped = np.minimum(np.maximum(p, lo), hi)
    if np.any(clamped != p):
        return clamped
    # Interior: push out through the face with the smallest exit distance.
    d_lo = p - lo
    d_hi = hi - p
    dists = np.concatenate([d_lo, d_hi])
    k = int(np.argmin(dists))
    out = p.copy()
    if k < 3:
        out[k] = lo[k]
    else:
        out[k - 3] = hi[k - 3]
    return out
