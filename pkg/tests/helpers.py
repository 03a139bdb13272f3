"""Shared object builders for the test suite."""

from __future__ import annotations

import numpy as np

from artikit.artcore import (
    ArticulatedObject,
    JointSpec,
    JointType,
    Part,
    PartGeometry,
    ROOT,
)

BASE_JOINT = JointSpec(JointType.FIXED, "base", (0, 0, 0), (0, 0, 1), (0, 0), ROOT)


def box_points(lo, hi, n_per_axis: int = 3) -> np.ndarray:
    """Regular lattice filling an axis-aligned box (corners included)."""
    axes = [np.linspace(lo[i], hi[i], n_per_axis) for i in range(3)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack(g, axis=-1).reshape(-1, 3)


def part(lo, hi, joint: JointSpec, n_per_axis: int = 3) -> Part:
    return Part(PartGeometry.from_points(box_points(lo, hi, n_per_axis)), joint)


def cabinet(door_axis=(0, 0, 1), door_range=(0.0, np.pi / 2)) -> ArticulatedObject:
    """Base slab at the back plus a revolute door panel in front."""
    door = JointSpec(JointType.REVOLUTE, "door", (0.1, 0.55, 0.5), door_axis, door_range, 0)
    return ArticulatedObject((
        part((0.1, 0.7, 0.1), (0.9, 0.9, 0.9), BASE_JOINT),
        part((0.1, 0.5, 0.1), (0.9, 0.6, 0.9), door),
    ))


def drawer_unit() -> ArticulatedObject:
    drawer = JointSpec(JointType.PRISMATIC, "drawer", (0.5, 0.4, 0.3), (0, -1, 0), (0.0, 0.4), 0)
    return ArticulatedObject((
        part((0.1, 0.6, 0.1), (0.9, 0.9, 0.9), BASE_JOINT),
        part((0.2, 0.2, 0.15), (0.8, 0.6, 0.45), drawer),
    ))


def random_depth1_object(rng: np.random.Generator, num_parts: int | None = None) -> ArticulatedObject:
    """Random valid depth-1 object with 2..4 parts inside the unit cube."""
    k = int(num_parts if num_parts is not None else rng.integers(2, 5))
    parts = [part((0.3, 0.6, 0.05), (0.7, 0.95, 0.6), BASE_JOINT)]
    for i in range(1, k):
        lo = rng.uniform(0.05, 0.5, size=3)
        hi = lo + rng.uniform(0.1, 0.3, size=3)
        jtype = JointType.REVOLUTE if rng.uniform() < 0.5 else JointType.PRISMATIC
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        if jtype is JointType.REVOLUTE:
            origin = lo.copy()  # on the AABB corner, i.e. on its surface
            jrange = (0.0, float(rng.uniform(0.3, np.pi / 2)))
        else:
            origin = (lo + hi) / 2.0
            jrange = (0.0, float(rng.uniform(0.1, 0.3)))
        semantic = ("door", "drawer", "lid", "other")[int(rng.integers(0, 4))]
        parts.append(part(lo, hi, JointSpec(jtype, semantic, tuple(origin), tuple(axis), jrange, 0)))
    return ArticulatedObject(tuple(parts))
