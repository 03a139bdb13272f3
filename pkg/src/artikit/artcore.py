"""Domain types for articulated objects and structural tree operations.

An articulated object is an ordered list of rigid parts, each carrying a
geometry and a joint that attaches it to a parent part (or to the world for
the root). All types are immutable values; every operation returns a new
object and never mutates its input.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

log = logging.getLogger(__name__)

ROOT = -1

AXIS_NORM_TOL = 1e-6

DEFAULT_SEMANTICS = ("base", "door", "drawer", "lid", "other")


class JointType(str, Enum):
    FIXED = "fixed"
    PRISMATIC = "prismatic"
    REVOLUTE = "revolute"


JOINT_TYPES = (JointType.FIXED, JointType.PRISMATIC, JointType.REVOLUTE)


def canonical_semantic(label: str, vocab: tuple[str, ...] = DEFAULT_SEMANTICS) -> str:
    """Maps a free-form semantic label onto the vocabulary, with "other" absorbing unknowns."""
    return label if label in vocab else "other"


@dataclass(frozen=True)
class JointSpec:
    """Joint parameters attaching one part to its parent.

    ``origin`` and ``axis`` are expressed in world coordinates at rest.
    ``range`` is (lo, hi) in radians for revolute joints and world units for
    prismatic joints; fixed joints carry (0, 0).
    """

    joint_type: JointType
    semantic: str
    origin: tuple[float, float, float]
    axis: tuple[float, float, float]
    range: tuple[float, float]
    parent: int

    def __post_init__(self):
        object.__setattr__(self, "joint_type", JointType(self.joint_type))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "axis", tuple(float(v) for v in self.axis))
        object.__setattr__(self, "range", tuple(float(v) for v in self.range))

    @property
    def is_fixed(self) -> bool:
        return self.joint_type is JointType.FIXED

    def axis_array(self) -> np.ndarray:
        return np.asarray(self.axis, dtype=np.float64)

    def origin_array(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=np.float64)


def unit_axis(axis) -> tuple[float, float, float]:
    """Normalizes a direction vector; raises on degenerate input."""
    v = np.asarray(axis, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n < 1e-8:
        raise ValueError(f"degenerate axis {tuple(axis)}: norm {n:.3e} < 1e-8")
    return tuple((v / n).tolist())


class GeometryKind(str, Enum):
    POINTS = "points"
    MESH = "mesh"
    VOXELS = "voxels"


@dataclass(frozen=True)
class PartGeometry:
    """Rigid geometry of one part with a cached axis-aligned bounding box.

    ``kind`` selects the payload: POINTS uses ``points`` (N,3); MESH uses
    ``points`` as vertices plus ``faces`` (M,3); VOXELS uses integer
    ``voxels`` (N,3) on a grid of ``resolution`` cells mapped to the unit
    cube (cell c spans [c/R, (c+1)/R) per axis).
    """

    kind: GeometryKind
    points: np.ndarray
    faces: np.ndarray | None = None
    voxels: np.ndarray | None = None
    resolution: int | None = None
    bounds: tuple[np.ndarray, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", GeometryKind(self.kind))
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.faces is not None:
            faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
            faces.setflags(write=False)
            object.__setattr__(self, "faces", faces)
        if self.voxels is not None:
            vox = np.asarray(self.voxels, dtype=np.int64).reshape(-1, 3)
            vox.setflags(write=False)
            object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "bounds", self._compute_bounds())

    @staticmethod
    def from_points(points) -> "PartGeometry":
        return PartGeometry(GeometryKind.POINTS, points)

    @staticmethod
    def from_mesh(vertices, faces) -> "PartGeometry":
        return PartGeometry(GeometryKind.MESH, vertices, faces=faces)

    @staticmethod
    def from_voxels(coords, resolution: int) -> "PartGeometry":
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        centers = (coords + 0.5) / float(resolution)
        return PartGeometry(
            GeometryKind.VOXELS, centers, voxels=coords, resolution=int(resolution)
        )

    def _compute_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.points.shape[0] == 0:
            zero = np.zeros(3)
            return zero, zero.copy()
        if self.kind is GeometryKind.VOXELS:
            r = float(self.resolution)
            lo = self.voxels.min(axis=0) / r
            hi = (self.voxels.max(axis=0) + 1) / r
        else:
            lo = self.points.min(axis=0)
            hi = self.points.max(axis=0)
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        lo.setflags(write=False)
        hi.setflags(write=False)
        return lo, hi

    @property
    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.bounds

    def is_empty(self) -> bool:
        return self.points.shape[0] == 0


@dataclass(frozen=True)
class Part:
    geometry: PartGeometry
    joint: JointSpec


@dataclass(frozen=True)
class ArticulatedObject:
    """Ordered parts forming a single-root kinematic tree."""

    parts: tuple[Part, ...]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    @property
    def num_parts(self) -> int:
        return len(self.parts)

    def joints(self) -> list[JointSpec]:
        return [p.joint for p in self.parts]

    def geometries(self) -> list[PartGeometry]:
        return [p.geometry for p in self.parts]

    def base_index(self) -> int:
        """Index of the unique root part; raises if zero or several roots."""
        roots = [i for i, p in enumerate(self.parts) if p.joint.parent == ROOT]
        if len(roots) != 1:
            raise ValueError(f"expected exactly one root part, found {len(roots)}")
        return roots[0]


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    part: int | None = None

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "part": self.part}


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def to_dict(self) -> dict:
        return {"valid": self.ok, "violations": [v.to_dict() for v in self.violations]}


def validate_object(obj: ArticulatedObject) -> ValidationReport:
    """Checks every structural invariant and reports all violations.

    Pure diagnostics: never raises, and an empty report means the object is
    valid. Checks axis normalization, range ordering, fixed-joint ranges,
    parent indices, single-root tree shape (no cycles, no forests), base
    semantics, and nonempty geometry.
    """
    out: list[Violation] = []
    k = obj.num_parts
    if k == 0:
        return ValidationReport((Violation("empty-object", "object has no parts"),))

    for i, part in enumerate(obj.parts):
        j = part.joint
        if not j.is_fixed:
            norm = float(np.linalg.norm(j.axis_array()))
            if norm < 1e-8:
                out.append(Violation("zero-axis", f"part {i}: zero axis on {j.joint_type.value} joint", i))
            elif abs(norm - 1.0) > AXIS_NORM_TOL:
                out.append(Violation("non-unit-axis", f"part {i}: axis norm {norm:.6f} != 1", i))
        if j.range[0] > j.range[1]:
            out.append(Violation("range-order", f"part {i}: range lo {j.range[0]} > hi {j.range[1]}", i))
        if j.is_fixed and j.range != (0.0, 0.0):
            out.append(Violation("fixed-range", f"part {i}: fixed joint carries nonzero range {j.range}", i))
        if j.parent != ROOT and not (0 <= j.parent < k):
            out.append(Violation("parent-index", f"part {i}: parent {j.parent} out of range", i))
        if j.parent == i:
            out.append(Violation("self-parent", f"part {i} is its own parent", i))
        if not np.all(np.isfinite(j.origin_array())) or not np.all(np.isfinite(j.axis_array())):
            out.append(Violation("non-finite", f"part {i}: non-finite joint parameters", i))
        if part.geometry.is_empty():
            out.append(Violation("empty-geometry", f"part {i}: empty geometry", i))

    roots = [i for i, p in enumerate(obj.parts) if p.joint.parent == ROOT]
    if len(roots) == 0:
        out.append(Violation("no-root", "no part has parent ROOT"))
    elif len(roots) > 1:
        out.append(Violation("multiple-roots", f"parts {roots} all have parent ROOT"))

    bases = [i for i, p in enumerate(obj.parts) if p.joint.semantic == "base"]
    if len(bases) != 1:
        out.append(Violation("base-count", f"expected exactly one base part, found {len(bases)}"))
    elif obj.parts[bases[0]].joint.parent != ROOT:
        out.append(Violation("base-not-root", f"base part {bases[0]} has parent {obj.parts[bases[0]].joint.parent}", bases[0]))

    # Cycle detection: walk parent chains with a visited-state DFS.
    state = [0] * k  # 0 unvisited, 1 on stack, 2 done
    for start in range(k):
        if state[start]:
            continue
        chain = []
        node = start
        while node != ROOT and 0 <= node < k and state[node] == 0:
            state[node] = 1
            chain.append(node)
            node = obj.parts[node].joint.parent
        if node != ROOT and 0 <= node < k and state[node] == 1:
            out.append(Violation("cycle", f"parent cycle through part {node}", node))
        for n in chain:
            state[n] = 2

    return ValidationReport(tuple(out))


def _merge_geometry(parent: PartGeometry, child: PartGeometry) -> PartGeometry:
    """Unions two geometries by concatenating their point/vertex sets.

    Mesh+mesh keeps faces (child indices offset); voxel+voxel with matching
    resolution unions cells; any mixed pairing degrades to a point set.
    """
    if parent.kind is GeometryKind.MESH and child.kind is GeometryKind.MESH:
        verts = np.vstack([parent.points, child.points])
        faces = np.vstack([parent.faces, child.faces + parent.points.shape[0]])
        return PartGeometry.from_mesh(verts, faces)
    if (
        parent.kind is GeometryKind.VOXELS
        and child.kind is GeometryKind.VOXELS
        and parent.resolution == child.resolution
    ):
        cells = np.unique(np.vstack([parent.voxels, child.voxels]), axis=0)
        return PartGeometry.from_voxels(cells, parent.resolution)
    return PartGeometry.from_points(np.vstack([parent.points, child.points]))


def collapse_fixed_joints(obj: ArticulatedObject) -> ArticulatedObject:
    """Merges every fixed-joint non-root part into its nearest movable ancestor.

    The surviving parts keep their original relative order; parent indices
    are remapped. Degrees of freedom are unchanged: the multiset of
    non-fixed joint parameters is preserved exactly. Returns the input
    object unchanged when there is nothing to collapse.
    """
    report = validate_object(obj)
    blocking = report.codes() & {"cycle", "no-root", "multiple-roots", "parent-index", "self-parent"}
    if blocking:
        raise ValueError(f"cannot collapse invalid tree: {sorted(blocking)}")

    k = obj.num_parts
    removed = [p.joint.is_fixed and p.joint.parent != ROOT for p in obj.parts]
    if not any(removed):
        return obj

    def survivor_of(i: int) -> int:
        while removed[i]:
            i = obj.parts[i].joint.parent
        return i

    geoms: dict[int, PartGeometry] = {i: obj.parts[i].geometry for i in range(k) if not removed[i]}
    # Merge children in index order so repeated merges are deterministic.
    for i in range(k):
        if removed[i]:
            target = survivor_of(i)
            geoms[target] = _merge_geometry(geoms[target], obj.parts[i].geometry)

    survivors = [i for i in range(k) if not removed[i]]
    new_index = {old: new for new, old in enumerate(survivors)}
    parts = []
    for old in survivors:
        joint = obj.parts[old].joint
        parent = joint.parent if joint.parent == ROOT else new_index[survivor_of(joint.parent)]
        parts.append(Part(geoms[old], replace(joint, parent=parent)))
    return ArticulatedObject(tuple(parts))


def build_depth1(obj: ArticulatedObject) -> ArticulatedObject:
    """Reparents every non-base part directly to the base part.

    Joint origins and axes are world-frame quantities at rest, and the base
    rest pose is the world frame, so re-parenting only rewrites the parent
    index. Requires a collapsed object with exactly one base part.
    """
    bases = [i for i, p in enumerate(obj.parts) if p.joint.semantic == "base"]
    if len(bases) != 1:
        raise ValueError(f"depth-1 normalization needs exactly one base part, found {len(bases)}")
    base = bases[0]
    if obj.parts[base].joint.parent != ROOT:
        raise ValueError(f"base part {base} is not the tree root")

    changed = False
    parts = []
    for i, part in enumerate(obj.parts):
        if i == base or part.joint.parent == base:
            parts.append(part)
        else:
            parts.append(Part(part.geometry, replace(part.joint, parent=base)))
            changed = True
    return ArticulatedObject(tuple(parts)) if changed else obj


def is_depth1(obj: ArticulatedObject) -> bool:
    try:
        base = obj.base_index()
    except ValueError:
        return False
    return all(p.joint.parent == base for i, p in enumerate(obj.parts) if i != base)


def simplify(obj: ArticulatedObject) -> ArticulatedObject:
    """Collapse fixed joints, then normalize to a depth-1 tree."""
    return build_depth1(collapse_fixed_joints(obj))
