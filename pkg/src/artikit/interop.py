"""File formats and converters: the JSON object schema, URDF export/import,
and per-vertex kinematic prediction extraction.

The JSON schema is authoritative for persisted objects:

    {"version": 1,
     "parts": [{"id": int, "semantic": str,
                "geometry": {"type": "points"|"mesh"|"voxels", ...},
                "joint": {"type": "fixed"|"prismatic"|"revolute",
                          "axis": [x, y, z], "origin": [x, y, z],
                          "range": [lo, hi], "parent": int|-1}}]}

Unknown fields survive a load/save round trip in ``extra`` bags, floats
are written with 9 significant digits, and keys are emitted in a canonical
order, so a file is bitwise-stable after one normalization pass.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .artcore import (
    ArticulatedObject,
    GeometryKind,
    JointSpec,
    JointType,
    Part,
    PartGeometry,
    ROOT,
    collapse_fixed_joints,
    build_depth1,
    is_depth1,
    unit_axis,
    validate_object,
)
from .kinematics import joint_transform

log = logging.getLogger(__name__)

_PART_KEYS = ("id", "semantic", "geometry", "joint")
_JOINT_KEYS = ("type", "axis", "origin", "range", "parent")
_GEOM_KEYS = ("type", "points", "vertices", "faces", "resolution", "coords")


class SchemaError(ValueError):
    """Schema violation with the JSON path of the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _round9(x: float) -> float:
    return float(f"{float(x):.9g}")


def _round_nested(value):
    if isinstance(value, float):
        return _round9(value)
    if isinstance(value, dict):
        return {k: _round_nested(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_nested(v) for v in value]
    return value


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise SchemaError(f"{path}.{key}", "missing required field")
    return mapping[key]


def _finite_vector(value, path: str, length: int) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise SchemaError(path, f"expected a length-{length} array")
    out = []
    for i, v in enumerate(value):
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise SchemaError(f"{path}[{i}]", "expected a finite number")
        out.append(float(v))
    return out


@dataclass
class ObjectDocument:
    """An articulated object plus the unknown JSON fields it arrived with."""

    obj: ArticulatedObject
    extra: dict = field(default_factory=dict)
    part_extra: list[dict] = field(default_factory=list)
    geometry_extra: list[dict] = field(default_factory=list)
    joint_extra: list[dict] = field(default_factory=list)

    @staticmethod
    def wrap(obj: ArticulatedObject) -> "ObjectDocument":
        k = obj.num_parts
        return ObjectDocument(obj, {}, [{} for _ in range(k)], [{} for _ in range(k)],
                              [{} for _ in range(k)])


def _geometry_to_json(geom: PartGeometry) -> dict:
    if geom.kind is GeometryKind.POINTS:
        return {"type": "points", "points": geom.points.tolist()}
    if geom.kind is GeometryKind.MESH:
        return {"type": "mesh", "vertices": geom.points.tolist(),
                "faces": geom.faces.tolist() if geom.faces is not None else []}
    return {"type": "voxels", "resolution": geom.resolution, "coords": geom.voxels.tolist()}


def _geometry_from_json(data: dict, path: str) -> tuple[PartGeometry, dict]:
    if not isinstance(data, dict):
        raise SchemaError(path, "expected an object")
    kind = _require(data, "type", path)
    extra = {k: v for k, v in data.items() if k not in _GEOM_KEYS}
    if kind == "points":
        pts = _require(data, "points", path)
        arr = np.asarray([_finite_vector(p, f"{path}.points[{i}]", 3) for i, p in enumerate(pts)])
        if arr.shape[0] == 0:
            raise SchemaError(f"{path}.points", "empty point set")
        return PartGeometry.from_points(arr), extra
    if kind == "mesh":
        verts = _require(data, "vertices", path)
        arr = np.asarray([_finite_vector(p, f"{path}.vertices[{i}]", 3) for i, p in enumerate(verts)])
        faces = np.asarray(data.get("faces", []), dtype=np.int64).reshape(-1, 3)
        if arr.shape[0] == 0:
            raise SchemaError(f"{path}.vertices", "empty vertex set")
        if faces.size and (faces.min() < 0 or faces.max() >= arr.shape[0]):
            raise SchemaError(f"{path}.faces", "face index out of range")
        return PartGeometry.from_mesh(arr, faces), extra
    if kind == "voxels":
        res = _require(data, "resolution", path)
        if not isinstance(res, int) or res < 1:
            raise SchemaError(f"{path}.resolution", "expected a positive integer")
        coords = np.asarray(_require(data, "coords", path), dtype=np.int64).reshape(-1, 3)
        if coords.shape[0] == 0:
            raise SchemaError(f"{path}.coords", "empty voxel set")
        if coords.min() < 0 or coords.max() >= res:
            raise SchemaError(f"{path}.coords", "voxel outside grid bounds")
        return PartGeometry.from_voxels(coords, res), extra
    raise SchemaError(f"{path}.type", f"unknown geometry type {kind!r}")


def _joint_from_json(data: dict, path: str) -> tuple[JointSpec, dict]:
    if not isinstance(data, dict):
        raise SchemaError(path, "expected an object")
    jtype = _require(data, "type", path)
    if jtype not in ("fixed", "prismatic", "revolute"):
        raise SchemaError(f"{path}.type", f"unknown joint type {jtype!r}")
    axis = _finite_vector(_require(data, "axis", path), f"{path}.axis", 3)
    origin = _finite_vector(_require(data, "origin", path), f"{path}.origin", 3)
    rng = _finite_vector(_require(data, "range", path), f"{path}.range", 2)
    parent = _require(data, "parent", path)
    if not isinstance(parent, int) or isinstance(parent, bool):
        raise SchemaError(f"{path}.parent", "expected an integer")
    semantic = data.get("semantic")
    extra = {k: v for k, v in data.items() if k not in _JOINT_KEYS}
    spec = JointSpec(JointType(jtype), semantic if semantic else "other",
                     tuple(origin), tuple(axis), (rng[0], rng[1]), parent)
    return spec, extra


def document_to_json(doc: ObjectDocument) -> dict:
    """Canonical JSON dict: fixed key order, floats at 9 significant digits."""
    parts = []
    for i, part in enumerate(doc.obj.parts):
        joint = {
            "type": part.joint.joint_type.value,
            "axis": list(part.joint.axis),
            "origin": list(part.joint.origin),
            "range": list(part.joint.range),
            "parent": part.joint.parent,
        }
        for k in sorted(doc.joint_extra[i] if i < len(doc.joint_extra) else {}):
            joint[k] = doc.joint_extra[i][k]
        geometry = _geometry_to_json(part.geometry)
        for k in sorted(doc.geometry_extra[i] if i < len(doc.geometry_extra) else {}):
            geometry[k] = doc.geometry_extra[i][k]
        entry = {"id": i, "semantic": part.joint.semantic, "geometry": geometry, "joint": joint}
        for k in sorted(doc.part_extra[i] if i < len(doc.part_extra) else {}):
            entry[k] = doc.part_extra[i][k]
        parts.append(entry)
    out = {"version": 1, "parts": parts}
    for k in sorted(doc.extra):
        out[k] = doc.extra[k]
    return _round_nested(out)


def document_from_json(data: dict) -> ObjectDocument:
    if not isinstance(data, dict):
        raise SchemaError("$", "expected a top-level object")
    version = _require(data, "version", "$")
    if version != 1:
        raise SchemaError("$.version", f"unsupported version {version!r}")
    raw_parts = _require(data, "parts", "$")
    if not isinstance(raw_parts, list) or not raw_parts:
        raise SchemaError("$.parts", "expected a nonempty array")
    extra = {k: v for k, v in data.items() if k not in ("version", "parts")}

    parts = []
    part_extra, geom_extra, joint_extra = [], [], []
    for i, entry in enumerate(raw_parts):
        path = f"parts[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(path, "expected an object")
        geometry, g_extra = _geometry_from_json(_require(entry, "geometry", path), f"{path}.geometry")
        joint, j_extra = _joint_from_json(_require(entry, "joint", path), f"{path}.joint")
        semantic = _require(entry, "semantic", path)
        if not isinstance(semantic, str):
            raise SchemaError(f"{path}.semantic", "expected a string")
        joint = JointSpec(joint.joint_type, semantic, joint.origin, joint.axis, joint.range, joint.parent)
        if joint.joint_type is not JointType.FIXED and float(np.linalg.norm(joint.axis_array())) < 1e-8:
            raise SchemaError(f"{path}.joint.axis", "zero axis on a movable joint")
        parts.append(Part(geometry, joint))
        part_extra.append({k: v for k, v in entry.items() if k not in _PART_KEYS})
        geom_extra.append(g_extra)
        joint_extra.append(j_extra)
    return ObjectDocument(ArticulatedObject(tuple(parts)), extra, part_extra, geom_extra, joint_extra)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_object(path: str, obj: ArticulatedObject | ObjectDocument) -> None:
    doc = obj if isinstance(obj, ObjectDocument) else ObjectDocument.wrap(obj)
    _atomic_write(path, json.dumps(document_to_json(doc), indent=1) + "\n")


def load_object(path: str) -> ArticulatedObject:
    return load_document(path).obj


def load_document(path: str) -> ObjectDocument:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"invalid JSON: {exc}") from exc
    return document_from_json(data)


# -- per-vertex kinematic prediction extraction --------------------------------


@dataclass(frozen=True)
class VertexPrediction:
    position: tuple[float, float, float]
    part_id: int
    parent_id: int
    joint_type: JointType
    axis: tuple[float, float, float]
    pivot: tuple[float, float, float]
    range: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "joint_type", JointType(self.joint_type))
        if self.part_id < 0:
            raise ValueError("part_id must be >= 0")
        for name in ("position", "axis", "pivot", "range"):
            vals = getattr(self, name)
            if not all(math.isfinite(float(v)) for v in vals):
                raise ValueError(f"non-finite {name}")

    @staticmethod
    def from_dict(d: dict) -> "VertexPrediction":
        return VertexPrediction(tuple(d["position"]), int(d["part_id"]), int(d["parent_id"]),
                                JointType(d["joint_type"]), tuple(d["axis"]),
                                tuple(d["pivot"]), tuple(d["range"]))


def _majority(values: list[int]) -> int:
    """Histogram argmax with ties broken toward the smallest value."""
    uniq, counts = np.unique(np.asarray(values), return_counts=True)
    winners = uniq[counts == counts.max()]
    if winners.size > 1:
        log.warning("majority vote tie between %s; choosing %s", winners.tolist(), int(winners.min()))
    return int(winners.min())


def extract_physx_parts(preds: list[VertexPrediction],
                        normalize: bool = True) -> ArticulatedObject:
    """Clusters per-vertex kinematic predictions into a part-level object.

    Vertices sharing a part id form one part (geometry = member positions);
    parent and joint type are per-part majority votes (ties -> lowest
    value); axis is the re-normalized mean; pivot and range are means. The
    result is validated and, when ``normalize``, collapsed + depth-1
    normalized. Order-invariant in the input vertices.
    """
    if not preds:
        raise ValueError("no vertex predictions")
    by_part: dict[int, list[VertexPrediction]] = {}
    for p in preds:
        by_part.setdefault(p.part_id, []).append(p)

    part_ids = sorted(by_part)
    index_of = {pid: i for i, pid in enumerate(part_ids)}
    parts = []
    for pid in part_ids:
        # Canonical member order makes every aggregate (including float
        # means) independent of input vertex order.
        members = sorted(by_part[pid],
                         key=lambda m: (m.position, m.axis, m.pivot, m.range, m.parent_id,
                                        m.joint_type.value))
        positions = np.asarray([m.position for m in members])
        parent_vote = _majority([m.parent_id for m in members])
        type_vote_idx = _majority([list(JointType).index(m.joint_type) for m in members])
        joint_type = list(JointType)[type_vote_idx]
        mean_axis = np.mean([m.axis for m in members], axis=0)
        if float(np.linalg.norm(mean_axis)) < 1e-8 and joint_type is not JointType.FIXED:
            raise ValueError(f"part {pid}: degenerate mean axis {mean_axis.tolist()}")
        axis = unit_axis(mean_axis) if float(np.linalg.norm(mean_axis)) >= 1e-8 else (0.0, 0.0, 1.0)
        pivot = tuple(np.mean([m.pivot for m in members], axis=0).tolist())
        lo, hi = np.mean([m.range for m in members], axis=0).tolist()
        if joint_type is JointType.FIXED:
            lo, hi = 0.0, 0.0
        if parent_vote == ROOT:
            parent, semantic = ROOT, "base"
        else:
            if parent_vote not in index_of:
                raise ValueError(f"part {pid}: voted parent {parent_vote} does not exist")
            parent, semantic = index_of[parent_vote], "other"
        joint = JointSpec(joint_type, semantic, pivot, axis, (min(lo, hi), max(lo, hi)), parent)
        parts.append(Part(PartGeometry.from_points(positions), joint))

    obj = ArticulatedObject(tuple(parts))
    report = validate_object(obj)
    structural = report.codes() & {"cycle", "no-root", "multiple-roots", "parent-index", "self-parent"}
    if structural:
        raise ValueError(f"voted parents form an invalid tree: {sorted(structural)}")
    if normalize and report.ok:
        obj = build_depth1(collapse_fixed_joints(obj))
    return obj


# -- URDF ------------------------------------------------------------------------


def export_urdf(obj: ArticulatedObject, name: str = "artikit_object") -> str:
    """Serializes a depth-1 object as URDF text.

    One link per part with a collision/visual box from its AABB (box center
    expressed in the child joint frame), one joint per non-base part with
    the world-frame origin, axis, and limits.
    """
    if not is_depth1(obj):
        raise ValueError("URDF export needs a depth-1 object")
    base = obj.base_index()

    robot = ET.Element("robot", {"name": name})
    anchors = []
    for i, part in enumerate(obj.parts):
        anchors.append(np.zeros(3) if i == base else part.joint.origin_array())
    for i, part in enumerate(obj.parts):
        link = ET.SubElement(robot, "link", {"name": _link_name(i, part)})
        lo, hi = part.geometry.aabb
        size = np.maximum(hi - lo, 1e-9)
        center_local = (lo + hi) / 2.0 - anchors[i]
        for tag in ("visual", "collision"):
            node = ET.SubElement(link, tag)
            ET.SubElement(node, "origin", {"xyz": _fmt(center_local), "rpy": "0 0 0"})
            geom = ET.SubElement(node, "geometry")
            ET.SubElement(geom, "box", {"size": _fmt(size)})
    for i, part in enumerate(obj.parts):
        if i == base:
            continue
        j = part.joint
        joint = ET.SubElement(robot, "joint", {
            "name": f"joint_{_link_name(i, part)}",
            "type": j.joint_type.value,
        })
        ET.SubElement(joint, "parent", {"link": _link_name(base, obj.parts[base])})
        ET.SubElement(joint, "child", {"link": _link_name(i, part)})
        ET.SubElement(joint, "origin", {"xyz": _fmt(j.origin_array()), "rpy": "0 0 0"})
        if not j.is_fixed:
            ET.SubElement(joint, "axis", {"xyz": _fmt(j.axis_array())})
            ET.SubElement(joint, "limit", {
                "lower": f"{j.range[0]:.9g}", "upper": f"{j.range[1]:.9g}",
                "effort": "1", "velocity": "1",
            })
    ET.indent(robot)
    return ET.tostring(robot, encoding="unicode") + "\n"


def _link_name(i: int, part: Part) -> str:
    return f"{part.joint.semantic}_{i}"


def _fmt(vec) -> str:
    return " ".join(f"{float(v):.9g}" for v in np.asarray(vec).reshape(-1))


@dataclass(frozen=True)
class UrdfJoint:
    name: str
    joint_type: JointType
    parent: str
    child: str
    origin: np.ndarray
    axis: np.ndarray
    limits: tuple[float, float]


@dataclass(frozen=True)
class UrdfModel:
    """Parsed URDF: link box geometry plus joint frames, for FK checks."""

    name: str
    links: dict[str, tuple[np.ndarray, np.ndarray]]   # name -> (center_local, size)
    joints: tuple[UrdfJoint, ...]

    def link_box_corners(self, link: str, q: float = 0.0) -> np.ndarray:
        """World-space corners of a link's box under its joint value."""
        center, size = self.links[link]
        half = size / 2.0
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
        corners = center + signs * half
        joint = next((j for j in self.joints if j.child == link), None)
        if joint is None:
            return corners
        spec = JointSpec(joint.joint_type, "other", tuple(joint.origin.tolist()),
                         tuple(joint.axis.tolist()) if joint.joint_type is not JointType.FIXED else (0, 0, 1),
                         joint.limits, 0)
        t = joint_transform(spec, q)
        # Child-frame geometry: world = joint origin + local, then the joint motion.
        return t.apply(corners + joint.origin)


def parse_urdf(text: str) -> UrdfModel:
    root = ET.fromstring(text)
    if root.tag != "robot":
        raise ValueError("not a URDF document (missing <robot>)")
    links = {}
    for link in root.findall("link"):
        name = link.attrib["name"]
        box = link.find("./collision/geometry/box")
        origin = link.find("./collision/origin")
        if box is None:
            raise ValueError(f"link {name}: only box geometry is supported")
        size = np.fromstring(box.attrib["size"], sep=" ")
        center = np.fromstring(origin.attrib["xyz"], sep=" ") if origin is not None else np.zeros(3)
        links[name] = (center, size)
    joints = []
    for joint in root.findall("joint"):
        jtype = JointType(joint.attrib["type"])
        origin_el = joint.find("origin")
        axis_el = joint.find("axis")
        limit_el = joint.find("limit")
        origin = np.fromstring(origin_el.attrib["xyz"], sep=" ") if origin_el is not None else np.zeros(3)
        axis = np.fromstring(axis_el.attrib["xyz"], sep=" ") if axis_el is not None else np.array([0.0, 0.0, 1.0])
        limits = ((float(limit_el.attrib["lower"]), float(limit_el.attrib["upper"]))
                  if limit_el is not None else (0.0, 0.0))
        joints.append(UrdfJoint(joint.attrib["name"], jtype, joint.find("parent").attrib["link"],
                                joint.find("child").attrib["link"], origin, axis, limits))
    return UrdfModel(root.attrib.get("name", ""), links, tuple(joints))
