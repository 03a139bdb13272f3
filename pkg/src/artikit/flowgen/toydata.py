"""Procedural desk-scale dataset: two-part cabinets with doors, drawers, and lids.

Each sample is a base part plus one movable part on an 8^3 grid, with a
front-view part mask, synthetic conditioning features, clean data tokens,
and encoded articulation targets. Handles are baked into the movable
part's voxels (as if a fixed handle node had been collapsed into it), so
hinge side is readable from geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..artcore import (
    ArticulatedObject,
    DEFAULT_SEMANTICS,
    JointSpec,
    JointType,
    Part,
    PartGeometry,
    ROOT,
)
from ..artihead import encode_joint
from ..netcore.denoiser import CondInput
from ..sparsegrid import PartVoxelSet, SparseOccupancy, TokenSequence, flatten_tokenize

VARIANTS = ("door-left", "door-right", "drawer", "lid")


@dataclass(frozen=True)
class ToySample:
    name: str
    obj: ArticulatedObject
    voxels: PartVoxelSet
    seq: TokenSequence
    cond: CondInput
    mask: np.ndarray
    targets: list[np.ndarray]


def _box(x0, x1, y0, y1, z0, z1) -> np.ndarray:
    """Inclusive integer box as an (N, 3) cell array."""
    xs, ys, zs = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1),
                             np.arange(z0, z1 + 1), indexing="ij")
    return np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)


def _make_variant(variant: str, rng: np.random.Generator, res: int):
    x0 = int(rng.integers(0, 2))
    x1 = int(rng.integers(5, res))
    z0 = int(rng.integers(0, 2))
    z1 = int(rng.integers(5, res))
    y0 = int(rng.integers(6, res))          # front face of the body
    base_cells = _box(x0, x1, y0, res - 1, z0, z1)
    zc = (z0 + z1 + 1) / 2.0

    if variant in ("door-left", "door-right"):
        panel = _box(x0, x1, y0 - 1, y0 - 1, z0, z1)
        handle_x = x1 if variant == "door-left" else x0
        handle = _box(handle_x, handle_x, y0 - 2, y0 - 2, int(round(zc)) - 1, int(round(zc)) - 1)
        cells = np.vstack([panel, handle])
        hinge_x = x0 / res if variant == "door-left" else (x1 + 1) / res
        axis = (0.0, 0.0, -1.0) if variant == "door-left" else (0.0, 0.0, 1.0)
        joint = JointSpec(JointType.REVOLUTE, "door",
                          (hinge_x, (y0 - 0.5) / res, zc / res), axis,
                          (0.0, np.pi / 2), parent=0)
    elif variant == "drawer":
        dx0, dx1 = x0 + 1, x1 - 1
        dz1 = min(z0 + 2, z1)
        body = _box(dx0, dx1, y0 - 3, y0 - 1, z0, dz1)
        handle = _box((dx0 + dx1) // 2, (dx0 + dx1) // 2, y0 - 4, y0 - 4, z0, z0)
        cells = np.vstack([body, handle])
        center = (cells.min(axis=0) + cells.max(axis=0) + 1) / 2.0 / res
        joint = JointSpec(JointType.PRISMATIC, "drawer", tuple(center),
                          (0.0, -1.0, 0.0), (0.0, 0.35), parent=0)
    elif variant == "lid":
        ztop = 5
        base_cells = _box(x0, x1, y0 - 2, res - 1, 2, ztop - 1)
        slab = _box(x0, x1, y0 - 2, res - 1, ztop, ztop)
        handle = _box((x0 + x1) // 2, (x0 + x1) // 2, y0 - 3, y0 - 3, ztop, ztop)
        cells = np.vstack([slab, handle])
        joint = JointSpec(JointType.REVOLUTE, "lid",
                          ((x0 + x1 + 1) / 2.0 / res, 1.0, ztop / res),
                          (-1.0, 0.0, 0.0), (0.0, np.pi / 3), parent=0)
    else:
        raise ValueError(f"unknown variant {variant!r}")

    return base_cells, cells, joint


def geometry_feat_fn(voxels: PartVoxelSet, dim: int):
    """Per-voxel geometry descriptor: centroid offset and part half-extent, tiled.

    Coordinates are disjoint across parts, so the lookup dispatches on the
    cell alone.
    """
    if dim % 6:
        raise ValueError("token dim must be divisible by 6")
    table: dict[tuple[int, int, int], np.ndarray] = {}
    res = voxels.resolution
    for occ in voxels.parts:
        centers = occ.centers()
        centroid = centers.mean(axis=0)
        half = (centers.max(axis=0) - centers.min(axis=0)) / 2.0 if occ.count > 1 else np.zeros(3)
        for cell, center in zip(occ.coords.tolist(), centers):
            g = np.concatenate([(center - centroid) * 2.0, half * 2.0])
            table[tuple(cell)] = np.tile(g, dim // 6)
    return lambda coord: table[tuple(coord)]


def render_mask(voxels: PartVoxelSet, size: int = 16) -> np.ndarray:
    """Front-view (-y) part-index mask; 0 marks background.

    mask[u, v] covers grid column (x=u//s, z=v//s); the part whose voxel
    sits nearest the viewer (smallest y) wins the pixel.
    """
    res = voxels.resolution
    if size % res:
        raise ValueError("mask size must be a multiple of the grid resolution")
    s = size // res
    depth = np.full((res, res), np.inf)
    owner = np.full((res, res), -1, dtype=np.int64)
    for idx, occ in enumerate(voxels.parts):
        for x, y, z in occ.coords.tolist():
            if y < depth[x, z]:
                depth[x, z] = y
                owner[x, z] = idx
    mask = np.zeros((size, size), dtype=np.int64)
    for u in range(size):
        for v in range(size):
            o = owner[u // s, v // s]
            mask[u, v] = o if o >= 0 else 0
    return mask


def synth_cond_features(mask: np.ndarray, cond_dim: int = 16,
                        target: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Deterministic multi-channel rendering of the part mask.

    Channels: movable-part silhouette fraction, normalized pixel coords,
    two octaves of sin/cos position, then per-part-value area fractions.
    Stands in for learned image features in the conditioning pathway.
    """
    mask = np.asarray(mask, dtype=np.int64)
    h, w = mask.shape
    th, tw = target
    if h % th or w % tw:
        raise ValueError("mask shape must be divisible by the target shape")
    bh, bw = h // th, w // tw
    blocks = mask.reshape(th, bh, tw, bw)

    feats = np.zeros((th, tw, cond_dim))
    feats[:, :, 0] = (blocks > 0).mean(axis=(1, 3))
    u = (np.arange(th) + 0.5) / th
    v = (np.arange(tw) + 0.5) / tw
    uu, vv = np.meshgrid(u, v, indexing="ij")
    base = [uu, vv,
            np.sin(2 * np.pi * uu), np.cos(2 * np.pi * uu),
            np.sin(2 * np.pi * vv), np.cos(2 * np.pi * vv),
            np.sin(4 * np.pi * uu), np.cos(4 * np.pi * uu),
            np.sin(4 * np.pi * vv), np.cos(4 * np.pi * vv)]
    for i, channel in enumerate(base):
        if 1 + i >= cond_dim:
            break
        feats[:, :, 1 + i] = channel
    for p in range(1, cond_dim - 11 + 1):
        feats[:, :, 10 + p] = (blocks == p).mean(axis=(1, 3))
    return feats


def make_toy_dataset(n: int = 32, resolution: int = 8, token_dim: int = 48,
                     cond_dim: int = 16, mask_size: int = 16,
                     cond_shape: tuple[int, int] = (8, 8), seed: int = 0,
                     semantics: tuple[str, ...] = DEFAULT_SEMANTICS) -> list[ToySample]:
    """Builds ``n`` seeded two-part objects cycling through all variants."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        variant = VARIANTS[i % len(VARIANTS)]
        base_cells, movable_cells, joint = _make_variant(variant, rng, resolution)
        voxels = PartVoxelSet((SparseOccupancy(resolution, base_cells),
                               SparseOccupancy(resolution, movable_cells)))
        base_joint = JointSpec(JointType.FIXED, "base", (0.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                               (0.0, 0.0), ROOT)
        obj = ArticulatedObject((
            Part(PartGeometry.from_voxels(voxels.parts[0].coords, resolution), base_joint),
            Part(PartGeometry.from_voxels(voxels.parts[1].coords, resolution), joint),
        ))
        seq = flatten_tokenize(voxels, geometry_feat_fn(voxels, token_dim), token_dim)
        mask = render_mask(voxels, mask_size)
        cond = CondInput(synth_cond_features(mask, cond_dim, cond_shape), mask)
        targets = [encode_joint(p.joint, semantics) for p in obj.parts]
        samples.append(ToySample(f"{variant}-{i:03d}", obj, voxels, seq, cond, mask, targets))
    return samples


def stage1_tokens(voxels: PartVoxelSet, layout: TokenSequence, logit: float = 2.0) -> np.ndarray:
    """Dense-grid occupancy logits (+/-logit) matching a stage-1 layout."""
    values = np.full((layout.length, 1), -logit)
    occupied = {(int(p), tuple(c)) for p, occ in enumerate(voxels.parts)
                for c in occ.coords.tolist()}
    for row, (pid, cell) in enumerate(zip(layout.part_ids.tolist(),
                                          layout.coords.tolist())):
        if (pid, tuple(cell)) in occupied:
            values[row, 0] = logit
    return values
