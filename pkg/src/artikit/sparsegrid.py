"""Sparse occupancy grids, part-decomposed voxels, and token sequences.

The two-resolution structure of the generation pipeline lives here: a
coarse per-part grid (default 8 cells per axis) for structure and a finer
grid (default 16) for detail tokens. Token order is canonical (part-major,
then raster with x fastest), so sequences are a pure function of content.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

STAGE1_RESOLUTION = 8
STAGE2_RESOLUTION = 16
TOKEN_DIM = 96


@dataclass(frozen=True)
class SparseOccupancy:
    """Set of occupied integer cells on an R^3 grid."""

    resolution: int
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        if c.shape[0]:
            if c.min() < 0 or c.max() >= self.resolution:
                raise ValueError("coords outside grid bounds")
            c = np.unique(c, axis=0)
        c = _raster_sort(c)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def count(self) -> int:
        return self.coords.shape[0]

    def centers(self) -> np.ndarray:
        """World-space cell centers on the unit cube."""
        return (self.coords + 0.5) / float(self.resolution)

    def to_set(self) -> set[tuple[int, int, int]]:
        return {tuple(c) for c in self.coords.tolist()}

    def dense(self) -> np.ndarray:
        grid = np.zeros((self.resolution,) * 3, dtype=bool)
        if self.count:
            grid[self.coords[:, 0], self.coords[:, 1], self.coords[:, 2]] = True
        return grid


def _raster_sort(coords: np.ndarray) -> np.ndarray:
    """Sorts cells in raster order: x fastest, then y, then z."""
    if coords.shape[0] == 0:
        return coords.copy()
    order = np.lexsort((coords[:, 0], coords[:, 1], coords[:, 2]))
    return coords[order].copy()


@dataclass(frozen=True)
class PartVoxelSet:
    """Per-part sparse occupancies sharing one grid resolution.

    A cell may belong to at most one part; on overlap the first-listed part
    wins and a diagnostic is logged.
    """

    parts: tuple[SparseOccupancy, ...]

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("PartVoxelSet needs at least one part")
        res = parts[0].resolution
        if any(p.resolution != res for p in parts):
            raise ValueError("parts disagree on grid resolution")
        seen: dict[tuple[int, int, int], int] = {}
        cleaned = []
        stolen = 0
        for idx, occ in enumerate(parts):
            keep = []
            for cell in occ.coords.tolist():
                key = tuple(cell)
                if key in seen:
                    stolen += 1
                else:
                    seen[key] = idx
                    keep.append(cell)
            cleaned.append(SparseOccupancy(res, np.asarray(keep, dtype=np.int64).reshape(-1, 3)))
        if stolen:
            log.warning("%d voxel(s) claimed by several parts; first-listed part kept them", stolen)
        object.__setattr__(self, "parts", tuple(cleaned))

    @property
    def resolution(self) -> int:
        return self.parts[0].resolution

    @property
    def num_parts(self) -> int:
        return len(self.parts)

    def total_count(self) -> int:
        return sum(p.count for p in self.parts)

    def upsample(self, factor: int) -> "PartVoxelSet":
        """Each coarse cell becomes a factor^3 block of fine cells."""
        if factor < 1:
            raise ValueError("factor must be >= 1")
        offs = np.stack(np.meshgrid(*([np.arange(factor)] * 3), indexing="ij"), axis=-1).reshape(-1, 3)
        fine = []
        for occ in self.parts:
            cells = (occ.coords[:, None, :] * factor + offs[None, :, :]).reshape(-1, 3)
            fine.append(SparseOccupancy(occ.resolution * factor, cells))
        return PartVoxelSet(tuple(fine))


@dataclass(frozen=True)
class TokenSequence:
    """Flattened per-part tokens: features, grid coords, and part ids.

    Tokens are grouped by part (part_ids ascending) and raster-ordered
    within each part, which makes the sequence insertion-order independent.
    """

    tokens: np.ndarray
    coords: np.ndarray
    part_ids: np.ndarray

    def __post_init__(self):
        tok = np.asarray(self.tokens, dtype=np.float64)
        coo = np.asarray(self.coords, dtype=np.int64).reshape(-1, 3)
        pid = np.asarray(self.part_ids, dtype=np.int64).reshape(-1)
        if tok.ndim != 2 or tok.shape[0] != coo.shape[0] or tok.shape[0] != pid.shape[0]:
            raise ValueError("tokens, coords and part_ids disagree on length")
        if pid.shape[0] and np.any(np.diff(pid) < 0):
            raise ValueError("part_ids must be grouped in ascending order")
        for a in (tok, coo, pid):
            a.setflags(write=False)
        object.__setattr__(self, "tokens", tok)
        object.__setattr__(self, "coords", coo)
        object.__setattr__(self, "part_ids", pid)

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def part_slices(self) -> list[tuple[int, slice]]:
        """Contiguous (part_id, row-slice) runs, in ascending part order."""
        out = []
        ids = self.part_ids
        start = 0
        for i in range(1, len(ids) + 1):
            if i == len(ids) or ids[i] != ids[start]:
                out.append((int(ids[start]), slice(start, i)))
                start = i
        return out

    def with_tokens(self, tokens: np.ndarray) -> "TokenSequence":
        return TokenSequence(tokens, self.coords, self.part_ids)


def voxelize_points(points: np.ndarray, resolution: int, strict: bool = False) -> SparseOccupancy:
    """Bins unit-cube points into occupied cells via floor(x * R), clamped to R-1.

    Points outside [0, 1]^3 are dropped with a logged count (or raise when
    ``strict``). Duplicates collapse by set semantics.
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
    n_out = int((~inside).sum())
    if n_out:
        if strict:
            raise ValueError(f"{n_out} point(s) outside the unit cube")
        log.warning("dropped %d point(s) outside the unit cube", n_out)
    cells = np.floor(pts[inside] * resolution).astype(np.int64)
    cells = np.minimum(cells, resolution - 1)
    return SparseOccupancy(resolution, cells)


def positional_encoding(coord, dim: int, resolution: int = STAGE2_RESOLUTION) -> np.ndarray:
    """Axis-factored sinusoidal encoding of an integer grid coordinate.

    Each axis gets dim/6 (sin, cos) pairs at frequencies spaced
    geometrically from 1 to resolution/2, evaluated at angle
    2*pi*f*coord/resolution. Deterministic and injective on the grid.
    """
    if dim % 6 != 0:
        raise ValueError(f"encoding dim {dim} not divisible by 6 (3 axes x sin/cos)")
    c = np.asarray(coord, dtype=np.float64).reshape(3)
    n_freq = dim // 6
    if n_freq == 1:
        freqs = np.ones(1)
    else:
        freqs = np.geomspace(1.0, resolution / 2.0, n_freq)
    ang = 2.0 * np.pi * freqs[None, :] * c[:, None] / float(resolution)  # (3, n_freq)
    enc = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)  # (3, 2*n_freq)
    return enc.reshape(-1)


def encode_coords(coords: np.ndarray, dim: int, resolution: int) -> np.ndarray:
    """Vectorized :func:`positional_encoding` over an (L, 3) coordinate array."""
    if dim % 6 != 0:
        raise ValueError(f"encoding dim {dim} not divisible by 6 (3 axes x sin/cos)")
    c = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    n_freq = dim // 6
    if n_freq == 1:
        freqs = np.ones(1)
    else:
        freqs = np.geomspace(1.0, resolution / 2.0, n_freq)
    ang = 2.0 * np.pi * freqs[None, None, :] * c[:, :, None] / float(resolution)  # (L, 3, f)
    enc = np.concatenate([np.sin(ang), np.cos(ang)], axis=2)  # (L, 3, 2f)
    return enc.reshape(c.shape[0], -1)


def flatten_tokenize(pv: PartVoxelSet, feat_fn, dim: int = TOKEN_DIM) -> TokenSequence:
    """Flattens a part voxel set into a canonical token sequence.

    Tokens are ordered part-major then raster order; each token is
    feat_fn(coord) + positional_encoding(coord, dim). ``feat_fn`` must
    return a ``dim``-vector (coords are disjoint across parts, so it can
    dispatch on coordinate alone).
    """
    if dim % 6 != 0:
        raise ValueError(f"encoding dim {dim} not divisible by 6 (3 axes x sin/cos)")
    if pv.total_count() == 0:
        raise ValueError("cannot tokenize an empty part voxel set")
    coords = []
    part_ids = []
    for idx, occ in enumerate(pv.parts):
        coords.append(occ.coords)
        part_ids.append(np.full(occ.count, idx, dtype=np.int64))
    coo = np.vstack(coords)
    pid = np.concatenate(part_ids)
    feats = np.stack([np.asarray(feat_fn(tuple(c)), dtype=np.float64).reshape(-1) for c in coo.tolist()])
    if feats.shape[1] != dim:
        raise ValueError(f"feat_fn returned dim {feats.shape[1]}, expected {dim}")
    tokens = feats + encode_coords(coo, dim, pv.resolution)
    return TokenSequence(tokens, coo, pid)


def dense_grid_layout(num_parts: int, resolution: int, dim: int) -> TokenSequence:
    """Zero-token layout covering the full grid once per part.

    Used as the coarse-structure sampling substrate: one token per cell per
    part, so identical coordinates repeat across parts.
    """
    cells = _raster_sort(
        np.stack(np.meshgrid(*([np.arange(resolution)] * 3), indexing="ij"), axis=-1).reshape(-1, 3)
    )
    coords = np.tile(cells, (num_parts, 1))
    part_ids = np.repeat(np.arange(num_parts, dtype=np.int64), cells.shape[0])
    tokens = np.zeros((coords.shape[0], dim))
    return TokenSequence(tokens, coords, part_ids)


def occupancy_from_logits(layout: TokenSequence, logits: np.ndarray, resolution: int,
                          threshold: float = 0.0) -> PartVoxelSet:
    """Thresholds per-cell logits (channel 0) into a PartVoxelSet."""
    values = np.asarray(logits, dtype=np.float64)
    if values.ndim == 2:
        values = values[:, 0]
    if values.shape[0] != layout.length:
        raise ValueError("logits length does not match layout")
    num_parts = int(layout.part_ids.max()) + 1 if layout.length else 0
    parts = []
    for idx in range(num_parts):
        sel = (layout.part_ids == idx) & (values > threshold)
        parts.append(SparseOccupancy(resolution, layout.coords[sel]))
    return PartVoxelSet(tuple(parts))
