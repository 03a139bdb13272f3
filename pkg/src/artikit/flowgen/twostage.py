"""Two-stage generation: coarse part structure, then detail tokens + articulation.

Stage 1 samples per-part occupancy logits on a coarse dense grid and
thresholds them into a part voxel set. Stage 2 upsamples the occupancy and
denoises token features on the occupied cells. The feature cache handed to
the articulation head comes from whichever stage the config selects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..artcore import ArticulatedObject, Part, PartGeometry
from ..artihead import ArticulationHead, FeatureCache, aggregate_multistep, decode_object_joints, pool_mean_max
from ..netcore.autodiff import Tensor
from ..netcore.denoiser import CondInput, Denoiser
from ..sparsegrid import PartVoxelSet, TokenSequence, dense_grid_layout, occupancy_from_logits
from .core import SamplerConfig, euler_sample


class DegenerateStructureError(RuntimeError):
    """Raised when stage 1 emits an empty part."""


@dataclass(frozen=True)
class PipelineResult:
    voxels: PartVoxelSet            # fine-resolution occupancy stage 2 ran on
    coarse: PartVoxelSet
    tokens: TokenSequence           # final stage-2 token features
    cache: FeatureCache             # per config: stage-1 or stage-2 features


def layout_from_voxels(pv: PartVoxelSet, dim: int) -> TokenSequence:
    """Zero-token sequence over the occupied cells of a part voxel set."""
    coords = []
    part_ids = []
    for idx, occ in enumerate(pv.parts):
        coords.append(occ.coords)
        part_ids.append(np.full(occ.count, idx, dtype=np.int64))
    coo = np.vstack(coords)
    return TokenSequence(np.zeros((coo.shape[0], dim)), coo, np.concatenate(part_ids))


def run_two_stage(cond: CondInput | None, stage1_model: Denoiser | None,
                  stage2_model: Denoiser, cfg: SamplerConfig, num_parts: int,
                  gt_voxels: PartVoxelSet | None = None,
                  fine_resolution: int | None = None) -> PipelineResult:
    """Runs the generation pipeline; ``gt_voxels`` bypasses stage 1.

    Stage-2's grid must be an integer multiple of the coarse grid; the
    coarse occupancy is block-upsampled onto it. Raises
    :class:`DegenerateStructureError` when stage 1 leaves a part empty.
    """
    stage1_cache: FeatureCache | None = None
    if gt_voxels is not None:
        coarse = gt_voxels
        if cfg.feature_source == "stage1":
            if stage1_model is None:
                raise ValueError("feature_source='stage1' needs a stage-1 model even in bypass mode")
            layout1 = dense_grid_layout(num_parts, stage1_model.cfg.grid_resolution,
                                        stage1_model.cfg.token_dim)
            _, stage1_cache = euler_sample(stage1_model, cond, layout1, cfg)
    else:
        if stage1_model is None:
            raise ValueError("stage-1 model required unless gt_voxels is given")
        res1 = stage1_model.cfg.grid_resolution
        layout1 = dense_grid_layout(num_parts, res1, stage1_model.cfg.token_dim)
        logits, stage1_cache = euler_sample(stage1_model, cond, layout1, cfg)
        coarse = occupancy_from_logits(layout1, logits.tokens, res1, cfg.threshold)
        for i, occ in enumerate(coarse.parts):
            if occ.count == 0:
                raise DegenerateStructureError(f"stage 1 produced an empty part {i}")

    fine_res = fine_resolution if fine_resolution is not None else stage2_model.cfg.grid_resolution
    if fine_res % coarse.resolution:
        raise ValueError(f"fine resolution {fine_res} not a multiple of {coarse.resolution}")
    factor = fine_res // coarse.resolution
    fine = coarse.upsample(factor) if factor > 1 else coarse

    layout2 = layout_from_voxels(fine, stage2_model.cfg.token_dim)
    tokens, stage2_cache = euler_sample(stage2_model, cond, layout2, cfg)

    cache = stage1_cache if cfg.feature_source == "stage1" else stage2_cache
    return PipelineResult(fine, coarse, tokens, cache)


def assemble_object(result: PipelineResult, head: ArticulationHead) -> ArticulatedObject:
    """Regresses joints from the cached features and builds the final object."""
    geoms = [PartGeometry.from_voxels(occ.coords, result.voxels.resolution)
             for occ in result.voxels.parts]
    raws = []
    for i in range(result.voxels.num_parts):
        pooled = pool_mean_max(aggregate_multistep(result.cache, i))
        raws.append(head.forward_t(Tensor(pooled)).data.reshape(-1))
    joints = decode_object_joints(raws, [g.aabb for g in geoms], head.cfg.semantics)
    return ArticulatedObject(tuple(Part(g, j) for g, j in zip(geoms, joints)))
