"""Rectified-flow training, guided Euler sampling, and the two-stage pipeline."""

from .core import SamplerConfig, cfg_velocity, euler_sample, flow_loss, fm_pair
from .toydata import ToySample, make_toy_dataset, render_mask, synth_cond_features
from .training import Adam, TrainConfig, evaluate_articulation, evaluate_fm_loss, train_toy
from .twostage import (
    DegenerateStructureError,
    PipelineResult,
    assemble_object,
    layout_from_voxels,
    run_two_stage,
)

__all__ = [
    "Adam",
    "DegenerateStructureError",
    "PipelineResult",
    "SamplerConfig",
    "ToySample",
    "TrainConfig",
    "assemble_object",
    "cfg_velocity",
    "euler_sample",
    "evaluate_articulation",
    "evaluate_fm_loss",
    "flow_loss",
    "fm_pair",
    "layout_from_voxels",
    "make_toy_dataset",
    "render_mask",
    "run_two_stage",
    "synth_cond_features",
    "train_toy",
]
