"""Denoising-network building blocks: tape autodiff, attention, conditioning."""

from .autodiff import Tensor, concat, parameter, softmax
from .checkpoint import load_params, merge_bundle, save_params, split_bundle
from .denoiser import (
    CondInput,
    Denoiser,
    DenoiserConfig,
    GLOBAL,
    PART,
    PartEmbeddingTable,
    attach_part_identity,
    build_mask_embedding_map,
)
from .gradcheck import GradcheckReport, finite_diff_gradcheck
from .layers import AttentionParams, attention, attention_t, global_attention, within_part_attention

__all__ = [
    "AttentionParams",
    "CondInput",
    "Denoiser",
    "DenoiserConfig",
    "GLOBAL",
    "GradcheckReport",
    "PART",
    "PartEmbeddingTable",
    "Tensor",
    "attach_part_identity",
    "attention",
    "attention_t",
    "build_mask_embedding_map",
    "concat",
    "finite_diff_gradcheck",
    "global_attention",
    "load_params",
    "merge_bundle",
    "parameter",
    "save_params",
    "softmax",
    "split_bundle",
    "within_part_attention",
]
