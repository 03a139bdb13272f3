"""Part-aware denoising transformer with mask conditioning.

Layers alternate between global self-attention (even indices) and
within-part self-attention (odd indices); every layer also cross-attends
to a conditioning token map and is followed by a residual FFN, all with
pre-layer-norm residuals. The timestep enters through a learned sinusoidal
MLP added to every token, and part identity enters either by concatenation
before the input projection (stage 1) or as an additive embedding at model
width (stage 2).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..sparsegrid import TokenSequence, encode_coords
from .autodiff import Tensor, concat, parameter
from .layers import AttentionParams, LayerNorm, Linear, _merge_heads, _split_heads, attention_t, grouped_attention

GLOBAL = "global"
PART = "part"


class PartEmbeddingTable:
    """Learnable per-part-index embedding rows."""

    def __init__(self, max_parts: int, dim: int, rng: np.random.Generator | None = None,
                 table: np.ndarray | None = None):
        if table is not None:
            self.table = Tensor(np.asarray(table, dtype=np.float64), requires_grad=True)
        else:
            self.table = parameter((max_parts, dim), rng if rng is not None else np.random.default_rng(0))
        if self.table.data.shape[0] != max_parts or self.table.data.shape[1] != dim:
            raise ValueError("table shape does not match (max_parts, dim)")
        self.max_parts = max_parts
        self.dim = dim

    def rows(self, indices: np.ndarray) -> Tensor:
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and indices.max() >= self.max_parts:
            raise ValueError(f"part index {int(indices.max())} >= table size {self.max_parts}")
        if indices.size and indices.min() < 0:
            raise ValueError("negative part index")
        return self.table[indices]


def attach_part_identity(seq: TokenSequence, table: PartEmbeddingTable, stage: int) -> TokenSequence:
    """Tags tokens with their part-identity embedding.

    Stage 1 concatenates the embedding (feature dim grows by the table
    width); stage 2 adds it elementwise (dims must match).
    """
    emb = table.rows(seq.part_ids).data
    if stage == 1:
        return seq.with_tokens(np.concatenate([seq.tokens, emb], axis=1))
    if stage == 2:
        if table.dim != seq.dim:
            raise ValueError(f"additive embedding dim {table.dim} != token dim {seq.dim}")
        return seq.with_tokens(seq.tokens + emb)
    raise ValueError(f"unknown stage {stage}")


def build_mask_embedding_map(mask: np.ndarray, table: PartEmbeddingTable,
                             target: tuple[int, int]) -> np.ndarray:
    """Pixelwise embedding lookup of a part-index mask, average-pooled to ``target``."""
    return _mask_embedding_map_t(mask, table, target).data


def _mask_embedding_map_t(mask: np.ndarray, table: PartEmbeddingTable,
                          target: tuple[int, int]) -> Tensor:
    mask = np.asarray(mask, dtype=np.int64)
    if mask.ndim != 2:
        raise ValueError("mask must be a 2D integer map")
    if mask.size and (mask.max() >= table.max_parts or mask.min() < 0):
        raise ValueError(f"mask value outside [0, {table.max_parts})")
    h, w = mask.shape
    th, tw = target
    if h % th or w % tw:
        raise ValueError(f"mask shape {(h, w)} not divisible by target {(th, tw)}")
    dense = table.table[mask.reshape(-1)].reshape(h, w, table.dim)
    pooled = dense.reshape(th, h // th, tw, w // tw, table.dim).mean(axis=(1, 3))
    return pooled


@dataclass(frozen=True)
class CondInput:
    """Cross-attention conditioning: a feature map plus an optional part mask.

    ``features`` is (h', w', cond_dim); ``mask`` is an (h, w) integer map
    whose embedding map is pooled to (h', w') and added to the features.
    ``CondInput(None, None)`` is not allowed; pass ``cond=None`` for the
    unconditional branch instead.
    """

    features: np.ndarray | None
    mask: np.ndarray | None

    def __post_init__(self):
        if self.features is None and self.mask is None:
            raise ValueError("conditioning needs a feature map, a mask, or both")


@dataclass(frozen=True)
class DenoiserConfig:
    depth: int = 4
    width: int = 64
    heads: int = 4
    token_dim: int = 48
    cond_dim: int = 16
    part_embed_dim: int = 16
    max_parts: int = 8
    stage: int = 2
    posenc_dim: int = 96
    grid_resolution: int = 16
    cond_shape: tuple[int, int] = (8, 8)

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.width % self.heads:
            raise ValueError("width must be divisible by heads")
        if self.posenc_dim % 6:
            raise ValueError("posenc_dim must be divisible by 6")
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")

    def schedule(self) -> list[str]:
        """Even-indexed layers attend globally, odd-indexed within parts."""
        return [GLOBAL if i % 2 == 0 else PART for i in range(self.depth)]

    def to_dict(self) -> dict:
        return {
            "depth": self.depth, "width": self.width, "heads": self.heads,
            "token_dim": self.token_dim, "cond_dim": self.cond_dim,
            "part_embed_dim": self.part_embed_dim, "max_parts": self.max_parts,
            "stage": self.stage, "posenc_dim": self.posenc_dim,
            "grid_resolution": self.grid_resolution, "cond_shape": tuple(self.cond_shape),
        }

    @staticmethod
    def from_dict(d: dict) -> "DenoiserConfig":
        d = dict(d)
        if "cond_shape" in d:
            d["cond_shape"] = tuple(d["cond_shape"])
        return DenoiserConfig(**d)


class _CrossAttention:
    def __init__(self, width: int, cond_dim: int, heads: int, prefix: str,
                 params: dict[str, Tensor], rng: np.random.Generator):
        self.heads = heads
        self.ln = LayerNorm(width, f"{prefix}.ln", params)
        s = 1.0 / np.sqrt(width)
        self.wq = params.setdefault(f"{prefix}.wq", parameter((width, width), rng, scale=s))
        self.wk = params.setdefault(f"{prefix}.wk", parameter((cond_dim, width), rng, scale=1.0 / np.sqrt(cond_dim)))
        self.wv = params.setdefault(f"{prefix}.wv", parameter((cond_dim, width), rng, scale=1.0 / np.sqrt(cond_dim)))
        self.wo = params.setdefault(f"{prefix}.wo", parameter((width, width), rng, scale=s))

    def __call__(self, x: Tensor, cond: Tensor) -> Tensor:
        u = self.ln(x)
        q = _split_heads(u @ self.wq, self.heads)
        k = _split_heads(cond @ self.wk, self.heads)
        v = _split_heads(cond @ self.wv, self.heads)
        return _merge_heads(attention_t(q, k, v)) @ self.wo


_T_FREQS = np.geomspace(1.0, 64.0, 8)


def timestep_features(t: float) -> np.ndarray:
    ang = _T_FREQS * float(t)
    return np.concatenate([np.sin(ang), np.cos(ang)])


class Denoiser:
    """Velocity-field transformer over part-grouped token sequences."""

    def __init__(self, cfg: DenoiserConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        p = self.params

        d_in = cfg.token_dim + (cfg.part_embed_dim if cfg.stage == 1 else 0)
        self.in_proj = Linear(d_in, cfg.width, "in_proj", p, rng)
        self.pos_proj = Linear(cfg.posenc_dim, cfg.width, "pos_proj", p, rng, bias=False)
        self.t_in = Linear(2 * len(_T_FREQS), cfg.width, "t_embed.fc1", p, rng)
        self.t_out = Linear(cfg.width, cfg.width, "t_embed.fc2", p, rng)

        ident_dim = cfg.part_embed_dim if cfg.stage == 1 else cfg.width
        self.identity = PartEmbeddingTable(cfg.max_parts, ident_dim, rng)
        p["part_identity"] = self.identity.table
        if cfg.stage == 1 and cfg.part_embed_dim == cfg.cond_dim:
            self.mask_table = self.identity  # shared lookup, as in stage-1 conditioning
        else:
            self.mask_table = PartEmbeddingTable(cfg.max_parts, cfg.cond_dim, rng)
            p["mask_table"] = self.mask_table.table

        p["null_cond"] = parameter((1, cfg.cond_dim), rng)
        self.null_cond = p["null_cond"]

        self.blocks = [AttentionParams(cfg.width, cfg.heads, rng, prefix=f"blk{i}", params=p)
                       for i in range(cfg.depth)]
        self.cross = [_CrossAttention(cfg.width, cfg.cond_dim, cfg.heads, f"blk{i}.cross", p, rng)
                      for i in range(cfg.depth)]
        self.ln_final = LayerNorm(cfg.width, "ln_final", p)
        self.out_proj = Linear(cfg.width, cfg.token_dim, "out_proj", p, rng, zero=True)

    # -- conditioning -----------------------------------------------------------

    def cond_tokens(self, cond: CondInput | None) -> Tensor:
        """Flattened conditioning tokens; the learned null row when cond is None."""
        if cond is None:
            return self.null_cond
        th, tw = self.cfg.cond_shape
        feats: Tensor | None = None
        if cond.features is not None:
            f = np.asarray(cond.features, dtype=np.float64)
            if f.shape != (th, tw, self.cfg.cond_dim):
                raise ValueError(f"cond features shape {f.shape} != {(th, tw, self.cfg.cond_dim)}")
            feats = Tensor(f)
        if cond.mask is not None:
            pooled = _mask_embedding_map_t(cond.mask, self.mask_table, (th, tw))
            feats = pooled if feats is None else feats + pooled
        return feats.reshape(th * tw, self.cfg.cond_dim)

    # -- forward ----------------------------------------------------------------

    def forward_tensors(self, x: Tensor, coords: np.ndarray, part_ids: np.ndarray,
                        t: float, cond: CondInput | None,
                        schedule: list[str] | None = None) -> tuple[Tensor, Tensor]:
        """Core pass on the tape. Returns (velocity, last-block features)."""
        cfg = self.cfg
        if x.shape[1] != cfg.token_dim:
            raise ValueError(f"token dim {x.shape[1]} != configured {cfg.token_dim}")
        part_ids = np.asarray(part_ids, dtype=np.int64)
        groups = _part_groups(part_ids)

        if cfg.stage == 1:
            h = self.in_proj(concat([x, self.identity.rows(part_ids)], axis=1))
        else:
            h = self.in_proj(x) + self.identity.rows(part_ids)
        pos = encode_coords(coords, cfg.posenc_dim, cfg.grid_resolution)
        h = h + self.pos_proj(Tensor(pos))
        h = h + self.t_out(self.t_in(Tensor(timestep_features(t)[None, :])).gelu())

        cond_seq = self.cond_tokens(cond)
        kinds = schedule if schedule is not None else cfg.schedule()
        if len(kinds) != cfg.depth:
            raise ValueError("schedule length != depth")
        for blk, xattn, kind in zip(self.blocks, self.cross, kinds):
            u = blk.ln_attn(h)
            if kind == PART:
                h = h + grouped_attention(u, groups, blk)
            elif kind == GLOBAL:
                h = h + blk.self_attention(u)
            else:
                raise ValueError(f"unknown layer kind {kind!r}")
            h = h + xattn(h, cond_seq)
            h = h + blk.ffn(blk.ln_ffn(h))

        velocity = self.out_proj(self.ln_final(h))
        return velocity, h

    def forward(self, seq: TokenSequence, t: float, cond: CondInput | None,
                schedule: list[str] | None = None) -> tuple[TokenSequence, dict[int, np.ndarray]]:
        """Inference pass: velocity sequence plus per-part last-block features."""
        v, h = self.forward_tensors(Tensor(seq.tokens), seq.coords, seq.part_ids, t, cond, schedule)
        feats = {pid: h.data[s].copy() for pid, s in seq.part_slices()}
        return seq.with_tokens(v.data), feats

    # -- parameter io -------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:4]}...")
        for k, tensor in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"parameter {k}: shape {arr.shape} != {tensor.data.shape}")
            tensor.data = arr.copy()

    def zero_all(self) -> None:
        for t in self.params.values():
            t.data = np.zeros_like(t.data)


def _part_groups(part_ids: np.ndarray) -> list[slice]:
    if np.any(np.diff(part_ids) < 0):
        raise ValueError("part_ids must be grouped in ascending order")
    groups = []
    start = 0
    for i in range(1, len(part_ids) + 1):
        if i == len(part_ids) or part_ids[i] != part_ids[start]:
            groups.append(slice(start, i))
            start = i
    return groups
