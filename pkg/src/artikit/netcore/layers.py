"""Attention blocks with part-restricted grouping, layer norm, and FFN.

The same core attention math backs three surfaces: the bare
softmax(QK^T/sqrt(d))V primitive, the residual within-part block used by
tests, and the pre-norm transformer blocks inside the denoiser. Grouped
attention slices contiguous part runs, so cross-part information flow
through a within-part layer is exactly zero by construction.
"""

from __future__ import annotations

import numpy as np

from ..sparsegrid import TokenSequence
from .autodiff import Tensor, concat, parameter, softmax


def attention(q, k, v) -> np.ndarray:
    """Scaled dot-product attention on plain matrices.

    Accepts (L, d) or batched (..., L, d) arrays; the scale is the
    last-axis width of the keys. Returns an ndarray.
    """
    out = attention_t(Tensor.lift(np.asarray(q, dtype=np.float64)),
                      Tensor.lift(np.asarray(k, dtype=np.float64)),
                      Tensor.lift(np.asarray(v, dtype=np.float64)))
    return out.data


def attention_t(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Tape-aware scaled dot-product attention."""
    d = q.shape[-1]
    if k.shape[-1] != d:
        raise ValueError(f"query dim {d} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError("key and value lengths differ")
    scores = (q @ k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / np.sqrt(d))
    return softmax(scores, axis=-1) @ v


def _split_heads(x: Tensor, heads: int) -> Tensor:
    L, d = x.shape
    return x.reshape(L, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: Tensor) -> Tensor:
    h, L, dh = x.shape
    return x.transpose(1, 0, 2).reshape(L, h * dh)


class LayerNorm:
    def __init__(self, dim: int, prefix: str, params: dict[str, Tensor]):
        self.gain = params.setdefault(f"{prefix}.gain", parameter(np.ones(dim)))
        self.bias = params.setdefault(f"{prefix}.bias", parameter(np.zeros(dim)))

    def __call__(self, x: Tensor, eps: float = 1e-6) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + eps).sqrt() * self.gain + self.bias


class Linear:
    def __init__(self, d_in: int, d_out: int, prefix: str, params: dict[str, Tensor],
                 rng: np.random.Generator, zero: bool = False, bias: bool = True):
        if zero:
            w = parameter(np.zeros((d_in, d_out)))
        else:
            w = parameter((d_in, d_out), rng, scale=1.0 / np.sqrt(d_in))
        self.w = params.setdefault(f"{prefix}.w", w)
        self.b = params.setdefault(f"{prefix}.b", parameter(np.zeros(d_out))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if self.b is not None else y


class AttentionParams:
    """Projection, FFN, and norm weights for one attention block."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 prefix: str = "blk", params: dict[str, Tensor] | None = None):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.params: dict[str, Tensor] = params if params is not None else {}
        p = self.params
        self.wq = p.setdefault(f"{prefix}.wq", parameter((dim, dim), rng, scale=1.0 / np.sqrt(dim)))
        self.wk = p.setdefault(f"{prefix}.wk", parameter((dim, dim), rng, scale=1.0 / np.sqrt(dim)))
        self.wv = p.setdefault(f"{prefix}.wv", parameter((dim, dim), rng, scale=1.0 / np.sqrt(dim)))
        self.wo = p.setdefault(f"{prefix}.wo", parameter((dim, dim), rng, scale=1.0 / np.sqrt(dim)))
        self.ffn_in = Linear(dim, 4 * dim, f"{prefix}.ffn_in", p, rng)
        self.ffn_out = Linear(4 * dim, dim, f"{prefix}.ffn_out", p, rng)
        self.ln_attn = LayerNorm(dim, f"{prefix}.ln_attn", p)
        self.ln_ffn = LayerNorm(dim, f"{prefix}.ln_ffn", p)

    def self_attention(self, x: Tensor) -> Tensor:
        q = _split_heads(x @ self.wq, self.heads)
        k = _split_heads(x @ self.wk, self.heads)
        v = _split_heads(x @ self.wv, self.heads)
        return _merge_heads(attention_t(q, k, v)) @ self.wo

    def ffn(self, x: Tensor) -> Tensor:
        return self.ffn_out(self.ffn_in(x).gelu())


def grouped_attention(x: Tensor, groups: list[slice], params: AttentionParams) -> Tensor:
    """Self-attention restricted to row groups, concatenated back in order."""
    if len(groups) == 1:
        return params.self_attention(x)
    return concat([params.self_attention(x[g]) for g in groups], axis=0)


def within_part_attention(seq: TokenSequence, params: AttentionParams) -> TokenSequence:
    """Residual attention + FFN applied independently inside each part.

    Tokens of different parts never interact: for any perturbation confined
    to one part, every other part's output rows are bit-identical.
    """
    if seq.dim != params.dim:
        raise ValueError(f"sequence dim {seq.dim} != block dim {params.dim}")
    x = Tensor(seq.tokens)
    groups = [s for _, s in seq.part_slices()]
    h = x + grouped_attention(x, groups, params)
    h = h + params.ffn(h)
    return seq.with_tokens(h.data)


def global_attention(seq: TokenSequence, params: AttentionParams) -> TokenSequence:
    """Residual attention + FFN over the whole sequence (one group)."""
    x = Tensor(seq.tokens)
    h = x + params.self_attention(x)
    h = h + params.ffn(h)
    return seq.with_tokens(h.data)
