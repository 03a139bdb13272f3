"""Rectified-flow objective, guidance, and the Euler sampler with feature caching.

Convention: pure noise lives at t=0, data at t=1, the path is linear, and
the regression target is the constant velocity data - noise. The sampler
takes uniform Euler steps from 0 to 1, caching last-block features for the
final S steps keyed by (step, part).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..artihead import FeatureCache
from ..netcore.denoiser import CondInput
from ..sparsegrid import TokenSequence


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 25
    cfg_scale: float = 7.0
    feature_steps: int = 20      # S: cache the last S of `steps`
    seed: int = 0
    threshold: float = 0.0       # coarse-occupancy logit threshold
    feature_source: str = "stage2"

    def __post_init__(self):
        if not 1 <= self.feature_steps <= self.steps:
            raise ValueError(f"feature_steps must be in [1, {self.steps}]")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")
        if self.feature_source not in ("stage1", "stage2"):
            raise ValueError("feature_source must be 'stage1' or 'stage2'")

    def cached_steps(self) -> set[int]:
        """1-based step indices whose features are cached."""
        return set(range(self.steps - self.feature_steps + 1, self.steps + 1))


def fm_pair(x_data: np.ndarray, noise: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear-path training pair: x_t and its constant velocity target."""
    x_data = np.asarray(x_data, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x_data.shape != noise.shape:
        raise ValueError(f"shape mismatch: data {x_data.shape} vs noise {noise.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    x_t = (1.0 - t) * noise + t * x_data
    return x_t, x_data - noise


def cfg_velocity(v_cond: np.ndarray, v_uncond: np.ndarray, scale: float) -> np.ndarray:
    """Classifier-free guidance: v_uncond + scale * (v_cond - v_uncond).

    scale == 1 returns the conditional velocity bitwise.
    """
    v_cond = np.asarray(v_cond, dtype=np.float64)
    if scale == 1.0:
        return v_cond
    v_uncond = np.asarray(v_uncond, dtype=np.float64)
    if v_cond.shape != v_uncond.shape:
        raise ValueError("conditional/unconditional velocity shapes differ")
    return v_uncond + scale * (v_cond - v_uncond)


def flow_loss(model, batch: list[tuple[TokenSequence, CondInput | None]],
              rng: np.random.Generator) -> float:
    """Mean squared velocity error over a batch, with t drawn per sample."""
    if not batch:
        raise ValueError("empty batch")
    losses = []
    for seq, cond in batch:
        t = float(rng.uniform())
        noise = rng.standard_normal(seq.tokens.shape)
        x_t, v_target = fm_pair(seq.tokens, noise, t)
        v_pred, _ = model.forward(seq.with_tokens(x_t), t, cond)
        losses.append(float(np.mean((v_pred.tokens - v_target) ** 2)))
    loss = float(np.mean(losses))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite flow-matching loss")
    return loss


def euler_sample(model, cond: CondInput | None, layout: TokenSequence,
                 cfg: SamplerConfig) -> tuple[TokenSequence, FeatureCache]:
    """Integrates the learned velocity field from noise (t=0) to data (t=1).

    ``layout`` fixes the token coordinates, part ids, and feature dim; its
    token values are ignored. Features of the conditional branch's last
    transformer block are cached for the final S steps, keyed by the
    1-based step index. Deterministic given the config seed.
    """
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal(layout.tokens.shape)
    dt = 1.0 / cfg.steps
    cached = cfg.cached_steps()
    cache = FeatureCache()

    for step in range(1, cfg.steps + 1):
        t = (step - 1) * dt
        seq = layout.with_tokens(x)
        v_cond, feats = model.forward(seq, t, cond)
        if cfg.cfg_scale == 1.0 or cond is None:
            v = v_cond.tokens
        else:
            v_uncond, _ = model.forward(seq, t, None)
            v = cfg_velocity(v_cond.tokens, v_uncond.tokens, cfg.cfg_scale)
        if step in cached:
            for part, h in feats.items():
                cache.put(step, part, h)
        x = x + v * dt
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"sampler diverged at step {step}")

    cache.validate()
    return layout.with_tokens(x), cache
