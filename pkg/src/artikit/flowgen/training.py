"""Joint training of the toy flow denoiser and the articulation head.

Each optimizer step samples a batch of objects, draws one timestep per
object, and minimizes the velocity MSE plus a weighted articulation term
computed from the same forward pass's last-block features (single-step,
non-averaged). Training is deterministic for a fixed seed and config.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from ..artihead import ArticulationHead, HeadConfig, aggregate_multistep, articulation_loss, pool_mean_max, pool_mean_max_t
from ..netcore.autodiff import Tensor
from ..netcore.denoiser import Denoiser, DenoiserConfig
from .core import SamplerConfig, euler_sample, fm_pair
from .toydata import ToySample

log = logging.getLogger(__name__)


class Adam:
    """Adaptive moment estimation over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    steps: int = 500
    batch_size: int = 8
    articulation_weight: float = 0.05
    uncond_dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.articulation_weight < 0:
            raise ValueError("articulation_weight must be >= 0")
        if not 0.0 <= self.uncond_dropout <= 1.0:
            raise ValueError("uncond_dropout must be a probability")


def _sample_losses(model: Denoiser, head: ArticulationHead, sample: ToySample,
                   t: float, noise: np.ndarray, drop_cond: bool,
                   articulation_weight: float) -> Tensor:
    x_t, v_target = fm_pair(sample.seq.tokens, noise, t)
    cond = None if drop_cond else sample.cond
    v, h_last = model.forward_tensors(Tensor(x_t), sample.seq.coords,
                                      sample.seq.part_ids, t, cond)
    diff = v - Tensor(v_target)
    loss = (diff * diff).mean()
    if articulation_weight > 0:
        raws = [head.forward_t(pool_mean_max_t(h_last[s])) for _, s in sample.seq.part_slices()]
        loss = loss + articulation_weight * articulation_loss(raws, sample.targets)
    return loss


def evaluate_fm_loss(model: Denoiser, dataset: list[ToySample],
                     t_values=(0.1, 0.3, 0.5, 0.7, 0.9), noise_seed: int = 1234) -> float:
    """Deterministic velocity MSE over the dataset on a fixed t grid."""
    rng = np.random.default_rng(noise_seed)
    losses = []
    for sample in dataset:
        for t in t_values:
            noise = rng.standard_normal(sample.seq.tokens.shape)
            x_t, v_target = fm_pair(sample.seq.tokens, noise, float(t))
            v, _ = model.forward(sample.seq.with_tokens(x_t), float(t), sample.cond)
            losses.append(float(np.mean((v.tokens - v_target) ** 2)))
    return float(np.mean(losses))


def train_toy(dataset: list[ToySample], model: Denoiser, head: ArticulationHead,
              cfg: TrainConfig, log_every: int = 100) -> dict:
    """Runs the joint optimization; returns a history dict."""
    rng = np.random.default_rng(cfg.seed)
    params = {f"den.{k}": v for k, v in model.params.items()}
    params.update({f"head.{k}": v for k, v in head.params.items()})
    opt = Adam(params, lr=cfg.lr)

    history = {"loss": [], "wall_time": 0.0}
    start = time.time()
    for step in range(cfg.steps):
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        opt.zero_grad()
        total = Tensor(0.0)
        for i in idx:
            sample = dataset[int(i)]
            t = float(rng.uniform())
            noise = rng.standard_normal(sample.seq.tokens.shape)
            drop = bool(rng.uniform() < cfg.uncond_dropout)
            total = total + _sample_losses(model, head, sample, t, noise, drop,
                                           cfg.articulation_weight)
        total = total * (1.0 / cfg.batch_size)
        if not np.isfinite(total.data):
            raise FloatingPointError(f"non-finite training loss at step {step}")
        total.backward()
        opt.step()
        history["loss"].append(total.item())
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d/%d loss %.4f", step + 1, cfg.steps, history["loss"][-1])
    history["wall_time"] = time.time() - start
    return history


def evaluate_articulation(model: Denoiser, head: ArticulationHead,
                          dataset: list[ToySample], sampler: SamplerConfig) -> dict:
    """Samples every object and scores regressed joints against ground truth.

    Features come from the sampling trajectory (multi-step aggregation),
    exactly as at inference. Reports joint-type accuracy over all parts and
    the angular axis error over movable parts.
    """
    type_hits = 0
    type_total = 0
    axis_errors = []
    for sample in dataset:
        _, cache = euler_sample(model, sample.cond, sample.seq, sampler)
        for part_index, part in enumerate(sample.obj.parts):
            pooled = pool_mean_max(aggregate_multistep(cache, part_index))
            raw = head.forward_t(Tensor(pooled)).data.reshape(-1)
            gt = sample.targets[part_index]
            type_total += 1
            if int(np.argmax(raw[:3])) == int(np.argmax(gt[:3])):
                type_hits += 1
            if not part.joint.is_fixed:
                n_sem = len(head.cfg.semantics)
                pred_axis = raw[6 + n_sem:9 + n_sem]
                norm = np.linalg.norm(pred_axis)
                if norm < 1e-8:
                    axis_errors.append(180.0)
                    continue
                cosang = float(np.clip(np.dot(pred_axis / norm, part.joint.axis_array()), -1.0, 1.0))
                axis_errors.append(float(np.degrees(np.arccos(cosang))))
    return {
        "type_accuracy": type_hits / max(type_total, 1),
        "axis_error_mean_deg": float(np.mean(axis_errors)) if axis_errors else 0.0,
        "axis_error_max_deg": float(np.max(axis_errors)) if axis_errors else 0.0,
    }
