"""Articulation regression from cached denoiser features.

Per-part token features cached over the final denoising steps are averaged
across steps, pooled over tokens (mean ++ max), and pushed through an MLP
that emits joint type/semantic logits, origin, axis, and range. Decoding
renormalizes the axis, sorts the range, and projects revolute origins onto
the part's bounding-box surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .artcore import DEFAULT_SEMANTICS, JOINT_TYPES, JointSpec, JointType, ROOT, unit_axis
from .kinematics import project_origin_to_aabb
from .netcore.autodiff import Tensor, concat, parameter
from .netcore.checkpoint import load_params, save_params


@dataclass
class FeatureCache:
    """Token features keyed by (denoise step, part index).

    Every cached step must cover the same part set, and a part's token
    count must not change across steps.
    """

    entries: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def put(self, step: int, part: int, features: np.ndarray) -> None:
        feats = np.asarray(features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("cached features must be (tokens, dim)")
        for (s, p), existing in self.entries.items():
            if p == part and existing.shape != feats.shape:
                raise ValueError(
                    f"part {part}: token shape {feats.shape} != {existing.shape} at step {s}")
        self.entries[(step, part)] = feats

    def steps(self) -> list[int]:
        return sorted({s for s, _ in self.entries})

    def parts(self) -> list[int]:
        return sorted({p for _, p in self.entries})

    def keys(self) -> set[tuple[int, int]]:
        return set(self.entries)

    def validate(self) -> None:
        parts = set(self.parts())
        for s in self.steps():
            present = {p for (step, p) in self.entries if step == s}
            if present != parts:
                raise ValueError(f"step {s} covers parts {sorted(present)}, expected {sorted(parts)}")

    def save(self, path: str) -> None:
        save_params(path, {f"t{s}_p{p}": v for (s, p), v in self.entries.items()})

    @staticmethod
    def load(path: str) -> "FeatureCache":
        cache = FeatureCache()
        for key, value in load_params(path).items():
            step_s, part_s = key[1:].split("_p")
            cache.put(int(step_s), int(part_s), value)
        cache.validate()
        return cache


def aggregate_multistep(cache: FeatureCache, part: int) -> np.ndarray:
    """Elementwise mean of a part's features over all cached steps."""
    mats = [v for (s, p), v in sorted(cache.entries.items()) if p == part]
    if not mats:
        raise ValueError(f"no cached features for part {part}")
    shapes = {m.shape for m in mats}
    if len(shapes) > 1:
        raise ValueError(f"part {part}: inconsistent token counts across steps: {shapes}")
    return np.mean(mats, axis=0)


def pool_mean_max(features: np.ndarray) -> np.ndarray:
    """Concatenated per-channel mean and max over the token axis."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("pooling needs a nonempty (tokens, dim) matrix")
    return np.concatenate([feats.mean(axis=0), feats.max(axis=0)])


def pool_mean_max_t(features: Tensor) -> Tensor:
    """Tape-aware pooling used during joint training."""
    return concat([features.mean(axis=0), features.max(axis=0)], axis=0)


@dataclass(frozen=True)
class HeadConfig:
    feature_dim: int = 64        # denoiser width D; head input is 2D
    hidden: int = 64
    layers: int = 6
    semantics: tuple[str, ...] = DEFAULT_SEMANTICS

    @property
    def in_dim(self) -> int:
        return 2 * self.feature_dim

    @property
    def out_dim(self) -> int:
        return 11 + len(self.semantics)

    def to_dict(self) -> dict:
        return {"feature_dim": self.feature_dim, "hidden": self.hidden,
                "layers": self.layers, "semantics": list(self.semantics)}

    @staticmethod
    def from_dict(d: dict) -> "HeadConfig":
        d = dict(d)
        if "semantics" in d:
            d["semantics"] = tuple(d["semantics"])
        return HeadConfig(**d)


class ArticulationHead:
    """MLP mapping pooled part features to a raw articulation vector.

    Output layout: type logits (3), semantic logits (|S|), origin (3),
    axis (3), range (2).
    """

    def __init__(self, cfg: HeadConfig, seed: int = 0):
        if cfg.layers < 2:
            raise ValueError("head needs at least 2 layers")
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        dims = [cfg.in_dim] + [cfg.hidden] * (cfg.layers - 1) + [cfg.out_dim]
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.params[f"fc{i}.w"] = parameter((a, b), rng, scale=1.0 / np.sqrt(a))
            self.params[f"fc{i}.b"] = parameter(np.zeros(b))

    def forward_t(self, pooled: Tensor) -> Tensor:
        h = pooled.reshape(1, -1) if pooled.ndim == 1 else pooled
        n = self.cfg.layers
        for i in range(n):
            h = h @ self.params[f"fc{i}.w"] + self.params[f"fc{i}.b"]
            if i < n - 1:
                h = h.gelu()
        return h

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, tensor in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"parameter {k}: shape {arr.shape} != {tensor.data.shape}")
            tensor.data = arr.copy()


def regress_joint(pooled: np.ndarray, head: ArticulationHead) -> np.ndarray:
    """Deterministic MLP forward; returns the raw parameter vector."""
    pooled = np.asarray(pooled, dtype=np.float64).reshape(-1)
    if pooled.shape[0] != head.cfg.in_dim:
        raise ValueError(f"pooled dim {pooled.shape[0]} != head input {head.cfg.in_dim}")
    raw = head.forward_t(Tensor(pooled)).data.reshape(-1)
    if not np.all(np.isfinite(raw)):
        raise FloatingPointError("non-finite articulation head output")
    return raw


def encode_joint(joint: JointSpec, semantics: tuple[str, ...] = DEFAULT_SEMANTICS) -> np.ndarray:
    """Target vector for the head: one-hot type/semantic, origin, unit axis, range.

    Fixed joints use the canonical axis (0, 0, 1) so targets stay
    well-formed under decoding.
    """
    type_onehot = np.zeros(3)
    type_onehot[JOINT_TYPES.index(joint.joint_type)] = 1.0
    sem_onehot = np.zeros(len(semantics))
    label = joint.semantic if joint.semantic in semantics else "other"
    sem_onehot[semantics.index(label)] = 1.0
    axis = (0.0, 0.0, 1.0) if joint.is_fixed else unit_axis(joint.axis)
    return np.concatenate([type_onehot, sem_onehot, joint.origin, axis, joint.range])


def articulation_loss(raws: list, targets: list[np.ndarray]) -> Tensor:
    """Sum over parts of squared error between raw vectors and encoded targets."""
    if len(raws) != len(targets):
        raise ValueError("raw/target count mismatch")
    total = Tensor(0.0)
    for raw, tgt in zip(raws, targets):
        raw_t = raw if isinstance(raw, Tensor) else Tensor(np.asarray(raw, dtype=np.float64))
        tgt = np.asarray(tgt, dtype=np.float64).reshape(-1)
        if raw_t.data.reshape(-1).shape[0] != tgt.shape[0]:
            raise ValueError(f"encoding length {raw_t.data.size} != target {tgt.shape[0]}")
        diff = raw_t.reshape(1, -1) - Tensor(tgt[None, :])
        total = total + (diff * diff).sum()
    return total


def decode_joint(raw: np.ndarray, part_aabb: tuple[np.ndarray, np.ndarray],
                 semantics: tuple[str, ...] = DEFAULT_SEMANTICS,
                 parent: int = ROOT) -> JointSpec:
    """Decodes a raw head output into a JointSpec.

    Type/semantic by argmax; axis renormalized (degenerate axes raise);
    range sorted; revolute origins projected onto the AABB surface; fixed
    joints force range (0, 0).
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    n_sem = len(semantics)
    if raw.shape[0] != 11 + n_sem:
        raise ValueError(f"raw vector length {raw.shape[0]} != {11 + n_sem}")
    if not np.all(np.isfinite(raw)):
        raise FloatingPointError("non-finite raw articulation vector")

    joint_type = JOINT_TYPES[int(np.argmax(raw[:3]))]
    semantic = semantics[int(np.argmax(raw[3:3 + n_sem]))]
    origin = raw[3 + n_sem:6 + n_sem]
    axis = unit_axis(raw[6 + n_sem:9 + n_sem])
    lo, hi = sorted(raw[9 + n_sem:11 + n_sem].tolist())
    if joint_type is JointType.FIXED:
        lo, hi = 0.0, 0.0
    if joint_type is JointType.REVOLUTE:
        origin = project_origin_to_aabb(origin, part_aabb)
    return JointSpec(joint_type, semantic, tuple(origin.tolist()), axis, (lo, hi), parent)


def choose_base(semantic_labels: list[str], aabbs: list[tuple[np.ndarray, np.ndarray]]) -> int:
    """Base part index: the semantic "base" claimant, largest volume on ties."""
    candidates = [i for i, s in enumerate(semantic_labels) if s == "base"]
    pool = candidates if len(candidates) >= 1 else list(range(len(semantic_labels)))
    if len(pool) == 1:
        return pool[0]
    volumes = [float(np.prod(np.asarray(aabbs[i][1]) - np.asarray(aabbs[i][0]))) for i in pool]
    return pool[int(np.argmax(volumes))]


def decode_object_joints(raws: list[np.ndarray],
                         aabbs: list[tuple[np.ndarray, np.ndarray]],
                         semantics: tuple[str, ...] = DEFAULT_SEMANTICS) -> list[JointSpec]:
    """Decodes all parts and wires the depth-1 tree deterministically.

    The base part is forced to a fixed root joint; every other part is
    parented to it.
    """
    if len(raws) != len(aabbs):
        raise ValueError("raw/AABB count mismatch")
    n_sem = len(semantics)
    labels = [semantics[int(np.argmax(np.asarray(r).reshape(-1)[3:3 + n_sem]))] for r in raws]
    base = choose_base(labels, aabbs)
    joints = []
    for i, (raw, aabb) in enumerate(zip(raws, aabbs)):
        if i == base:
            joints.append(JointSpec(JointType.FIXED, "base", (0.0, 0.0, 0.0), (0.0, 0.0, 1.0),
                                    (0.0, 0.0), ROOT))
        else:
            joints.append(decode_joint(raw, aabb, semantics, parent=base))
    return joints
