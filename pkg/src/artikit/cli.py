"""Command-line interface.

Every subcommand prints machine-readable JSON on stdout, keeps diagnostics
on stderr, and exits 0 only on success. `validate` exits 2 when the object
loads but violates invariants.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .artcore import ArticulatedObject, Part, PartGeometry, simplify, validate_object
from .artihead import (
    ArticulationHead,
    FeatureCache,
    HeadConfig,
    aggregate_multistep,
    decode_object_joints,
    pool_mean_max,
)
from .flowgen import (
    SamplerConfig,
    TrainConfig,
    assemble_object,
    evaluate_articulation,
    evaluate_fm_loss,
    make_toy_dataset,
    run_two_stage,
    train_toy,
)
from .flowgen.toydata import stage1_tokens, synth_cond_features
from .interop import (
    ObjectDocument,
    SchemaError,
    VertexPrediction,
    export_urdf,
    extract_physx_parts,
    load_document,
    load_object,
    save_object,
)
from .kinematics import JointState, pose_object, sample_states
from .metrics import evaluate
from .netcore import Denoiser, DenoiserConfig, load_params, merge_bundle, save_params, split_bundle
from .netcore.denoiser import CondInput
from .sparsegrid import PartVoxelSet, SparseOccupancy

log = logging.getLogger("artikit")


def _emit(payload) -> None:
    json.dump(payload, sys.stdout, indent=1, default=_jsonable)
    sys.stdout.write("\n")


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    raise TypeError(f"not JSON-serializable: {type(value)!r}")


def _object_json(obj: ArticulatedObject) -> dict:
    from .interop import document_to_json
    return document_to_json(ObjectDocument.wrap(obj))


def _write_or_emit(obj: ArticulatedObject, out: str | None) -> None:
    if out:
        save_object(out, obj)
        _emit({"output": out, "parts": obj.num_parts})
    else:
        _emit(_object_json(obj))


def _fractions(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _load_mask(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path).astype(np.int64)
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data["mask"]
    return np.asarray(data, dtype=np.int64)


# -- subcommand handlers -------------------------------------------------------


def cmd_validate(args) -> int:
    report = validate_object(load_object(args.object))
    _emit(report.to_dict())
    return 0 if report.ok else 2


def cmd_simplify(args) -> int:
    obj = simplify(load_object(args.object))
    _write_or_emit(obj, args.output)
    return 0


def cmd_pose(args) -> int:
    obj = load_object(args.object)
    if (args.state is None) == (args.fraction is None):
        raise ValueError("pass exactly one of --state or --fraction")
    if args.state is not None:
        state = JointState.for_object(obj, _fractions(args.state))
    else:
        state = sample_states(obj, [args.fraction])[0]
    _write_or_emit(pose_object(obj, state), args.output)
    return 0


def cmd_eval(args) -> int:
    pred = load_object(args.pred)
    gt = load_object(args.gt)
    report = evaluate(pred, gt, fractions=tuple(_fractions(args.fractions)),
                      points=args.points, aor_resolution=args.aor_res,
                      seed=args.seed, mode=args.mode, per_part_cd=args.cd_per_part)
    _emit(report.to_dict())
    print(report.table(), file=sys.stderr)
    return 0


def cmd_export_urdf(args) -> int:
    text = export_urdf(load_object(args.object), name=args.name)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
        _emit({"output": args.output})
    else:
        _emit({"urdf": text})
    return 0


def cmd_extract_physx(args) -> int:
    with open(args.predictions) as fh:
        data = json.load(fh)
    preds = [VertexPrediction.from_dict(d) for d in data["vertices"]]
    obj = extract_physx_parts(preds)
    _write_or_emit(obj, args.output)
    return 0


# -- toy pipeline ----------------------------------------------------------------

TOY_DEFAULTS = {
    "dataset": {"n": 32, "resolution": 8, "token_dim": 48, "cond_dim": 16,
                "mask_size": 16, "cond_shape": [8, 8], "seed": 0},
    "denoiser": {"depth": 4, "width": 64, "heads": 4, "token_dim": 48, "cond_dim": 16,
                 "part_embed_dim": 16, "max_parts": 8, "stage": 2, "posenc_dim": 96,
                 "grid_resolution": 8, "cond_shape": [8, 8]},
    "head": {"feature_dim": 64, "hidden": 64, "layers": 6},
    "train": {"lr": 1e-3, "steps": 500, "batch_size": 8, "articulation_weight": 0.05,
              "uncond_dropout": 0.1, "seed": 0},
    "sampler": {"steps": 25, "cfg_scale": 7.0, "feature_steps": 20, "seed": 0},
    "train_stage1": False,
    "stage1": {"depth": 2, "width": 32, "heads": 4, "token_dim": 1, "cond_dim": 16,
               "part_embed_dim": 16, "max_parts": 8, "stage": 1, "posenc_dim": 48,
               "grid_resolution": 8, "cond_shape": [8, 8]},
    "stage1_steps": 200,
}


def load_toy_config(path: str | None) -> dict:
    cfg = json.loads(json.dumps(TOY_DEFAULTS))  # deep copy
    if path:
        with open(path) as fh:
            user = json.load(fh)
        for key, value in user.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    return cfg


def cmd_train_toy(args) -> int:
    cfg = load_toy_config(args.config)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
        cfg["dataset"]["seed"] = args.seed
    dataset = make_toy_dataset(**{**cfg["dataset"], "cond_shape": tuple(cfg["dataset"]["cond_shape"])})

    den_cfg = DenoiserConfig.from_dict(cfg["denoiser"])
    head_cfg = HeadConfig.from_dict({**cfg["head"], "feature_dim": den_cfg.width})
    model = Denoiser(den_cfg, seed=cfg["train"]["seed"])
    head = ArticulationHead(head_cfg, seed=cfg["train"]["seed"] + 1)
    train_cfg = TrainConfig(**cfg["train"])
    sampler = SamplerConfig(**cfg["sampler"])

    initial = evaluate_fm_loss(model, dataset)
    history = train_toy(dataset, model, head, train_cfg)
    final = evaluate_fm_loss(model, dataset)
    arti = evaluate_articulation(model, head, dataset, sampler)

    bundle = merge_bundle(stage2=model.state_dict(), head=head.state_dict())
    configs = {"denoiser": den_cfg.to_dict(), "head": head_cfg.to_dict(),
               "dataset": cfg["dataset"], "sampler": cfg["sampler"]}

    if cfg.get("train_stage1"):
        s1_cfg = DenoiserConfig.from_dict(cfg["stage1"])
        stage1 = Denoiser(s1_cfg, seed=cfg["train"]["seed"] + 2)
        s1_data = _stage1_dataset(dataset, s1_cfg)
        s1_train = TrainConfig(**{**cfg["train"], "steps": cfg.get("stage1_steps", 200),
                                  "articulation_weight": 0.0})
        train_toy(s1_data, stage1, head, s1_train)
        bundle.update(merge_bundle(stage1=stage1.state_dict()))
        configs["stage1"] = s1_cfg.to_dict()

    bundle["__configs__"] = np.frombuffer(json.dumps(configs).encode(), dtype=np.uint8)
    save_params(args.output, bundle)
    _emit({
        "checkpoint": args.output,
        "initial_fm_loss": initial,
        "final_fm_loss": final,
        "loss_reduction": 1.0 - final / initial,
        "articulation": arti,
        "train_seconds": history["wall_time"],
    })
    return 0


def _stage1_dataset(dataset, s1_cfg: DenoiserConfig):
    """Re-targets toy samples at dense coarse-occupancy logits."""
    from dataclasses import replace as dc_replace
    from .sparsegrid import dense_grid_layout

    out = []
    for sample in dataset:
        layout = dense_grid_layout(sample.voxels.num_parts, s1_cfg.grid_resolution, s1_cfg.token_dim)
        seq = layout.with_tokens(stage1_tokens(sample.voxels, layout))
        out.append(dc_replace(sample, seq=seq))
    return out


def _load_bundle(path: str):
    state = load_params(path)
    configs = json.loads(bytes(state.pop("__configs__").astype(np.uint8)).decode())
    return state, configs


def cmd_sample(args) -> int:
    state, configs = _load_bundle(args.checkpoint)
    den_cfg = DenoiserConfig.from_dict(configs["denoiser"])
    head_cfg = HeadConfig.from_dict(configs["head"])
    model = Denoiser(den_cfg)
    model.load_state(split_bundle(state, "stage2"))
    head = ArticulationHead(head_cfg)
    head.load_state(split_bundle(state, "head"))

    stage1 = None
    if "stage1" in configs and any(k.startswith("stage1/") for k in state):
        stage1 = Denoiser(DenoiserConfig.from_dict(configs["stage1"]))
        stage1.load_state(split_bundle(state, "stage1"))

    mask = _load_mask(args.mask)
    cond = CondInput(
        synth_cond_features(mask, den_cfg.cond_dim, tuple(den_cfg.cond_shape)), mask)

    gt_voxels = None
    num_parts = int(mask.max()) + 1
    if args.gt_voxels:
        source = load_object(args.gt_voxels)
        parts = []
        for part in source.parts:
            if part.geometry.voxels is None:
                raise ValueError("--gt-voxels needs an object with voxel geometry")
            parts.append(SparseOccupancy(part.geometry.resolution, part.geometry.voxels))
        gt_voxels = PartVoxelSet(tuple(parts))
        num_parts = gt_voxels.num_parts

    sampler_args = dict(configs.get("sampler", {}))
    if args.seed is not None:
        sampler_args["seed"] = args.seed
    if args.cfg_scale is not None:
        sampler_args["cfg_scale"] = args.cfg_scale
    sampler = SamplerConfig(**sampler_args)

    result = run_two_stage(cond, stage1, model, sampler, num_parts,
                           gt_voxels=gt_voxels, fine_resolution=args.fine_resolution)
    obj = assemble_object(result, head)
    if args.cache_output:
        result.cache.save(args.cache_output)
        log.info("feature cache written to %s", args.cache_output)
    _write_or_emit(obj, args.output)
    return 0


def cmd_regress_arti(args) -> int:
    state, configs = _load_bundle(args.checkpoint)
    head = ArticulationHead(HeadConfig.from_dict(configs["head"]))
    head.load_state(split_bundle(state, "head"))
    cache = FeatureCache.load(args.cache)

    with open(args.aabbs) as fh:
        raw = json.load(fh)
    boxes = [(np.asarray(b[0], dtype=np.float64), np.asarray(b[1], dtype=np.float64))
             for b in (raw["aabbs"] if isinstance(raw, dict) else raw)]
    parts = cache.parts()
    if len(boxes) != len(parts):
        raise ValueError(f"{len(boxes)} AABBs for {len(parts)} cached parts")

    from .netcore.autodiff import Tensor
    raws = [head.forward_t(Tensor(pool_mean_max(aggregate_multistep(cache, p)))).data.reshape(-1)
            for p in parts]
    joints = decode_object_joints(raws, boxes, head.cfg.semantics)
    _emit({"joints": [{
        "part": p,
        "type": j.joint_type.value,
        "semantic": j.semantic,
        "origin": list(j.origin),
        "axis": list(j.axis),
        "range": list(j.range),
        "parent": j.parent,
    } for p, j in zip(parts, joints)]})
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="artikit", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="override random seed")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check object invariants")
    p.add_argument("object")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("simplify", help="collapse fixed joints and normalize to depth 1")
    p.add_argument("object")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_simplify)

    p = sub.add_parser("pose", help="apply a joint state or range fraction")
    p.add_argument("object")
    p.add_argument("--state", help="comma-separated per-part joint values")
    p.add_argument("--fraction", type=float, help="open all joints to this range fraction")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_pose)

    p = sub.add_parser("eval", help="RS/AS metrics between two objects")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--fractions", default="0.25,0.5,0.75,1.0")
    p.add_argument("--points", type=int, default=4096)
    p.add_argument("--aor-res", type=int, default=64)
    p.add_argument("--mode", choices=("joint", "sequential"), default="joint")
    p.add_argument("--cd-per-part", action="store_true")
    p.set_defaults(fn=cmd_eval, seed=0)

    p = sub.add_parser("export-urdf", help="write a URDF document")
    p.add_argument("object")
    p.add_argument("--name", default="artikit_object")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_export_urdf)

    p = sub.add_parser("extract-physx", help="cluster per-vertex kinematic predictions")
    p.add_argument("predictions")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_extract_physx)

    p = sub.add_parser("train-toy", help="train the toy two-stage pipeline")
    p.add_argument("--config", help="JSON config (defaults merged in)")
    p.add_argument("-o", "--output", default="toy_checkpoint.npz")
    p.set_defaults(fn=cmd_train_toy)

    p = sub.add_parser("sample", help="generate an object from a part mask")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--gt-voxels", help="object file whose voxels bypass stage 1")
    p.add_argument("--fine-resolution", type=int, default=None)
    p.add_argument("--cfg-scale", type=float, default=None)
    p.add_argument("--cache-output", help="write the feature cache to this npz")
    p.add_argument("-o", "--output")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("regress-arti", help="decode joints from a feature cache")
    p.add_argument("--cache", required=True)
    p.add_argument("--aabbs", required=True, help="JSON: [[lo, hi], ...] per part")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_regress_arti)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError, SchemaError, FloatingPointError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
