"""Command-line surface: plan, noise, generate, eval, demo-flow.

Every command is driven by one JSON config (subsets validated per command)
plus a few override flags, prints machine-parseable JSON to stdout and
diagnostics to stderr, and exits 0 on success, 2 on config or validation
errors, 1 on internal errors. All randomness comes from named seeds, so
identical config + seeds reproduce identical artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from . import diffusion, metrics, noise, tensorio
from .config import RunConfig, load_box_sequence, load_json, run_config_from_dict
from .errors import ValidationError
from .trajectory import interpolate_boxes, rasterize_masks


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def _write_tensor(path: Path, data) -> str:
    raw = tensorio.tensor_bytes(data)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()


def _load_config(args, overrides: dict | None = None) -> RunConfig:
    master = getattr(args, "seed", None)
    if args.config is None:
        user: dict = {}
    else:
        user = load_json(args.config, "config")
        if not isinstance(user, dict):
            raise ValidationError("config: top level must be a JSON object")
    if overrides:
        merged = user
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, key = dotted.split("/")
            merged.setdefault(section, {})[key] = value
        user = merged
    return run_config_from_dict(user, master_seed=master)


def _guidance_overrides(args) -> dict:
    return {
        "guidance/alpha_scale": getattr(args, "alpha_scale", None),
        "guidance/beta": getattr(args, "beta", None),
        "guidance/edit_steps": getattr(args, "edit_steps", None),
        "guidance/sigma_scale": getattr(args, "sigma_scale", None),
        "guidance/isolation_lambda": getattr(args, "isolation_lambda", None),
        "noise/keep_fraction": getattr(args, "keep_fraction", None),
        "sampler/mode": getattr(args, "mode", None),
        "sampler/total_frames": getattr(args, "frames", None),
    }


def cmd_plan(args) -> int:
    cfg = _load_config(args)
    if cfg.trajectory is None:
        raise ValidationError("plan: config has no trajectory block")
    boxes = interpolate_boxes(cfg.trajectory)
    out_dir = Path(args.out or "plan")
    out_dir.mkdir(parents=True, exist_ok=True)
    boxes_path = out_dir / "boxes.json"
    boxes_path.write_text(
        json.dumps([b.as_list() for b in boxes], indent=2), encoding="utf-8"
    )
    mask_files = {}
    for h, w in cfg.plan_resolutions:
        stack = rasterize_masks(boxes, h, w)
        path = out_dir / f"masks_{h}x{w}.ftnz"
        _write_tensor(path, stack.masks)
        mask_files[f"{h}x{w}"] = str(path)
    _emit(
        {
            "command": "plan",
            "frames": cfg.trajectory.total_frames,
            "boxes": str(boxes_path),
            "masks": mask_files,
            "config_hash": cfg.digest(),
        }
    )
    return 0


def cmd_noise(args) -> int:
    cfg = _load_config(args, _guidance_overrides(args))
    sampler = dataclasses.replace(cfg.sampler, guided=True)
    tensor = diffusion.initial_noise_for(sampler, cfg.trajectory, cfg.seeds)
    out = Path(args.out or "noise.ftnz")
    digest = _write_tensor(out, tensor)
    _emit(
        {
            "command": "noise",
            "output": str(out),
            "output_hash": digest,
            "shape": list(tensor.shape),
            "keep_fraction": sampler.noise.keep_fraction,
            "injected": bool(sampler.noise.inject and cfg.trajectory is not None),
            "mode": sampler.mode,
            "config_hash": cfg.digest(),
        }
    )
    return 0


def cmd_generate(args) -> int:
    cfg = _load_config(args, _guidance_overrides(args))
    latent = diffusion.generate(cfg.sampler, cfg.trajectory, cfg.seeds)
    out = Path(args.out or "video.ftnz")
    digest = _write_tensor(out, latent)
    manifest = {
        "command": "generate",
        "output": str(out),
        "output_hash": digest,
        "shape": list(latent.shape),
        "mode": cfg.sampler.mode,
        "guided": cfg.sampler.guided,
        "seeds": dataclasses.asdict(cfg.seeds),
        "config_hash": cfg.digest(),
    }
    manifest_path = out.with_name(out.name + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    _emit(manifest)
    return 0


def cmd_eval(args) -> int:
    target = load_box_sequence(args.target, allow_missing=False)
    detected = load_box_sequence(args.detected, allow_missing=True)
    report = metrics.evaluate(detected, target)  # raises on length mismatch
    _emit(report.to_dict())
    return 0


def cmd_demo_flow(args) -> int:
    cfg = _load_config(args)
    shape = cfg.sampler.dims
    seed = args.seed if args.seed is not None else cfg.seeds.noise
    report = noise.flow_similarity_report(
        shape,
        seed,
        stride=args.stride,
        direction=args.direction,
        keep_fraction=args.keep_fraction,
        lpf_kind=cfg.sampler.noise.lpf_kind,
    )
    if args.out:
        tensor = noise.build_flowed_noise(
            shape, seed, args.stride, args.direction, args.keep_fraction,
            cfg.sampler.noise.lpf_kind,
        )
        report["output"] = str(args.out)
        report["output_hash"] = _write_tensor(Path(args.out), tensor)
    report["command"] = "demo-flow"
    _emit(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajdiff",
        description="Trajectory-controlled toy video diffusion: guided noise, "
        "guided attention, and alignment metrics.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON path")
    common.add_argument("--seed", type=int, help="master seed overriding the config seed block")
    common.add_argument("--out", help="output path (file, or directory for plan)")

    guidance = argparse.ArgumentParser(add_help=False)
    guidance.add_argument("--alpha-scale", dest="alpha_scale", type=float,
                          help="cross-attention boost numerator")
    guidance.add_argument("--beta", type=float, help="self-attention soften factor")
    guidance.add_argument("--edit-steps", dest="edit_steps", type=int,
                          help="number of early sampler steps to edit")
    guidance.add_argument("--sigma-scale", dest="sigma_scale", type=float,
                          help="Gaussian width as fraction of box half-extent")
    guidance.add_argument("--isolation-lambda", dest="isolation_lambda", type=float,
                          help="attention mass split off isolated frames")
    guidance.add_argument("--keep-fraction", dest="keep_fraction", type=float,
                          help="kept low-frequency coefficient fraction")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", parents=[common],
                       help="expand a trajectory into per-frame boxes and masks")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("noise", parents=[common, guidance],
                       help="construct guided initial noise")
    p.add_argument("--mode", choices=["normal", "long", "large"])
    p.add_argument("--frames", type=int, help="total frames for long mode")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("generate", parents=[common, guidance],
                       help="run the toy diffusion pipeline end to end")
    p.add_argument("--mode", choices=["normal", "long", "large"])
    p.add_argument("--frames", type=int, help="total frames for long mode")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", parents=[common],
                       help="score detected boxes against target boxes")
    p.add_argument("--target", required=True, help="target box-sequence JSON")
    p.add_argument("--detected", required=True, help="detected box-sequence JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo-flow", parents=[common],
                       help="noise-flow correlation demonstration")
    p.add_argument("--direction", choices=list(noise.FLOW_DIRECTIONS), default="down_right")
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--keep-fraction", dest="keep_fraction", type=float, default=0.25)
    p.set_defaults(func=cmd_demo_flow)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
