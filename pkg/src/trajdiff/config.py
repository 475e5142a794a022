"""Run configuration: JSON schemas, defaults, and loading.

One config file drives every CLI command; each command validates and uses
the subset it needs. Validation happens against published JSON schemas
(mirrored under docs/) before any computation, and unknown fields are
rejected. Defaults follow the reference hyperparameters: 50 DDIM steps,
eta 0, classifier-free guidance 12, beta 0.01, 75% resampled (keep 0.25).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .attention import GuidanceConfig
from .diffusion import NoiseConfig, SamplerConfig
from .errors import ValidationError
from .noise import SeedSet
from .trajectory import BBox, TrajectorySpec

_BOX_ITEM = {
    "type": "array",
    "minItems": 4,
    "maxItems": 4,
    "items": {"type": "number", "minimum": 0.0, "maximum": 1.0},
}

TRAJECTORY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "Trajectory",
    "description": "Keyframed normalized bounding boxes over a frame range.",
    "type": "object",
    "required": ["frames", "keyframes"],
    "additionalProperties": False,
    "properties": {
        "frames": {"type": "integer", "minimum": 1},
        "keyframes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["frame", "box"],
                "additionalProperties": False,
                "properties": {
                    "frame": {"type": "integer", "minimum": 0},
                    "box": _BOX_ITEM,
                },
            },
        },
    },
}

BOX_SEQUENCE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "BoxSequence",
    "description": "Per-frame detected or target boxes; null marks a detector miss.",
    "type": "array",
    "items": {"oneOf": [_BOX_ITEM, {"type": "null"}]},
}

RUN_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "RunConfig",
    "description": "Single configuration artifact driving all CLI commands.",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "trajectory": TRAJECTORY_SCHEMA,
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 1},
                "eta": {"type": "number", "minimum": 0},
                "cfg_scale": {"type": "number"},
                "dims": {
                    "type": "array",
                    "minItems": 4,
                    "maxItems": 4,
                    "items": {"type": "integer", "minimum": 1},
                },
                "mode": {"enum": ["normal", "long", "large"]},
                "total_frames": {"type": "integer", "minimum": 1},
                "schedule_steps": {"type": "integer", "minimum": 1},
                "beta_start": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "beta_end": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "window_len": {"type": "integer", "minimum": 1},
                "window_stride": {"type": "integer", "minimum": 1},
                "model_channels": {"type": "integer", "minimum": 4},
            },
        },
        "guidance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "alpha_scale": {"type": "number", "minimum": 0},
                "beta": {"type": "number", "minimum": 0, "maximum": 1},
                "edit_steps": {"type": "integer", "minimum": 0},
                "sigma_scale": {"type": "number", "exclusiveMinimum": 0},
                "isolation_lambda": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "isolation_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "suppress_background": {"type": "boolean"},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "inject": {"type": "boolean"},
                "keep_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "lpf_kind": {"enum": ["ideal", "gaussian"]},
                "flow_stride": {"type": "integer", "minimum": 0},
                "flow_direction": {"enum": ["down_right", "up_right"]},
                "repeat_spans": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["start", "length", "source"],
                        "additionalProperties": False,
                        "properties": {
                            "start": {"type": "integer", "minimum": 0},
                            "length": {"type": "integer", "minimum": 1},
                            "source": {"type": "integer", "minimum": 0},
                        },
                    },
                },
            },
        },
        "tokens": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "foreground": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 0},
                },
            },
        },
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "master": {"type": "integer", "minimum": 0},
                "noise": {"type": "integer", "minimum": 0},
                "local": {"type": "integer", "minimum": 0},
                "resample": {"type": "integer", "minimum": 0},
                "reschedule": {"type": "integer", "minimum": 0},
                "model": {"type": "integer", "minimum": 0},
                "step_noise": {"type": "integer", "minimum": 0},
            },
        },
        "plan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "resolutions": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "array",
                        "minItems": 2,
                        "maxItems": 2,
                        "items": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
    },
}

DEFAULTS: dict = {
    "sampler": {
        "steps": 50,
        "eta": 0.0,
        "cfg_scale": 12.0,
        "dims": [4, 16, 16, 24],
        "mode": "normal",
        "total_frames": 64,
        "schedule_steps": 1000,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "window_len": 16,
        "window_stride": 8,
        "model_channels": 16,
    },
    "guidance": {
        "enabled": False,
        "alpha_scale": 0.25,
        "beta": 0.01,
        "edit_steps": 10,
        "sigma_scale": 0.5,
        "isolation_lambda": 0.2,
        "isolation_threshold": 0.9,
        "suppress_background": True,
    },
    "noise": {
        "inject": True,
        "keep_fraction": 0.25,
        "lpf_kind": "ideal",
        "flow_stride": 2,
        "flow_direction": "down_right",
        "repeat_spans": [],
    },
    "tokens": {"count": 8, "foreground": [1]},
    "seeds": {"master": 0},
    "plan": {"resolutions": [[16, 24]]},
}


def validate_against(instance, schema, label: str = "config") -> None:
    """Schema-validate, raising ValidationError anchored at the failing path."""
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ValidationError(f"{label}: {where}: {err.message}")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def trajectory_spec_from_dict(d: dict) -> TrajectorySpec:
    validate_against(d, TRAJECTORY_SCHEMA, "trajectory")
    keyframes = tuple((kf["frame"], BBox(*kf["box"])) for kf in d["keyframes"])
    return TrajectorySpec(total_frames=d["frames"], keyframes=keyframes)


def trajectory_spec_to_dict(spec: TrajectorySpec) -> dict:
    return {
        "frames": spec.total_frames,
        "keyframes": [{"frame": f, "box": b.as_list()} for f, b in spec.keyframes],
    }


@dataclass(frozen=True)
class RunConfig:
    """Resolved, validated configuration for one CLI invocation."""

    trajectory: TrajectorySpec | None
    sampler: SamplerConfig
    seeds: SeedSet
    plan_resolutions: tuple[tuple[int, int], ...]
    effective: dict

    def digest(self) -> str:
        return config_digest(self.effective)


def run_config_from_dict(user: dict, master_seed: int | None = None) -> RunConfig:
    """Validate a user config, merge defaults, and build the typed objects.

    master_seed, when given (the CLI --seed flag), replaces the whole seed
    block with values derived from it.
    """
    validate_against(user, RUN_CONFIG_SCHEMA)
    merged = _merge(DEFAULTS, user)
    if master_seed is not None:
        merged["seeds"] = {"master": int(master_seed)}

    trajectory = None
    if "trajectory" in merged:
        trajectory = trajectory_spec_from_dict(merged["trajectory"])

    g = merged["guidance"]
    guidance = GuidanceConfig(
        alpha_scale=g["alpha_scale"],
        beta=g["beta"],
        edit_steps=g["edit_steps"],
        sigma_scale=g["sigma_scale"],
        isolation_lambda=g["isolation_lambda"],
        isolation_threshold=g["isolation_threshold"],
        suppress=g["suppress_background"],
    )
    n = merged["noise"]
    noise = NoiseConfig(
        inject=n["inject"],
        keep_fraction=n["keep_fraction"],
        lpf_kind=n["lpf_kind"],
        repeat_spans=tuple(
            (s["start"], s["length"], s["source"]) for s in n["repeat_spans"]
        ),
    )
    s = merged["sampler"]
    t = merged["tokens"]
    fg = tuple(sorted(set(t["foreground"])))
    if any(i >= t["count"] for i in fg):
        raise ValidationError("tokens/foreground: index out of range")
    sampler = SamplerConfig(
        steps=s["steps"],
        eta=s["eta"],
        cfg_scale=s["cfg_scale"],
        dims=tuple(s["dims"]),
        mode=s["mode"],
        total_frames=s["total_frames"],
        schedule_steps=s["schedule_steps"],
        beta_start=s["beta_start"],
        beta_end=s["beta_end"],
        window_len=s["window_len"],
        window_stride=s["window_stride"],
        model_channels=s["model_channels"],
        n_tokens=t["count"],
        fg_tokens=fg,
        guided=g["enabled"],
        guidance=guidance,
        noise=noise,
    )

    seed_block = merged["seeds"]
    base = SeedSet.from_master(seed_block.get("master", 0))
    seeds = SeedSet(
        noise=seed_block.get("noise", base.noise),
        local=seed_block.get("local", base.local),
        resample=seed_block.get("resample", base.resample),
        reschedule=seed_block.get("reschedule", base.reschedule),
        model=seed_block.get("model", base.model),
        step_noise=seed_block.get("step_noise", base.step_noise),
    )

    resolutions = tuple((int(h), int(w)) for h, w in merged["plan"]["resolutions"])
    return RunConfig(
        trajectory=trajectory,
        sampler=sampler,
        seeds=seeds,
        plan_resolutions=resolutions,
        effective=merged,
    )


def load_json(path: str | Path, label: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"{label}: cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{label}: {path}:{exc.lineno}:{exc.colno}: {exc.msg}"
        ) from exc


def load_run_config(path: str | Path, master_seed: int | None = None) -> RunConfig:
    data = load_json(path, "config")
    if not isinstance(data, dict):
        raise ValidationError("config: top level must be a JSON object")
    return run_config_from_dict(data, master_seed)


def load_box_sequence(path: str | Path, allow_missing: bool = True) -> list[BBox | None]:
    data = load_json(path, "boxes")
    validate_against(data, BOX_SEQUENCE_SCHEMA, "boxes")
    out: list[BBox | None] = []
    for i, entry in enumerate(data):
        if entry is None:
            if not allow_missing:
                raise ValidationError(f"boxes: frame {i}: null not allowed in target sequence")
            out.append(None)
        else:
            out.append(BBox(*entry))
    return out
