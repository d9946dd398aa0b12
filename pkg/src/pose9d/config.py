"""Run configuration: YAML (or JSON) with a version field; unknown keys rejected."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import yaml

from .errors import InvariantError, SchemaError
from .geometry import CameraIntrinsics, SymmetrySpec
from .losses import LossWeights
from .matching import CostWeights
from .metrics import EvalConfig
from .scene_io import DEFAULT_INTRINSICS, NoiseProfile

CONFIG_VERSION = "1"

_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


@dataclass(frozen=True)
class LossOptions:
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    symmetric_rotation: bool = False


@dataclass(frozen=True)
class SynthConfig:
    objects: tuple = (1, 10)
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    noise_profiles: dict = field(default_factory=lambda: {"default": NoiseProfile()})


@dataclass(frozen=True)
class RunConfig:
    cost_weights: CostWeights = CostWeights()
    loss_weights: LossWeights = LossWeights()
    loss: LossOptions = LossOptions()
    eval: EvalConfig = EvalConfig()
    synth: SynthConfig = SynthConfig()
    seed: int = 0
    threads: int | None = None

    def noise_profile(self, name: str = "default", seed: int | None = None) -> NoiseProfile:
        if name not in self.synth.noise_profiles:
            raise InvariantError(f"unknown noise profile {name!r}", path="synth.noise_profiles")
        p = self.synth.noise_profiles[name]
        if seed is None:
            return p
        d = p.to_dict()
        d["seed"] = seed
        return NoiseProfile(**d)

    def to_dict(self) -> dict:
        ev = self.eval
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "threads": self.threads,
            "cost_weights": self.cost_weights.to_dict(),
            "loss_weights": self.loss_weights.to_dict(),
            "loss": {
                "focal_alpha": self.loss.focal_alpha,
                "focal_gamma": self.loss.focal_gamma,
                "symmetric_rotation": self.loss.symmetric_rotation,
            },
            "eval": {
                "categories": list(ev.categories),
                "iou_thresholds": list(ev.iou_thresholds),
                "pose_thresholds": [list(p) for p in ev.pose_thresholds],
                "iou_gate": ev.iou_gate,
                "symmetric_iou": ev.symmetric_iou,
                "symmetry_steps": ev.symmetry_steps,
                "symmetry": {c: s.to_dict() for c, s in sorted(ev.symmetry.items())},
            },
            "synth": {
                "objects": list(self.synth.objects),
                "intrinsics": {k: getattr(self.synth.intrinsics, k) for k in _INTRINSIC_KEYS},
                "noise_profiles": {
                    k: v.to_dict() for k, v in sorted(self.synth.noise_profiles.items())
                },
            },
        }


def _section(d, path, allowed) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise SchemaError("expected a mapping", path=path)
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise SchemaError(f"unknown keys {unknown}", path=path)
    return d


def _build(path, factory, **kw):
    try:
        return factory(**kw)
    except (TypeError, ValueError) as exc:
        raise InvariantError(str(exc), path=path) from None


def config_from_dict(d: dict) -> RunConfig:
    d = _section(
        d, "", ("version", "seed", "threads", "cost_weights", "loss_weights", "loss", "eval", "synth")
    )
    version = str(d.get("version", CONFIG_VERSION))
    if version != CONFIG_VERSION:
        raise SchemaError(f"unsupported config version {version!r}", path="version")

    cw = _section(d.get("cost_weights"), "cost_weights", CostWeights.__dataclass_fields__)
    lw = _section(d.get("loss_weights"), "loss_weights", LossWeights.__dataclass_fields__)
    lo = _section(d.get("loss"), "loss", LossOptions.__dataclass_fields__)
    ev = _section(
        d.get("eval"),
        "eval",
        (
            "categories",
            "iou_thresholds",
            "pose_thresholds",
            "iou_gate",
            "symmetric_iou",
            "symmetry_steps",
            "symmetry",
        ),
    )
    sy = _section(d.get("synth"), "synth", ("objects", "intrinsics", "noise_profiles"))

    ev_kw = {k: v for k, v in ev.items() if k != "symmetry"}
    if "pose_thresholds" in ev_kw:
        ev_kw["pose_thresholds"] = tuple(tuple(p) for p in ev_kw["pose_thresholds"])
    if "symmetry" in ev:
        sym = _section(ev["symmetry"], "eval.symmetry", ev.get("categories", EvalConfig().categories))
        try:
            ev_kw["symmetry"] = {c: SymmetrySpec.from_dict(s or {}) for c, s in sym.items()}
        except (TypeError, ValueError, AttributeError) as exc:
            raise InvariantError(str(exc), path="eval.symmetry") from None

    synth_kw = {}
    if "objects" in sy:
        objs = sy["objects"]
        if not (isinstance(objs, list) and len(objs) == 2 and 0 <= objs[0] <= objs[1]):
            raise InvariantError("expected [min, max] with 0 <= min <= max", path="synth.objects")
        synth_kw["objects"] = (int(objs[0]), int(objs[1]))
    if "intrinsics" in sy:
        intr = _section(sy["intrinsics"], "synth.intrinsics", _INTRINSIC_KEYS)
        synth_kw["intrinsics"] = _build("synth.intrinsics", CameraIntrinsics, **intr)
    if "noise_profiles" in sy:
        profiles = sy["noise_profiles"]
        if not isinstance(profiles, dict) or not profiles:
            raise SchemaError("expected a non-empty mapping", path="synth.noise_profiles")
        synth_kw["noise_profiles"] = {
            name: _build(
                f"synth.noise_profiles.{name}",
                NoiseProfile,
                **_section(p, f"synth.noise_profiles.{name}", NoiseProfile.__dataclass_fields__),
            )
            for name, p in profiles.items()
        }

    threads = d.get("threads")
    if threads is not None and (not isinstance(threads, int) or threads < 1):
        raise InvariantError("threads must be a positive integer or null", path="threads")
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise SchemaError("seed must be an integer", path="seed")

    return RunConfig(
        cost_weights=_build("cost_weights", CostWeights, **cw),
        loss_weights=_build("loss_weights", LossWeights, **lw),
        loss=_build("loss", LossOptions, **lo),
        eval=_build("eval", EvalConfig, **ev_kw),
        synth=_build("synth", SynthConfig, **synth_kw),
        seed=seed,
        threads=threads,
    )


def load_config(path=None) -> RunConfig:
    """Load a config file; ``None`` gives the packaged defaults."""
    if path is None:
        text = resources.files("pose9d").joinpath("default_config.yaml").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"config is not valid YAML: {exc}") from None
    return config_from_dict(data or {})


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, allow_unicode=True)
