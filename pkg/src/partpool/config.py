"""Run configuration: versioned JSON schema shared by CLI and harness."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

from .errors import ConfigInvalid

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SceneConfig:
    objects_per_scene: int = 2
    object_size: tuple[float, float] = (40.0, 64.0)
    offset_frac: float = 0.14      # articulation bound, fraction of object size
    root_sigma_frac: float = 0.111  # root blob width, fraction of object size
    part_sigma_frac: float = 0.05   # part blob width, fraction of object size
    clutter: int = 0               # distractor part-like blobs per scene
    offset_grid: bool = False      # quantize offsets to {-1, 0, +1} steps
    noise: float = 0.1
    max_overlap: float = 0.3


@dataclass(frozen=True)
class ProposalConfig:
    per_object: int = 16
    background: int = 48
    jitter_sigma: float = 0.1
    jitter_scale: float = 1.0      # systematic size bias of proposals;
                                   # < 1 models an undersizing proposer
    fg_iou: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_decay: float = 1.0          # step multiplier applied once mid-run
    lr_decay_at: float = 0.75      # fraction of iterations before the step
    batch_regions: int = 64
    fg_fraction: float = 0.5
    refine_warmup: float = 0.0     # fraction of iterations with the
                                   # refinement head frozen at identity


@dataclass(frozen=True)
class EvalConfig:
    scenes: int = 200
    proposals_per_object: int = 8
    background: int = 24
    nms_threshold: float = 0.45
    score_threshold: float = 0.05


@dataclass(frozen=True)
class Config:
    seed: int = 0
    classes: int = 3
    k: int = 7
    lambda_def: float = 0.3
    search_radius: tuple[int, int] | None = None  # None: one part extent
    enlarge_factor: float = 1.3
    loss_weight: float = 7.0
    refinement: bool = True
    image_size: int = 96
    in_channels: int = 2
    hidden_channels: int = 16
    downsample: int = 4
    refine_hidden: int = 256
    scene: SceneConfig = field(default_factory=SceneConfig)
    proposals: ProposalConfig = field(default_factory=ProposalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @property
    def map_size(self) -> int:
        return self.image_size // self.downsample

    def validate(self) -> "Config":
        checks = [
            (self.classes >= 1, "classes must be >= 1"),
            (self.k >= 1, "k must be >= 1"),
            (self.lambda_def >= 0, "lambda_def must be >= 0"),
            (self.enlarge_factor > 0, "enlarge_factor must be positive"),
            (self.loss_weight >= 0, "loss_weight must be >= 0"),
            (self.image_size % self.downsample == 0,
             "image_size must be divisible by downsample"),
            (self.in_channels >= 1, "in_channels must be >= 1"),
            (self.scene.objects_per_scene >= 1, "objects_per_scene must be >= 1"),
            (self.scene.object_size[0] <= self.scene.object_size[1],
             "object_size range reversed"),
            (0.0 <= self.scene.offset_frac <= self.enlarge_factor / self.k,
             "offset_frac must stay within one part extent of the pooling "
             "grid (<= enlarge_factor / k)"),
            (self.scene.clutter >= 0, "clutter must be >= 0"),
            (self.proposals.per_object >= 1, "per_object must be >= 1"),
            (self.proposals.jitter_scale > 0,
             "jitter_scale must be positive"),
            (self.train.iterations >= 0, "iterations must be >= 0"),
            (self.train.lr_decay > 0, "lr_decay must be positive"),
            (0.0 <= self.train.lr_decay_at <= 1.0,
             "lr_decay_at must lie in [0, 1]"),
            (0.0 <= self.train.fg_fraction <= 1.0,
             "fg_fraction must lie in [0, 1]"),
            (0.0 <= self.train.refine_warmup <= 1.0,
             "refine_warmup must lie in [0, 1]"),
            (self.train.batch_regions >= 1, "batch_regions must be >= 1"),
            (self.eval.scenes >= 1, "eval scenes must be >= 1"),
            (0.0 <= self.eval.nms_threshold <= 1.0, "nms_threshold outside [0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigInvalid(msg)
        if self.search_radius is not None:
            sx, sy = self.search_radius
            if sx < 0 or sy < 0:
                raise ConfigInvalid("search_radius entries must be >= 0")
        return self

    def with_overrides(self, seed: int | None = None,
                       lambda_def: float | None = None) -> "Config":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        if lambda_def is not None:
            cfg = replace(cfg, lambda_def=lambda_def)
        return cfg.validate()


def _build(section: dict, cls, where: str):
    known = {f: t for f, t in cls.__dataclass_fields__.items()}
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigInvalid(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**section)


def config_from_dict(data: dict) -> Config:
    if not isinstance(data, dict):
        raise ConfigInvalid("config root must be an object")
    data = dict(data)
    version = data.pop("version", None)
    if version != SCHEMA_VERSION:
        raise ConfigInvalid(f"unsupported config version {version!r}, "
                            f"expected {SCHEMA_VERSION}")
    sections = {
        "scene": SceneConfig,
        "proposals": ProposalConfig,
        "train": TrainConfig,
        "eval": EvalConfig,
    }
    kwargs = {}
    for name, cls in sections.items():
        if name in data:
            kwargs[name] = _build(data.pop(name), cls, name)
    lam = data.pop("lambda_def", None)
    if lam is not None:
        if lam == "inf":
            lam = math.inf
        try:
            kwargs["lambda_def"] = float(lam)
        except (TypeError, ValueError):
            raise ConfigInvalid(f"lambda_def must be a number or 'inf', got {lam!r}")
    sr = data.pop("search_radius", None)
    if sr is not None:
        try:
            kwargs["search_radius"] = (int(sr[0]), int(sr[1]))
        except (TypeError, ValueError, IndexError):
            raise ConfigInvalid("search_radius must be a pair of integers")
    known = set(Config.__dataclass_fields__) - set(sections) - {
        "lambda_def", "search_radius"}
    unknown = set(data) - known
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = Config(**data, **kwargs)
    except TypeError as e:
        raise ConfigInvalid(str(e))
    if isinstance(cfg.scene.object_size, list):
        object.__setattr__(cfg.scene, "object_size", tuple(cfg.scene.object_size))
    return cfg.validate()


def config_to_dict(cfg: Config) -> dict:
    data = asdict(cfg)
    data["version"] = SCHEMA_VERSION
    if math.isinf(cfg.lambda_def):
        data["lambda_def"] = "inf"
    return data


def load_config(path: str) -> Config:
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigInvalid(f"config file not found: {path}")
    except ValueError as e:
        raise ConfigInvalid(f"{path}: invalid JSON: {e}")
    return config_from_dict(data)


def save_config(path: str, cfg: Config) -> None:
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
