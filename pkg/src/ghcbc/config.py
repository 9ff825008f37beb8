"""Configuration schema, the desk and paper profiles, and INI-file loading.

The desk profile is small enough to train on a laptop CPU; the paper profile
reproduces the full-scale shape pipeline (120x160 camera, 512-wide tokens,
chunk and history length 20) and exists for shape-conformance checks, not
training.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

POSE_OUTPUTS = ("joint", "ee")
INPUT_POSE_MODES = ("joint", "joint_ee", "gc")
HC_MODES = ("none", "style", "action_only", "action_image")


@dataclass
class VisionConfig:
    image_h: int
    image_w: int
    in_channels: int
    backbone_channels: tuple
    kernel: int
    stride: int
    padding: int
    feat_h: int
    feat_w: int
    d_model: int

    @property
    def feat_c(self) -> int:
        return self.backbone_channels[-1]

    @property
    def token_count(self) -> int:
        return self.feat_h * self.feat_w

    def validate(self):
        if self.d_model % 4:
            raise ConfigError(f"d_model {self.d_model} must be divisible by 4")
        if not self.backbone_channels:
            raise ConfigError("backbone needs at least one conv layer")


@dataclass
class PolicyConfig:
    d_model: int = 512
    n_heads: int = 8
    enc_layers: int = 4
    dec_layers: int = 7
    hist_layers: int = 4
    ff_dim: int = 512
    chunk_k: int = 20
    action_dim: int = 8
    history_k: int = 20
    latent_dim: int = 32
    n_joints: int = 7
    gripper_close: float = 0.6
    gripper_open: float = 0.4
    kl_beta: float = 10.0
    # ablation switches
    pose_output: str = "ee"
    input_pose_mode: str = "gc"
    gc_enabled: bool = True
    hc_mode: str = "action_image"
    # regress pose channels as offsets from the current pose instead of
    # absolute targets (reassembled at the action boundary)
    anchored_output: bool = False

    def validate(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.chunk_k < 1:
            raise ConfigError("chunk_k must be >= 1")
        if not 0.0 <= self.gripper_open < self.gripper_close <= 1.0:
            raise ConfigError(
                f"gripper thresholds must satisfy 0 <= open < close <= 1, "
                f"got open={self.gripper_open} close={self.gripper_close}"
            )
        if self.kl_beta < 0:
            raise ConfigError("kl_beta must be >= 0")
        if self.pose_output not in POSE_OUTPUTS:
            raise ConfigError(f"pose_output must be one of {POSE_OUTPUTS}")
        if self.input_pose_mode not in INPUT_POSE_MODES:
            raise ConfigError(f"input_pose_mode must be one of {INPUT_POSE_MODES}")
        if self.hc_mode not in HC_MODES:
            raise ConfigError(f"hc_mode must be one of {HC_MODES}")


@dataclass
class WorldConfig:
    n_joints: int = 3
    link_lengths: tuple = (0.16, 0.12, 0.08)
    initial_pose: tuple = (0.802, 1.955, -1.186)
    rate_limit: float = 0.15
    horizon: int = 90
    n_blocks: int = 3
    n_boxes: int = 2
    n_colors: int = 7
    target_block_color: int = 6
    target_box_color: int = 6
    block_size: float = 0.030
    box_extent: tuple = (0.095, 0.075)
    block_region_center: tuple = (0.0, 0.215)
    block_region_extent: tuple = (0.18, 0.09)
    box_region_center: tuple = (0.0, 0.14)
    box_region_extent: tuple = (0.36, 0.06)
    min_separation: float = 0.07
    grasp_radius: float = 0.032
    gripper_close: float = 0.6
    gripper_open: float = 0.4
    camera_view_w: float = 0.28
    camera_view_h: float = 0.21
    camera_h: int = 24
    camera_w: int = 32
    # joint perturbation injected while collecting demos, so the expert's
    # corrective commands populate a tube around the nominal path
    demo_noise: float = 0.015

    def validate(self):
        if self.min_separation <= 0:
            raise ConfigError("min_separation must be positive")
        if self.horizon < 2:
            raise ConfigError("horizon must be >= 2")
        reach = sum(self.link_lengths)
        cx, cy = self.block_region_center
        ex, ey = self.block_region_extent
        corner = max((cx + ex / 2) ** 2 + (cy + ey / 2) ** 2,
                     (cx - ex / 2) ** 2 + (cy + ey / 2) ** 2)
        if corner > reach ** 2:
            raise ConfigError("block spawn region exceeds arm reach")


@dataclass
class RuntimeConfig:
    ensemble_m: float = 0.1
    ensemble_newest_first: bool = False
    clearing_enabled: bool = True

    def validate(self):
        if self.ensemble_m < 0:
            raise ConfigError("ensemble decay m must be >= 0")


@dataclass
class TrainConfig:
    batch_size: int = 8
    steps: int = 14000
    eval_every: int = 2000
    eval_episodes: int = 25
    lr: float = 1.5e-3
    seed: int = 0
    n_demos: int = 50

    def validate(self):
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if self.batch_size < 1 or self.steps < 1:
            raise ConfigError("batch_size and steps must be >= 1")


@dataclass
class Config:
    profile: str = "desk"
    vision: VisionConfig = None
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        for section in (self.vision, self.policy, self.world, self.runtime, self.train):
            section.validate()
        if self.vision.d_model != self.policy.d_model:
            raise ConfigError("vision and policy must agree on d_model")
        if (self.world.camera_h, self.world.camera_w) != (self.vision.image_h, self.vision.image_w):
            raise ConfigError(
                f"world camera {self.world.camera_h}x{self.world.camera_w} must match "
                f"vision image {self.vision.image_h}x{self.vision.image_w}"
            )
        expected = self.world.n_joints + 1 if self.profile == "desk" else 8
        if self.policy.action_dim != expected and self.profile == "desk":
            raise ConfigError(
                f"desk action_dim must be n_joints+1 = {expected}, got {self.policy.action_dim}"
            )
        return self


def paper_vision_config() -> VisionConfig:
    return VisionConfig(
        image_h=120, image_w=160, in_channels=3,
        backbone_channels=(32, 64, 128, 256, 1280),
        kernel=3, stride=2, padding=1,
        feat_h=4, feat_w=5, d_model=512,
    )


def desk_vision_config() -> VisionConfig:
    return VisionConfig(
        image_h=24, image_w=32, in_channels=1,
        backbone_channels=(16, 32, 16),
        kernel=3, stride=2, padding=1,
        feat_h=3, feat_w=4, d_model=32,
    )


def default_config(profile: str = "desk") -> Config:
    if profile == "paper":
        cfg = Config(
            profile="paper",
            vision=paper_vision_config(),
            policy=PolicyConfig(),  # chunking size 20, history length 20, 4+7 layers
            world=WorldConfig(n_joints=7, camera_h=120, camera_w=160),
            runtime=RuntimeConfig(),
            train=TrainConfig(),
        )
    elif profile == "desk":
        cfg = Config(
            profile="desk",
            vision=desk_vision_config(),
            policy=PolicyConfig(
                d_model=32, n_heads=4, enc_layers=3, dec_layers=3, hist_layers=2,
                ff_dim=128, chunk_k=10, action_dim=4, history_k=10, latent_dim=32,
                n_joints=3,
            ),
            world=WorldConfig(),
            runtime=RuntimeConfig(),
            train=TrainConfig(),
        )
    else:
        raise ConfigError(f"unknown profile '{profile}' (expected 'desk' or 'paper')")
    return cfg.validate()


_SECTIONS = ("vision", "policy", "world", "runtime", "train")


def _parse_value(raw: str, current):
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected boolean, got '{raw}'")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        elem = current[0] if current else 0.0
        return tuple(int(p) if isinstance(elem, int) else float(p) for p in parts)
    return raw.strip()


def _set_field(cfg: Config, dotted: str, raw: str):
    parts = dotted.split(".")
    if len(parts) == 1 and parts[0] == "profile":
        raise ConfigError("set the profile with --profile, not --set")
    if len(parts) != 2 or parts[0] not in _SECTIONS:
        raise ConfigError(f"unknown config key '{dotted}'")
    section = getattr(cfg, parts[0])
    names = {f.name for f in fields(section)}
    if parts[1] not in names:
        raise ConfigError(f"unknown config key '{dotted}'")
    current = getattr(section, parts[1])
    try:
        setattr(section, parts[1], _parse_value(raw, current))
    except ValueError as exc:
        raise ConfigError(f"bad value for '{dotted}': {exc}") from exc


def apply_overrides(cfg: Config, overrides) -> Config:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        _set_field(cfg, key.strip(), raw)
    return cfg


def load_config(path=None, profile=None, overrides=()) -> Config:
    """Profile defaults, then INI-file values, then --set overrides.

    An explicit profile argument wins over the file's [run] profile entry.
    """
    parser = None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        for key, raw in (parser.items("run") if parser.has_section("run") else ()):
            if key != "profile":
                raise ConfigError(f"unknown config key 'run.{key}'")
            if profile is None:
                profile = raw.strip()
    cfg = default_config(profile or "desk")
    if parser is not None:
        for section in parser.sections():
            if section == "run":
                continue
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section '[{section}]'")
            for key, raw in parser.items(section):
                _set_field(cfg, f"{section}.{key}", raw)
    apply_overrides(cfg, overrides)
    cfg.validate()
    return cfg


def config_to_dict(cfg: Config) -> dict:
    out = {"profile": cfg.profile}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        out[name] = {f.name: getattr(section, f.name) for f in fields(section)}
        for key, val in out[name].items():
            if isinstance(val, tuple):
                out[name][key] = list(val)
    return out


def config_from_dict(data: dict) -> Config:
    cfg = default_config(data.get("profile", "desk"))
    for name in _SECTIONS:
        section = getattr(cfg, name)
        for key, val in data.get(name, {}).items():
            if not any(f.name == key for f in fields(section)):
                raise ConfigError(f"unknown config key '{name}.{key}'")
            current = getattr(section, key)
            setattr(section, key, tuple(val) if isinstance(current, tuple) else val)
    cfg.validate()
    return cfg


def clone_config(cfg: Config) -> Config:
    return Config(
        profile=cfg.profile,
        vision=replace(cfg.vision),
        policy=replace(cfg.policy),
        world=replace(cfg.world),
        runtime=replace(cfg.runtime),
        train=replace(cfg.train),
    )
