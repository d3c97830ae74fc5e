"""Configuration types and the plain-text config file loader.

All pipeline knobs live in three dataclasses (scene generation, optical
flow, training) plus a thin RunConfig wrapper.  Configs can be loaded from
an INI-style key/value file (sections [scene], [flow], [train], [run]);
every field has a default, so an empty file is valid.  The environment
variable FLOWSEG_CONFIG names the default config path for the CLI.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace

CONFIG_ENV_VAR = "FLOWSEG_CONFIG"


class ConfigError(ValueError):
    """Invalid configuration value; message names the offending field."""


@dataclass
class SceneConfig:
    """Parameters of the randomized orchard scenes and camera placement."""

    # Orchard layout
    rows_range: tuple[int, int] = (1, 5)
    tree_spacing_m: float = 0.6
    row_spacing_m: float = 1.1
    trees_per_row: int = 9
    wires_per_row: int = 3
    wire_height_range_m: tuple[float, float] = (0.0, 1.0)
    walls_range: tuple[int, int] = (0, 2)
    wall_distance_range_m: tuple[float, float] = (0.2, 2.0)
    wall_size_range_m: tuple[float, float] = (1.0, 5.0)

    # Tree geometry (free parameters; ranges chosen for a planar trellis canopy)
    leaders_per_tree_range: tuple[int, int] = (4, 10)
    trunk_radius_range_m: tuple[float, float] = (0.02, 0.035)
    leader_radius_range_m: tuple[float, float] = (0.008, 0.018)
    trunk_height_range_m: tuple[float, float] = (0.5, 0.8)
    leader_height_range_m: tuple[float, float] = (1.2, 2.4)
    leader_max_lean_deg: float = 8.0

    # Camera
    camera_tilt_max_deg: float = 15.0
    camera_translation_range_m: tuple[float, float] = (0.005, 0.02)
    camera_distance_range_m: tuple[float, float] = (0.45, 0.9)
    camera_height_range_m: tuple[float, float] = (0.6, 1.6)
    image_size: tuple[int, int] = (128, 128)  # (width, height)
    focal_px: float = 200.0

    def validate(self):
        _check_int_interval(self.rows_range, "rows_range", lo_min=1)
        _check_positive(self.tree_spacing_m, "tree_spacing_m")
        _check_positive(self.row_spacing_m, "row_spacing_m")
        if self.trees_per_row < 1:
            raise ConfigError("trees_per_row must be >= 1")
        if self.wires_per_row < 0:
            raise ConfigError("wires_per_row must be >= 0")
        _check_interval(self.wire_height_range_m, "wire_height_range_m")
        _check_int_interval(self.walls_range, "walls_range", lo_min=0)
        _check_interval(self.wall_distance_range_m, "wall_distance_range_m")
        _check_interval(self.wall_size_range_m, "wall_size_range_m")
        _check_int_interval(self.leaders_per_tree_range, "leaders_per_tree_range", lo_min=1)
        _check_interval(self.trunk_radius_range_m, "trunk_radius_range_m", lo_min=0.0, strict=True)
        _check_interval(self.leader_radius_range_m, "leader_radius_range_m", lo_min=0.0, strict=True)
        _check_interval(self.trunk_height_range_m, "trunk_height_range_m")
        _check_interval(self.leader_height_range_m, "leader_height_range_m")
        if self.leader_max_lean_deg < 0:
            raise ConfigError("leader_max_lean_deg must be >= 0")
        if self.camera_tilt_max_deg < 0:
            raise ConfigError("camera_tilt_max_deg must be >= 0")
        _check_interval(self.camera_translation_range_m, "camera_translation_range_m",
                        lo_min=0.0, strict=True)
        _check_interval(self.camera_distance_range_m, "camera_distance_range_m",
                        lo_min=0.0, strict=True)
        _check_interval(self.camera_height_range_m, "camera_height_range_m")
        w, h = self.image_size
        if w < 16 or h < 16:
            raise ConfigError("image_size must be at least 16x16")
        _check_positive(self.focal_px, "focal_px")
        return self


@dataclass
class FlowParams:
    """Knobs of the coarse-to-fine variational flow estimator."""

    alpha: float = 15.0
    pyramid_levels: int = 3
    scale_factor: float = 0.5
    iterations_per_level: int = 200
    warp_passes_per_level: int = 3

    def validate(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be > 0")
        if self.pyramid_levels < 1:
            raise ConfigError("pyramid_levels must be >= 1")
        if not 0.0 < self.scale_factor < 1.0:
            raise ConfigError("scale_factor must be in (0, 1)")
        if self.iterations_per_level < 1:
            raise ConfigError("iterations_per_level must be >= 1")
        if self.warp_passes_per_level < 1:
            raise ConfigError("warp_passes_per_level must be >= 1")
        return self


@dataclass
class TrainParams:
    """Training protocol parameters for the segmentation GAN."""

    lambda_l1: float = 100.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    max_images: int = 20000      # sample presentations, repeats included
    val_every: int = 1000
    batch_size: int = 4
    seed: int = 0
    input_mode: str = "rgb_plus_flow"   # or "rgb_only"
    flow_source: str = "est"            # "est" or "gt" colorized flow

    def validate(self):
        if self.lambda_l1 < 0:
            raise ConfigError("lambda_l1 must be >= 0")
        _check_positive(self.lr, "lr")
        if not 0.0 <= self.beta1 < 1.0:
            raise ConfigError("beta1 must be in [0, 1)")
        if not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("beta2 must be in [0, 1)")
        for name in ("max_images", "val_every", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.input_mode not in ("rgb_plus_flow", "rgb_only"):
            raise ConfigError("input_mode must be 'rgb_plus_flow' or 'rgb_only'")
        if self.flow_source not in ("est", "gt"):
            raise ConfigError("flow_source must be 'est' or 'gt'")
        return self


@dataclass
class RunConfig:
    """Merged view of all module configs plus run-level settings."""

    scene: SceneConfig = field(default_factory=SceneConfig)
    flow: FlowParams = field(default_factory=FlowParams)
    train: TrainParams = field(default_factory=TrainParams)
    master_seed: int = 0
    flow_color_max_mag: float = 8.0   # px; fixed colorization scale

    def validate(self):
        self.scene.validate()
        self.flow.validate()
        self.train.validate()
        if self.flow_color_max_mag <= 0:
            raise ConfigError("flow_color_max_mag must be > 0")
        return self


def _check_positive(value, name):
    if not value > 0:
        raise ConfigError(f"{name} must be > 0")


def _check_interval(iv, name, lo_min=None, strict=False):
    lo, hi = iv
    if lo > hi:
        raise ConfigError(f"{name} must be a non-empty interval (lo <= hi)")
    if lo_min is not None:
        if strict and not lo > lo_min:
            raise ConfigError(f"{name} lower bound must be > {lo_min}")
        if not strict and lo < lo_min:
            raise ConfigError(f"{name} lower bound must be >= {lo_min}")


def _check_int_interval(iv, name, lo_min):
    lo, hi = iv
    if int(lo) != lo or int(hi) != hi:
        raise ConfigError(f"{name} bounds must be integers")
    _check_interval(iv, name, lo_min=lo_min)


def _parse_value(raw: str, default):
    """Parse a config string into the type of the field's default value."""
    raw = raw.strip()
    if isinstance(default, tuple):
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != len(default):
            raise ConfigError(f"expected {len(default)} comma-separated values, got {raw!r}")
        return tuple(type(d)(_number(p)) for d, p in zip(default, parts))
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _number(s: str):
    try:
        return float(s)
    except ValueError as exc:
        raise ConfigError(f"cannot parse number {s!r}") from exc


_SECTIONS = ("scene", "flow", "train")


def load_config(path: str | None = None) -> RunConfig:
    """Load a RunConfig from an INI-style file; missing file/keys keep defaults.

    With path=None, falls back to $FLOWSEG_CONFIG if set, else returns defaults.
    """
    cfg = RunConfig()
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
        if path is None:
            return cfg.validate()
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read(path)
    for section in _SECTIONS:
        if not parser.has_section(section):
            continue
        sub = getattr(cfg, section)
        valid = {f.name: getattr(sub, f.name) for f in fields(sub)}
        for key, raw in parser.items(section):
            if key not in valid:
                raise ConfigError(f"unknown key [{section}] {key}")
            setattr(sub, key, _parse_value(raw, valid[key]))
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key == "master_seed":
                cfg.master_seed = int(raw)
            elif key == "flow_color_max_mag":
                cfg.flow_color_max_mag = float(raw)
            else:
                raise ConfigError(f"unknown key [run] {key}")
    return cfg.validate()


def save_config(cfg: RunConfig, path: str):
    """Write the effective configuration back out (provenance echo)."""
    lines = []
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        lines.append(f"[{section}]")
        for f in fields(sub):
            v = getattr(sub, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        lines.append("")
    lines.append("[run]")
    lines.append(f"master_seed = {cfg.master_seed}")
    lines.append(f"flow_color_max_mag = {cfg.flow_color_max_mag}")
    lines.append("")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines))


def scene_config_with(cfg: SceneConfig, **overrides) -> SceneConfig:
    """Copy a SceneConfig with field overrides, re-validated."""
    return replace(cfg, **overrides).validate()
