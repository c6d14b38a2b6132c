"""Run configuration: one JSON document for every pipeline knob.

The tree mirrors the module configs; loading validates recursively and
rejects unknown keys so a typo cannot silently fall back to a default.
Values can be overridden from the command line with dotted ``--set``
paths (``--set lander.command_latency=0.2``).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields
from typing import Any, get_args, get_origin

from .detector import DetectorConfig
from .geometry import CameraIntrinsics
from .lander import LanderConfig, LandingWorld
from .marker import MarkerSpec, MotionParams
from .synth_terrain import TerrainParams
from .terrain import TerrainConfig


class ConfigError(ValueError):
    """Malformed or unknown configuration content."""


@dataclass(frozen=True)
class CameraConfig:
    width: int = 640
    height: int = 480
    hfov_deg: float = 77.0

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_hfov(self.width, self.height, self.hfov_deg)


@dataclass(frozen=True)
class WorldConfig:
    marker_east: float = 0.0
    marker_north: float = 0.0
    marker_yaw: float = 0.0
    drone_start: tuple[float, float, float] = (-1.5, 1.0, 0.0)
    drone_yaw: float = 0.0
    marker_outer_radius: float = 0.18
    camera_width: int = 320
    camera_height: int = 240
    noise_sigma: float = 2.0

    def landing_world(self, marker: MarkerSpec) -> LandingWorld:
        return LandingWorld(
            marker_position=(self.marker_east, self.marker_north),
            marker_yaw=self.marker_yaw,
            drone_start=tuple(self.drone_start),
            drone_yaw=self.drone_yaw,
            spec=dataclasses.replace(marker, outer_radius=self.marker_outer_radius),
            K=CameraIntrinsics.from_hfov(self.camera_width, self.camera_height, 77.0),
            noise_sigma=self.noise_sigma,
        )


@dataclass(frozen=True)
class MetricsConfig:
    v_thresh: float = 2.0  # m/s
    w_thresh: float = 2.0  # rad/s


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    variant: str = "ellipse"  # original | ellipse
    orientation_source: str = "camera"  # camera | marker
    camera: CameraConfig = field(default_factory=CameraConfig)
    marker: MarkerSpec = field(default_factory=MarkerSpec)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    motion: MotionParams = field(default_factory=MotionParams)
    lander: LanderConfig = field(default_factory=LanderConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    terrain: TerrainConfig = field(default_factory=TerrainConfig)
    synth_terrain: TerrainParams = field(default_factory=TerrainParams)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self):
        if self.variant not in ("original", "ellipse"):
            raise ConfigError(f"variant must be original or ellipse, got {self.variant!r}")
        if self.orientation_source not in ("camera", "marker"):
            raise ConfigError(f"orientation_source must be camera or marker, got {self.orientation_source!r}")


def _coerce(value: Any, annotation: Any, path: str) -> Any:
    origin = get_origin(annotation)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        args = get_args(annotation)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if dataclasses.is_dataclass(annotation):
        return dataclass_from_dict(annotation, value, path)
    if annotation is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if annotation is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def dataclass_from_dict(cls, data: Any, path: str = "config"):
    """Build a dataclass from nested dicts, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}; known: {sorted(known)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        annotation = f.type if not isinstance(f.type, str) else _resolve_annotation(cls, f.name)
        kwargs[name] = _coerce(value, annotation, f"{path}.{name}")
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _resolve_annotation(cls, field_name: str):
    import typing

    hints = typing.get_type_hints(cls)
    return hints[field_name]


def dataclass_to_dict(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: dataclass_to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, tuple):
        return [dataclass_to_dict(v) for v in obj]
    return obj


def load_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Load a RunConfig from JSON plus ``key=value`` override strings."""
    data: dict = {}
    if path is not None:
        with open(path, "r") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings are allowed unquoted
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r}: {part} is not an object")
        node[parts[-1]] = value
    return dataclass_from_dict(RunConfig, data)
