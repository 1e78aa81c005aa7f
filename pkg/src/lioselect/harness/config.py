"""Flat ``key = value`` config files covering PipelineConfig, SensorRig and the
simulation scene.

Blank lines and ``#`` comments are ignored. Every key must be a known field.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

from ..errors import ConfigError, LioSelectError
from ..odometry import PipelineConfig
from .world import SensorRig


@dataclass(frozen=True)
class SceneConfig:
    """What ``simulate`` builds: which world, and which pass through it."""
    scene: str = "two-room"
    world_seed: int = 0
    dynamic: bool = True
    duration: float = 10.0
    reverse: bool = False
    sway: float = 0.5
    sway_phase: float = 0.0
    n_scans: int = 0            # 0 = as many as the trajectory allows
    realistic_noise: bool = True

    def __post_init__(self):
        if self.scene not in SCENES:
            raise ConfigError(f"unknown scene {self.scene!r}; choose from {', '.join(SCENES)}")
        if self.duration <= 0:
            raise ConfigError("duration must be > 0")


SCENES = ("two-room", "corridor", "three-plane")
SECTIONS = {"pipeline": PipelineConfig, "rig": SensorRig, "scene": SceneConfig}


def _owner(key):
    for name, cls in SECTIONS.items():
        if key in {f.name for f in dataclasses.fields(cls)}:
            return name, cls
    return None, None


def _coerce(cls, key, raw: str):
    default = next(f.default for f in dataclasses.fields(cls) if f.name == key)
    kind = type(default)
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str, source: str = "<config>") -> Dict[str, Dict[str, Any]]:
    """Return {section: {field: value}} for the keys present in ``text``."""
    out: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        section, cls = _owner(key)
        if cls is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        out[section][key] = _coerce(cls, key, value)
    return out


@dataclass(frozen=True)
class Settings:
    pipeline: PipelineConfig = PipelineConfig()
    rig: SensorRig = SensorRig()
    scene: SceneConfig = SceneConfig()

    def replace(self, **pipeline_overrides) -> "Settings":
        """Apply pipeline overrides (CLI flags); ``None`` values are ignored."""
        kw = {k: v for k, v in pipeline_overrides.items() if v is not None}
        if not kw:
            return self
        try:
            return dataclasses.replace(self, pipeline=dataclasses.replace(self.pipeline, **kw))
        except LioSelectError as exc:
            raise ConfigError(str(exc)) from None


def load_settings(path: Optional[str] = None) -> Settings:
    if path is None:
        return Settings()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    parts = parse_config(p.read_text(), str(p))
    try:
        return Settings(PipelineConfig(**parts["pipeline"]), SensorRig(**parts["rig"]),
                        SceneConfig(**parts["scene"]))
    except ConfigError:
        raise
    except LioSelectError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_settings(settings: Settings) -> str:
    lines = []
    for name, obj in (("pipeline", settings.pipeline), ("rig", settings.rig), ("scene", settings.scene)):
        lines.append(f"# {name}")
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
