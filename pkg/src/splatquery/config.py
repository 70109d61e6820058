"""Pipeline configuration: one TOML file, flag overrides, validated ranges.

Every constant the method leaves unspecified lives here with its default, so
a run is fully described by its config file plus the seed.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

ADAPTER_ENV_VAR = "SPLATQUERY_ADAPTER"

DEFAULT_PROMPT = (
    "List up to 8 short names for the main object in these images, one per line."
)


@dataclass
class PipelineConfig:
    # paths (resolved relative to the config file's directory)
    scene_ply: Path | None = None
    cameras_json: Path | None = None
    masks_root: Path | None = None
    detect_root: Path | None = None
    frames_root: Path | None = None
    workdir: Path = Path("out")
    registry_out: Path | None = None
    gt_masks_root: Path | None = None
    gt_cloud: Path | None = None

    # thresholds
    entropy_threshold: float = 0.6
    opacity_threshold: float = 0.7
    match_threshold: float = 0.8
    new_track_iou: float = 0.1

    # pipeline knobs
    top_n_views: int = 5
    detection_interval: int = 30
    adapter: str = "mock"
    threads: int = 1
    seed: int = 0
    prompt: str = DEFAULT_PROMPT
    eval_radius: float = 0.05
    match_fallback: bool = True

    # deterministic mock naming: (granularity, track_id) -> candidate names
    mock_names: dict[tuple[str, int], list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.entropy_threshold <= 1.0:
            raise ConfigError("entropy threshold must lie in [0, 1]")
        if not 0.0 <= self.opacity_threshold <= 1.0:
            raise ConfigError("opacity threshold must lie in [0, 1]")
        if not -1.0 <= self.match_threshold <= 1.0:
            raise ConfigError("match threshold must lie in [-1, 1]")
        if not 0.0 <= self.new_track_iou <= 1.0:
            raise ConfigError("new-track IoU threshold must lie in [0, 1]")
        if self.top_n_views < 1:
            raise ConfigError("top_n_views must be at least 1")
        if self.detection_interval < 1:
            raise ConfigError("detection_interval must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    @property
    def registry_path(self) -> Path:
        return self.registry_out or self.workdir / "registry.json"

    @property
    def tracks_path(self) -> Path:
        return self.workdir / "tracks.json"

    @property
    def groups_path(self) -> Path:
        return self.workdir / "groups.json"


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Parse a TOML config; later `overrides` win over file values.

    The environment variable SPLATQUERY_ADAPTER, when set, overrides the
    adapter endpoint from both file and flags.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file '{path}' does not exist")
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML ({e})") from e
    base = path.parent

    paths = doc.get("paths", {})
    thresholds = doc.get("thresholds", {})
    pipeline = doc.get("pipeline", {})
    kwargs: dict = {
        "scene_ply": _resolve(base, paths.get("scene")),
        "cameras_json": _resolve(base, paths.get("cameras")),
        "masks_root": _resolve(base, paths.get("masks")),
        "detect_root": _resolve(base, paths.get("detect")),
        "frames_root": _resolve(base, paths.get("frames")),
        "workdir": _resolve(base, paths.get("workdir", "out")),
        "registry_out": _resolve(base, paths.get("registry")),
        "gt_masks_root": _resolve(base, paths.get("gt_masks")),
        "gt_cloud": _resolve(base, paths.get("gt_cloud")),
        "entropy_threshold": thresholds.get("entropy", 0.6),
        "opacity_threshold": thresholds.get("opacity", 0.7),
        "match_threshold": thresholds.get("match", 0.8),
        "new_track_iou": thresholds.get("new_track_iou", 0.1),
        "top_n_views": pipeline.get("top_n_views", 5),
        "detection_interval": pipeline.get("detection_interval", 30),
        "adapter": pipeline.get("adapter", "mock"),
        "threads": pipeline.get("threads", 1),
        "seed": pipeline.get("seed", 0),
        "prompt": pipeline.get("prompt", DEFAULT_PROMPT),
        "eval_radius": pipeline.get("eval_radius", 0.05),
        "match_fallback": pipeline.get("match_fallback", True),
    }

    mock_names: dict[tuple[str, int], list[str]] = {}
    for gran, table in doc.get("mock", {}).get("names", {}).items():
        if not isinstance(table, dict):
            raise ConfigError(f"mock.names.{gran} must be a table of track -> names")
        for track, names in table.items():
            mock_names[(gran, int(track))] = [str(n) for n in names]
    kwargs["mock_names"] = mock_names

    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    env_adapter = os.environ.get(ADAPTER_ENV_VAR)
    if env_adapter:
        kwargs["adapter"] = env_adapter
    return PipelineConfig(**kwargs)
