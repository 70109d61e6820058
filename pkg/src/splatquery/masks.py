"""Multi-view mask ingestion and track bookkeeping.

Masks arrive as files produced by an out-of-process segmenter/tracker; this
module only loads, validates, and registers them. Each track is one object
instance's mask sequence across views at one granularity level. A mask that
is missing or entirely background is flagged invalid and contributes nothing
downstream, but is never deleted.

Directory layout:
    masks/<granularity>/<track_id>/<view_id>.png     8-bit gray, >=128 is fg
    detect/<granularity>/<view_id>/<k>.png           periodic fresh detections
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, FormatError
from .scene import Camera

GRANULARITIES = ("part", "object", "scene")

DEFAULT_NEW_TRACK_IOU = 0.1
DEFAULT_DETECTION_INTERVAL = 30

FG_THRESHOLD = 128


def load_mask(path: str | Path) -> np.ndarray:
    img = Image.open(path).convert("L")
    return np.asarray(img, dtype=np.uint8) >= FG_THRESHOLD


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; 0 when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DataError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


@dataclass
class MaskSet:
    """One track's per-view binary masks with validity flags.

    validity[view_id] is False exactly when the mask is absent or entirely
    background; `mask(view_id)` returns None in that case.
    """

    granularity: str
    track_id: int
    masks: dict[int, np.ndarray | None] = field(default_factory=dict)
    validity: dict[int, bool] = field(default_factory=dict)

    def add(self, view_id: int, mask: np.ndarray | None) -> None:
        if mask is None or not mask.any():
            self.masks[view_id] = mask
            self.validity[view_id] = False
        else:
            self.masks[view_id] = mask.astype(bool)
            self.validity[view_id] = True

    def mask(self, view_id: int) -> np.ndarray | None:
        if self.validity.get(view_id, False):
            return self.masks[view_id]
        return None

    def valid_views(self) -> list[int]:
        return sorted(v for v, ok in self.validity.items() if ok)

    def foreground_area(self, view_id: int) -> int:
        m = self.mask(view_id)
        return 0 if m is None else int(np.count_nonzero(m))


@dataclass
class TrackRegistry:
    """All tracks across granularities; ids are unique per granularity."""

    tracks: list[MaskSet] = field(default_factory=list)
    next_id: dict[str, int] = field(default_factory=dict)
    detection_interval: int = DEFAULT_DETECTION_INTERVAL
    new_track_iou: float = DEFAULT_NEW_TRACK_IOU

    def tracks_for(self, granularity: str) -> list[MaskSet]:
        return [t for t in self.tracks if t.granularity == granularity]

    def get(self, granularity: str, track_id: int) -> MaskSet:
        for t in self.tracks:
            if t.granularity == granularity and t.track_id == track_id:
                return t
        raise KeyError(f"no track {granularity}/{track_id}")

    def add_track(self, track: MaskSet) -> None:
        for t in self.tracks:
            if t.granularity == track.granularity and t.track_id == track.track_id:
                raise DataError(
                    f"duplicate track id {track.track_id} "
                    f"for granularity '{track.granularity}'"
                )
        self.tracks.append(track)
        nxt = self.next_id.get(track.granularity, 0)
        self.next_id[track.granularity] = max(nxt, track.track_id + 1)

    def granularities(self) -> list[str]:
        return sorted({t.granularity for t in self.tracks})


def ingest_masks(
    root: str | Path,
    cameras: list[Camera],
    *,
    detection_interval: int = DEFAULT_DETECTION_INTERVAL,
    new_track_iou: float = DEFAULT_NEW_TRACK_IOU,
) -> TrackRegistry:
    """Load every mask under `root` into a registry.

    Deterministic: tracks ordered by (granularity, track_id), views by
    view_id. A mask whose dimensions disagree with its view's camera is a
    format error naming both view and track.
    """
    root = Path(root)
    if not root.is_dir():
        raise FormatError(f"mask root '{root}' is not a directory")
    cams = {c.view_id: c for c in cameras}
    registry = TrackRegistry(
        detection_interval=detection_interval, new_track_iou=new_track_iou
    )
    for gran in GRANULARITIES:
        gdir = root / gran
        if not gdir.is_dir():
            continue
        track_dirs = sorted(
            (d for d in gdir.iterdir() if d.is_dir() and d.name.isdigit()),
            key=lambda d: int(d.name),
        )
        for tdir in track_dirs:
            track = MaskSet(granularity=gran, track_id=int(tdir.name))
            for f in sorted(tdir.glob("*.png"), key=lambda p: int(p.stem)):
                view_id = int(f.stem)
                mask = load_mask(f)
                cam = cams.get(view_id)
                if cam is not None and mask.shape != (cam.height, cam.width):
                    raise FormatError(
                        f"mask {gran}/{track.track_id}/{view_id}.png has shape "
                        f"{mask.shape}, camera expects "
                        f"({cam.height}, {cam.width})"
                    )
                track.add(view_id, mask)
            # Views with cameras but no mask file are explicitly invalid.
            for view_id in cams:
                if view_id not in track.validity:
                    track.add(view_id, None)
            registry.add_track(track)
    return registry


def detect_new_instances(
    registry: TrackRegistry,
    granularity: str,
    view_id: int,
    fresh_masks: list[np.ndarray],
) -> list[int]:
    """Register fresh detections that overlap no existing track at this view.

    A fresh mask starts a new track iff its best IoU against every existing
    track's mask at `view_id` is below the registry's threshold. New tracks
    are seeded at the detection view only; earlier views stay invalid.
    """
    if view_id % registry.detection_interval != 0:
        raise DataError(
            f"view {view_id} is not a detection frame "
            f"(interval {registry.detection_interval})"
        )
    existing = registry.tracks_for(granularity)
    new_ids: list[int] = []
    for fresh in fresh_masks:
        best = 0.0
        for track in existing:
            current = track.mask(view_id)
            if current is not None:
                best = max(best, iou(fresh, current))
        if best < registry.new_track_iou:
            track_id = registry.next_id.get(granularity, 0)
            track = MaskSet(granularity=granularity, track_id=track_id)
            track.add(view_id, fresh)
            registry.add_track(track)
            new_ids.append(track_id)
    return new_ids


def run_periodic_detection(
    registry: TrackRegistry, detect_root: str | Path, cameras: list[Camera]
) -> dict[str, list[int]]:
    """Apply `detect_new_instances` for every detection directory on disk."""
    detect_root = Path(detect_root)
    new_by_gran: dict[str, list[int]] = {}
    if not detect_root.is_dir():
        return new_by_gran
    cams = {c.view_id: c for c in cameras}
    for gran in GRANULARITIES:
        gdir = detect_root / gran
        if not gdir.is_dir():
            continue
        view_dirs = sorted(
            (d for d in gdir.iterdir() if d.is_dir() and d.name.isdigit()),
            key=lambda d: int(d.name),
        )
        for vdir in view_dirs:
            view_id = int(vdir.name)
            fresh = []
            for f in sorted(vdir.glob("*.png"), key=lambda p: p.stem):
                mask = load_mask(f)
                cam = cams.get(view_id)
                if cam is not None and mask.shape != (cam.height, cam.width):
                    raise FormatError(
                        f"detection {gran}/{view_id}/{f.name} has shape "
                        f"{mask.shape}, camera expects ({cam.height}, {cam.width})"
                    )
                fresh.append(mask)
            if fresh:
                ids = detect_new_instances(registry, gran, view_id, fresh)
                new_by_gran.setdefault(gran, []).extend(ids)
    return new_by_gran
