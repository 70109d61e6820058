"""Distill each refined object group into candidate names and text embeddings.

The object's most visible masked views are cropped and handed to a
vision-language client, which returns candidate name strings; a text
embedding client encodes them into unit vectors. Both clients are behind
small contracts so the pipeline runs identically against the in-process
deterministic mocks (the default, no models or network required) or a
sidecar adapter speaking the newline-delimited JSON protocol.

The persisted registry is the queryable artifact: names, vectors, and index
sets per object. Its size scales with objects x names x dim, independent of
view count.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import ClientError, ConfigError, DataError, FormatError
from .grouping import ObjectGroup
from .masks import MaskSet

logger = logging.getLogger(__name__)

DEFAULT_TOP_N_VIEWS = 5
DEFAULT_PROMPT = (
    "List up to 8 short names for the main object in these images, one per line."
)
MAX_CANDIDATE_NAMES = 16
DEFAULT_EMBED_DIM = 512
REGISTRY_FORMAT = "registry/1"


class VlmClient(Protocol):
    def describe(
        self,
        images: list[np.ndarray],
        prompt: str,
        track_key: tuple[str, int] | None = None,
    ) -> list[str]:
        """Candidate names for the object shown in the masked images."""
        ...


class EmbeddingClient(Protocol):
    @property
    def dim(self) -> int: ...

    def embed(self, texts: list[str]) -> np.ndarray:
        """Unit-norm vectors, one row per input text."""
        ...


# Eight coarse hue buckets; enough for the mock to name untagged fixtures.
_COLOR_WORDS = (
    (0.0, "red"), (45.0, "orange"), (90.0, "yellow"), (135.0, "green"),
    (180.0, "cyan"), (225.0, "blue"), (270.0, "purple"), (315.0, "magenta"),
)


def _dominant_color_word(image: np.ndarray) -> str:
    fg = image.reshape(-1, 3)
    fg = fg[fg.sum(axis=1) > 0.05]
    if len(fg) == 0:
        return "dark"
    r, g, b = fg.mean(axis=0)
    mx, mn = max(r, g, b), min(r, g, b)
    if mx - mn < 0.05:
        return "gray"
    if mx == r:
        hue = (60.0 * ((g - b) / (mx - mn))) % 360.0
    elif mx == g:
        hue = 60.0 * ((b - r) / (mx - mn)) + 120.0
    else:
        hue = 60.0 * ((r - g) / (mx - mn)) + 240.0
    best = min(_COLOR_WORDS, key=lambda kw: min(abs(hue - kw[0]), 360 - abs(hue - kw[0])))
    return best[1]


class MockVlmClient:
    """Deterministic stand-in for a captioning model.

    Names come from a per-track mapping when one is configured; otherwise a
    name is derived from the dominant color of the first masked view, so any
    fixture gets stable, distinct names without configuration.
    """

    def __init__(self, names_by_track: dict[tuple[str, int], list[str]] | None = None):
        self.names_by_track = dict(names_by_track or {})

    def describe(self, images, prompt, track_key=None):
        if track_key is not None and track_key in self.names_by_track:
            return list(self.names_by_track[track_key])
        if not images:
            raise ClientError("mock VLM needs at least one image")
        return [f"{_dominant_color_word(images[0])} object"]


class MockEmbeddingClient:
    """Deterministic hash-seeded unit vectors; identical text, identical vector."""

    def __init__(self, dim: int = DEFAULT_EMBED_DIM):
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self._dim))
        for i, text in enumerate(texts):
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "little")
            v = np.random.default_rng(seed).standard_normal(self._dim)
            out[i] = v / np.linalg.norm(v)
        return out


def select_top_views(mask_set: MaskSet, n: int) -> list[int]:
    """The n valid views with the largest foreground area.

    Sorted by area descending; ties broken by ascending view_id.
    """
    valid = mask_set.valid_views()
    if not valid:
        raise DataError(
            f"track {mask_set.granularity}/{mask_set.track_id} has no valid views"
        )
    ranked = sorted(valid, key=lambda v: (-mask_set.foreground_area(v), v))
    return ranked[: min(n, len(ranked))]


def compose_masked_views(
    frames: dict[int, np.ndarray],
    mask_set: MaskSet,
    view_ids: list[int],
    *,
    pad_fraction: float = 0.1,
) -> list[np.ndarray]:
    """Black out the background and crop to the padded mask bounding box.

    Padding is ceil(pad_fraction * bbox extent) per side, at least a pixel,
    clamped to the frame.
    """
    out = []
    for view_id in view_ids:
        if view_id not in frames:
            raise FormatError(f"no frame available for view {view_id}")
        frame = np.asarray(frames[view_id], dtype=np.float64)
        mask = mask_set.mask(view_id)
        if mask is None:
            raise DataError(f"view {view_id} has no valid mask")
        masked = np.where(mask[..., None], frame, 0.0)
        ys, xs = np.nonzero(mask)
        pad_y = max(1, int(np.ceil(pad_fraction * (ys.max() - ys.min() + 1))))
        pad_x = max(1, int(np.ceil(pad_fraction * (xs.max() - xs.min() + 1))))
        y0 = max(0, ys.min() - pad_y)
        y1 = min(mask.shape[0], ys.max() + pad_y + 1)
        x0 = max(0, xs.min() - pad_x)
        x1 = min(mask.shape[1], xs.max() + pad_x + 1)
        out.append(masked[y0:y1, x0:x1])
    return out


def normalize_names(names: list[str]) -> list[str]:
    """Lowercase, drop empties, deduplicate case-insensitively, cap the list."""
    seen: set[str] = set()
    result = []
    for name in names:
        cleaned = name.strip().lower()
        if cleaned and cleaned not in seen:
            seen.add(cleaned)
            result.append(cleaned)
        if len(result) >= MAX_CANDIDATE_NAMES:
            break
    return result


@dataclass
class RegistryEntry:
    track_id: int
    granularity: str
    names: list[str]
    embeddings: np.ndarray  # (len(names), dim)
    foreground: np.ndarray
    neutral: np.ndarray
    top_views: list[int]

    @property
    def unnamed(self) -> bool:
        return len(self.names) == 0


@dataclass
class InstanceRegistry:
    dim: int
    objects: list[RegistryEntry] = field(default_factory=list)

    def named_objects(self) -> list[RegistryEntry]:
        return [o for o in self.objects if not o.unnamed]

    def save(self, path: str | Path) -> None:
        doc = {
            "format": REGISTRY_FORMAT,
            "dim": self.dim,
            "objects": [
                {
                    "track_id": o.track_id,
                    "granularity": o.granularity,
                    "names": o.names,
                    "embeddings": [[float(x) for x in row] for row in o.embeddings],
                    "foreground": [int(i) for i in o.foreground],
                    "neutral": [int(i) for i in o.neutral],
                    "top_views": [int(v) for v in o.top_views],
                }
                for o in self.objects
            ],
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "InstanceRegistry":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON ({e})") from e
        if doc.get("format", REGISTRY_FORMAT) != REGISTRY_FORMAT:
            raise DataError(
                f"{path}: registry format '{doc.get('format')}' "
                f"does not match expected '{REGISTRY_FORMAT}'"
            )
        reg = cls(dim=int(doc["dim"]))
        for o in doc["objects"]:
            emb = np.asarray(o["embeddings"], dtype=np.float64)
            if emb.size == 0:
                emb = np.zeros((0, reg.dim))
            reg.objects.append(
                RegistryEntry(
                    track_id=int(o["track_id"]),
                    granularity=o["granularity"],
                    names=list(o["names"]),
                    embeddings=emb,
                    foreground=np.asarray(o["foreground"], dtype=np.int64),
                    neutral=np.asarray(o["neutral"], dtype=np.int64),
                    top_views=[int(v) for v in o["top_views"]],
                )
            )
        return reg


def distill(
    group: ObjectGroup,
    mask_set: MaskSet,
    frames: dict[int, np.ndarray],
    vlm: VlmClient,
    embedder: EmbeddingClient,
    *,
    top_n_views: int = DEFAULT_TOP_N_VIEWS,
    prompt: str = DEFAULT_PROMPT,
    retries: int = 3,
    sleep: Callable[[float], None] = time.sleep,
) -> RegistryEntry:
    """Produce one registry entry for a refined group.

    A VLM that fails `retries` times leaves the object unnamed (kept in the
    registry, excluded from matching). An embedder returning vectors of the
    wrong width is a configuration error and fatal.
    """
    top_views = select_top_views(mask_set, top_n_views)
    images = compose_masked_views(frames, mask_set, top_views)
    track_key = (group.granularity, group.track_id)

    names: list[str] = []
    for attempt in range(retries):
        try:
            names = normalize_names(vlm.describe(images, prompt, track_key=track_key))
            break
        except ClientError as e:
            logger.warning(
                "VLM describe failed for %s/%d (attempt %d/%d): %s",
                group.granularity, group.track_id, attempt + 1, retries, e,
            )
            if attempt + 1 < retries:
                sleep(0.2 * 2**attempt)
    if names:
        embeddings = np.asarray(embedder.embed(names), dtype=np.float64)
        if embeddings.shape != (len(names), embedder.dim):
            raise ConfigError(
                f"embedder returned shape {embeddings.shape}, "
                f"expected ({len(names)}, {embedder.dim})"
            )
    else:
        logger.warning(
            "object %s/%d left unnamed after %d attempts",
            group.granularity, group.track_id, retries,
        )
        embeddings = np.zeros((0, embedder.dim))
    return RegistryEntry(
        track_id=group.track_id,
        granularity=group.granularity,
        names=names,
        embeddings=embeddings,
        foreground=np.asarray(group.foreground, dtype=np.int64),
        neutral=np.asarray(group.neutral, dtype=np.int64),
        top_views=top_views,
    )
