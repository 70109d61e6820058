"""Lift a track's multi-view masks into a 3D foreground set.

For every valid view of a track, the full scene is rasterized in weights
mode and each streamed contribution w(pixel, gaussian) is folded into the
gaussian's foreground sum (mask hit) or background sum (mask miss). The
initial group is then the strict hard assignment foreground > background, so
a Gaussian no view ever touched stays background.

Accumulation runs in double precision; the weights are individually tiny and
number in the millions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .masks import MaskSet
from .render import rasterize
from .scene import Camera, GaussianScene

logger = logging.getLogger(__name__)


@dataclass
class GroupAccumulator:
    """Per-Gaussian accumulated weight and label-count buffers."""

    background_weight: np.ndarray  # (N,)
    foreground_weight: np.ndarray  # (N,)
    # Per-view inside/outside-mask counters, filled by the center-projection
    # labeling pass (see neutral.label_by_projection).
    fg_views: np.ndarray | None = None  # (N,) int
    bg_views: np.ndarray | None = None  # (N,) int

    @classmethod
    def zeros(cls, n: int) -> "GroupAccumulator":
        return cls(np.zeros(n), np.zeros(n))

    def check_finite(self) -> None:
        if not (np.isfinite(self.background_weight).all()
                and np.isfinite(self.foreground_weight).all()):
            raise DataError("accumulator holds non-finite weights")


@dataclass
class ObjectGroup:
    """One lifted object: its foreground set and, after refinement, the
    neutral boundary set excluded from both classes."""

    track_id: int
    granularity: str
    foreground: np.ndarray  # sorted Gaussian indices
    neutral: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    accumulator: GroupAccumulator | None = None


def _fold(mask_flat: np.ndarray, acc: GroupAccumulator):
    def consumer(pix: np.ndarray, src: np.ndarray, w: np.ndarray) -> None:
        hit = mask_flat[pix]
        np.add.at(acc.foreground_weight, src[hit], w[hit])
        np.add.at(acc.background_weight, src[~hit], w[~hit])

    return consumer


def accumulate_weights(
    scene: GaussianScene,
    cameras: list[Camera],
    mask_set: MaskSet,
    *,
    threads: int = 1,
) -> GroupAccumulator:
    """Accumulate foreground/background rendering weight over all valid views.

    Invalid views contribute nothing. Raises if the track has no valid view.
    """
    valid = mask_set.valid_views()
    if not valid:
        raise DataError(
            f"track {mask_set.granularity}/{mask_set.track_id} has no valid views"
        )
    cams = {c.view_id: c for c in cameras}
    acc = GroupAccumulator.zeros(len(scene))
    for view_id in valid:
        cam = cams[view_id]
        mask_flat = mask_set.mask(view_id).reshape(-1)
        rasterize(
            scene, cam, mode="weights",
            consumer=_fold(mask_flat, acc), threads=threads,
        )
    acc.check_finite()
    return acc


def accumulate_weights_shared(
    scene: GaussianScene,
    cameras: list[Camera],
    mask_sets: list[MaskSet],
    *,
    threads: int = 1,
) -> dict[tuple[str, int], GroupAccumulator]:
    """Shared-pass variant: rasterize each view once, fold into every track
    that has a valid mask there. Produces results identical to running
    `accumulate_weights` per track.
    """
    cams = {c.view_id: c for c in cameras}
    accs = {
        (m.granularity, m.track_id): GroupAccumulator.zeros(len(scene))
        for m in mask_sets
    }
    views = sorted({v for m in mask_sets for v in m.valid_views()})
    for view_id in views:
        cam = cams[view_id]
        routes = [
            (m.mask(view_id).reshape(-1), accs[(m.granularity, m.track_id)])
            for m in mask_sets
            if m.validity.get(view_id, False)
        ]

        def consumer(pix, src, w, routes=routes):
            for mask_flat, acc in routes:
                hit = mask_flat[pix]
                np.add.at(acc.foreground_weight, src[hit], w[hit])
                np.add.at(acc.background_weight, src[~hit], w[~hit])

        rasterize(scene, cam, mode="weights", consumer=consumer, threads=threads)
    for acc in accs.values():
        acc.check_finite()
    return accs


def hard_assign(acc: GroupAccumulator) -> np.ndarray:
    """Strict hard assignment: indices where foreground weight exceeds
    background weight. Ties, including the all-zero untouched case, are
    background."""
    return np.nonzero(acc.foreground_weight > acc.background_weight)[0]


def build_groups(
    scene: GaussianScene,
    cameras: list[Camera],
    mask_sets: list[MaskSet],
    *,
    threads: int = 1,
) -> list[ObjectGroup]:
    """Accumulate and hard-assign every track; tracks with no valid view are
    skipped with a log line."""
    usable = []
    for m in mask_sets:
        if m.valid_views():
            usable.append(m)
        else:
            logger.warning(
                "skipping track %s/%d: no valid views", m.granularity, m.track_id
            )
    accs = accumulate_weights_shared(scene, cameras, usable, threads=threads)
    groups = []
    for m in usable:
        acc = accs[(m.granularity, m.track_id)]
        groups.append(
            ObjectGroup(
                track_id=m.track_id,
                granularity=m.granularity,
                foreground=hard_assign(acc),
                accumulator=acc,
            )
        )
    return groups
