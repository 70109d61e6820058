"""Boundary refinement: entropy-flagged neutral points and opacity rescue.

Gaussians deep inside an object land inside its mask from every view; those
straddling a boundary flip between inside and outside. Each valid view casts
one binary vote per Gaussian (center projection inside/outside the mask) and
the disagreement is scored as binary entropy in bits. High-entropy points
become neutral candidates, but candidates with high opacity are solid
surface points that merely got mislabeled, so they are rescued and keep
their initial class. Confirmed neutral points are excluded from both the
foreground and the background.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .grouping import ObjectGroup
from .masks import MaskSet
from .render import NEAR_PLANE
from .scene import Camera, GaussianScene

DEFAULT_ENTROPY_THRESHOLD = 0.6  # bits
DEFAULT_OPACITY_THRESHOLD = 0.7


def label_by_projection(
    scene: GaussianScene, cameras: list[Camera], mask_set: MaskSet
) -> tuple[np.ndarray, np.ndarray]:
    """Per-Gaussian (foreground, background) vote counts.

    For every valid view, each Gaussian center is projected; centers behind
    the near plane or whose rounded landing pixel falls outside the image
    are skipped in that view.
    """
    cams = {c.view_id: c for c in cameras}
    n = len(scene)
    fg_views = np.zeros(n, dtype=np.int64)
    bg_views = np.zeros(n, dtype=np.int64)
    for view_id in mask_set.valid_views():
        cam = cams[view_id]
        mask = mask_set.mask(view_id)
        uv, depth = cam.project_points(scene.positions)
        px = np.rint(uv[:, 0]).astype(np.int64)
        py = np.rint(uv[:, 1]).astype(np.int64)
        visible = (
            (depth > NEAR_PLANE)
            & (px >= 0) & (px < cam.width)
            & (py >= 0) & (py < cam.height)
        )
        idx = np.nonzero(visible)[0]
        hit = mask[py[idx], px[idx]]
        fg_views[idx[hit]] += 1
        bg_views[idx[~hit]] += 1
    return fg_views, bg_views


def label_entropy(fg: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """Binary entropy in bits of the per-view label split, with 0*log0 = 0.

    Every element must have at least one vote; callers exclude unseen points.
    """
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    total = fg + bg
    if np.any(total < 1):
        raise DataError("entropy undefined for points with zero votes")
    p = fg / total
    q = bg / total
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log2(p) + q * np.log2(q))
    return np.where((p == 0) | (q == 0), 0.0, h)


@dataclass
class RefinementStats:
    n_scored: int
    n_candidates: int
    n_rescued: int
    n_neutral: int


def refine(
    group: ObjectGroup,
    fg_views: np.ndarray,
    bg_views: np.ndarray,
    opacities: np.ndarray,
    *,
    entropy_threshold: float = DEFAULT_ENTROPY_THRESHOLD,
    opacity_threshold: float = DEFAULT_OPACITY_THRESHOLD,
    use_opacity_rescue: bool = True,
) -> tuple[ObjectGroup, RefinementStats]:
    """Split off the confirmed neutral set and remove it from the group.

    Candidates are scored points with entropy strictly above the threshold;
    of those, points with opacity strictly above the opacity threshold are
    rescued (they keep their initial class). Refinement never adds points to
    the foreground. `use_opacity_rescue=False` gives the entropy-only
    variant used for ablation runs.
    """
    scored = np.nonzero(fg_views + bg_views >= 1)[0]
    h = label_entropy(fg_views[scored], bg_views[scored])
    candidates = scored[h > entropy_threshold]
    if use_opacity_rescue:
        rescued = candidates[opacities[candidates] > opacity_threshold]
        neutral = np.setdiff1d(candidates, rescued)
    else:
        rescued = np.zeros(0, dtype=np.int64)
        neutral = candidates
    foreground = np.setdiff1d(group.foreground, neutral)
    refined = ObjectGroup(
        track_id=group.track_id,
        granularity=group.granularity,
        foreground=foreground,
        neutral=np.sort(neutral),
        accumulator=group.accumulator,
    )
    stats = RefinementStats(
        n_scored=len(scored),
        n_candidates=len(candidates),
        n_rescued=len(rescued),
        n_neutral=len(neutral),
    )
    return refined, stats
